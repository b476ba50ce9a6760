//! Fixtures shared by the benchmarks.

use jjl::{ExpandingMap, PrecisionConfig};

pub fn quadratic(c: f64) -> ExpandingMap {
    ExpandingMap::from_coeffs(&[-c, 0.0, 1.0], PrecisionConfig::default(), false).expect("expanding quadratic")
}

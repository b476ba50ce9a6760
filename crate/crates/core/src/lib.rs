pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod jacobi;
pub mod linalg;
pub mod poly;
pub mod precision;
pub mod real;
pub mod renorm;
pub mod transfer;

pub use dynamics::{invariant_halfwidth, ExpandingMap};
pub use error::{Error, Result};
pub use experiments::{parse_config, run_suite, Experiment, ExperimentConfig, Suite};
pub use poly::{Jet3, RealPolynomial};
pub use precision::{Limits, PrecisionConfig};
pub use real::{Complex, Real};
pub use jacobi::{JacobiMatrix, Kind};
pub use linalg::Matrix;
pub use transfer::DiscreteMeasure;

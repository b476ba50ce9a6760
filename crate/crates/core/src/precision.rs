//! Working-precision configuration and the tolerances derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{set_working_bits, BitsGuard, Real, DEFAULT_BITS};

/// Ceiling for automatic precision raising.
pub const DEFAULT_MAX_BITS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionConfig {
    pub significand_bits: u32,
    pub max_bits: u32,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        PrecisionConfig {
            significand_bits: DEFAULT_BITS,
            max_bits: DEFAULT_MAX_BITS,
        }
    }
}

impl PrecisionConfig {
    pub fn new(significand_bits: u32) -> Result<Self> {
        if significand_bits < 53 {
            return Err(Error::Config(format!(
                "significand_bits must be at least 53, got {significand_bits}"
            )));
        }
        Ok(PrecisionConfig {
            significand_bits,
            max_bits: DEFAULT_MAX_BITS.max(significand_bits),
        })
    }

    /// Tolerances matching values already carried at `bits`.
    pub fn for_bits(bits: u32) -> Self {
        PrecisionConfig {
            significand_bits: bits.max(53),
            max_bits: DEFAULT_MAX_BITS.max(bits),
        }
    }

    /// Installs this precision as the thread's working precision.
    pub fn install(&self) -> BitsGuard {
        set_working_bits(self.significand_bits)
    }

    /// Decimal digits carried by the significand.
    pub fn digits(&self) -> usize {
        Real::digits_for_bits(self.significand_bits)
    }

    /// Roots or eigenvalues closer than this are treated as colliding: `2^-(bits/2)`.
    pub fn collision_tol(&self) -> Real {
        let _g = self.install();
        Real::exp2(-(self.significand_bits as i32 / 2))
    }

    /// Acceptable residual for identities that hold to working precision: `2^-(3 bits/4)`.
    pub fn residual_tol(&self) -> Real {
        let _g = self.install();
        Real::exp2(-(3 * self.significand_bits as i32 / 4))
    }

    /// Next precision to try after `PrecisionExhausted`, if under the cap.
    pub fn raised(&self) -> Option<Self> {
        let next = self.significand_bits.saturating_mul(2);
        (next <= self.max_bits).then_some(PrecisionConfig {
            significand_bits: next,
            max_bits: self.max_bits,
        })
    }
}

/// Size caps for fibers, measures and matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    /// Maximum number of atoms in a stored measure or rows in a matrix.
    pub size_cap: usize,
    /// Maximum number of leaves in a scalar fiber-tree summation.
    pub tree_cap: usize,
}

pub const DEFAULT_SIZE_CAP: usize = 4096;
pub const DEFAULT_TREE_CAP: usize = 1 << 16;

impl Default for Limits {
    fn default() -> Self {
        Limits {
            size_cap: DEFAULT_SIZE_CAP,
            tree_cap: DEFAULT_TREE_CAP,
        }
    }
}

impl Limits {
    pub fn check_size(&self, requested: usize) -> Result<()> {
        if requested > self.size_cap {
            Err(Error::SizeLimit {
                requested,
                cap: self.size_cap,
            })
        } else {
            Ok(())
        }
    }

    pub fn check_tree(&self, requested: usize) -> Result<()> {
        if requested > self.tree_cap {
            Err(Error::SizeLimit {
                requested,
                cap: self.tree_cap,
            })
        } else {
            Ok(())
        }
    }
}

/// `base^exp` with overflow reported as a size-limit failure.
pub fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base).ok_or(Error::SizeLimit {
            requested: usize::MAX,
            cap: usize::MAX,
        })?;
    }
    Ok(acc)
}

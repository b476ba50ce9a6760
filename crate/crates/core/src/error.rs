use thiserror::Error;

/// Errors raised by the numerical routines and the experiment layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("singular point: |T'| = {magnitude:e} at y = {at}")]
    SingularPoint { at: f64, magnitude: f64 },

    #[error("size limit: {requested} exceeds cap {cap}")]
    SizeLimit { requested: usize, cap: usize },

    #[error("{what} = {value} lies outside [-{bound}, {bound}]")]
    OutOfRange { what: String, value: f64, bound: f64 },

    #[error("root collision: two roots {gap:e} apart near {near}")]
    RootCollision { near: f64, gap: f64 },

    #[error("non-expanding input: {0}")]
    NonExpandingInput(String),

    #[error("precision exhausted at {bits} bits: {detail}")]
    PrecisionExhausted { bits: u32, detail: String },

    #[error("z = {z} is within {tol:e} of the spectrum")]
    SpectrumCollision { z: String, tol: f64 },

    #[error("quadrature of degree {degree} is not exact with {nodes} nodes")]
    DegreeTooHigh { degree: usize, nodes: usize },

    #[error("series did not converge: {0}")]
    NonConvergence(String),

    #[error("second-kind numerator is not proportional to T' (deviation {deviation:e}) in block {block}")]
    ProportionalityViolation { block: usize, deviation: f64 },

    #[error("tridiagonal structure lost: off-band entry {leak:e}")]
    StructureViolation { leak: f64 },

    #[error("step control failed at x = {at}: {detail}")]
    StepFailure { at: f64, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

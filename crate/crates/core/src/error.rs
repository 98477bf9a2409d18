use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the toolkit.
///
/// `Certification` is the only variant that describes the model rather than
/// the caller: a hypothesis that was checked and does not hold.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid function: {0}")]
    InvalidFunction(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("certification failed: {0}")]
    Certification(#[from] Failure),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub fn is_certification_failure(&self) -> bool {
        matches!(self, Error::Certification(_))
    }
}

/// A hypothesis that does not hold, with the witness that breaks it.
#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Failure {
    #[error("Doeblin constant vanishes: every column minimum is zero")]
    DoeblinZero { zero_columns: Vec<usize> },
    #[error("Harris set {{V <= {r}}} is empty")]
    HarrisEmptySet { r: f64 },
    #[error("Harris constant vanishes on the set {{V <= {r}}}")]
    HarrisZero { r: f64, set: Vec<usize> },
    #[error("no K on the grid gives gamma_L < 1 (state {state}, ratio {ratio})")]
    Lyapunov { state: usize, ratio: f64 },
    #[error("weak Lyapunov condition unusable: {reason}")]
    WeakLyapunov { reason: String },
    #[error("no pair of distinct states with V(x) + V(y) <= {a}")]
    CouplingVacuous { a: f64 },
    #[error("coupling constant {gamma_h} >= 1 at pair ({x}, {y})")]
    Coupling { gamma_h: f64, x: usize, y: usize },
    #[error("generator drift condition: {reason}")]
    GeneratorLyapunov { reason: String },
    #[error("precondition fails: {inequality}")]
    Precondition { inequality: String },
    #[error("interpolation fails at state {state}, lambda {lambda} (excess {excess})")]
    Interpolation { state: usize, lambda: f64, excess: f64 },
}

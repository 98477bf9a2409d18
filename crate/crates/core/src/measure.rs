//! Finite signed measures and the norms used throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance of the zero-mass predicate.
pub const ZERO_MEAN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    size: usize,
    labels: Option<Vec<String>>,
}

impl StateSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::param("size", "state space must be nonempty"));
        }
        Ok(StateSpace { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(Error::param("labels", "labels must be distinct"));
        }
        let mut space = StateSpace::new(labels.len())?;
        space.labels = Some(labels);
        Ok(space)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// Mass per state.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedMeasure {
    values: Vec<f64>,
}

impl SignedMeasure {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidMeasure("empty measure".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("entry {i} is not finite")));
        }
        Ok(SignedMeasure { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        SignedMeasure { values }
    }

    pub fn zeros(n: usize) -> Self {
        SignedMeasure { values: vec![0.0; n] }
    }

    pub fn dirac(n: usize, x: usize) -> Self {
        let mut values = vec![0.0; n];
        values[x] = 1.0;
        SignedMeasure { values }
    }

    /// `δ_x − δ_y`.
    pub fn dirac_difference(n: usize, x: usize, y: usize) -> Self {
        let mut values = vec![0.0; n];
        values[x] += 1.0;
        values[y] -= 1.0;
        SignedMeasure { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_zero_mean(&self) -> bool {
        self.mass().abs() <= ZERO_MEAN_TOL
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        self.values.iter().all(|&v| v >= -tol) && (self.mass() - 1.0).abs() <= tol
    }

    pub fn sub(&self, other: &SignedMeasure) -> Result<SignedMeasure> {
        check_len(self.len(), other.len())?;
        Ok(SignedMeasure {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &SignedMeasure) -> Result<SignedMeasure> {
        check_len(self.len(), other.len())?;
        Ok(SignedMeasure {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> SignedMeasure {
        SignedMeasure { values: self.values.iter().map(|v| c * v).collect() }
    }
}

/// A Lyapunov weight, every entry at least 1.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFunction {
    values: Vec<f64>,
}

impl WeightFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidWeight("empty weight".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 1.0 {
                return Err(Error::InvalidWeight(format!("V[{i}] = {v} is not a finite value >= 1")));
            }
        }
        Ok(WeightFunction { values })
    }

    pub fn ones(n: usize) -> Self {
        WeightFunction { values: vec![1.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pointwise maximum.
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Splits `μ = μ⁺ − μ⁻` componentwise.
pub fn hahn_jordan(mu: &SignedMeasure) -> (SignedMeasure, SignedMeasure) {
    let plus = mu.values.iter().map(|&v| v.max(0.0)).collect();
    let minus = mu.values.iter().map(|&v| (-v).max(0.0)).collect();
    (SignedMeasure { values: plus }, SignedMeasure { values: minus })
}

pub fn total_variation(mu: &SignedMeasure) -> f64 {
    mu.values.iter().map(|v| v.abs()).sum()
}

pub fn weighted_norm(mu: &SignedMeasure, v: &WeightFunction) -> Result<f64> {
    check_len(v.len(), mu.len())?;
    Ok(norm_with(mu.values(), v.values()))
}

/// `‖μ‖ + β‖μ‖_V`.
pub fn triple_norm(mu: &SignedMeasure, v: &WeightFunction, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::param("beta", format!("must be positive, got {beta}")));
    }
    Ok(total_variation(mu) + beta * weighted_norm(mu, v)?)
}

/// `Σ w(x)|μ(x)|` for an arbitrary nonnegative weight.
pub(crate) fn norm_with(mu: &[f64], w: &[f64]) -> f64 {
    mu.iter().zip(w).map(|(m, w)| m.abs() * w).sum()
}

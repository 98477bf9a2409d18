//! The model file: a kernel or generator plus the weights, functions and
//! grids the pipelines need. See `docs/model-schema.md` for the format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::{ScalarFunction, Shape};
use crate::kernel::{GeneratorMatrix, StochasticKernel};
use crate::measure::{StateSpace, WeightFunction};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_v2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harris_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingSpec>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}

/// A closed-form or sampled scalar function.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `v^exponent`
    Power { exponent: f64 },
    /// `v/(ln v)^exponent`
    LogPower { exponent: f64 },
    Affine { slope: f64, intercept: f64 },
    /// `n·atan(π/2 + v/n)`
    Arctan { n: f64 },
    Sampled { points: Vec<[f64; 2]>, shape: Shape },
    /// The polynomial ψ built from φ; only meaningful for `psi`.
    PsiBuilder { r: f64, eps: f64 },
}

impl FunctionSpec {
    /// Builds the function; `PsiBuilder` needs the model's φ.
    pub fn build(&self, phi: Option<&ScalarFunction>) -> Result<ScalarFunction> {
        match self {
            FunctionSpec::Power { exponent } => ScalarFunction::power(*exponent),
            FunctionSpec::LogPower { exponent } => ScalarFunction::log_power(*exponent),
            FunctionSpec::Affine { slope, intercept } => ScalarFunction::affine(*slope, *intercept),
            FunctionSpec::Arctan { n } => ScalarFunction::arctan_family(*n),
            FunctionSpec::Sampled { points, shape } => {
                let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
                ScalarFunction::sampled(&pts, *shape)
            }
            FunctionSpec::PsiBuilder { r, eps } => {
                let phi = phi.ok_or_else(|| Error::InvalidFunction("psi_builder needs phi".into()))?;
                crate::subgeometric::psi_builder_polynomial(phi, *r, *eps)
            }
        }
    }
}

/// An explicitly requested local coupling: `A` with the power `n` of the
/// kernel, or the time `t` of the semigroup.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    /// Last step of discrete decay tables.
    #[serde(default = "Grids::default_n_max")]
    pub n_max: usize,
    /// Last time of continuous decay tables.
    #[serde(default = "Grids::default_t_max")]
    pub t_max: f64,
    #[serde(default = "Grids::default_t_points")]
    pub t_points: usize,
    /// Random zero-mean measures per validation.
    #[serde(default = "Grids::default_measures")]
    pub measures: usize,
}

impl Grids {
    fn default_n_max() -> usize {
        200
    }
    fn default_t_max() -> f64 {
        50.0
    }
    fn default_t_points() -> usize {
        50
    }
    fn default_measures() -> usize {
        20
    }
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            n_max: Self::default_n_max(),
            t_max: Self::default_t_max(),
            t_points: Self::default_t_points(),
            measures: Self::default_measures(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Dynamics {
    Kernel(StochasticKernel),
    Generator(GeneratorMatrix),
}

/// A validated model, ready for the pipelines.
#[derive(Clone, Debug)]
pub struct Model {
    pub file: ModelFile,
    pub space: StateSpace,
    pub dynamics: Dynamics,
    pub v: Option<WeightFunction>,
    pub v2: Option<WeightFunction>,
    pub phi: Option<ScalarFunction>,
    pub psi: Option<ScalarFunction>,
    pub xi: Option<ScalarFunction>,
    /// SHA-256 of the canonical serialization of `file`.
    pub content_hash: String,
}

impl Model {
    pub fn size(&self) -> usize {
        self.space.size()
    }
}

/// Input failure with the JSON path it was found at.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct InputError {
    pub path: String,
    pub message: String,
}

impl InputError {
    fn at(path: impl Into<String>, e: impl std::fmt::Display) -> Self {
        InputError { path: path.into(), message: e.to_string() }
    }
}

pub fn parse_model(text: &str) -> std::result::Result<Model, InputError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        InputError::at(if path.is_empty() { ".".to_string() } else { path }, e.into_inner())
    })?;
    validate_model(file)
}

pub fn load_model(path: &std::path::Path) -> std::result::Result<Model, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError::at(path.display().to_string(), e))?;
    parse_model(&text)
}

pub fn validate_model(file: ModelFile) -> std::result::Result<Model, InputError> {
    if file.schema_version != SCHEMA_VERSION {
        return Err(InputError::at("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version)));
    }
    let dynamics = match (&file.kernel, &file.generator) {
        (Some(k), None) => Dynamics::Kernel(StochasticKernel::new(k.clone()).map_err(|e| InputError::at(row_path("kernel", &e, k), e))?),
        (None, Some(g)) => Dynamics::Generator(GeneratorMatrix::new(g.clone()).map_err(|e| InputError::at(row_path("generator", &e, g), e))?),
        (Some(_), Some(_)) => return Err(InputError::at(".", "give either kernel or generator, not both")),
        (None, None) => return Err(InputError::at(".", "missing kernel or generator")),
    };
    let n = match &dynamics {
        Dynamics::Kernel(k) => k.size(),
        Dynamics::Generator(g) => g.size(),
    };
    let space = match &file.labels {
        Some(l) => {
            if l.len() != n {
                return Err(InputError::at("labels", format!("{} labels for {n} states", l.len())));
            }
            StateSpace::with_labels(l.clone()).map_err(|e| InputError::at("labels", e))?
        }
        None => StateSpace::new(n).map_err(|e| InputError::at(".", e))?,
    };
    let weight = |name: &str, w: &Option<Vec<f64>>| -> std::result::Result<Option<WeightFunction>, InputError> {
        match w {
            None => Ok(None),
            Some(w) if w.len() != n => Err(InputError::at(name, format!("{} entries for {n} states", w.len()))),
            Some(w) => match w.iter().position(|x| !(*x >= 1.0) || !x.is_finite()) {
                Some(i) => Err(InputError::at(format!("{name}[{i}]"), format!("weights must be finite and >= 1, got {}", w[i]))),
                None => Ok(Some(WeightFunction::new(w.clone()).map_err(|e| InputError::at(name, e))?)),
            },
        }
    };
    let v = weight("weight_v", &file.weight_v)?;
    let v2 = weight("weight_v2", &file.weight_v2)?;
    if v2.is_some() && v.is_none() {
        return Err(InputError::at("weight_v2", "needs weight_v"));
    }
    let phi = file.phi.as_ref().map(|f| f.build(None).map_err(|e| InputError::at("phi", e))).transpose()?;
    if let Some(p) = &phi {
        p.validate_phi().map_err(|e| InputError::at("phi", e))?;
        if v.is_none() {
            return Err(InputError::at("phi", "needs weight_v"));
        }
    }
    let psi = file.psi.as_ref().map(|f| f.build(phi.as_ref()).map_err(|e| InputError::at("psi", e))).transpose()?;
    if psi.is_some() && phi.is_none() {
        return Err(InputError::at("psi", "needs phi"));
    }
    let xi = file.xi.as_ref().map(|f| f.build(None).map_err(|e| InputError::at("xi", e))).transpose()?;
    if let Some(r) = file.harris_r {
        if !(r > 1.0) || !r.is_finite() {
            return Err(InputError::at("harris_r", format!("must be finite and > 1, got {r}")));
        }
        if v.is_none() {
            return Err(InputError::at("harris_r", "needs weight_v"));
        }
    }
    if let Some(c) = &file.coupling {
        if !(c.a > 0.0) || !c.a.is_finite() {
            return Err(InputError::at("coupling.a", "must be finite and positive"));
        }
        match (&dynamics, c.n, c.t) {
            (Dynamics::Kernel(_), Some(0), _) => return Err(InputError::at("coupling.n", "must be at least 1")),
            (Dynamics::Kernel(_), _, Some(_)) => return Err(InputError::at("coupling.t", "a kernel coupling takes n, not t")),
            (Dynamics::Generator(_), Some(_), _) => return Err(InputError::at("coupling.n", "a generator coupling takes t, not n")),
            (Dynamics::Generator(_), None, None) => return Err(InputError::at("coupling.t", "required for a generator")),
            (Dynamics::Generator(_), _, Some(t)) if !(t > 0.0) => return Err(InputError::at("coupling.t", "must be positive")),
            _ => {}
        }
        if v.is_none() {
            return Err(InputError::at("coupling", "needs weight_v"));
        }
    }
    let g = &file.grids;
    if g.n_max == 0 || g.n_max > 1_000_000 {
        return Err(InputError::at("grids.n_max", "must lie in 1..=1000000"));
    }
    if !(g.t_max > 0.0) || !g.t_max.is_finite() {
        return Err(InputError::at("grids.t_max", "must be finite and positive"));
    }
    if g.t_points == 0 {
        return Err(InputError::at("grids.t_points", "must be at least 1"));
    }
    if !(file.tol > 0.0 && file.tol < 1.0) {
        return Err(InputError::at("tol", "must lie in (0, 1)"));
    }
    let canonical = serde_json::to_vec(&file).expect("model serializes");
    let content_hash = crate::kernel::sha256_hex(&canonical);
    Ok(Model { file, space, dynamics, v, v2, phi, psi, xi, content_hash })
}

/// Points the error at the offending entry or row when the message names one.
fn row_path(field: &str, e: &Error, rows: &[Vec<f64>]) -> String {
    let msg = e.to_string();
    let digits = |t: &str| t.split(|c: char| !c.is_ascii_digit()).next().and_then(|d| d.parse::<usize>().ok());
    if let Some(rest) = msg.split("entry (").nth(1) {
        let mut it = rest.split(", ");
        if let (Some(x), Some(y)) = (it.next().and_then(digits), it.next().and_then(digits)) {
            return format!("{field}[{x}][{y}]");
        }
    }
    match msg.split("row ").nth(1).and_then(digits) {
        Some(i) if i < rows.len() => format!("{field}[{i}]"),
        _ => field.to_string(),
    }
}

//! Scalar functions: the weights' transforms φ, ψ, m and the interpolation ξ.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Concave,
    Convex,
    MonotoneOnly,
}

type Closure = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Repr {
    /// `v^p`
    Power { exponent: f64 },
    /// `v / (ln v)^a`
    LogPower { exponent: f64 },
    Affine { slope: f64, intercept: f64 },
    /// `n·atan(π/2 + v/n)`
    Arctan { n: f64 },
    /// Piecewise linear through strictly increasing nodes.
    Sampled { x: Arc<Vec<f64>>, y: Arc<Vec<f64>> },
    /// `max_j (a_j v + b_j)`; `+∞` once beyond `cap`.
    MaxAffine { slopes: Arc<Vec<f64>>, intercepts: Arc<Vec<f64>>, cap: f64 },
    /// `1 + ∫_1^u m(v)/φ(v) dv`.
    Integral(Arc<crate::subgeometric::PsiIntegral>),
    Custom { name: String, f: Closure, df: Option<Closure> },
}

#[derive(Clone)]
pub struct ScalarFunction {
    repr: Repr,
    shape: Shape,
    domain: (f64, f64),
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarFunction({}, {:?}, [{}, {}])", self.describe(), self.shape, self.domain.0, self.domain.1)
    }
}

const SHAPE_TRIPLES: usize = 1000;
const SHAPE_TOL: f64 = 1e-9;

impl ScalarFunction {
    fn checked(repr: Repr, shape: Shape, domain: (f64, f64)) -> Result<Self> {
        if !(domain.0 < domain.1) || domain.0.is_nan() {
            return Err(Error::InvalidFunction(format!("empty domain [{}, {}]", domain.0, domain.1)));
        }
        let f = ScalarFunction { repr, shape, domain };
        f.check_shape()?;
        Ok(f)
    }

    pub fn power(exponent: f64) -> Result<Self> {
        Self::power_on(exponent, (1.0, f64::INFINITY))
    }

    pub fn power_on(exponent: f64, domain: (f64, f64)) -> Result<Self> {
        if !(exponent > 0.0) || !exponent.is_finite() {
            return Err(Error::InvalidFunction(format!("power exponent must be positive, got {exponent}")));
        }
        let shape = if exponent <= 1.0 { Shape::Concave } else { Shape::Convex };
        Self::checked(Repr::Power { exponent }, shape, domain)
    }

    /// `v/(ln v)^a` on `(1, ∞)`; no curvature claim.
    pub fn log_power(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0) || !exponent.is_finite() {
            return Err(Error::InvalidFunction(format!("log-power exponent must be positive, got {exponent}")));
        }
        Self::checked(Repr::LogPower { exponent }, Shape::MonotoneOnly, (1.0, f64::INFINITY))
    }

    pub fn affine(slope: f64, intercept: f64) -> Result<Self> {
        Self::affine_on(slope, intercept, (1.0, f64::INFINITY))
    }

    pub fn affine_on(slope: f64, intercept: f64, domain: (f64, f64)) -> Result<Self> {
        if !slope.is_finite() || !intercept.is_finite() {
            return Err(Error::InvalidFunction("affine coefficients must be finite".into()));
        }
        Self::checked(Repr::Affine { slope, intercept }, Shape::Concave, domain)
    }

    pub fn arctan_family(n: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidFunction(format!("arctan family needs n > 0, got {n}")));
        }
        Self::checked(Repr::Arctan { n }, Shape::Concave, (1.0, f64::INFINITY))
    }

    pub fn sampled(points: &[(f64, f64)], shape: Shape) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidFunction("a sampled function needs at least two points".into()));
        }
        for (i, w) in points.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidFunction(format!("sample abscissae not strictly increasing at index {}", i + 1)));
            }
        }
        if let Some(i) = points.iter().position(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidFunction(format!("sample {i} is not finite")));
        }
        let x: Vec<f64> = points.iter().map(|p| p.0).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        let domain = (x[0], x[x.len() - 1]);
        let f = Self::checked(Repr::Sampled { x: Arc::new(x), y: Arc::new(y) }, shape, domain)?;
        f.check_sampled_shape()?;
        Ok(f)
    }

    /// `max_j (slope_j·v + intercept_j)`, reported as `+∞` above `cap`.
    pub fn max_affine(slopes: Vec<f64>, intercepts: Vec<f64>, cap: f64, domain: (f64, f64)) -> Result<Self> {
        if slopes.is_empty() || slopes.len() != intercepts.len() {
            return Err(Error::InvalidFunction("max-affine needs matching nonempty line lists".into()));
        }
        let (slopes, intercepts) = upper_envelope(slopes, intercepts);
        Self::checked(
            Repr::MaxAffine { slopes: Arc::new(slopes), intercepts: Arc::new(intercepts), cap },
            Shape::Convex,
            domain,
        )
    }

    pub(crate) fn from_integral(p: crate::subgeometric::PsiIntegral) -> Result<Self> {
        Self::checked(Repr::Integral(Arc::new(p)), Shape::Concave, (1.0, f64::INFINITY))
    }

    pub fn custom<F>(name: impl Into<String>, f: F, shape: Shape, domain: (f64, f64)) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::checked(Repr::Custom { name: name.into(), f: Arc::new(f), df: None }, shape, domain)
    }

    pub fn custom_with_derivative<F, D>(name: impl Into<String>, f: F, df: D, shape: Shape, domain: (f64, f64)) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::checked(Repr::Custom { name: name.into(), f: Arc::new(f), df: Some(Arc::new(df)) }, shape, domain)
    }

    pub fn repr(&self) -> &Repr {
        &self.repr
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn describe(&self) -> String {
        match &self.repr {
            Repr::Power { exponent } => format!("power({exponent})"),
            Repr::LogPower { exponent } => format!("log_power({exponent})"),
            Repr::Affine { slope, intercept } => format!("affine({slope}, {intercept})"),
            Repr::Arctan { n } => format!("arctan_family({n})"),
            Repr::Sampled { x, .. } => format!("sampled({} points)", x.len()),
            Repr::MaxAffine { slopes, .. } => format!("max_affine({} lines)", slopes.len()),
            Repr::Integral(p) => p.describe(),
            Repr::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        match &self.repr {
            Repr::Power { exponent } => v.powf(*exponent),
            Repr::LogPower { exponent } => v / v.ln().powf(*exponent),
            Repr::Affine { slope, intercept } => slope * v + intercept,
            Repr::Arctan { n } => n * (std::f64::consts::FRAC_PI_2 + v / n).atan(),
            Repr::Sampled { x, y } => {
                let i = segment(x, v);
                let t = (v - x[i]) / (x[i + 1] - x[i]);
                y[i] + t * (y[i + 1] - y[i])
            }
            Repr::MaxAffine { slopes, intercepts, cap } => {
                let val = max_affine_eval(slopes, intercepts, v).0;
                if val > *cap {
                    f64::INFINITY
                } else {
                    val
                }
            }
            Repr::Integral(p) => p.eval(v),
            Repr::Custom { f, .. } => f(v),
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        match &self.repr {
            Repr::Power { exponent } => exponent * v.powf(exponent - 1.0),
            Repr::LogPower { exponent } => {
                let l = v.ln();
                l.powf(-exponent) - exponent * l.powf(-exponent - 1.0)
            }
            Repr::Affine { slope, .. } => *slope,
            Repr::Arctan { n } => {
                let z = std::f64::consts::FRAC_PI_2 + v / n;
                1.0 / (1.0 + z * z)
            }
            Repr::Sampled { x, y } => {
                let i = segment(x, v);
                (y[i + 1] - y[i]) / (x[i + 1] - x[i])
            }
            Repr::MaxAffine { slopes, intercepts, .. } => slopes[max_affine_eval(slopes, intercepts, v).1],
            Repr::Integral(p) => p.derivative(v),
            Repr::Custom { f, df, .. } => match df {
                Some(d) => d(v),
                None => {
                    let h = 1e-6 * v.abs().max(1e-3);
                    (f(v + h) - f(v - h)) / (2.0 * h)
                }
            },
        }
    }

    /// Points where the three-point shape test is run.
    fn probe_range(&self) -> (f64, f64) {
        let lo = if self.domain.0 > 0.0 { self.domain.0 } else { 1e-9_f64.max(self.domain.0) };
        let hi = if self.domain.1.is_finite() { self.domain.1 } else { lo.max(1.0) * 1e6 };
        (lo, hi)
    }

    fn check_shape(&self) -> Result<()> {
        if self.shape == Shape::MonotoneOnly {
            return Ok(());
        }
        if matches!(self.repr, Repr::Sampled { .. }) {
            return Ok(());
        }
        let (lo, hi) = self.probe_range();
        let log_scale = lo > 0.0 && hi / lo > 100.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_5a_9e);
        let pick = |rng: &mut ChaCha8Rng| {
            let u: f64 = rng.gen();
            if log_scale {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp()
            } else {
                lo + u * (hi - lo)
            }
        };
        for _ in 0..SHAPE_TRIPLES {
            let mut t = [pick(&mut rng), pick(&mut rng), pick(&mut rng)];
            t.sort_by(f64::total_cmp);
            let [x, y, z] = t;
            if !(x < y && y < z) {
                continue;
            }
            let (fx, fy, fz) = (self.eval(x), self.eval(y), self.eval(z));
            if !(fx.is_finite() && fy.is_finite() && fz.is_finite()) {
                continue;
            }
            let chord = ((z - y) * fx + (y - x) * fz) / (z - x);
            let scale = fx.abs().max(fy.abs()).max(fz.abs()).max(1.0);
            let gap = fy - chord;
            let bad = match self.shape {
                Shape::Concave => gap < -SHAPE_TOL * scale,
                Shape::Convex => gap > SHAPE_TOL * scale,
                Shape::MonotoneOnly => false,
            };
            if bad {
                return Err(Error::InvalidFunction(format!(
                    "{} is not {:?} on [{x}, {z}] (midpoint gap {gap})",
                    self.describe(),
                    self.shape
                )));
            }
        }
        Ok(())
    }

    fn check_sampled_shape(&self) -> Result<()> {
        let Repr::Sampled { x, y } = &self.repr else { return Ok(()) };
        let slopes: Vec<f64> = (0..x.len() - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        for (i, w) in slopes.windows(2).enumerate() {
            let scale = w[0].abs().max(w[1].abs()).max(1.0);
            let bad = match self.shape {
                Shape::Concave => w[1] > w[0] + SHAPE_TOL * scale,
                Shape::Convex => w[1] < w[0] - SHAPE_TOL * scale,
                Shape::MonotoneOnly => false,
            };
            if bad {
                return Err(Error::InvalidFunction(format!(
                    "sampled function is not {:?} at node {}",
                    self.shape,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Requirements on φ: concave, increasing, `φ(1) = 1`, `φ(v)/v` strictly decreasing and sublinear.
    pub fn validate_phi(&self) -> Result<()> {
        if self.shape != Shape::Concave {
            return Err(Error::InvalidFunction(format!("phi must be concave, {} is tagged {:?}", self.describe(), self.shape)));
        }
        let one = self.eval(1.0);
        if (one - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidFunction(format!("phi(1) = {one}, expected 1")));
        }
        let hi = if self.domain.1.is_finite() { self.domain.1 } else { 1e12 };
        let grid = log_grid(1.0, hi, 200);
        let mut prev_ratio = f64::INFINITY;
        let mut prev_val = 0.0;
        for &v in &grid {
            let fv = self.eval(v);
            if !(fv > prev_val) && v > 1.0 {
                return Err(Error::InvalidFunction(format!("phi is not increasing at v = {v}")));
            }
            let ratio = fv / v;
            if !(ratio < prev_ratio) {
                return Err(Error::InvalidFunction(format!("phi(v)/v is not strictly decreasing at v = {v}")));
            }
            prev_ratio = ratio;
            prev_val = fv;
        }
        if self.domain.1.is_infinite() && prev_ratio > 0.1 {
            return Err(Error::InvalidFunction(format!("phi(v)/v does not tend to 0 (ratio {prev_ratio} at v = {hi})")));
        }
        Ok(())
    }
}

fn segment(x: &[f64], v: f64) -> usize {
    let n = x.len();
    match x.partition_point(|&xi| xi <= v) {
        0 => 0,
        k if k >= n => n - 2,
        k => k - 1,
    }
}

/// Upper envelope of lines, sorted by slope, keeping only lines active somewhere.
fn upper_envelope(slopes: Vec<f64>, intercepts: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut lines: Vec<(f64, f64)> = slopes.into_iter().zip(intercepts).collect();
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    for l in lines {
        if let Some(last) = dedup.last_mut() {
            if last.0 == l.0 {
                *last = l;
                continue;
            }
        }
        dedup.push(l);
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(dedup.len());
    for l in dedup {
        while hull.len() >= 2 {
            let (a1, b1) = hull[hull.len() - 2];
            let (a2, b2) = hull[hull.len() - 1];
            // middle line is never strictly on top if the outer two cross at or below it
            if (b1 - l.1) * (a2 - a1) <= (b1 - b2) * (l.0 - a1) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    hull.into_iter().unzip()
}

/// Maximum of hull lines at `v` and the index of the active line.
fn max_affine_eval(slopes: &[f64], intercepts: &[f64], v: f64) -> (f64, usize) {
    // on the hull, successive lines take over as v grows
    let n = slopes.len();
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        let a = slopes[mid] * v + intercepts[mid];
        let b = slopes[mid + 1] * v + intercepts[mid + 1];
        if b >= a {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    (slopes[lo] * v + intercepts[lo], lo)
}

pub(crate) fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub(crate) fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

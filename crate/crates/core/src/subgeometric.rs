//! Subgeometric rates: convex conjugates, the `F`/`Θ = F⁻¹` calculus, the
//! difference-inequality bounds and the assembled envelopes.
//!
//! Every rate is tabulated. `F(λ) = ∫_λ^1 ds/g(s)` is integrated in `y = ln s`
//! on a fixed node ladder that grows on demand, and `Θ` is found by a
//! safeguarded Newton iteration inside the bracketing panel.

use std::f64::consts::LN_10;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::certify::{check_weak_lyapunov_values, harris_on_power, harris_to_coupling, CouplingCert, HarrisCert, WeakLyapunovCert};
use crate::kernel::StochasticKernel;
use crate::measure::WeightFunction;
use crate::error::{Error, Failure, Result};
use crate::functions::{log_grid, linear_grid, Repr, ScalarFunction, Shape};
use crate::kernel::hash_values;
use crate::quad::{golden_min, integrate};

const NODE_STEP: f64 = LN_10 / 8.0;
/// `ln` of the smallest λ the tables reach.
const Y_FLOOR: f64 = -690.0;
const QUAD_REL: f64 = 1e-13;
const QUAD_ABS: f64 = 1e-300;

/// `ψ(u) = 1 + ∫_1^u m(v)/φ(v) dv` with
/// `m = φ^{1−ε}` below the level `φ = 2R` and `(2R)^{1−ε}` above it.
pub struct PsiIntegral {
    phi: ScalarFunction,
    r: f64,
    eps: f64,
    /// `v` where `φ(v) = 2R`; infinite if never reached on the table.
    threshold: f64,
    /// `ψ(e^{k·step})`.
    table: Vec<f64>,
}

const PSI_STEP: f64 = 0.125;
const PSI_LN_MAX: f64 = 100.0;

impl PsiIntegral {
    fn new(phi: ScalarFunction, r: f64, eps: f64) -> Result<Self> {
        let two_r = 2.0 * r;
        let threshold = if phi.eval(PSI_LN_MAX.exp()) < two_r {
            f64::INFINITY
        } else {
            let w = crate::quad::bisect_increasing(&|w: f64| phi.eval(w.exp()) - two_r, 0.0, PSI_LN_MAX, 1e-14);
            w.exp()
        };
        let mut p = PsiIntegral { phi, r, eps, threshold, table: vec![1.0] };
        let nodes = (PSI_LN_MAX / PSI_STEP) as usize;
        let mut acc = 1.0;
        for k in 0..nodes {
            acc += p.integral_ln(k as f64 * PSI_STEP, (k + 1) as f64 * PSI_STEP);
            p.table.push(acc);
        }
        Ok(p)
    }

    /// `m(v)/φ(v)`.
    fn density(&self, v: f64) -> f64 {
        if v < self.threshold {
            self.phi.eval(v).powf(-self.eps)
        } else {
            (2.0 * self.r).powf(1.0 - self.eps) / self.phi.eval(v)
        }
    }

    fn integral_ln(&self, a: f64, b: f64) -> f64 {
        let f = |w: f64| {
            let v = w.exp();
            v * self.density(v)
        };
        let t = self.threshold.ln();
        if a < t && t < b {
            integrate(&f, a, t, QUAD_REL, QUAD_ABS) + integrate(&f, t, b, QUAD_REL, QUAD_ABS)
        } else {
            integrate(&f, a, b, QUAD_REL, QUAD_ABS)
        }
    }

    pub fn describe(&self) -> String {
        format!("psi_integral(phi = {}, R = {}, eps = {})", self.phi.describe(), self.r, self.eps)
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= 1.0 {
            // linear continuation below 1, slope ψ′(1) = 1
            return u;
        }
        let w = u.ln();
        let k = ((w / PSI_STEP) as usize).min(self.table.len() - 1);
        self.table[k] + self.integral_ln(k as f64 * PSI_STEP, w)
    }

    pub fn derivative(&self, u: f64) -> f64 {
        if u < 1.0 {
            return 1.0;
        }
        self.density(u)
    }

    /// `v` with `φ(v) = 2R`.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// The polynomial-example ψ built from φ, `R` and `ε`.
pub fn psi_builder_polynomial(phi: &ScalarFunction, r: f64, eps: f64) -> Result<ScalarFunction> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", "must lie in (0, 1)"));
    }
    if !(r > 0.5) || !r.is_finite() {
        // m(1)/φ(1) = 1 needs φ(1) = 1 < 2R
        return Err(Error::param("r", format!("must exceed 1/2 so that psi'(1) = 1, got {r}")));
    }
    phi.validate_phi()?;
    let p = PsiIntegral::new(phi.clone(), r, eps)?;
    let grid = log_grid(1.0, 1e12, 400);
    for w in grid.windows(2) {
        if !(p.density(w[1]) < p.density(w[0])) {
            return Err(Error::InvalidFunction(format!("m/phi is not strictly decreasing at v = {}", w[1])));
        }
    }
    ScalarFunction::from_integral(p)
}

/// Options for the grid supremum in [`legendre_transform_with`].
#[derive(Clone, Copy, Debug)]
pub struct LegendreOptions {
    pub coarse: usize,
    pub refine: usize,
    pub rounds: usize,
    /// Evenly spaced λ added per gap between visited optima.
    pub fill: usize,
    /// Values above this are reported as `+∞`.
    pub cap: f64,
}

impl Default for LegendreOptions {
    fn default() -> Self {
        LegendreOptions { coarse: 257, refine: 65, rounds: 3, fill: 16, cap: f64::INFINITY }
    }
}

/// `ξ*(u) = sup_{λ∈I} (λu − ξ(λ))`.
pub fn legendre_transform(xi: &ScalarFunction, domain: (f64, f64), u_grid: &[f64]) -> Result<ScalarFunction> {
    legendre_transform_with(xi, domain, u_grid, LegendreOptions::default())
}

/// The supremum is taken over the visited λ, so the result is a maximum of
/// lines `λ_j u − ξ(λ_j)`: convex, and never above the true transform. For a
/// piecewise-linear convex ξ the visited set is its kinks plus the ends of `I`,
/// which is exact.
pub fn legendre_transform_with(
    xi: &ScalarFunction,
    domain: (f64, f64),
    u_grid: &[f64],
    opts: LegendreOptions,
) -> Result<ScalarFunction> {
    let (lo, hi) = check_transform_inputs(domain, u_grid)?;
    let lambdas = match xi.repr() {
        Repr::MaxAffine { slopes, intercepts, .. } => {
            let mut ls = vec![lo, hi];
            ls.extend(kinks(slopes, intercepts).into_iter().filter(|k| *k > lo && *k < hi));
            ls
        }
        _ => search_lambdas(&|l, u| l * u - xi.eval(l), lo, hi, u_grid, opts),
    };
    let mut slopes = Vec::with_capacity(lambdas.len());
    let mut intercepts = Vec::with_capacity(lambdas.len());
    for l in lambdas {
        let v = xi.eval(l);
        if v.is_finite() {
            slopes.push(l);
            intercepts.push(-v);
        }
    }
    let dom = (u_grid[0], u_grid[u_grid.len() - 1]);
    ScalarFunction::max_affine(slopes, intercepts, opts.cap, dom)
}

/// `ξ_*(u) = sup_{λ∈I} (ξ(λ) − λu)`.
pub fn lower_transform(xi: &ScalarFunction, domain: (f64, f64), u_grid: &[f64]) -> Result<ScalarFunction> {
    let opts = LegendreOptions::default();
    let (lo, hi) = check_transform_inputs(domain, u_grid)?;
    let lambdas = search_lambdas(&|l, u| xi.eval(l) - l * u, lo, hi, u_grid, opts);
    let mut slopes = Vec::new();
    let mut intercepts = Vec::new();
    for l in lambdas {
        let v = xi.eval(l);
        if v.is_finite() {
            slopes.push(-l);
            intercepts.push(v);
        }
    }
    ScalarFunction::max_affine(slopes, intercepts, opts.cap, (u_grid[0], u_grid[u_grid.len() - 1]))
}

fn check_transform_inputs(domain: (f64, f64), u_grid: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = domain;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::param("domain", format!("needs a nonempty bounded interval, got [{lo}, {hi}]")));
    }
    if u_grid.len() < 2 || u_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("u_grid", "must be strictly increasing with at least two points"));
    }
    Ok((lo, hi))
}

/// Coarse grid plus, for each `u`, the best λ of each zoom and of the final grid.
fn search_lambdas(score: &dyn Fn(f64, f64) -> f64, lo: f64, hi: f64, u_grid: &[f64], opts: LegendreOptions) -> Vec<f64> {
    let coarse = linear_grid(lo, hi, opts.coarse);
    let mut all = coarse.clone();
    for &u in u_grid {
        let mut grid = coarse.clone();
        for _ in 0..opts.rounds {
            let mut best: Option<(usize, f64)> = None;
            for (i, &l) in grid.iter().enumerate() {
                let s = score(l, u);
                if s.is_finite() && best.map_or(true, |b| s > b.1) {
                    best = Some((i, s));
                }
            }
            let Some((b, _)) = best else { break };
            all.push(grid[b]);
            let a = grid[b.saturating_sub(1)];
            let c = grid[(b + 1).min(grid.len() - 1)];
            grid = linear_grid(a, c, opts.refine);
        }
        if let Some(l) = grid.iter().copied().filter(|&l| score(l, u).is_finite()).max_by(|&x, &y| score(x, u).total_cmp(&score(y, u))) {
            all.push(l);
        }
    }
    all.retain(|l| l.is_finite());
    all.sort_by(f64::total_cmp);
    all.dedup();
    // the maximizer is monotone in u, so the gaps between optima are where
    // extra tangents pay off
    let fill = opts.fill.max(1);
    let mut dense = Vec::with_capacity(all.len() * fill);
    for w in all.windows(2) {
        for i in 0..fill {
            dense.push(w[0] + (w[1] - w[0]) * i as f64 / fill as f64);
        }
    }
    dense.extend(all.last().copied());
    dense
}

/// Breakpoints of an upper envelope of lines sorted by slope.
fn kinks(slopes: &[f64], intercepts: &[f64]) -> Vec<f64> {
    (0..slopes.len().saturating_sub(1))
        .map(|i| (intercepts[i] - intercepts[i + 1]) / (slopes[i + 1] - slopes[i]))
        .collect()
}

/// `F(λ) = ∫_λ^1 ds/g(s)` tabulated at `λ = e^{−k·step}`.
pub struct RateIntegral {
    g: ScalarFunction,
    pieces: Option<Pieces>,
    nodes: RwLock<Nodes>,
}

/// A max-affine `g` split at its kinks, so `∫ ds/g` has a closed form.
struct Pieces {
    slopes: Arc<Vec<f64>>,
    intercepts: Arc<Vec<f64>>,
    /// `kinks[j]` separates line `j` from line `j + 1`.
    kinks: Vec<f64>,
    cap: f64,
    /// `tail[j] = ∫_{kinks[j]}^{kinks[last]} ds/g`.
    tail: Vec<f64>,
}

impl Pieces {
    fn new(slopes: Arc<Vec<f64>>, intercepts: Arc<Vec<f64>>, cap: f64) -> Self {
        let kinks = kinks(&slopes, &intercepts);
        let mut tail = vec![0.0; kinks.len()];
        for j in (0..kinks.len().saturating_sub(1)).rev() {
            tail[j] = tail[j + 1] + line_reciprocal_integral(slopes[j + 1], intercepts[j + 1], cap, kinks[j], kinks[j + 1]);
        }
        Pieces { slopes, intercepts, kinks, cap, tail }
    }

    /// `∫_{s0}^{s1} ds/g(s)`, where values above the cap count as `+∞` and add 0.
    fn integral(&self, s0: f64, s1: f64) -> f64 {
        let j0 = self.kinks.partition_point(|&k| k <= s0);
        let j1 = self.kinks.partition_point(|&k| k < s1);
        if j1 > j0 + 1 {
            // whole segments between kinks[j0] and kinks[j1 − 1] from the tail sums
            let (left, right) = (self.tail[j0], self.tail[j1 - 1]);
            if left.is_finite() {
                let head = line_reciprocal_integral(self.slopes[j0], self.intercepts[j0], self.cap, s0, self.kinks[j0]);
                let last = line_reciprocal_integral(self.slopes[j1], self.intercepts[j1], self.cap, self.kinks[j1 - 1], s1);
                return head + (left - right) + last;
            }
        }
        self.integral_scan(s0, s1)
    }

    fn integral_scan(&self, s0: f64, s1: f64) -> f64 {
        let mut j = self.kinks.partition_point(|&k| k <= s0);
        let mut lo = s0;
        let mut total = 0.0;
        while lo < s1 {
            let hi = self.kinks.get(j).map_or(s1, |&k| k.min(s1));
            if hi > lo {
                total += line_reciprocal_integral(self.slopes[j], self.intercepts[j], self.cap, lo, hi);
            }
            lo = hi;
            j += 1;
        }
        total
    }
}

/// `∫_a^b ds/(m s + c)` with the part above `cap` dropped.
fn line_reciprocal_integral(m: f64, c: f64, cap: f64, mut a: f64, mut b: f64) -> f64 {
    if cap.is_finite() {
        if m > 0.0 {
            b = b.min((cap - c) / m);
        } else if m < 0.0 {
            a = a.max((cap - c) / m);
        } else if c > cap {
            return 0.0;
        }
        if !(b > a) {
            return 0.0;
        }
    }
    let (va, vb) = (m * a + c, m * b + c);
    if !(va > 0.0 && vb > 0.0) {
        return f64::INFINITY;
    }
    if m == 0.0 {
        (b - a) / c
    } else {
        (m * (b - a) / va).ln_1p() / m
    }
}

struct Nodes {
    values: Vec<f64>,
    /// No further nodes: the floor was reached or `F` overflowed.
    closed: bool,
}

impl fmt::Debug for RateIntegral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.nodes.read().map(|n| n.values.len()).unwrap_or(0);
        write!(f, "RateIntegral({}, {n} nodes)", self.g.describe())
    }
}

impl RateIntegral {
    pub fn new(g: ScalarFunction) -> Self {
        let pieces = match g.repr() {
            Repr::MaxAffine { slopes, intercepts, cap } => Some(Pieces::new(slopes.clone(), intercepts.clone(), *cap)),
            _ => None,
        };
        RateIntegral { g, pieces, nodes: RwLock::new(Nodes { values: vec![0.0], closed: false }) }
    }

    pub fn g(&self) -> &ScalarFunction {
        &self.g
    }

    /// Integrand in log coordinates, `e^y/g(e^y)`; a `+∞` value of `g` contributes 0.
    fn density(&self, y: f64) -> f64 {
        let s = y.exp();
        let gs = self.g.eval(s);
        if gs == f64::INFINITY {
            0.0
        } else if gs > 0.0 {
            s / gs
        } else {
            f64::INFINITY
        }
    }

    fn node_y(k: usize) -> f64 {
        -(k as f64) * NODE_STEP
    }

    fn integral_y(&self, a: f64, b: f64) -> f64 {
        if let Some(p) = &self.pieces {
            return if a <= b { p.integral(a.exp(), b.exp()) } else { -p.integral(b.exp(), a.exp()) };
        }
        integrate(&|y| self.density(y), a, b, QUAD_REL, QUAD_ABS)
    }

    /// Extends the ladder until `F` at the last node reaches `t` or the ladder closes.
    fn extend_to(&self, t: f64) {
        {
            let n = self.nodes.read().expect("rate table lock");
            if n.closed || *n.values.last().unwrap() >= t {
                return;
            }
        }
        let mut n = self.nodes.write().expect("rate table lock");
        while !n.closed && *n.values.last().unwrap() < t {
            let k = n.values.len() - 1;
            let (a, b) = (Self::node_y(k + 1), Self::node_y(k));
            if a < Y_FLOOR {
                n.closed = true;
                break;
            }
            let next = n.values[k] + self.integral_y(a, b);
            if !next.is_finite() || next > 1e300 {
                n.closed = true;
                break;
            }
            n.values.push(next);
        }
    }

    /// `F(λ)` for `λ ∈ (0, 1]`.
    pub fn eval(&self, lambda: f64) -> f64 {
        if lambda >= 1.0 {
            return 0.0;
        }
        let y = lambda.ln();
        let k = (-y / NODE_STEP) as usize;
        loop {
            {
                let n = self.nodes.read().expect("rate table lock");
                if k < n.values.len() {
                    return n.values[k] + self.integral_y(y, Self::node_y(k));
                }
                if n.closed {
                    let last = n.values.len() - 1;
                    return n.values[last] + self.integral_y(y, Self::node_y(last));
                }
            }
            let target = {
                let n = self.nodes.read().expect("rate table lock");
                *n.values.last().unwrap() * 2.0 + 1.0
            };
            self.extend_to(target);
        }
    }

    /// Smallest λ represented in the table; `Θ` never drops below it.
    pub fn floor(&self) -> f64 {
        let n = self.nodes.read().expect("rate table lock");
        if n.closed {
            Self::node_y(n.values.len() - 1).exp()
        } else {
            Y_FLOOR.exp()
        }
    }

    /// `Θ(t) = F⁻¹(t)`, floored at the last node if `F` stays below `t`.
    ///
    /// Flooring only raises `Θ`, so bounds stay valid when `1/g` is
    /// integrable at 0 and `Θ` would hit zero.
    pub fn inverse(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 1.0;
        }
        self.extend_to(t);
        let (k, fk, fk1) = {
            let n = self.nodes.read().expect("rate table lock");
            let last = n.values.len() - 1;
            if n.values[last] < t {
                return Self::node_y(last).exp();
            }
            // first node with F ≥ t
            let j = n.values.partition_point(|&v| v < t);
            (j - 1, n.values[j - 1], n.values[j])
        };
        let (mut lo, mut hi) = (Self::node_y(k + 1), Self::node_y(k));
        // G(y) = F(e^y) − t, decreasing in y, G(lo) ≥ 0 ≥ G(hi)
        let mut y = hi - (t - fk) / (fk1 - fk) * (hi - lo);
        for _ in 0..100 {
            let g = fk + self.integral_y(y, Self::node_y(k)) - t;
            if g > 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let d = self.density(y);
            let mut next = if d > 0.0 && d.is_finite() { y + g / d } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 1e-15 * y.abs().max(1.0) || hi - lo <= 1e-15 * y.abs().max(1.0) {
                y = next;
                break;
            }
            y = next;
        }
        y.exp()
    }
}

/// Tabulates `F` from `g`, rejecting a `g` that is not positive on the grid.
pub fn rate_f(g: &ScalarFunction, lambda_grid: &[f64]) -> Result<Arc<RateIntegral>> {
    if lambda_grid.is_empty() || lambda_grid.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::param("lambda_grid", "entries must lie in (0, 1]"));
    }
    let mut sorted = lambda_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    for &l in &sorted {
        let v = g.eval(l);
        if !(v > 0.0) {
            return Err(Error::InvalidFunction(format!("g({l}) = {v} is not positive")));
        }
        if v < prev * (1.0 - 1e-9) {
            return Err(Error::InvalidFunction(format!("g is decreasing at s = {l}")));
        }
        prev = v;
    }
    let integral = Arc::new(RateIntegral::new(g.clone()));
    integral.extend_to(integral.eval(sorted[0]));
    Ok(integral)
}

/// An envelope `n ↦ C·Θ(r·n)`, divided by `n` for the total-variation form.
#[derive(Clone, Debug, Serialize)]
pub struct RateFunction {
    /// `(t, Θ(t))` on the requested grid.
    pub grid: Vec<(f64, f64)>,
    pub prefactor: f64,
    pub time_scale: f64,
    pub divide_by_time: bool,
    #[serde(skip)]
    integral: Arc<RateIntegral>,
}

impl RateFunction {
    pub fn theta(&self, t: f64) -> f64 {
        self.integral.inverse(t)
    }

    pub fn envelope(&self, n: f64) -> f64 {
        let v = self.prefactor * self.theta(self.time_scale * n);
        if self.divide_by_time {
            if n > 0.0 {
                v / n
            } else {
                f64::INFINITY
            }
        } else {
            v
        }
    }

    pub fn scaled(&self, prefactor: f64, time_scale: f64, divide_by_time: bool) -> RateFunction {
        RateFunction { prefactor, time_scale, divide_by_time, ..self.clone() }
    }

    pub fn integral(&self) -> &Arc<RateIntegral> {
        &self.integral
    }
}

/// `Θ = F⁻¹` on `t_grid`, with unit prefactor and time scale.
pub fn invert_rate(f: &Arc<RateIntegral>, t_grid: &[f64]) -> Result<RateFunction> {
    if t_grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(Error::param("t_grid", "entries must be finite and nonnegative"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("t_grid", "must be strictly increasing"));
    }
    let grid = t_grid.iter().map(|&t| (t, f.inverse(t))).collect();
    Ok(RateFunction { grid, prefactor: 1.0, time_scale: 1.0, divide_by_time: false, integral: f.clone() })
}

/// `H⁻¹(n)` for `n = 0..=n_max` with `H(u) = ∫_u^{u₀} dv/g(v)`.
pub fn difference_bound_h(g: &ScalarFunction, u0: f64, n_max: usize) -> Result<Vec<f64>> {
    if !(u0 > 0.0) || !u0.is_finite() {
        return Err(Error::param("u0", "must be positive"));
    }
    let density = |y: f64| {
        let v = y.exp();
        let gv = g.eval(v);
        if gv > 0.0 {
            v / gv
        } else {
            f64::INFINITY
        }
    };
    let y0 = u0.ln();
    let near = integrate(&density, y0 - 230.0, y0, 1e-10, 0.0);
    let far = integrate(&density, y0 - 460.0, y0 - 230.0, 1e-10, 0.0);
    if !(far > 1e-8 * near.max(1.0)) {
        return Err(Error::Hypothesis(format!(
            "1/g is integrable at 0 (tail mass {far} beyond u0·1e-100), so the difference bound does not apply"
        )));
    }
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(u0);
    let mut y_prev = y0;
    for _ in 0..n_max {
        y_prev = solve_unit_step(&density, y_prev);
        out.push(y_prev.exp());
    }
    Ok(out)
}

/// `y < y_prev` with `∫_y^{y_prev} h = 1`, for a positive density `h`.
fn solve_unit_step(h: &dyn Fn(f64) -> f64, y_prev: f64) -> f64 {
    let mut width = 1.0 / h(y_prev).max(1e-300);
    width = width.clamp(1e-12, 50.0);
    let mut lo = y_prev - width;
    while integrate(h, lo, y_prev, 1e-13, 0.0) < 1.0 {
        width *= 2.0;
        lo = y_prev - width;
        if width > 2000.0 {
            return lo;
        }
    }
    let mut hi = y_prev;
    let mut y = lo;
    for _ in 0..200 {
        let g = integrate(h, y, y_prev, 1e-14, 0.0) - 1.0;
        if g > 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let d = h(y);
        let mut next = if d > 0.0 && d.is_finite() { y + g / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - y).abs() <= 1e-15 * y.abs().max(1.0);
        y = next;
        if done || hi - lo <= 1e-15 * y.abs().max(1.0) {
            break;
        }
    }
    // the smaller end keeps the bound on the safe side
    lo.min(y)
}

/// `M·F⁻¹(n)` for `n = 0..=n_max` with `F(u) = ∫_u^1 dv/ζ*(v)`.
pub fn difference_bound_f(zeta: &ScalarFunction, domain: (f64, f64), m: f64, u0: f64, n_max: usize) -> Result<Vec<f64>> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::param("m", "must be positive"));
    }
    if u0 > m {
        return Err(Error::param("u0", format!("must not exceed M = {m}")));
    }
    let u_grid = log_grid(1e-12, 1.0, 961);
    let zeta_star = legendre_transform(zeta, domain, &u_grid)?;
    let integral = Arc::new(RateIntegral::new(zeta_star));
    Ok((0..=n_max).map(|n| m * integral.inverse(n as f64)).collect())
}

/// Smallest `C` with `Θ(t − k) ≤ C·Θ(t)` on a dense grid of `[k, t_max]`
/// (all multiples of `k` included), inflated by 5%.
pub fn shift_constant(f: &RateIntegral, k: f64, t_max: f64) -> f64 {
    if !(k > 0.0) || !(t_max > k) {
        return 1.0;
    }
    let mut ts: Vec<f64> = Vec::new();
    let multiples = (t_max / k).floor() as usize;
    if multiples <= 20_000 {
        ts.extend((1..=multiples).map(|q| q as f64 * k));
    }
    ts.extend(linear_grid(k, t_max, 400));
    ts.extend(log_grid(k, t_max, 200));
    let worst = ts
        .iter()
        .map(|&t| f.inverse(t - k) / f.inverse(t))
        .fold(1.0_f64, f64::max);
    1.05 * worst
}

/// The interpolation function computed from the states:
/// `ξ(λ) = max(0, max_x (λV₁(x) − φ₁(V₁)(x))/V₂(x))`, the least ξ with
/// `λV₁ ≤ φ₁(V₁) + ξ(λ)V₂` pointwise.
///
/// Returns ξ and the end `Λ` of the λ-range used for its transform.
pub fn exact_interpolation(v1: &[f64], w1: &[f64], v2: &[f64]) -> Result<(ScalarFunction, f64)> {
    crate::measure::check_len(v1.len(), w1.len())?;
    crate::measure::check_len(v1.len(), v2.len())?;
    let mut slopes = vec![0.0];
    let mut intercepts = vec![0.0];
    for x in 0..v1.len() {
        slopes.push(v1[x] / v2[x]);
        intercepts.push(-w1[x] / v2[x]);
    }
    let xi = ScalarFunction::max_affine(slopes, intercepts, f64::INFINITY, (0.0, f64::INFINITY))?;
    let Repr::MaxAffine { slopes, intercepts, .. } = xi.repr() else { unreachable!() };
    let last = kinks(slopes, intercepts).into_iter().fold(0.0_f64, f64::max);
    Ok((xi.clone(), 2.0 * last.max(1e-12)))
}

/// Checks `λV₁ ≤ φ₁(V₁) + ξ(λ)V₂` at every state for each λ.
pub fn verify_interpolation(xi: &ScalarFunction, v1: &[f64], w1: &[f64], v2: &[f64], lambdas: &[f64]) -> Result<()> {
    let mut worst: Option<(usize, f64, f64)> = None;
    for &l in lambdas {
        let x_l = xi.eval(l);
        for x in 0..v1.len() {
            let excess = l * v1[x] - w1[x] - x_l * v2[x];
            let tol = 1e-12 * (l * v1[x]).abs().max(1.0);
            if excess > tol && worst.map_or(true, |w| excess > w.2) {
                worst = Some((x, l, excess));
            }
        }
    }
    match worst {
        Some((state, lambda, excess)) => Err(Failure::Interpolation { state, lambda, excess }.into()),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InterpolationOptions {
    /// Horizon on which the shift constant is certified.
    pub n_max: usize,
    /// End of the λ-range; defaults to twice the last kink of a piecewise-linear ξ.
    pub lambda_max: Option<f64>,
}

impl Default for InterpolationOptions {
    fn default() -> Self {
        InterpolationOptions { n_max: 500, lambda_max: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InterpolationConstants {
    pub gamma_h: f64,
    pub n: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// `sup_k ‖S^k ν‖_{V₂}/‖ν‖_{V₂}` bound.
    pub b2: f64,
    pub m: f64,
    pub shift: f64,
    pub c_v1: f64,
    pub r_v1: f64,
    pub c_tv: f64,
    pub r_tv: f64,
    pub lambda_max: f64,
    pub n_max: usize,
}

#[derive(Clone, Debug)]
pub struct InterpolationRate {
    /// `‖Sⁿν‖_{V₁} ≤ C·Θ(rn)‖ν‖_{V₂}`.
    pub v1: RateFunction,
    /// `‖Sⁿν‖ ≤ (C/n)·Θ(r′n)‖ν‖_{V₂}`.
    pub tv: RateFunction,
    pub constants: InterpolationConstants,
    pub xi_star: ScalarFunction,
}

/// Assembles the interpolated subgeometric envelopes.
///
/// The drift subsequence has gaps in `[N, 2N−1]`, so with
/// `|||·|||ᵢ = ‖·‖ + βᵢ‖·‖_{Vᵢ}`:
/// `‖ν_k‖_{V₂} ≤ B₂‖ν‖_{V₂}` with `B₂ = 1 + 1/β₂ + (2N−2)K₂`, and the
/// recursion `u_{i+1} ≤ (1 − κλ)u_i + αB₂ξ(λ)‖ν‖_{V₂}` for `u_i = |||ν_{n_i}|||₁`
/// gives `u_i ≤ (m/κ)Θ(κi)‖ν‖_{V₂}` with `m = max{1 + β₁, αB₂}`.
/// Between subsequence points the weak drift costs `1 + (2N−2)β₁K₁` and
/// the floors are absorbed by [`shift_constant`] at `k = κ`.
pub fn interpolation_rate(
    wl1: &WeakLyapunovCert,
    wl2: &WeakLyapunovCert,
    coup1: &CouplingCert,
    coup2: &CouplingCert,
    xi: &ScalarFunction,
    opts: InterpolationOptions,
) -> Result<InterpolationRate> {
    if wl1.source_hash != wl2.source_hash || coup1.source_hash != wl1.source_hash || coup2.source_hash != wl1.source_hash {
        return Err(Error::param("certificates", "certificates come from different kernels"));
    }
    if coup1.n != coup2.n {
        return Err(Error::param("couplings", "both couplings must be for the same power N"));
    }
    if coup1.weight_hash != hash_values("weight", &wl1.phi_v) || coup2.weight_hash != hash_values("weight", &wl2.phi_v) {
        return Err(Error::param("couplings", "coupling weights must be phi_1(V_1) and phi_2(V_2)"));
    }
    let (v1, w1, v2) = (&wl1.v, &wl1.phi_v, &wl2.v);
    crate::measure::check_len(v1.len(), v2.len())?;
    if let Some(x) = (0..v1.len()).find(|&x| v1[x] > v2[x]) {
        return Err(Failure::Precondition { inequality: format!("V1 <= V2 fails at state {x}") }.into());
    }
    if let Some(x) = (0..w1.len()).find(|&x| w1[x] < 1.0) {
        return Err(Failure::Precondition { inequality: format!("phi_1(V_1) >= 1 fails at state {x}") }.into());
    }
    for (i, (wl, c)) in [(wl1, coup1), (wl2, coup2)].into_iter().enumerate() {
        if !(c.a > wl.k / wl.sigma_bar) {
            return Err(Failure::Precondition {
                inequality: format!("A_{} = {} > K/sigma = {}", i + 1, c.a, wl.k / wl.sigma_bar),
            }
            .into());
        }
    }
    let gamma_h = coup1.certified_gamma().max(coup2.certified_gamma());
    if !(gamma_h < 1.0) {
        return Err(Failure::Precondition { inequality: format!("gamma_H = {gamma_h} < 1") }.into());
    }

    let lambda_max = match (opts.lambda_max, xi.repr()) {
        (Some(l), _) => l,
        (None, Repr::MaxAffine { slopes, intercepts, .. }) => {
            2.0 * kinks(slopes, intercepts).into_iter().fold(1e-12_f64, f64::max)
        }
        (None, _) if xi.domain().1.is_finite() => xi.domain().1,
        _ => return Err(Error::param("lambda_max", "needed when xi is not piecewise linear")),
    };
    let mut test: Vec<f64> = log_grid(1e-9 * lambda_max, lambda_max, 400);
    if let Repr::MaxAffine { slopes, intercepts, .. } = xi.repr() {
        test.extend(kinks(slopes, intercepts).into_iter().filter(|k| *k > 0.0 && *k <= lambda_max));
    }
    verify_interpolation(xi, v1, w1, v2, &test)?;

    let n = coup1.n;
    let nf = n as f64;
    let beta1 = (1.0 - gamma_h) / (wl1.k * nf);
    let beta2 = (1.0 - gamma_h) / (wl2.k * nf);
    let alpha = (beta1 * (wl1.sigma_bar - wl1.k / coup1.a)).min(beta2 * (wl2.sigma_bar - wl2.k / coup2.a));
    let kappa = alpha / (1.0 + beta1);
    let b2 = 1.0 + 1.0 / beta2 + (2.0 * nf - 2.0) * wl2.k;
    let m = (1.0 + beta1).max(alpha * b2);

    let u_grid = log_grid(1e-300, 1.0, 64);
    let xi_star = legendre_transform(xi, (0.0, lambda_max), &u_grid)?;
    let integral = Arc::new(RateIntegral::new(xi_star.clone()));
    let r_v1 = kappa / (2.0 * nf - 1.0);
    let r_tv = kappa / (4.0 * nf - 2.0);
    let t_max = kappa * (opts.n_max as f64 / (2.0 * nf - 1.0) + 2.0);
    let shift = shift_constant(&integral, kappa, t_max);
    let c_v1 = (1.0 + (2.0 * nf - 2.0) * beta1 * wl1.k) * (m / kappa) / beta1 * shift;
    let head = if n > 1 {
        let k0 = 2.0 * nf - 2.0;
        k0 / integral.inverse(r_tv * k0)
    } else {
        0.0
    };
    let c_tv = (2.0 * m / (kappa * alpha * nf) * (4.0 * nf - 2.0) * shift).max(head).max(1.0);

    let t_grid: Vec<f64> = (0..=opts.n_max).map(|k| k as f64).collect();
    let base = invert_rate(&integral, &t_grid.iter().map(|t| t * r_v1).collect::<Vec<_>>())?;
    let v1_env = base.scaled(c_v1.max(1.0), r_v1, false);
    let tv_env = RateFunction {
        grid: t_grid.iter().map(|&t| (t * r_tv, integral.inverse(t * r_tv))).collect(),
        ..base.scaled(c_tv, r_tv, true)
    };
    Ok(InterpolationRate {
        v1: v1_env,
        tv: tv_env,
        constants: InterpolationConstants {
            gamma_h,
            n,
            beta1,
            beta2,
            alpha,
            kappa,
            b2,
            m,
            shift,
            c_v1,
            r_v1,
            c_tv,
            r_tv,
            lambda_max,
            n_max: opts.n_max,
        },
        xi_star,
    })
}

/// The continuum objects of the Feller route for a given φ and ψ.
#[derive(Clone)]
pub struct FellerPipeline {
    pub phi: ScalarFunction,
    pub psi: ScalarFunction,
    pub r: f64,
    /// `h = g ∘ f⁻¹` on `(0, 1]`.
    pub h: ScalarFunction,
    /// `F_ψ(λ) = ∫_λ^1 du/h(u)`.
    pub f_psi: Arc<RateIntegral>,
    /// Hypotheses that fail only softly, with a witness.
    pub flags: Vec<String>,
}

impl fmt::Debug for FellerPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FellerPipeline(phi = {}, psi = {}, R = {})", self.phi.describe(), self.psi.describe(), self.r)
    }
}

impl FellerPipeline {
    /// `f(v) = ψ(v)/v`.
    pub fn f(&self, v: f64) -> f64 {
        self.psi.eval(v) / v
    }

    /// `g(v) = ψ′(v)φ(v)/v`.
    pub fn g(&self, v: f64) -> f64 {
        self.psi.derivative(v) * self.phi.eval(v) / v
    }

    pub fn f_inverse(&self, z: f64) -> f64 {
        f_inverse(&self.psi, z)
    }

    /// `Θ_ψ = F_ψ⁻¹`.
    pub fn theta_psi(&self, t: f64) -> f64 {
        self.f_psi.inverse(t)
    }

    /// `φ₁` on the new weight: `φ₁(ψ(v)) = ψ′(v)φ(v)`.
    pub fn phi1_at(&self, v: f64) -> f64 {
        self.psi.derivative(v) * self.phi.eval(v)
    }
}

const F_INV_LN_MAX: f64 = 700.0;

/// `v ≥ 1` with `ψ(v)/v = z`, by Newton in `ln v` inside a bisection bracket.
fn f_inverse(psi: &ScalarFunction, z: f64) -> f64 {
    let q = |w: f64| (psi.eval(w.exp()) / w.exp()).ln() - z.ln();
    if q(0.0) <= 0.0 {
        return 1.0;
    }
    let mut hi = 1.0;
    while q(hi) > 0.0 {
        hi *= 2.0;
        if hi > F_INV_LN_MAX {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    let mut w = 0.5 * (lo + hi);
    for _ in 0..200 {
        let qw = q(w);
        if qw > 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let v = w.exp();
        let dq = v * psi.derivative(v) / psi.eval(v) - 1.0;
        let mut next = if dq < 0.0 { w - qw / dq } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - w).abs() <= 1e-15 * w.max(1.0);
        w = next;
        if done || hi - lo <= 1e-15 * w.max(1.0) {
            break;
        }
    }
    w.exp()
}

/// Builds `f, g, h, F_ψ` and checks the hypotheses on a grid.
///
/// Strict concavity of ψ, strict decrease of `f` and positivity of `h` are
/// hard requirements; the normalization `ψ(1) = ψ′(1) = 1`, growth of ψ, and
/// monotonicity and size of `ψ′φ` above the level `2R` are reported in `flags`.
pub fn feller_pipeline(phi: &ScalarFunction, psi: &ScalarFunction, r: f64) -> Result<FellerPipeline> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::param("r", "must be positive"));
    }
    let grid = log_grid(1.0 + 1e-9, 1e12, 400);
    for w in grid.windows(2) {
        if !(psi.derivative(w[1]) < psi.derivative(w[0])) {
            return Err(Error::Hypothesis(format!("psi is not strictly concave near v = {}", w[1])));
        }
        if !(psi.eval(w[1]) / w[1] < psi.eval(w[0]) / w[0]) {
            return Err(Error::Hypothesis(format!("f = psi(v)/v is not strictly decreasing at v = {}", w[1])));
        }
    }
    let mut flags = Vec::new();
    let (p1, d1) = (psi.eval(1.0), psi.derivative(1.0));
    if (p1 - 1.0).abs() > 1e-9 || (d1 - 1.0).abs() > 1e-9 {
        flags.push(format!("normalization: psi(1) = {p1}, psi'(1) = {d1}"));
    }
    if !(psi.eval(1e12) > 10.0 * psi.eval(1e6)) && !(psi.eval(1e12) > psi.eval(1e6) + 10.0) {
        flags.push("psi grows too slowly to look unbounded on [1, 1e12]".into());
    }
    let w1 = |v: f64| psi.derivative(v) * phi.eval(v);
    if let Some(w) = grid.windows(2).find(|w| w1(w[1]) < w1(w[0]) * (1.0 - 1e-12)) {
        flags.push(format!("psi' phi is decreasing at v = {}", w[1]));
    }
    if let Some(v) = grid.iter().find(|&&v| phi.eval(v) > 2.0 * r && !(w1(v) > r)) {
        flags.push(format!("psi' phi <= R at v = {v} although phi(v) > 2R"));
    }

    let (psi_h, phi_h) = (psi.clone(), phi.clone());
    let f1 = p1;
    let h = ScalarFunction::custom(
        "feller_h",
        move |z: f64| {
            let v = if z >= f1 { 1.0 } else { f_inverse(&psi_h, z) };
            if !v.is_finite() {
                return f64::MIN_POSITIVE;
            }
            psi_h.derivative(v) * phi_h.eval(v) / v
        },
        Shape::MonotoneOnly,
        (0.0, 1.0),
    )?;
    for z in log_grid(1e-12, 1.0, 200) {
        if !(h.eval(z) > 0.0) {
            return Err(Error::Hypothesis(format!("h({z}) is not positive")));
        }
    }
    let f_psi = Arc::new(RateIntegral::new(h.clone()));
    Ok(FellerPipeline { phi: phi.clone(), psi: psi.clone(), r, h, f_psi, flags })
}

/// `t ↦ 1/H⁻¹(t)` with `H(u) = ∫_1^u ds/φ(s)`.
///
/// Substituting `s = 1/σ` gives `H(1/λ) = ∫_λ^1 dσ/(σ²φ(1/σ))`, so this is the
/// rate of `g(σ) = σ²φ(1/σ)` in the shared machinery.
pub fn h_comparison_rate(phi: &ScalarFunction, t_grid: &[f64]) -> Result<RateFunction> {
    for u in log_grid(1.0, 1e12, 200) {
        if !(phi.eval(u) > 0.0) {
            return Err(Error::InvalidFunction(format!("phi({u}) is not positive")));
        }
    }
    let p = phi.clone();
    let g = ScalarFunction::custom("h_comparison_g", move |s: f64| s * s * p.eval(1.0 / s), Shape::MonotoneOnly, (0.0, 1.0))?;
    invert_rate(&Arc::new(RateIntegral::new(g)), t_grid)
}

/// Brute-force oracle helper: `inf_{λ∈I} ((1 − λ)u + Mζ(λ))` by golden section.
pub fn recurrence_step_f(zeta: &ScalarFunction, domain: (f64, f64), m: f64, u: f64) -> f64 {
    let f = |l: f64| (1.0 - l) * u + m * zeta.eval(l);
    let (_, v) = golden_min(&f, domain.0, domain.1, 1e-14);
    v.min(f(domain.0)).min(f(domain.1))
}

/// Search space for [`interpolated_route`].
#[derive(Clone, Debug)]
pub struct RouteOptions {
    /// Candidate powers `N` of the kernel for the Harris step.
    pub n_candidates: Vec<usize>,
    /// `A` is taken as each factor times `max_i K_i/ς_i`.
    pub a_factors: Vec<f64>,
    /// The Harris level is each factor times `A`; factors must exceed 2.
    pub level_factors: Vec<f64>,
    pub n_max: usize,
}

impl Default for RouteOptions {
    fn default() -> Self {
        RouteOptions {
            n_candidates: (0..=10).map(|k| 1usize << k).collect(),
            a_factors: vec![1.25, 1.5, 2.0, 3.0],
            level_factors: vec![2.5, 4.0],
            n_max: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RouteResult {
    pub theorem: InterpolationRate,
    pub wl1: WeakLyapunovCert,
    pub wl2: WeakLyapunovCert,
    pub harris: HarrisCert,
    pub coupling1: CouplingCert,
    pub coupling2: CouplingCert,
    pub xi: ScalarFunction,
    /// Combinations that were tried and rejected, with the reason.
    pub rejected: Vec<String>,
}

/// Finds `N`, `A` and a Harris level for which the interpolated theorem
/// applies to `(V₁, φ₁(V₁)) ≤ (V₂, φ₂(V₂))`, keeping the smallest TV
/// envelope at `n_max`.
///
/// The coupling comes from a Harris minorization of `S^N` on
/// `{φ₁(V₁) ≤ level}` and is moved to `φ₂(V₂) ≥ φ₁(V₁)` at the same `A`.
/// ξ is the exact state interpolation.
pub fn interpolated_route(s: &StochasticKernel, wl1: &WeakLyapunovCert, wl2: &WeakLyapunovCert, opts: &RouteOptions) -> Result<RouteResult> {
    let (w1, w2) = (&wl1.phi_v, &wl2.phi_v);
    if let Some(x) = (0..w1.len()).find(|&x| w1[x] > w2[x]) {
        return Err(Failure::Precondition { inequality: format!("phi_1(V_1) <= phi_2(V_2) fails at state {x}") }.into());
    }
    if opts.level_factors.iter().any(|&d| !(d > 2.0)) {
        return Err(Error::param("level_factors", "must exceed 2 so that A < level/2"));
    }
    let (xi, lambda_max) = exact_interpolation(&wl1.v, w1, &wl2.v)?;
    let a_min = (wl1.k / wl1.sigma_bar).max(wl2.k / wl2.sigma_bar);
    let mut best: Option<(f64, RouteResult)> = None;
    let mut rejected = Vec::new();
    for &n in &opts.n_candidates {
        let sp = s.power(n);
        for &c in &opts.a_factors {
            let a = c * a_min;
            for &d in &opts.level_factors {
                let level = d * a;
                let attempt = || -> Result<(HarrisCert, CouplingCert, CouplingCert, InterpolationRate)> {
                    let harris = harris_on_power(s, &sp, w1, level, n)?;
                    let c1 = harris_to_coupling(&harris, a)?;
                    let c2 = c1.transfer_to_larger_weight(w1, w2)?;
                    let th = interpolation_rate(wl1, wl2, &c1, &c2, &xi, InterpolationOptions { n_max: opts.n_max, lambda_max: Some(lambda_max) })?;
                    Ok((harris, c1, c2, th))
                };
                match attempt() {
                    Ok((harris, coupling1, coupling2, theorem)) => {
                        let score = theorem.tv.envelope(opts.n_max as f64);
                        if score.is_finite() && best.as_ref().map_or(true, |b| score < b.0) {
                            let r = RouteResult {
                                theorem,
                                wl1: wl1.clone(),
                                wl2: wl2.clone(),
                                harris,
                                coupling1,
                                coupling2,
                                xi: xi.clone(),
                                rejected: Vec::new(),
                            };
                            best = Some((score, r));
                        }
                    }
                    Err(e) => rejected.push(format!("N = {n}, A = {a}, level = {level}: {e}")),
                }
            }
        }
    }
    match best {
        Some((_, mut r)) => {
            r.rejected = rejected;
            Ok(r)
        }
        None => Err(Failure::Precondition {
            inequality: format!(
                "no (N, A, level) in the search space certifies the interpolated rate; last: {}",
                rejected.last().map(String::as_str).unwrap_or("none tried")
            ),
        }
        .into()),
    }
}

/// `V₁ = φ(V)`, `φ₁ = φ` on top of a weak certificate for `(V, φ(V))`.
pub fn chain_rate(s: &StochasticKernel, wl: &WeakLyapunovCert, phi: &ScalarFunction, opts: &RouteOptions) -> Result<RouteResult> {
    let v1 = WeightFunction::new(wl.phi_v.clone())?;
    let w1: Vec<f64> = wl.phi_v.iter().map(|&x| phi.eval(x)).collect();
    let wl1 = check_weak_lyapunov_values(s, &v1, w1, format!("{}∘{}", phi.describe(), wl.phi), None, None)?;
    interpolated_route(s, &wl1, wl, opts)
}

#[derive(Clone, Debug)]
pub struct FellerRate {
    pub route: RouteResult,
    pub pipeline: FellerPipeline,
}

/// `V₁ = ψ(V)` with `φ₁(V₁) = ψ′(V)φ(V)`, the drift constant of the new
/// pair re-fitted on the kernel.
pub fn feller_rate(s: &StochasticKernel, wl: &WeakLyapunovCert, phi: &ScalarFunction, psi: &ScalarFunction, r: f64, opts: &RouteOptions) -> Result<FellerRate> {
    let pipeline = feller_pipeline(phi, psi, r)?;
    let v1 = WeightFunction::new(wl.v.iter().map(|&v| psi.eval(v)).collect())?;
    let w1: Vec<f64> = wl.v.iter().zip(&wl.phi_v).map(|(&v, &w)| psi.derivative(v) * w).collect();
    let wl1 = check_weak_lyapunov_values(s, &v1, w1, format!("{}'·{}", psi.describe(), wl.phi), None, None)?;
    let route = interpolated_route(s, &wl1, wl, opts)?;
    Ok(FellerRate { route, pipeline })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(p: f64) -> ScalarFunction {
        ScalarFunction::power_on(p, (0.0, 1.0)).unwrap()
    }

    #[test]
    fn psi_closed_form_below_threshold() {
        let phi = ScalarFunction::power(0.5).unwrap();
        let psi = psi_builder_polynomial(&phi, 1e6, 0.1).unwrap();
        assert!((psi.eval(1.0) - 1.0).abs() < 1e-15);
        assert!((psi.derivative(1.0) - 1.0).abs() < 1e-15);
        for u in [2.0, 10.0, 1e3, 1e6] {
            let exact = 1.0 + (f64::powf(u, 0.95) - 1.0) / 0.95;
            assert!((psi.eval(u) - exact).abs() < 1e-10 * exact, "u = {u}");
        }
    }

    #[test]
    fn psi_above_threshold_grows_like_h() {
        let phi = ScalarFunction::power(0.5).unwrap();
        let r = 5.0;
        let psi = psi_builder_polynomial(&phi, r, 0.1).unwrap();
        // φ = 2R at v = 100; beyond, ψ′ = (2R)^0.9/√v
        let c = f64::powf(10.0, 0.9);
        let (a, b) = (400.0, 900.0);
        let expected = c * 2.0 * (f64::sqrt(b) - f64::sqrt(a));
        assert!((psi.eval(b) - psi.eval(a) - expected).abs() < 1e-9 * expected);
        assert!(psi_builder_polynomial(&phi, 0.4, 0.1).is_err());
    }

    #[test]
    fn legendre_examples() {
        let u_grid = linear_grid(0.05, 4.0, 80);
        let zero = ScalarFunction::affine_on(0.0, 0.0, (0.0, 1.0)).unwrap();
        let t = legendre_transform(&zero, (0.0, 1.0), &u_grid).unwrap();
        for &u in &u_grid {
            assert!((t.eval(u) - u).abs() < 1e-12);
        }
        let sq = power(2.0);
        let t = legendre_transform(&sq, (0.0, 1.0), &u_grid).unwrap();
        for &u in &u_grid {
            let exact = if u <= 2.0 { u * u / 4.0 } else { u - 1.0 };
            assert!(t.eval(u) <= exact + 1e-12 && exact - t.eval(u) < 1e-10, "u = {u}");
        }
        let lin = ScalarFunction::affine_on(0.7, 0.0, (0.0, 1.0)).unwrap();
        let t = legendre_transform(&lin, (0.0, 1.0), &u_grid).unwrap();
        for &u in &u_grid {
            assert!((t.eval(u) - (u - 0.7).max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_transform_examples() {
        let u_grid = linear_grid(0.0, 3.0, 61);
        let zero = ScalarFunction::affine_on(0.0, 0.0, (0.0, 1.0)).unwrap();
        let t = lower_transform(&zero, (0.0, 1.0), &u_grid).unwrap();
        assert!(u_grid.iter().all(|&u| t.eval(u).abs() < 1e-15));
        let t = lower_transform(&power(2.0), (0.0, 1.0), &u_grid).unwrap();
        for &u in &u_grid {
            assert!((t.eval(u) - (1.0 - u).max(0.0)).abs() < 1e-12, "u = {u}");
        }
    }

    #[test]
    fn rate_integral_closed_forms() {
        for p in [1.5, 2.0, 3.0] {
            let f = rate_f(&power(p), &[1e-6, 1e-3, 0.5, 1.0]).unwrap();
            for lambda in log_grid(1e-6, 1.0, 50) {
                let exact = (lambda.powf(1.0 - p) - 1.0) / (p - 1.0);
                assert!((f.eval(lambda) - exact).abs() <= 1e-10 * exact.max(1e-4), "p = {p}, lambda = {lambda}");
            }
            for t in linear_grid(0.0, 100.0, 101) {
                let exact = (1.0 + (p - 1.0) * t).powf(-1.0 / (p - 1.0));
                assert!((f.inverse(t) - exact).abs() <= 1e-11 * exact, "p = {p}, t = {t}");
            }
        }
    }

    #[test]
    fn piecewise_integral_matches_quadrature() {
        let g = ScalarFunction::max_affine(vec![0.2, 1.0, 3.0], vec![0.01, -0.05, -1.2], 2.0, (1e-6, 1.0)).unwrap();
        let f = RateIntegral::new(g.clone());
        // kinks at 0.075 and 0.575, cap reached at 16/15
        let breaks = [0.075, 0.575, 16.0 / 15.0];
        let oracle = |lambda: f64| {
            let mut pts = vec![lambda];
            pts.extend(breaks.iter().copied().filter(|&b| b > lambda && b < 1.0));
            pts.push(1.0);
            pts.windows(2).map(|w| integrate(&|s| 1.0 / g.eval(s), w[0], w[1], 1e-14, 0.0)).sum::<f64>()
        };
        for lambda in [0.9f64, 0.5, 0.3, 0.05, 1e-3] {
            let q = oracle(lambda);
            assert!((f.eval(lambda) - q).abs() <= 1e-12 * q.max(1.0), "{lambda}: {} vs {q}", f.eval(lambda));
        }
        // high-precision reference
        assert!((f.eval(1e-3) - 7.937_677_521_044_177).abs() < 1e-12);
    }

    #[test]
    fn floor_on_integrable_density() {
        // g = √s: F(0) = 2 is finite, Θ floors instead of reaching 0
        let f = RateIntegral::new(power(0.5));
        assert!(f.inverse(1.0) > 0.2);
        let floored = f.inverse(3.0);
        assert!(floored > 0.0 && floored <= 1e-250);
    }

    #[test]
    fn shift_constant_examples() {
        let f = RateIntegral::new(power(2.0));
        assert_eq!(shift_constant(&f, 0.0, 10.0), 1.0);
        let c = shift_constant(&f, 1.5, 100.0);
        assert!((c / 1.05 - 2.5).abs() < 1e-9);
    }

    #[test]
    fn difference_bounds_closed_forms() {
        let g = ScalarFunction::affine_on(0.5, 0.0, (0.0, 1.0)).unwrap();
        let h = difference_bound_h(&g, 1.0, 50).unwrap();
        for (n, b) in h.iter().enumerate() {
            assert!((b - (-(n as f64) / 2.0).exp()).abs() < 1e-12);
            assert!(0.5f64.powi(n as i32) <= *b);
        }
        assert!(difference_bound_h(&power(0.5), 1.0, 3).is_err());
        let b = difference_bound_f(&power(2.0), (0.0, 1.0), 1.0, 1.0, 100).unwrap();
        for (n, v) in b.iter().enumerate() {
            let exact = 4.0 / (n as f64 + 4.0);
            assert!(*v >= exact - 1e-12 && *v - exact < 1e-6, "n = {n}: {v} vs {exact}");
        }
    }

    #[test]
    fn h_comparison_closed_form() {
        let ts = linear_grid(1.0, 100.0, 100);
        let r = h_comparison_rate(&ScalarFunction::power(0.5).unwrap(), &ts).unwrap();
        for (t, th) in &r.grid {
            assert!((th / (1.0 + t / 2.0).powi(-2) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_interpolation_is_tight() {
        let v1 = [1.0, 2.0, 3.0];
        let w1 = [1.0, 1.2, 1.4];
        let v2 = [1.0, 4.0, 9.0];
        let (xi, lmax) = exact_interpolation(&v1, &w1, &v2).unwrap();
        let lambdas = log_grid(1e-3, lmax, 50);
        verify_interpolation(&xi, &v1, &w1, &v2, &lambdas).unwrap();
        let smaller = ScalarFunction::max_affine(vec![0.0, 0.9], vec![0.0, -1.0], f64::INFINITY, (0.0, 10.0)).unwrap();
        assert!(matches!(
            verify_interpolation(&smaller, &v1, &w1, &v2, &lambdas),
            Err(Error::Certification(Failure::Interpolation { .. }))
        ));
    }
}

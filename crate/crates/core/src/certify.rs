//! Certificates for the drift, minorization and coupling hypotheses.
//!
//! Drift conditions are checked at Dirac masses, which is exact on a finite
//! space. Coupling is reported both in the pairwise form and as the exact
//! supremum over zero-mass measures, see [`coupling_measure_level`].

use serde::Serialize;

use crate::error::{Error, Failure, Result};
use crate::functions::ScalarFunction;
use crate::kernel::{dual_apply, hash_values, left_mul, StochasticKernel};
use crate::measure::{check_len, WeightFunction};

#[derive(Clone, Debug, Serialize)]
pub struct DoeblinCert {
    pub alpha: f64,
    pub eta: Vec<f64>,
    pub source_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HarrisCert {
    pub alpha: f64,
    pub eta: Vec<f64>,
    pub set_c: Vec<usize>,
    pub r: f64,
    /// Power of the kernel the minorization was found for.
    pub power: usize,
    pub weight_hash: String,
    pub source_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovCert {
    pub gamma_l: f64,
    pub k: f64,
    pub worst_state: usize,
    pub weight_hash: String,
    pub source_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakLyapunovCert {
    pub sigma_bar: f64,
    pub k: f64,
    /// Which function the weight `φ(V)` came from.
    pub phi: String,
    /// `V` at each state.
    pub v: Vec<f64>,
    /// `φ(V)` at each state.
    pub phi_v: Vec<f64>,
    pub source_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingCert {
    pub a: f64,
    /// Pairwise constant over `{V(x) + V(y) ≤ A}`.
    pub gamma_h: f64,
    /// Supremum of `‖S^N ν‖/‖ν‖` over zero-mass `ν` with `‖ν‖_V ≤ A‖ν‖`.
    pub measure_gamma_h: f64,
    pub n: usize,
    pub witness: Option<(usize, usize)>,
    pub weight_hash: String,
    pub source_hash: String,
}

impl CouplingCert {
    /// Constant that the rate theorems may use.
    pub fn certified_gamma(&self) -> f64 {
        self.measure_gamma_h
    }

    /// The same constant holds for any larger weight at the same `A`.
    pub fn transfer_to_larger_weight(&self, small: &[f64], large: &[f64]) -> Result<CouplingCert> {
        check_len(small.len(), large.len())?;
        if hash_values("weight", small) != self.weight_hash {
            return Err(Error::param("small", "weight does not match the certificate"));
        }
        if let Some(x) = (0..small.len()).find(|&x| large[x] < small[x]) {
            return Err(Error::Hypothesis(format!("weight transfer needs a pointwise larger weight, fails at state {x}")));
        }
        Ok(CouplingCert { weight_hash: hash_values("weight", large), ..self.clone() })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComposeReport {
    pub passed: bool,
    pub worst_margin: f64,
    pub worst_state: usize,
}

pub fn check_doeblin(s: &StochasticKernel) -> Result<DoeblinCert> {
    let all: Vec<usize> = (0..s.size()).collect();
    let (alpha, mins) = column_minima(s, &all);
    if alpha <= 0.0 {
        let zero_columns = (0..s.size()).filter(|&y| mins[y] <= 0.0).collect();
        return Err(Failure::DoeblinZero { zero_columns }.into());
    }
    Ok(DoeblinCert {
        alpha,
        eta: mins.iter().map(|m| m / alpha).collect(),
        source_hash: s.content_hash(),
    })
}

fn column_minima(s: &StochasticKernel, rows: &[usize]) -> (f64, Vec<f64>) {
    let n = s.size();
    let mins: Vec<f64> = (0..n)
        .map(|y| rows.iter().map(|&x| s.entry(x, y)).fold(f64::INFINITY, f64::min))
        .collect();
    (mins.iter().sum(), mins)
}

pub fn check_harris(s: &StochasticKernel, v: &WeightFunction, r: f64) -> Result<HarrisCert> {
    check_harris_weights(s, v.values(), r, 1)
}

/// Harris condition for `S^power` on `{w ≤ r}` for an arbitrary weight `w`.
pub fn check_harris_weights(s: &StochasticKernel, w: &[f64], r: f64, power: usize) -> Result<HarrisCert> {
    check_len(s.size(), w.len())?;
    if !(r > 0.0) {
        return Err(Error::param("r", "must be positive"));
    }
    if power == 0 {
        return Err(Error::param("power", "must be at least 1"));
    }
    if power == 1 {
        harris_on_power(s, s, w, r, 1)
    } else {
        harris_on_power(s, &s.power(power), w, r, power)
    }
}

/// Harris check with `S^power` already computed as `sp`.
pub(crate) fn harris_on_power(s: &StochasticKernel, sp: &StochasticKernel, w: &[f64], r: f64, power: usize) -> Result<HarrisCert> {
    let set_c: Vec<usize> = (0..w.len()).filter(|&x| w[x] <= r).collect();
    if set_c.is_empty() {
        return Err(Failure::HarrisEmptySet { r }.into());
    }
    let (alpha, mins) = column_minima(sp, &set_c);
    if alpha <= 0.0 {
        return Err(Failure::HarrisZero { r, set: set_c }.into());
    }
    Ok(HarrisCert {
        alpha: alpha.min(1.0),
        eta: mins.iter().map(|m| m / alpha).collect(),
        set_c,
        r,
        power,
        weight_hash: hash_values("weight", w),
        source_hash: s.content_hash(),
    })
}

/// `max_x (PV(x) − K)/V(x)` clamped at 0, with the maximizing state.
pub fn lyapunov_gamma(pv: &[f64], v: &[f64], k: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for x in 0..v.len() {
        let ratio = (pv[x] - k) / v[x];
        if ratio > best.0 {
            best = (ratio, x);
        }
    }
    (best.0.max(0.0), best.1)
}

/// Quantiles `{0.5, 0.75, 0.9, 0.95, 1}` of `PV` over the states.
pub fn default_k_grid(pv: &[f64]) -> Vec<f64> {
    let mut sorted = pv.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut grid: Vec<f64> = [0.5, 0.75, 0.9, 0.95, 1.0]
        .iter()
        .map(|q| sorted[((q * (n - 1) as f64).round() as usize).min(n - 1)])
        .collect();
    grid.dedup();
    grid
}

#[derive(Clone, Copy, Debug)]
pub enum LyapunovObjective {
    MinGammaL,
    /// Minimize the Harris rate for a coupling constant at threshold `a`.
    MinHarrisGamma { gamma_h: f64, a: f64 },
}

pub fn check_lyapunov(
    s: &StochasticKernel,
    v: &WeightFunction,
    k_grid: Option<&[f64]>,
    objective: LyapunovObjective,
) -> Result<LyapunovCert> {
    let pv = dual_apply(s, v.values())?;
    let grid = match k_grid {
        Some(g) => g.to_vec(),
        None => default_k_grid(&pv),
    };
    if grid.is_empty() || grid.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
        return Err(Error::param("k_grid", "must be nonempty with finite entries >= 0"));
    }
    let mut best: Option<(f64, f64, usize, f64)> = None;
    let mut worst_failure = (f64::NEG_INFINITY, 0usize);
    for &k in &grid {
        let (g, x) = lyapunov_gamma(&pv, v.values(), k);
        if g >= 1.0 {
            if g > worst_failure.0 {
                worst_failure = (g, x);
            }
            continue;
        }
        let score = match objective {
            LyapunovObjective::MinGammaL => g,
            LyapunovObjective::MinHarrisGamma { gamma_h, a } => {
                match crate::geometric::harris_gamma(gamma_h, g, k, a) {
                    Some(gamma) => gamma,
                    None => continue,
                }
            }
        };
        if best.map_or(true, |b| score < b.3) {
            best = Some((g, k, x, score));
        }
    }
    match best {
        Some((gamma_l, k, worst_state, _)) => Ok(LyapunovCert {
            gamma_l,
            k,
            worst_state,
            weight_hash: hash_values("weight", v.values()),
            source_hash: s.content_hash(),
        }),
        None => {
            let (ratio, state) = if worst_failure.0.is_finite() {
                worst_failure
            } else {
                let (g, x) = lyapunov_gamma(&pv, v.values(), grid[grid.len() - 1]);
                (g, x)
            };
            Err(Failure::Lyapunov { state, ratio }.into())
        }
    }
}

/// Lower clamp of `K(ς)`; any positive value keeps the inequality true.
pub const WEAK_K_FLOOR: f64 = 1e-9;

/// `max_x (PV(x) + ς w(x) − V(x))` and its maximizer, unclamped.
pub fn weak_lyapunov_constant(pv: &[f64], v: &[f64], w: &[f64], sigma: f64) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for x in 0..v.len() {
        let d = pv[x] + sigma * w[x] - v[x];
        if d > best.0 {
            best = (d, x);
        }
    }
    best
}

pub fn default_sigma_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

pub fn check_weak_lyapunov(
    s: &StochasticKernel,
    v: &WeightFunction,
    phi: &ScalarFunction,
    sigma_grid: Option<&[f64]>,
    a: Option<f64>,
) -> Result<WeakLyapunovCert> {
    phi.validate_phi()?;
    let w: Vec<f64> = v.values().iter().map(|&x| phi.eval(x)).collect();
    check_weak_lyapunov_values(s, v, w, phi.describe(), sigma_grid, a)
}

/// Weak drift for a weight given by its values at the states.
///
/// Used for derived weights such as `ψ′(V)φ(V)`, which need not come from a
/// concave function of the new Lyapunov weight.
pub fn check_weak_lyapunov_values(
    s: &StochasticKernel,
    v: &WeightFunction,
    w: Vec<f64>,
    phi: String,
    sigma_grid: Option<&[f64]>,
    a: Option<f64>,
) -> Result<WeakLyapunovCert> {
    check_len(s.size(), v.len())?;
    check_len(v.len(), w.len())?;
    if let Some(x) = w.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidWeight(format!("phi(V) at state {x} is not positive")));
    }
    let grid = sigma_grid.map(|g| g.to_vec()).unwrap_or_else(default_sigma_grid);
    if grid.is_empty() || grid.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
        return Err(Error::param("sigma_grid", "entries must lie in (0, 1)"));
    }
    let pv = dual_apply(s, v.values())?;
    let mut best: Option<(f64, f64, f64)> = None;
    for &sigma in &grid {
        let k = weak_lyapunov_constant(&pv, v.values(), &w, sigma).0.max(WEAK_K_FLOOR);
        let score = match a {
            Some(a) => sigma - k / a,
            None => sigma / k,
        };
        if best.map_or(true, |b| score > b.2) {
            best = Some((sigma, k, score));
        }
    }
    let (sigma_bar, k, score) = best.expect("grid is nonempty");
    if let Some(a) = a {
        if score <= 0.0 {
            return Err(Failure::WeakLyapunov {
                reason: format!("no sigma on the grid gives sigma - K/A > 0 for A = {a}"),
            }
            .into());
        }
    }
    Ok(WeakLyapunovCert { sigma_bar, k, phi, v: v.values().to_vec(), phi_v: w, source_hash: s.content_hash() })
}

/// Pairwise coupling constant of `S^N` over `{V(x) + V(y) ≤ A}`.
pub fn check_local_coupling(s: &StochasticKernel, v: &WeightFunction, a: f64, n: usize) -> Result<CouplingCert> {
    check_local_coupling_weights(s, v.values(), a, n)
}

pub fn check_local_coupling_weights(s: &StochasticKernel, w: &[f64], a: f64, n: usize) -> Result<CouplingCert> {
    check_len(s.size(), w.len())?;
    if !(a > 0.0) {
        return Err(Error::param("a", "must be positive"));
    }
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let sn = s.power(n);
    let size = s.size();
    let mut best: Option<(f64, usize, usize)> = None;
    for x in 0..size {
        for y in x..size {
            if w[x] + w[y] > a {
                continue;
            }
            let tv: f64 = (0..size).map(|z| (sn.entry(x, z) - sn.entry(y, z)).abs()).sum();
            let g = 0.5 * tv;
            if best.map_or(true, |b| g > b.0) {
                best = Some((g, x, y));
            }
        }
    }
    let Some((gamma_h, x, y)) = best else {
        return Err(Failure::CouplingVacuous { a }.into());
    };
    if gamma_h >= 1.0 {
        return Err(Failure::Coupling { gamma_h, x, y }.into());
    }
    let (measure_gamma_h, _) = coupling_measure_level(&sn, w, a);
    Ok(CouplingCert {
        a,
        gamma_h,
        measure_gamma_h,
        n,
        witness: Some((x, y)),
        weight_hash: hash_values("weight", w),
        source_hash: s.content_hash(),
    })
}

/// Exact `sup ‖Tν‖/‖ν‖` over zero-mass `ν ≠ 0` with `‖ν‖_w ≤ A‖ν‖`.
///
/// Writing `ν = c(p − q)` with probability vectors `p, q`, the constraint is
/// `⟨w, p + q⟩ ≤ 2A` and the objective `‖T(p − q)‖/2` is convex, so the
/// supremum sits at a vertex of that polytope: a pair of Dirac masses, or a
/// Dirac mass paired with a point where the constraint cuts an edge
/// `t δ_x + (1 − t) δ_x'`. Returns the constant and whether the set was empty.
pub fn coupling_measure_level(t: &StochasticKernel, w: &[f64], a: f64) -> (f64, bool) {
    let n = t.size();
    let budget = 2.0 * a;
    let rows: Vec<Vec<f64>> = (0..n).map(|x| t.row(x)).collect();
    let mut best: f64 = 0.0;
    let mut any = false;
    let dist = |p: &[f64], q: &[f64]| -> f64 { p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() };
    let mut mix = vec![0.0; n];
    for y in 0..n {
        for x in 0..n {
            if w[x] + w[y] <= budget {
                any = true;
                if x != y {
                    best = best.max(dist(&rows[x], &rows[y]));
                }
            }
        }
        // p on the edge between δ_x (inside) and δ_x' (outside), q = δ_y
        let room = budget - w[y];
        for x in 0..n {
            if w[x] > room {
                continue;
            }
            for xp in 0..n {
                if w[xp] <= room {
                    continue;
                }
                let t_mix = (w[xp] - room) / (w[xp] - w[x]);
                for z in 0..n {
                    mix[z] = t_mix * rows[x][z] + (1.0 - t_mix) * rows[xp][z];
                }
                best = best.max(dist(&mix, &rows[y]));
            }
        }
    }
    (0.5 * best, !any)
}

/// Coupling from a Harris minorization with `A < R/2`.
pub fn harris_to_coupling(cert: &HarrisCert, a: f64) -> Result<CouplingCert> {
    if !(a > 0.0 && a < cert.r / 2.0) {
        return Err(Error::param("a", format!("must lie in (0, R/2) = (0, {})", cert.r / 2.0)));
    }
    let gamma_h = 1.0 - cert.alpha * (1.0 - 2.0 * a / cert.r);
    Ok(CouplingCert {
        a,
        gamma_h,
        measure_gamma_h: gamma_h,
        n: cert.power,
        witness: None,
        weight_hash: cert.weight_hash.clone(),
        source_hash: cert.source_hash.clone(),
    })
}

/// Pointwise check of `Pψ(V) ≤ ψ(V) − ςψ′(V)φ(V) + Kψ′(V)`.
pub fn concave_compose_bound(
    s: &StochasticKernel,
    v: &WeightFunction,
    phi: &ScalarFunction,
    psi: &ScalarFunction,
    sigma_bar: f64,
    k: f64,
) -> Result<ComposeReport> {
    check_len(s.size(), v.len())?;
    let psi_v: Vec<f64> = v.values().iter().map(|&x| psi.eval(x)).collect();
    let p_psi = dual_apply(s, &psi_v)?;
    let mut worst = (f64::INFINITY, 0usize);
    for x in 0..v.len() {
        let vx = v.values()[x];
        let d = psi.derivative(vx);
        let rhs = psi_v[x] - sigma_bar * d * phi.eval(vx) + k * d;
        let margin = rhs - p_psi[x];
        if margin < worst.0 {
            worst = (margin, x);
        }
    }
    Ok(ComposeReport { passed: worst.0 >= -1e-10, worst_margin: worst.0, worst_state: worst.1 })
}

/// `‖S^N δ_x − S^N δ_y‖` for all pairs, mostly for diagnostics.
pub fn pair_distance(s: &StochasticKernel, x: usize, y: usize) -> f64 {
    let n = s.size();
    let mut e = vec![0.0; n];
    e[x] += 1.0;
    e[y] -= 1.0;
    left_mul(s.matrix(), &e).iter().map(|v| v.abs()).sum()
}

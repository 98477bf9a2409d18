//! Geometric envelopes: Doeblin, Harris with the optimal triple-norm weight,
//! the 2×2 matrix criterion and the continuous-time transfers.

use serde::Serialize;

use crate::certify::{check_local_coupling_weights, check_lyapunov, harris_to_coupling, CouplingCert, DoeblinCert, HarrisCert, LyapunovCert, LyapunovObjective};
use crate::error::{Error, Failure, Result};
use crate::kernel::{dual_apply, SemigroupGrowth, StochasticKernel};
use crate::measure::WeightFunction;
use crate::quad::golden_min;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormTag {
    Tv,
    Weighted,
    Triple,
}

/// `‖Sⁿν‖_out ≤ C·γ^{⌊n/step⌋}‖ν‖_in`, or `C·e^{−λt}` in continuous time.
#[derive(Clone, Debug, Serialize)]
pub struct GeometricEnvelope {
    pub c: f64,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub step: usize,
    pub norm: NormTag,
    pub input_norm: NormTag,
}

impl GeometricEnvelope {
    pub fn discrete(c: f64, gamma: f64, norm: NormTag, input_norm: NormTag) -> Self {
        GeometricEnvelope { c, gamma: Some(gamma), lambda: None, step: 1, norm, input_norm }
    }

    pub fn continuous(c: f64, lambda: f64, norm: NormTag, input_norm: NormTag) -> Self {
        GeometricEnvelope { c, gamma: None, lambda: Some(lambda), step: 1, norm, input_norm }
    }

    /// Bound at step (or time) `n`.
    pub fn eval(&self, n: f64) -> f64 {
        match (self.gamma, self.lambda) {
            (Some(g), _) => {
                let blocks = (n / self.step as f64).floor() as i32;
                self.c * g.powi(blocks)
            }
            (None, Some(l)) => self.c * (-l * n).exp(),
            (None, None) => self.c,
        }
    }
}

pub fn doeblin_rate(cert: &DoeblinCert) -> GeometricEnvelope {
    GeometricEnvelope::discrete(1.0, 1.0 - cert.alpha, NormTag::Tv, NormTag::Tv)
}

/// `(a, b) = (1 − γ_H, 1 − γ_L − K/A)`.
fn harris_ab(gamma_h: f64, gamma_l: f64, k: f64, a: f64) -> Result<(f64, f64)> {
    if !(gamma_h >= 0.0 && gamma_h < 1.0) {
        return Err(Error::param("gamma_h", format!("must lie in [0, 1), got {gamma_h}")));
    }
    if !(gamma_l >= 0.0 && gamma_l < 1.0) {
        return Err(Error::param("gamma_l", format!("must lie in [0, 1), got {gamma_l}")));
    }
    if !(k >= 0.0) || !(a > 0.0) {
        return Err(Error::param("k", "needs K >= 0 and A > 0"));
    }
    let b = 1.0 - gamma_l - k / a;
    if !(b > 0.0) {
        return Err(Failure::Precondition { inequality: format!("K/A = {} < 1 - gamma_L = {}", k / a, 1.0 - gamma_l) }.into());
    }
    Ok((1.0 - gamma_h, b))
}

fn gamma_of(beta: f64, gamma_h: f64, k: f64, b: f64) -> f64 {
    (gamma_h + beta * k).max(1.0 - beta / (1.0 + beta) * b)
}

/// Upper end of the β search when the quadratic does not apply.
const BETA_MAX: f64 = 1e3;

/// The β balancing both branches of the Harris rate, or the numerical
/// minimizer when they cannot be balanced inside `(0, 1)`.
///
/// Returns `(β, equalized)`.
pub fn harris_beta(gamma_h: f64, gamma_l: f64, k: f64, a: f64) -> Result<(f64, bool)> {
    let (aa, b) = harris_ab(gamma_h, gamma_l, k, a)?;
    if k > 0.0 {
        let p = k + b - aa;
        let disc = (p * p + 4.0 * k * aa).sqrt();
        // root of Kβ² + pβ − a, written to avoid cancellation
        let beta = if p > 0.0 { 2.0 * aa / (p + disc) } else { (disc - p) / (2.0 * k) };
        let g1 = gamma_h + beta * k;
        let g2 = 1.0 - beta / (1.0 + beta) * b;
        if beta > 0.0 && g1 > 0.0 && g1 < 1.0 && g2 > 0.0 && g2 < 1.0 {
            return Ok((beta, true));
        }
    }
    let (beta, _) = golden_min(&|bt| gamma_of(bt, gamma_h, k, b), 1e-12, BETA_MAX, 1e-12);
    Ok((beta, false))
}

pub fn harris_beta_optimal(gamma_h: f64, gamma_l: f64, k: f64, a: f64) -> Result<f64> {
    harris_beta(gamma_h, gamma_l, k, a).map(|r| r.0)
}

/// Harris rate at the optimal β, `None` when the hypotheses fail.
pub fn harris_gamma(gamma_h: f64, gamma_l: f64, k: f64, a: f64) -> Option<f64> {
    let (beta, _) = harris_beta(gamma_h, gamma_l, k, a).ok()?;
    let b = 1.0 - gamma_l - k / a;
    Some(gamma_of(beta, gamma_h, k, b))
}

#[derive(Clone, Debug, Serialize)]
pub struct HarrisRate {
    /// V-weighted envelope of `S^N`, one block per step of `step`.
    pub envelope: GeometricEnvelope,
    pub beta: f64,
    /// Contraction of `‖·‖ + β‖·‖_V` per block.
    pub gamma: f64,
    pub equalized: bool,
}

/// Harris envelope for the power `S^N` the certificates were found for.
pub fn harris_rate(lyap: &LyapunovCert, coup: &CouplingCert) -> Result<HarrisRate> {
    if lyap.source_hash != coup.source_hash && coup.n == 1 {
        return Err(Error::param("certificates", "certificates come from different kernels"));
    }
    if lyap.weight_hash != coup.weight_hash {
        return Err(Error::param("certificates", "Lyapunov and coupling weights differ"));
    }
    let gamma_h = coup.certified_gamma();
    let (beta, equalized) = harris_beta(gamma_h, lyap.gamma_l, lyap.k, coup.a)?;
    let b = 1.0 - lyap.gamma_l - lyap.k / coup.a;
    let gamma = gamma_of(beta, gamma_h, lyap.k, b);
    if !(gamma < 1.0) {
        return Err(Failure::Precondition { inequality: format!("Harris rate {gamma} < 1") }.into());
    }
    let mut envelope = GeometricEnvelope::discrete((1.0 + beta) / beta, gamma, NormTag::Weighted, NormTag::Weighted);
    envelope.step = coup.n;
    Ok(HarrisRate { envelope, beta, gamma, equalized })
}

/// `max_{j<N} max_x (P^jV)(x)/V(x)`: the V-growth inside one block.
pub fn block_growth(s: &StochasticKernel, v: &WeightFunction, n: usize) -> Result<f64> {
    let mut pv = v.values().to_vec();
    let mut g: f64 = 1.0;
    for _ in 1..n {
        pv = dual_apply(s, &pv)?;
        for x in 0..pv.len() {
            g = g.max(pv[x] / v.values()[x]);
        }
    }
    Ok(g)
}

/// Turns a block envelope of `S^N` into envelopes for `Sⁿ` in TV and V-norm,
/// both relative to `‖ν‖_V`.
pub fn harris_full_sequence(s: &StochasticKernel, v: &WeightFunction, rate: &HarrisRate) -> Result<(GeometricEnvelope, GeometricEnvelope)> {
    let g = block_growth(s, v, rate.envelope.step)?;
    let mut weighted = rate.envelope.clone();
    weighted.c *= g;
    let mut tv = rate.envelope.clone();
    tv.norm = NormTag::Tv;
    Ok((tv, weighted))
}

/// Spectral radius of `[[γ_L, K], [(1 − γ_H)/A, γ_H]]`.
///
/// Written as `1 − ab/(1 − λ_min)`, so `ρ < 1` exactly when `b > 0`.
pub fn coupling_matrix_rate(gamma_l: f64, k: f64, gamma_h: f64, a: f64) -> f64 {
    let off = k * (1.0 - gamma_h) / a;
    let half = 0.5 * (gamma_l - gamma_h);
    let lambda_min = 0.5 * (gamma_l + gamma_h) - (half * half + off).sqrt();
    let ab = (1.0 - gamma_h) * (1.0 - gamma_l - k / a);
    1.0 - ab / (1.0 - lambda_min)
}

pub fn semigroup_doeblin_rate(alpha: f64, t: f64) -> Result<GeometricEnvelope> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    Ok(GeometricEnvelope::continuous(1.0 / (1.0 - alpha), -(1.0 - alpha).ln() / t, NormTag::Tv, NormTag::Tv))
}

pub fn semigroup_harris_rate(gamma: f64, growth: &SemigroupGrowth, beta: f64, t: f64) -> Result<GeometricEnvelope> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    if !(beta > 0.0) || !(t > 0.0) {
        return Err(Error::param("beta", "beta and T must be positive"));
    }
    let c = growth.c_v * (growth.omega_v * t).exp() * (1.0 + beta) / (gamma * beta);
    Ok(GeometricEnvelope::continuous(c, -gamma.ln() / t, NormTag::Weighted, NormTag::Weighted))
}

/// One certified Harris route: the certificates for `S^N` and the
/// resulting per-step envelopes relative to `‖ν‖_V`.
#[derive(Clone, Debug, Serialize)]
pub struct GeometricRoute {
    pub lyapunov: LyapunovCert,
    pub coupling: CouplingCert,
    /// Present when the coupling came from a minorization on `{V ≤ R}`.
    pub harris: Option<HarrisCert>,
    pub rate: HarrisRate,
    pub tv: GeometricEnvelope,
    pub weighted: GeometricEnvelope,
}

impl GeometricRoute {
    fn per_step(&self) -> f64 {
        self.rate.gamma.powf(1.0 / self.rate.envelope.step as f64)
    }
}

/// Searches powers `N`, drift constants `K` and thresholds `A` for the
/// fastest per-step Harris rate.
///
/// For each `N` the drift of `S^N` is tried at the quantile grid of `P^N V`;
/// `A` runs over multiples of `K/(1 − γ_L)`. The coupling is the local one
/// on `{V(x) + V(y) ≤ A}`, and additionally the one from a minorization on
/// `{V ≤ R}` when `harris_r` is given.
pub fn geometric_route(s: &StochasticKernel, v: &WeightFunction, n_candidates: &[usize], a_factors: &[f64], harris_r: Option<f64>) -> Result<GeometricRoute> {
    let mut best: Option<GeometricRoute> = None;
    let mut last_err = None;
    let consider = |lyapunov: &LyapunovCert, coupling: CouplingCert, harris: Option<HarrisCert>, best: &mut Option<GeometricRoute>| -> Result<()> {
        let rate = harris_rate(lyapunov, &coupling)?;
        let (tv, weighted) = harris_full_sequence(s, v, &rate)?;
        let cand = GeometricRoute { lyapunov: lyapunov.clone(), coupling, harris, rate, tv, weighted };
        if best.as_ref().map_or(true, |b| cand.per_step() < b.per_step()) {
            *best = Some(cand);
        }
        Ok(())
    };
    for &n in n_candidates {
        let sp = s.power(n);
        let harris = match harris_r {
            Some(r) => match crate::certify::harris_on_power(s, &sp, v.values(), r, n) {
                Ok(h) => Some(h),
                Err(e) => {
                    last_err = Some(e);
                    None
                }
            },
            None => None,
        };
        let pv = dual_apply(&sp, v.values())?;
        for k in crate::certify::default_k_grid(&pv) {
            let lyapunov = match check_lyapunov(&sp, v, Some(&[k]), LyapunovObjective::MinGammaL) {
                Ok(l) => l,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let floor = lyapunov.k / (1.0 - lyapunov.gamma_l);
            for &c in a_factors {
                let a = c * floor;
                match check_local_coupling_weights(s, v.values(), a, n) {
                    Ok(cp) => {
                        if let Err(e) = consider(&lyapunov, cp, None, &mut best) {
                            last_err = Some(e);
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
                if let Some(h) = &harris {
                    if a < h.r / 2.0 {
                        let cp = harris_to_coupling(h, a)?;
                        if let Err(e) = consider(&lyapunov, cp, Some(h.clone()), &mut best) {
                            last_err = Some(e);
                        }
                    }
                }
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::param("n_candidates", "no candidate powers")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remark_examples() {
        let beta = harris_beta_optimal(0.5, 0.5, 1.0, 4.0).unwrap();
        assert!((beta - (-0.75 + 2.5625f64.sqrt()) / 2.0).abs() < 1e-14);
        let g = harris_gamma(0.5, 0.5, 1.0, 4.0).unwrap();
        assert!((g - (0.5 + beta)).abs() < 1e-14);
        assert!((1.0 - beta / (1.0 + beta) * 0.25 - g).abs() < 1e-14);
        // a = b, K = 1
        let a = 0.3;
        let (gh, gl, k, aa) = (1.0 - a, 1.0 - a - 0.1, 1.0, 10.0);
        let beta = harris_beta_optimal(gh, gl, k, aa).unwrap();
        assert!((beta - (-1.0 + (1.0 + 4.0 * a).sqrt()) / 2.0).abs() < 1e-14);
        // K = 0: exact infimum is max(γ_H, 1 − b), approached for large β
        let g0 = harris_gamma(0.5, 0.75, 0.0, 4.0).unwrap();
        assert!(g0 >= 0.75 && g0 - 0.75 < 1e-3);
        assert!(harris_beta_optimal(0.5, 0.5, 2.0, 4.0).is_err());
    }

    #[test]
    fn matrix_examples() {
        assert!((coupling_matrix_rate(0.3, 0.0, 0.6, 2.0) - 0.6).abs() < 1e-15);
        let rho = coupling_matrix_rate(0.5, 1.0, 0.5, 4.0);
        assert!((rho - (0.5 + 0.125f64.sqrt())).abs() < 1e-14);
        assert!((coupling_matrix_rate(0.5, 2.0, 0.5, 4.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn continuous_examples() {
        let e = semigroup_doeblin_rate(1.0 - (-1.0f64).exp(), 1.0).unwrap();
        assert!((e.lambda.unwrap() - 1.0).abs() < 1e-15 && (e.c - 1f64.exp()).abs() < 1e-14);
        let e = semigroup_doeblin_rate(0.5, 2.0).unwrap();
        assert!((e.lambda.unwrap() - 2f64.ln() / 2.0).abs() < 1e-15 && (e.c - 2.0).abs() < 1e-15);
        let g = SemigroupGrowth::new(1.0, 0.0).unwrap();
        let e = semigroup_harris_rate(0.5, &g, 1.0, 1.0).unwrap();
        assert!((e.c - 4.0).abs() < 1e-15 && (e.lambda.unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn doeblin_tight_example() {
        let e = GeometricEnvelope::discrete(1.0, 0.3, NormTag::Tv, NormTag::Tv);
        assert!((e.eval(1.0) * 2.0 - 0.6).abs() < 1e-15);
        assert!((e.eval(10.0) - 0.3f64.powi(10)).abs() < 1e-20);
    }
}

//! Continuous time: generator drift certificates, the time-`t` implicit drift
//! and its explicit form, the semigroup transfers of the discrete rates and
//! Cesàro averages.
//!
//! Every semigroup-level inequality derived from a generator certificate is
//! re-checked on `exp(tL)` before it is used.

use serde::Serialize;

use crate::certify::{
    check_doeblin, check_local_coupling_weights, check_lyapunov, weak_lyapunov_constant, DoeblinCert, LyapunovCert,
    LyapunovObjective, WeakLyapunovCert,
};
use crate::error::{Error, Failure, Result};
use crate::functions::{ScalarFunction, Shape};
use crate::geometric::{harris_rate, semigroup_doeblin_rate, semigroup_harris_rate, GeometricEnvelope, HarrisRate};
use crate::kernel::{dual_apply, left_mul, semigroup_at, GeneratorMatrix, SemigroupGrowth, StochasticKernel};
use crate::measure::{check_len, total_variation, SignedMeasure, WeightFunction};
use crate::quad::{bisect_increasing, integrate_fixed};
use crate::subgeometric::{
    exact_interpolation, feller_pipeline, interpolated_route, shift_constant, interpolation_rate, FellerPipeline, RateFunction,
    RouteOptions, RouteResult, InterpolationRate, InterpolationOptions,
};

/// Slack allowed when a derived semigroup inequality is re-checked.
const RECHECK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftKind {
    /// `LV ≤ −σV + b`.
    Geometric,
    /// `LV ≤ −σφ(V) + b`.
    Weak { phi: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct GeneratorLyapunovCert {
    pub sigma: f64,
    pub b: f64,
    pub kind: DriftKind,
    pub v: Vec<f64>,
    /// `V` or `φ(V)` at each state.
    pub target: Vec<f64>,
    /// `LV ≥ 0` everywhere: the inequality holds but carries no drift.
    pub degenerate: bool,
    pub source_hash: String,
}

/// Fits `LV ≤ −σ·target + b`.
///
/// `b(σ) = max_x (LV(x) + σ target(x))⁺` is convex and piecewise linear, so
/// both objectives are optimized at one of its breakpoints. With `A` the
/// objective is `σ − b/A`, otherwise `σ/b` (ties go to the larger σ).
pub fn check_generator_lyapunov(
    l: &GeneratorMatrix,
    v: &WeightFunction,
    phi: Option<&ScalarFunction>,
    a: Option<f64>,
) -> Result<GeneratorLyapunovCert> {
    check_len(l.size(), v.len())?;
    let (target, kind) = match phi {
        Some(p) => {
            p.validate_phi()?;
            (v.values().iter().map(|&x| p.eval(x)).collect::<Vec<_>>(), DriftKind::Weak { phi: p.describe() })
        }
        None => (v.values().to_vec(), DriftKind::Geometric),
    };
    if let Some(a) = a {
        if !(a > 0.0) {
            return Err(Error::param("a", "must be positive"));
        }
    }
    let lv = l.act(v.values())?;
    let degenerate = lv.iter().all(|&d| d >= 0.0);
    let b_of = |sigma: f64| lv.iter().zip(&target).map(|(d, t)| d + sigma * t).fold(0.0_f64, f64::max);

    let mut cands: Vec<f64> = Vec::new();
    for x in 0..lv.len() {
        if target[x] > 0.0 && lv[x] < 0.0 {
            cands.push(-lv[x] / target[x]);
        }
        for y in 0..lv.len() {
            if target[y] > target[x] && lv[y] < lv[x] {
                cands.push((lv[x] - lv[y]) / (target[y] - target[x]));
            }
        }
    }
    // the last piece is unbounded; a large σ stands in for it
    let sigma_cap = 100.0 * l.exit_rate().max(1.0);
    cands.push(sigma_cap);
    cands.retain(|&s| s > 0.0 && s.is_finite() && s <= sigma_cap);

    let score = |s: f64, b: f64| match a {
        Some(a) => s - b / a,
        None => {
            if b > 0.0 {
                s / b
            } else {
                f64::INFINITY
            }
        }
    };
    let mut best: Option<(f64, f64, f64)> = None;
    for &s in &cands {
        let b = b_of(s);
        let sc = score(s, b);
        let better = match best {
            None => true,
            Some((bs, _, bsc)) => sc > bsc * (1.0 + 1e-12) || (sc >= bsc * (1.0 - 1e-12) && s > bs),
        };
        if better {
            best = Some((s, b, sc));
        }
    }
    let Some((sigma, b, sc)) = best else {
        return Err(Failure::GeneratorLyapunov { reason: "no positive sigma candidate".into() }.into());
    };
    if a.is_some() && !(sc > 0.0) {
        return Err(Failure::GeneratorLyapunov { reason: format!("no sigma gives sigma - b/A > 0 for A = {}", a.unwrap()) }.into());
    }
    // b = 0 only happens when every LV(x) + σ target(x) ≤ 0; keep it positive
    let b = b.max(1e-12);
    Ok(GeneratorLyapunovCert { sigma, b, kind, v: v.values().to_vec(), target, degenerate, source_hash: l.content_hash() })
}

/// Largest violation of `LV ≤ −σ·target + b` over the states.
pub fn generator_drift_excess(l: &GeneratorMatrix, cert: &GeneratorLyapunovCert) -> Result<f64> {
    let lv = l.act(&cert.v)?;
    Ok((0..lv.len()).map(|x| lv[x] + cert.sigma * cert.target[x] - cert.b).fold(f64::NEG_INFINITY, f64::max))
}

/// `(e^{−σt}, (b/σ)(1 − e^{−σt}))` at each grid time.
pub fn semigroup_lyapunov_envelope(cert: &GeneratorLyapunovCert, t_grid: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    if !matches!(cert.kind, DriftKind::Geometric) {
        return Err(Error::param("cert", "needs a geometric drift certificate"));
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let decay = (-cert.sigma * t).exp();
            (t, decay, cert.b / cert.sigma * (-(-cert.sigma * t).exp_m1()))
        })
        .collect())
}

/// Largest value of `(S_t V)(x) − e^{−σt}V(x) − c(t)` over the states;
/// nonpositive when the envelope holds at time `t`.
pub fn semigroup_lyapunov_excess(l: &GeneratorMatrix, cert: &GeneratorLyapunovCert, t: f64) -> Result<f64> {
    let env = semigroup_lyapunov_envelope(cert, &[t])?[0];
    let st = semigroup_at(l, t)?;
    let sv = dual_apply(&st, &cert.v)?;
    Ok((0..sv.len()).map(|x| sv[x] - env.1 * cert.v[x] - env.2).fold(f64::NEG_INFINITY, f64::max))
}

/// The implicit drift at time `t` from a weak generator certificate:
/// `(σt, bt(1 + σt/2))`.
pub fn implicit_drift_bound(cert: &GeneratorLyapunovCert, t: f64) -> Result<(f64, f64)> {
    if !matches!(cert.kind, DriftKind::Weak { .. }) {
        return Err(Error::param("cert", "needs a weak drift certificate"));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param("t", "must be positive"));
    }
    let st = cert.sigma * t;
    Ok((st, cert.b * t * (1.0 + st / 2.0)))
}

/// Largest value over states of `(SV)(x) + s(Sw)(x) − V(x) − K`, the pointwise
/// form of `‖Sμ‖_V + s‖Sμ‖_w ≤ ‖μ‖_V + K‖μ‖` on positive measures.
pub fn implicit_drift_excess(s: &StochasticKernel, v: &[f64], w: &[f64], sigma: f64, k: f64) -> Result<f64> {
    check_len(v.len(), w.len())?;
    let sv = dual_apply(s, v)?;
    let sw = dual_apply(s, w)?;
    Ok((0..v.len()).map(|x| sv[x] + sigma * sw[x] - v[x] - k).fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Debug)]
pub struct ExplicitDrift {
    pub v_tilde: WeightFunction,
    /// `φ̃` with `φ̃(Ṽ(x)) = φ(V(x))`.
    pub phi_tilde: ScalarFunction,
    /// `φ(V)` at each state, that is `φ̃(Ṽ)`.
    pub phi_v: Vec<f64>,
    pub varsigma: f64,
    pub k: f64,
}

/// `Ṽ = (V + σφ(V))/(1 + σ)`, `φ̃(Ṽ) = φ(V)`, `ς = σ/(1 + σ)`, `K̃ = K/(1 + σ)`.
pub fn implicit_to_explicit(v: &WeightFunction, phi: &ScalarFunction, sigma: f64, k: f64) -> Result<ExplicitDrift> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", "must be positive"));
    }
    if !(k >= 0.0) {
        return Err(Error::param("k", "must be nonnegative"));
    }
    let phi_v: Vec<f64> = v.values().iter().map(|&x| phi.eval(x)).collect();
    let vt: Vec<f64> = v.values().iter().zip(&phi_v).map(|(&x, &p)| (x + sigma * p) / (1.0 + sigma)).collect();
    let p = phi.clone();
    let g = move |x: f64| (x + sigma * p.eval(x)) / (1.0 + sigma);
    let p2 = phi.clone();
    let phi_tilde = ScalarFunction::custom(
        format!("phi_tilde[{}, sigma = {sigma}]", phi.describe()),
        move |u: f64| {
            if u <= 1.0 {
                return p2.eval(1.0);
            }
            let mut hi = u.max(2.0);
            while g(hi) < u {
                hi *= 2.0;
            }
            p2.eval(bisect_increasing(&|x| g(x) - u, 1.0, hi, 1e-14 * hi))
        },
        Shape::MonotoneOnly,
        (1.0, f64::INFINITY),
    )?;
    Ok(ExplicitDrift {
        v_tilde: WeightFunction::new(vt)?,
        phi_tilde,
        phi_v,
        varsigma: sigma / (1.0 + sigma),
        k: k / (1.0 + sigma),
    })
}

/// Discrete weak certificate for `S_{t₀}` from a weak generator certificate,
/// built through the implicit and explicit forms and re-checked on `S_{t₀}`.
///
/// If the re-check fails the directly computed constant is used instead,
/// so the certificate is always valid for the kernel it names.
pub fn weak_cert_at(l: &GeneratorMatrix, st0: &StochasticKernel, cert: &GeneratorLyapunovCert, t0: f64) -> Result<(WeakLyapunovCert, bool)> {
    let DriftKind::Weak { phi } = &cert.kind else {
        return Err(Error::param("cert", "needs a weak drift certificate"));
    };
    if cert.source_hash != l.content_hash() {
        return Err(Error::param("cert", "certificate is for a different generator"));
    }
    let (s_t, k_t) = implicit_drift_bound(cert, t0)?;
    let vt: Vec<f64> = cert.v.iter().zip(&cert.target).map(|(&x, &p)| (x + s_t * p) / (1.0 + s_t)).collect();
    let varsigma = s_t / (1.0 + s_t);
    let k_derived = k_t / (1.0 + s_t);
    let pv = dual_apply(st0, &vt)?;
    let (k_direct, _) = weak_lyapunov_constant(&pv, &vt, &cert.target, varsigma);
    let verified = k_direct <= k_derived + RECHECK_TOL * k_derived.max(1.0);
    let k = if verified { k_derived } else { k_direct.max(crate::certify::WEAK_K_FLOOR) };
    Ok((
        WeakLyapunovCert {
            sigma_bar: varsigma,
            k,
            phi: format!("tilde[{phi}]"),
            v: vt,
            phi_v: cert.target.clone(),
            source_hash: st0.content_hash(),
        },
        verified,
    ))
}

/// Step function of a discrete envelope turned into the continuous form
/// `C·Θ(ρt)` or `(C/t)·Θ(ρt)` valid on `[0, t_max]`.
#[derive(Clone, Debug, Serialize)]
pub struct ContinuousRate {
    pub t0: f64,
    pub n: usize,
    pub t_big: f64,
    pub v1: RateFunction,
    pub tv: RateFunction,
    pub t_max: f64,
    /// `sup_{s ≤ t₀}` growth of `‖S_s·‖_{Ṽ₁}`.
    pub growth: f64,
    /// Whether each derived drift passed its re-check on `S_{t₀}`.
    pub rechecked: [bool; 2],
}

/// Floors `t/t₀` and absorbs the shift with [`shift_constant`].
///
/// For `t ∈ [nt₀, (n+1)t₀)`: TV contracts, so `‖S_tν‖ ≤ (C/n)Θ(rn)`, and
/// `n ≥ t/(2t₀)` once `n ≥ 1`; before `t₀` the bound `‖ν‖ ≤ ‖ν‖_{V₂}` is used.
/// In the weighted norm the sub-step costs `growth`.
fn continuous_extension(th: &InterpolationRate, t0: f64, growth: f64, out_factor: f64, in_factor: f64, t_max: f64) -> (RateFunction, RateFunction) {
    let c = &th.constants;
    let integral = th.tv.integral().clone();
    let steps = t_max / t0;
    let sh_tv = shift_constant(&integral, c.r_tv, c.r_tv * (steps + 2.0));
    let sh_v1 = shift_constant(&integral, c.r_v1, c.r_v1 * (steps + 2.0));
    let c_tv = (2.0 * t0 * th.tv.prefactor * sh_tv * in_factor).max(t0 / integral.inverse(c.r_tv));
    let c_v1 = th.v1.prefactor * sh_v1 * growth * out_factor * in_factor;
    (th.v1.scaled(c_v1, c.r_v1 / t0, false), th.tv.scaled(c_tv, c.r_tv / t0, true))
}

/// `sup_x (LṼ)(x)⁺`, so that `S_sṼ ≤ Ṽ + cs` and the growth over `[0, t₀]`
/// is at most `1 + ct₀` since `Ṽ ≥ 1`.
fn growth_over(l: &GeneratorMatrix, v: &[f64], t0: f64) -> Result<f64> {
    let lv = l.act(v)?;
    let c = lv.iter().copied().fold(0.0_f64, f64::max);
    Ok(1.0 + c * t0)
}

#[derive(Clone, Debug)]
pub struct ContinuousSubgeometric {
    pub rate: ContinuousRate,
    pub theorem: InterpolationRate,
    pub wl1: WeakLyapunovCert,
    pub wl2: WeakLyapunovCert,
}

/// `N` for the interpolated continuous theorem: the smallest integer with
/// `(bᵢ/σᵢ)(1 + σᵢT/(2N)) < Aᵢ` for both certificates.
pub fn select_steps(g: &[&GeneratorLyapunovCert], t_big: f64, a: &[f64]) -> Result<usize> {
    const N_CAP: usize = 1_000_000;
    for (c, &ai) in g.iter().zip(a) {
        if !(c.b / c.sigma < ai) {
            return Err(Failure::Precondition { inequality: format!("b/sigma = {} < A = {ai}", c.b / c.sigma) }.into());
        }
    }
    let ok = |n: usize| g.iter().zip(a).all(|(c, &ai)| c.b / c.sigma * (1.0 + c.sigma * t_big / (2.0 * n as f64)) < ai);
    let mut hi = 1usize;
    while !ok(hi) {
        hi *= 2;
        if hi > N_CAP {
            return Err(Failure::Precondition { inequality: format!("no N <= {N_CAP} satisfies the step condition") }.into());
        }
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(if lo >= 1 && ok(lo) { lo } else { hi })
}

/// Interpolated continuous-time envelopes for weak generator certificates
/// on `V₁ ≤ V₂`, with the coupling checked on `S_T` at `A₁, A₂`.
///
/// A supplied ξ for `(V₁, φ₁(V₁), V₂)` is rescaled by `1 + σ₂t₀`, which
/// covers `Ṽ₁ ≤ V₁` and `Ṽ₂ ≥ V₂/(1 + σ₂t₀)`; without one the exact
/// interpolation of the tilde weights is used.
#[allow(clippy::too_many_arguments)]
pub fn continuous_subgeometric_rate(
    l: &GeneratorMatrix,
    g1: &GeneratorLyapunovCert,
    g2: &GeneratorLyapunovCert,
    t_big: f64,
    a: [f64; 2],
    xi: Option<&ScalarFunction>,
    t_max: f64,
) -> Result<ContinuousSubgeometric> {
    if !(t_big > 0.0) || !(t_max > 0.0) {
        return Err(Error::param("t", "T and t_max must be positive"));
    }
    let n = select_steps(&[g1, g2], t_big, &a)?;
    let t0 = t_big / n as f64;
    let st0 = semigroup_at(l, t0)?;
    let (wl1, ok1) = weak_cert_at(l, &st0, g1, t0)?;
    let (wl2, ok2) = weak_cert_at(l, &st0, g2, t0)?;
    let c1 = check_local_coupling_weights(&st0, &wl1.phi_v, a[0], n)?;
    let c2 = check_local_coupling_weights(&st0, &wl2.phi_v, a[1], n)?;
    let n_max = (t_max / t0).ceil() as usize + 1;
    let (xi_used, lambda_max) = match xi {
        Some(x) => {
            let scale = 1.0 + g2.sigma * t0;
            let base = x.clone();
            let scaled = ScalarFunction::custom(format!("{scale}·{}", x.describe()), move |lam| scale * base.eval(lam), Shape::MonotoneOnly, x.domain())?;
            let lm = exact_interpolation(&wl1.v, &wl1.phi_v, &wl2.v)?.1;
            (scaled, lm)
        }
        None => exact_interpolation(&wl1.v, &wl1.phi_v, &wl2.v)?,
    };
    let theorem = interpolation_rate(&wl1, &wl2, &c1, &c2, &xi_used, InterpolationOptions { n_max, lambda_max: Some(lambda_max) })?;
    let growth = growth_over(l, &wl1.v, t0)?;
    let out_factor = (0..wl1.v.len()).map(|x| g1.v[x] / wl1.v[x]).fold(0.0_f64, f64::max);
    let in_factor = (0..wl2.v.len()).map(|x| wl2.v[x] / g2.v[x]).fold(0.0_f64, f64::max);
    let (v1, tv) = continuous_extension(&theorem, t0, growth, out_factor, in_factor, t_max);
    Ok(ContinuousSubgeometric {
        rate: ContinuousRate { t0, n, t_big, v1, tv, t_max, growth, rechecked: [ok1, ok2] },
        theorem,
        wl1,
        wl2,
    })
}

#[derive(Clone, Debug)]
pub struct ContinuousFeller {
    pub rate: ContinuousRate,
    pub route: RouteResult,
    pub pipeline: FellerPipeline,
}

/// The Feller route on `S_{t₀}`, `t₀ = T/N`, with the tilde weights of a weak
/// generator certificate, extended to continuous time.
///
/// `N` ranges over `opts.n_candidates`; the discrete route then fixes `A`
/// and the Harris level (`φ₁(V₁) ≤ level` for `S_T`).
pub fn continuous_feller_rate(
    l: &GeneratorMatrix,
    g: &GeneratorLyapunovCert,
    phi: &ScalarFunction,
    psi: &ScalarFunction,
    r: f64,
    t_big: f64,
    t_max: f64,
    opts: &RouteOptions,
) -> Result<ContinuousFeller> {
    let pipeline = feller_pipeline(phi, psi, r)?;
    let mut best: Option<(f64, ContinuousFeller)> = None;
    let mut last_err = None;
    for &n in &opts.n_candidates {
        let t0 = t_big / n as f64;
        let attempt = || -> Result<ContinuousFeller> {
            let st0 = semigroup_at(l, t0)?;
            let (wl2, ok2) = weak_cert_at(l, &st0, g, t0)?;
            let v1 = WeightFunction::new(wl2.v.iter().map(|&v| psi.eval(v)).collect())?;
            let w1: Vec<f64> = wl2.v.iter().zip(&wl2.phi_v).map(|(&v, &w)| psi.derivative(v) * w).collect();
            let wl1 = crate::certify::check_weak_lyapunov_values(&st0, &v1, w1, format!("{}'·{}", psi.describe(), wl2.phi), None, None)?;
            let n_max = (t_max / t0).ceil() as usize + 1;
            let route_opts = RouteOptions { n_candidates: vec![n], n_max, ..opts.clone() };
            let route = interpolated_route(&st0, &wl1, &wl2, &route_opts)?;
            let growth = growth_over(l, &wl1.v, t0)?;
            // V₁ = ψ(Ṽ) is the output weight, Ṽ ≤ V on the input side when φ(v) ≤ v
            let in_factor = (0..wl2.v.len()).map(|x| wl2.v[x] / g.v[x]).fold(0.0_f64, f64::max);
            let (v1r, tv) = continuous_extension(&route.theorem, t0, growth, 1.0, in_factor, t_max);
            Ok(ContinuousFeller {
                rate: ContinuousRate { t0, n, t_big, v1: v1r, tv, t_max, growth, rechecked: [true, ok2] },
                route,
                pipeline: pipeline.clone(),
            })
        };
        match attempt() {
            Ok(c) => {
                let score = c.rate.tv.envelope(t_max);
                if score.is_finite() && best.as_ref().map_or(true, |b| score < b.0) {
                    best = Some((score, c));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|b| b.1).ok_or_else(|| last_err.unwrap_or_else(|| Error::param("n_candidates", "is empty")))
}

#[derive(Clone, Debug, Serialize)]
pub struct DoeblinTransfer {
    pub t_big: f64,
    pub cert: DoeblinCert,
    /// `(1/(1 − α))e^{−λt}` in TV.
    pub envelope: GeometricEnvelope,
}

/// Doeblin for `S_T` over the candidate `T`, keeping the largest rate `λ`.
pub fn doeblin_transfer(l: &GeneratorMatrix, t_candidates: &[f64]) -> Result<DoeblinTransfer> {
    let mut best: Option<DoeblinTransfer> = None;
    let mut last_err = None;
    for &t in t_candidates {
        let st = semigroup_at(l, t)?;
        match check_doeblin(&st) {
            Ok(cert) if cert.alpha < 1.0 => {
                let envelope = semigroup_doeblin_rate(cert.alpha, t)?;
                if best.as_ref().map_or(true, |b| envelope.lambda > b.envelope.lambda) {
                    best = Some(DoeblinTransfer { t_big: t, cert, envelope });
                }
            }
            Ok(cert) => {
                // α = 1: S_T forgets the start exactly
                let envelope = GeometricEnvelope::continuous(1.0 / (1.0 - 0.5), 2f64.ln() / t, crate::geometric::NormTag::Tv, crate::geometric::NormTag::Tv);
                best.get_or_insert(DoeblinTransfer { t_big: t, cert, envelope });
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::param("t_candidates", "is empty")))
}

#[derive(Clone, Debug, Serialize)]
pub struct HarrisTransfer {
    pub t_big: f64,
    pub lyapunov: LyapunovCert,
    pub harris: HarrisRate,
    pub growth: SemigroupGrowth,
    /// `C e^{−λt}` in the V-norm.
    pub envelope: GeometricEnvelope,
}

/// Harris for `S_T` from a geometric generator certificate.
///
/// The drift of `S_T` is checked directly, and the growth bound
/// `‖S_tμ‖_V ≤ (1 + b/σ)‖μ‖_V` comes from the generator certificate.
pub fn harris_transfer(l: &GeneratorMatrix, v: &WeightFunction, g: &GeneratorLyapunovCert, t_candidates: &[f64], a_factors: &[f64]) -> Result<HarrisTransfer> {
    if !matches!(g.kind, DriftKind::Geometric) {
        return Err(Error::param("g", "needs a geometric drift certificate"));
    }
    let growth = SemigroupGrowth::new(1.0 + g.b / g.sigma, 0.0)?;
    let mut best: Option<HarrisTransfer> = None;
    let mut last_err = None;
    for &t in t_candidates {
        let st = semigroup_at(l, t)?;
        for &c in a_factors {
            let attempt = || -> Result<HarrisTransfer> {
                let gamma_l = (-g.sigma * t).exp();
                let k = g.b / g.sigma * (1.0 - gamma_l);
                let a = c * k / (1.0 - gamma_l);
                let coup = check_local_coupling_weights(&st, v.values(), a, 1)?;
                let lyap = check_lyapunov(&st, v, Some(&[k]), LyapunovObjective::MinGammaL)?;
                let harris = harris_rate(&lyap, &coup)?;
                let envelope = semigroup_harris_rate(harris.gamma, &growth, harris.beta, t)?;
                Ok(HarrisTransfer { t_big: t, lyapunov: lyap, harris, growth, envelope })
            };
            match attempt() {
                Ok(h) => {
                    if best.as_ref().map_or(true, |b| h.envelope.lambda > b.envelope.lambda) {
                        best = Some(h);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::param("t_candidates", "is empty")))
}

/// Largest violation over states of the time-`t` concave drift
/// `S_tψ(V) + σ∫₀ᵗ S_s(ψ′(V)φ(V)) ds ≤ ψ(V) + bt ψ′(V)`.
pub fn concave_semigroup_excess(l: &GeneratorMatrix, g: &GeneratorLyapunovCert, psi: &ScalarFunction, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    let n = g.v.len();
    let psi_v: Vec<f64> = g.v.iter().map(|&x| psi.eval(x)).collect();
    let dpsi: Vec<f64> = g.v.iter().map(|&x| psi.derivative(x)).collect();
    let w: Vec<f64> = (0..n).map(|x| dpsi[x] * g.target[x]).collect();
    let st_psi = dual_apply(&semigroup_at(l, t)?, &psi_v)?;
    let mut integral = vec![0.0; n];
    for x in 0..n {
        integral[x] = integrate_fixed(
            &|s: f64| dual_apply(&semigroup_at(l, s).expect("finite time"), &w).expect("sizes match")[x],
            0.0,
            t,
            4,
        );
    }
    Ok((0..n)
        .map(|x| st_psi[x] + g.sigma * integral[x] - psi_v[x] - g.b * t * dpsi[x])
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Dynamics for [`cesaro_invariant`].
#[derive(Clone, Copy, Debug)]
pub enum Dynamics<'a> {
    Kernel(&'a StochasticKernel),
    Generator(&'a GeneratorMatrix),
}

#[derive(Clone, Debug, Serialize)]
pub struct CesaroResult {
    pub mu: Vec<f64>,
    pub horizon: f64,
    /// `‖Sμ_T − μ_T‖` (one unit of time for a generator).
    pub residual: f64,
    pub converged: bool,
    /// Averaged `φ(V)`-moment against `(‖μ₀‖_V/T + K)/ς`, when a certificate is given.
    pub moment: Option<(f64, f64)>,
}

/// Time averages of `S^kμ₀`, doubled until the invariance residual is below `tol`.
///
/// The running sum follows `Σ_{k<2T} S^k = Σ_{k<T} S^k + S^T Σ_{k<T} S^k`; for a
/// generator the base block `∫₀^h S_t dt` is summed exactly in the uniformized
/// series. The optional drift is `(ς, K, V, φ(V))` for the kernel, or the
/// generator's `(σ, b, V, φ(V))`.
pub fn cesaro_invariant(dyn_: Dynamics<'_>, mu0: &SignedMeasure, max_horizon: f64, tol: f64, drift: Option<(f64, f64, &[f64], &[f64])>) -> Result<CesaroResult> {
    if !mu0.is_probability(1e-12) {
        return Err(Error::InvalidMeasure("the starting measure must be a probability vector".into()));
    }
    let (mut sum, mut block, mut horizon, step) = match dyn_ {
        Dynamics::Kernel(s) => {
            check_len(s.size(), mu0.len())?;
            let n = s.size();
            (nalgebra::DMatrix::identity(n, n), s.matrix().clone(), 1.0, s.clone())
        }
        Dynamics::Generator(l) => {
            check_len(l.size(), mu0.len())?;
            let q = l.exit_rate();
            let h = if q > 0.0 { 1.0 / q } else { 1.0 };
            (integrated_block(l, h), semigroup_at(l, h)?.matrix().clone(), h, semigroup_at(l, 1.0)?)
        }
    };
    let mut result;
    loop {
        let avg = left_mul(&sum, mu0.values()).into_iter().map(|x| (x / horizon).max(0.0)).collect::<Vec<_>>();
        let total: f64 = avg.iter().sum();
        let mu: Vec<f64> = avg.iter().map(|x| x / total).collect();
        let m = SignedMeasure::new(mu.clone())?;
        let residual = total_variation(&crate::kernel::apply(&step, &m)?.sub(&m)?);
        let moment = drift.map(|(sig, k, v, w)| {
            let v0: f64 = mu0.values().iter().zip(v).map(|(a, b)| a * b).sum();
            let got: f64 = mu.iter().zip(w).map(|(a, b)| a * b).sum();
            (got, (v0 / horizon + k) / sig)
        });
        result = CesaroResult { mu, horizon, residual, converged: residual <= tol, moment };
        if result.converged || horizon * 2.0 > max_horizon {
            break;
        }
        sum = &sum + &block * &sum;
        block = &block * &block;
        horizon *= 2.0;
    }
    Ok(result)
}

/// `∫₀^h exp(tL) dt = Σ_j P^j (1/q) P(Poisson(qh) > j)`.
fn integrated_block(l: &GeneratorMatrix, h: f64) -> nalgebra::DMatrix<f64> {
    let n = l.size();
    let q = l.exit_rate();
    if q == 0.0 {
        return nalgebra::DMatrix::identity(n, n) * h;
    }
    let p = nalgebra::DMatrix::identity(n, n) + l.matrix() / q;
    let qh = q * h;
    let mut weight = (-qh).exp();
    let mut cdf = weight;
    let mut term = nalgebra::DMatrix::identity(n, n);
    let mut acc = &term * ((1.0 - cdf) / q);
    let mut j = 0u32;
    while 1.0 - cdf > 1e-16 && j < 10_000 {
        j += 1;
        term = &term * &p;
        weight *= qh / j as f64;
        cdf += weight;
        acc += &term * ((1.0 - cdf).max(0.0) / q);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure_death(n: usize) -> GeneratorMatrix {
        let mut rows = vec![vec![0.0; n + 1]; n + 1];
        for i in 1..=n {
            rows[i][i - 1] = i as f64;
            rows[i][i] = -(i as f64);
        }
        GeneratorMatrix::new(rows).unwrap()
    }

    #[test]
    fn generator_examples() {
        let l = pure_death(10);
        let v = WeightFunction::new((0..=10).map(|i| i as f64 + 1.0).collect()).unwrap();
        let c = check_generator_lyapunov(&l, &v, None, None).unwrap();
        assert!((c.sigma - 1.0).abs() < 1e-12 && (c.b - 1.0).abs() < 1e-12);
        assert!(!c.degenerate);

        let z = GeneratorMatrix::new(vec![vec![0.0; 3]; 3]).unwrap();
        let c = check_generator_lyapunov(&z, &WeightFunction::new(vec![1.0, 2.0, 3.0]).unwrap(), None, None).unwrap();
        assert!(c.degenerate);
        assert!(generator_drift_excess(&z, &c).unwrap() <= 1e-12);

        let l2 = GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let v2 = WeightFunction::new(vec![1.0, 2.0]).unwrap();
        let c = check_generator_lyapunov(&l2, &v2, None, None).unwrap();
        // (σ, b) = (1, 2) also holds; the ratio σ/b is best at the kink σ = 2
        assert!((c.sigma - 2.0).abs() < 1e-12 && (c.b - 3.0).abs() < 1e-12);
        let lv = l2.act(v2.values()).unwrap();
        assert!(lv.iter().zip(v2.values()).all(|(d, x)| *d <= -x + 2.0));
    }

    #[test]
    fn envelope_and_explicit_examples() {
        let l = pure_death(10);
        let v = WeightFunction::new((0..=10).map(|i| i as f64 + 1.0).collect()).unwrap();
        let c = check_generator_lyapunov(&l, &v, None, None).unwrap();
        let e = semigroup_lyapunov_envelope(&c, &[0.0, 1.0, 1e3]).unwrap();
        assert_eq!((e[0].1, e[0].2), (1.0, 0.0));
        assert!((e[1].1 - (-1f64).exp()).abs() < 1e-15 && (e[1].2 - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!(e[2].1 < 1e-300 && (e[2].2 - 1.0).abs() < 1e-15);
        // equality case: S_1 V(x) = e^{-1}V(x) + 1 − e^{-1} exactly
        assert!(semigroup_lyapunov_excess(&l, &c, 1.0).unwrap().abs() < 1e-8);

        let phi = ScalarFunction::power(0.5).unwrap();
        let x = implicit_to_explicit(&WeightFunction::new(vec![4.0, 1.0]).unwrap(), &phi, 1.0, 2.0).unwrap();
        assert!((x.v_tilde.values()[0] - 3.0).abs() < 1e-15 && x.v_tilde.values()[1] == 1.0);
        assert!((x.phi_tilde.eval(3.0) - 2.0).abs() < 1e-12 && (x.phi_tilde.eval(1.0) - 1.0).abs() < 1e-15);
        assert_eq!((x.varsigma, x.k), (0.5, 1.0));
        assert!(implicit_to_explicit(&WeightFunction::ones(2), &phi, 0.0, 1.0).is_err());
    }

    #[test]
    fn time_integrated_examples() {
        let g = GeneratorLyapunovCert {
            sigma: 1.0,
            b: 1.0,
            kind: DriftKind::Weak { phi: "p".into() },
            v: vec![1.0],
            target: vec![1.0],
            degenerate: false,
            source_hash: String::new(),
        };
        assert_eq!(implicit_drift_bound(&g, 2.0).unwrap(), (2.0, 4.0));
        let (a, b) = implicit_drift_bound(&g, 1e-12).unwrap();
        assert!(a < 1e-11 && b < 1e-11);
        assert!(implicit_drift_bound(&g, 0.0).is_err());
    }

    #[test]
    fn cesaro_examples() {
        let id = StochasticKernel::identity(3);
        let mu0 = SignedMeasure::new(vec![0.2, 0.3, 0.5]).unwrap();
        let r = cesaro_invariant(Dynamics::Kernel(&id), &mu0, 1e6, 1e-12, None).unwrap();
        assert!(r.converged && r.mu.iter().zip(mu0.values()).all(|(a, b)| (a - b).abs() < 1e-15));

        let flip = StochasticKernel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let r = cesaro_invariant(Dynamics::Kernel(&flip), &SignedMeasure::dirac(2, 0), 1e6, 1e-12, None).unwrap();
        assert!((r.mu[0] - 0.5).abs() < 1e-10 && (r.mu[1] - 0.5).abs() < 1e-10);

        let k = StochasticKernel::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
        let r = cesaro_invariant(Dynamics::Kernel(&k), &SignedMeasure::dirac(2, 0), 1e15, 1e-10, None).unwrap();
        assert!(r.converged && (r.mu[0] - 4.0 / 7.0).abs() < 1e-10);

        let l = GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![3.0, -3.0]]).unwrap();
        let r = cesaro_invariant(Dynamics::Generator(&l), &SignedMeasure::dirac(2, 1), 1e15, 1e-10, None).unwrap();
        assert!(r.converged && (r.mu[0] - 0.75).abs() < 1e-9, "{:?}", r);
    }
}

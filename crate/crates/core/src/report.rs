//! The certify / rate / simulate / report pipelines.
//!
//! Everything here is deterministic given the model and the seed: measures
//! come from one seeded stream, candidate searches run in a fixed order and
//! the output only contains ordered containers.

use serde::Serialize;
use serde_json::{json, Value};

use crate::certify::{check_doeblin, check_local_coupling, check_lyapunov, check_weak_lyapunov, CouplingCert, LyapunovObjective, WeakLyapunovCert};
use crate::continuous::{
    cesaro_invariant, check_generator_lyapunov, concave_semigroup_excess, continuous_feller_rate, continuous_subgeometric_rate, implicit_drift_bound, doeblin_transfer,
    harris_transfer, implicit_drift_excess, semigroup_lyapunov_excess, Dynamics as CDyn,
};
use crate::error::{Error, Result};
use crate::geometric::{doeblin_rate, geometric_route, harris_full_sequence, harris_rate, semigroup_harris_rate, GeometricEnvelope, NormTag};
use crate::harness::{apply_zero_mean, existence_check, random_probability, random_zero_mean, seeded_rng, uniqueness_check, validate_envelope, Envelope, Validation};
use crate::kernel::{apply, semigroup_at, stationary_distribution, GeneratorMatrix, SemigroupGrowth, StochasticKernel};
use crate::measure::{norm_with, SignedMeasure, WeightFunction};
use crate::model::{Dynamics, FunctionSpec, Model};
use crate::subgeometric::{chain_rate, feller_rate, interpolated_route, interpolation_rate, verify_interpolation, RateFunction, RouteOptions, RouteResult, InterpolationOptions};

pub const TOOL: &str = "ergocert";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Relative slack of every envelope comparison.
pub const SLACK: f64 = 1e-9;
/// Allowed excess of a derived semigroup drift over its closed form.
pub const DRIFT_SLACK: f64 = 1e-8;

/// Cesàro averages converge like `1/T`, so the invariance residual is only asked to this level.
const CESARO_TOL: f64 = 1e-6;

const POWERS: [usize; 11] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024];
const A_FACTORS: [f64; 4] = [1.25, 1.5, 2.0, 3.0];
const T_CANDIDATES: [f64; 7] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
const T_ROUTE: [f64; 4] = [4.0, 8.0, 16.0, 32.0];

/// Command-line overrides of the model's grids.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub tol: Option<f64>,
    pub n_max: Option<usize>,
    pub t_max: Option<f64>,
    pub grid_size: Option<usize>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Resolved {
    pub seed: u64,
    pub tol: f64,
    pub n_max: usize,
    pub t_max: f64,
    pub t_points: usize,
    pub measures: usize,
}

impl Resolved {
    pub fn new(model: &Model, s: &Settings) -> Result<Resolved> {
        let g = &model.file.grids;
        let r = Resolved {
            seed: s.seed,
            tol: s.tol.unwrap_or(model.file.tol),
            n_max: s.n_max.unwrap_or(g.n_max),
            t_max: s.t_max.unwrap_or(g.t_max),
            t_points: s.grid_size.unwrap_or(g.t_points),
            measures: g.measures,
        };
        if !(r.tol > 0.0 && r.tol < 1.0) {
            return Err(Error::param("tol", "must lie in (0, 1)"));
        }
        if r.n_max == 0 || r.t_points == 0 || !(r.t_max > 0.0) || !r.t_max.is_finite() {
            return Err(Error::param("grids", "n_max, t_points and t_max must be positive"));
        }
        Ok(r)
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    CertificationFailure,
    ValidationViolation,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::CertificationFailure => 1,
            Status::ValidationViolation => 2,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertEntry {
    pub name: String,
    /// Asked for by the model file; a failure then sets the exit status.
    pub requested: bool,
    pub found: bool,
    pub data: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeEntry {
    pub id: String,
    pub family: String,
    pub norm: String,
    pub input_norm: String,
    pub constants: Value,
    /// `(n or t, envelope)` on the tabulation grid, per unit input norm.
    pub table: Vec<[f64; 2]>,
    pub verification: Option<Validation>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    /// A failed check contradicts a proven inequality.
    pub binding: bool,
    pub data: Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryEntry {
    pub index: usize,
    pub kind: String,
    pub zero_mean: bool,
    pub csv: String,
    pub tv_ratio: f64,
    pub v1_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub model: String,
    pub input_hash: String,
    pub settings: Resolved,
    pub status: Status,
    pub certificates: Vec<CertEntry>,
    pub envelopes: Vec<EnvelopeEntry>,
    pub checks: Vec<CheckEntry>,
    pub trajectories: Vec<TrajectoryEntry>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn settle(&mut self) {
        let violated = self.envelopes.iter().any(|e| e.verification.as_ref().is_some_and(|v| !v.passed))
            || self.checks.iter().any(|c| c.binding && !c.passed)
            || self.trajectories.iter().any(|t| !t.passed);
        let failed = self.certificates.iter().any(|c| c.requested && !c.found);
        self.status = if violated {
            Status::ValidationViolation
        } else if failed {
            Status::CertificationFailure
        } else {
            Status::Ok
        };
    }
}

/// A certified envelope with what it takes to compare it with a trajectory.
pub struct Certified {
    pub entry: EnvelopeEntry,
    bound: Box<dyn Fn(f64) -> f64>,
    /// Weight of the bounded norm; `None` is TV.
    out_weight: Option<Vec<f64>>,
    /// Weight of the input norm; `None` is TV.
    in_weight: Option<Vec<f64>>,
}

impl Envelope for Certified {
    fn bound(&self, t: f64) -> f64 {
        (self.bound)(t)
    }
}

impl Certified {
    fn input_scale(&self, nu0: &[f64]) -> f64 {
        norm_of(nu0, self.in_weight.as_deref())
    }

    fn output(&self, nu: &[f64]) -> f64 {
        norm_of(nu, self.out_weight.as_deref())
    }

    fn is_tv(&self) -> bool {
        self.out_weight.is_none()
    }
}

fn norm_of(nu: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        None => nu.iter().map(|x| x.abs()).sum(),
        Some(w) => norm_with(nu, w),
    }
}

/// Result of the certification stage.
pub struct Certification {
    pub certificates: Vec<CertEntry>,
    pub envelopes: Vec<Certified>,
    pub checks: Vec<CheckEntry>,
    /// Time points of a decay table: steps, or a uniform time grid.
    pub grid: Vec<f64>,
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn failure_value(e: &Error) -> Value {
    match e {
        Error::Certification(f) => json!({"error": e.to_string(), "witness": to_value(f)}),
        _ => json!({"error": e.to_string()}),
    }
}

fn tag(n: NormTag) -> String {
    match n {
        NormTag::Tv => "tv",
        NormTag::Weighted => "weighted",
        NormTag::Triple => "triple",
    }
    .to_string()
}

struct Builder {
    certs: Vec<CertEntry>,
    envs: Vec<Certified>,
    checks: Vec<CheckEntry>,
    table_grid: Vec<f64>,
}

impl Builder {
    fn cert<T: Serialize>(&mut self, name: &str, requested: bool, r: &Result<T>) {
        let (found, data) = match r {
            Ok(c) => (true, to_value(c)),
            Err(e) => (false, failure_value(e)),
        };
        self.certs.push(CertEntry { name: name.into(), requested, found, data });
    }

    fn check(&mut self, name: &str, passed: bool, binding: bool, data: Value) {
        self.checks.push(CheckEntry { name: name.into(), passed, binding, data });
    }

    #[allow(clippy::too_many_arguments)]
    fn envelope(&mut self, id: &str, family: &str, constants: Value, bound: Box<dyn Fn(f64) -> f64>, out_weight: Option<Vec<f64>>, in_weight: Option<Vec<f64>>) {
        let table = self.table_grid.iter().map(|&t| [t, bound(t)]).collect();
        let name = |w: &Option<Vec<f64>>| if w.is_some() { "weighted" } else { "tv" }.to_string();
        let entry = EnvelopeEntry {
            id: id.into(),
            family: family.into(),
            norm: name(&out_weight),
            input_norm: name(&in_weight),
            constants,
            table,
            verification: None,
        };
        self.envs.push(Certified { entry, bound, out_weight, in_weight });
    }

    fn geometric(&mut self, id: &str, env: &GeometricEnvelope, constants: Value, out_weight: Option<Vec<f64>>, in_weight: Option<Vec<f64>>) {
        let e = env.clone();
        let mut c = constants;
        c["envelope"] = to_value(env);
        debug_assert_eq!(tag(env.norm) == "tv", out_weight.is_none());
        self.envelope(id, "geometric", c, Box::new(move |t| e.eval(t)), out_weight, in_weight);
    }

    fn rate(&mut self, id: &str, r: &RateFunction, constants: Value, out_weight: Option<Vec<f64>>, in_weight: Option<Vec<f64>>) {
        let r = r.clone();
        self.envelope(id, "subgeometric", constants, Box::new(move |t| r.envelope(t)), out_weight, in_weight);
    }
}

fn log_table_grid(hi: f64, points: usize, integer: bool) -> Vec<f64> {
    let points = points.clamp(2, 200);
    let mut g: Vec<f64> = (0..points)
        .map(|i| {
            let x = (hi.ln() * i as f64 / (points - 1) as f64).exp();
            if integer {
                x.round()
            } else {
                x
            }
        })
        .collect();
    if !integer {
        g[points - 1] = hi;
    }
    g.dedup();
    g
}

/// Extracts every certificate the model supports and assembles its envelopes.
pub fn certify(model: &Model, r: &Resolved) -> Result<Certification> {
    match &model.dynamics {
        Dynamics::Kernel(s) => certify_kernel(model, s, r),
        Dynamics::Generator(l) => certify_generator(model, l, r),
    }
}

fn weak_psi_r(model: &Model, wl_k: f64, wl_sigma: f64) -> f64 {
    match (&model.file.psi, model.file.harris_r) {
        (Some(FunctionSpec::PsiBuilder { r, .. }), _) => *r,
        (_, Some(r)) => r,
        _ => 4.0 * wl_k / wl_sigma,
    }
}

fn route_constants(route: &RouteResult) -> Value {
    json!({
        "theorem": to_value(&route.theorem.constants),
        "v1": route.wl1.phi.clone(),
        "v2": route.wl2.phi.clone(),
        "harris_level": route.harris.r,
        "harris_alpha": route.harris.alpha,
        "a1": route.coupling1.a,
        "a2": route.coupling2.a,
    })
}

fn certify_kernel(model: &Model, s: &StochasticKernel, r: &Resolved) -> Result<Certification> {
    let n = s.size();
    let mut b = Builder { certs: vec![], envs: vec![], checks: vec![], table_grid: log_table_grid(r.n_max as f64, r.t_points, true) };
    let doeblin = check_doeblin(s);
    b.cert("doeblin", false, &doeblin);
    if let Ok(d) = &doeblin {
        b.geometric("doeblin", &doeblin_rate(d), json!({"alpha": d.alpha}), None, None);
    }

    // certificates for the existence and uniqueness checks, best last
    let mut contraction: Option<(WeakLyapunovCert, CouplingCert)> = None;

    if let Some(v) = &model.v {
        let route = geometric_route(s, v, &POWERS, &A_FACTORS, model.file.harris_r);
        b.cert("harris", model.file.harris_r.is_some(), &route);
        if let Ok(g) = &route {
            let c = json!({"n": g.rate.envelope.step, "gamma_l": g.lyapunov.gamma_l, "k": g.lyapunov.k, "a": g.coupling.a, "gamma_h": g.coupling.certified_gamma(), "beta": g.rate.beta, "gamma": g.rate.gamma});
            b.geometric("harris_tv", &g.tv, c.clone(), None, Some(v.values().to_vec()));
            b.geometric("harris_v", &g.weighted, c, Some(v.values().to_vec()), Some(v.values().to_vec()));
        }
        if let Some(cs) = &model.file.coupling {
            let steps = cs.n.unwrap_or(1);
            let res = (|| -> Result<_> {
                let coup = check_local_coupling(s, v, cs.a, steps)?;
                let sp = s.power(steps);
                let lyap = check_lyapunov(&sp, v, None, LyapunovObjective::MinHarrisGamma { gamma_h: coup.certified_gamma(), a: cs.a })?;
                let rate = harris_rate(&lyap, &coup)?;
                let (tv, weighted) = harris_full_sequence(s, v, &rate)?;
                Ok((coup, lyap, rate, tv, weighted))
            })();
            b.cert("local_coupling", true, &res.as_ref().map(|x| json!({"coupling": to_value(&x.0), "lyapunov": to_value(&x.1), "rate": to_value(&x.2)})).map_err(Clone::clone));
            if let Ok((_, _, rate, tv, weighted)) = &res {
                let c = json!({"n": steps, "a": cs.a, "gamma": rate.gamma, "beta": rate.beta});
                b.geometric("coupling_tv", tv, c.clone(), None, Some(v.values().to_vec()));
                b.geometric("coupling_v", weighted, c, Some(v.values().to_vec()), Some(v.values().to_vec()));
            }
        }
        // one-step geometric drift is a weak drift with φ(V) = V
        if let Ok(g) = &route {
            if let Ok(l1) = check_lyapunov(s, v, None, LyapunovObjective::MinGammaL) {
                let wl = WeakLyapunovCert {
                    sigma_bar: 1.0 - l1.gamma_l,
                    k: l1.k.max(crate::certify::WEAK_K_FLOOR),
                    phi: "identity".into(),
                    v: v.values().to_vec(),
                    phi_v: v.values().to_vec(),
                    source_hash: s.content_hash(),
                };
                if g.coupling.a > wl.k / wl.sigma_bar {
                    contraction = Some((wl, g.coupling.clone()));
                }
            }
        }
    }

    if let (Some(v), Some(phi)) = (&model.v, &model.phi) {
        let opts = RouteOptions { n_max: r.n_max, ..Default::default() };
        let wl = check_weak_lyapunov(s, v, phi, None, None);
        b.cert("weak_lyapunov", false, &wl);
        if let Ok(wl) = &wl {
            let chain = chain_rate(s, wl, phi, &opts);
            b.cert("chain_route", false, &chain.as_ref().map(route_constants).map_err(Clone::clone));
            if let Ok(route) = &chain {
                let c = route_constants(route);
                b.rate("chain_tv", &route.theorem.tv, c.clone(), None, Some(v.values().to_vec()));
                b.rate("chain_v1", &route.theorem.v1, c, Some(route.wl1.v.clone()), Some(v.values().to_vec()));
                contraction = Some((route.wl2.clone(), route.coupling2.clone()));
                if let Some(xi) = &model.xi {
                    let res = (|| -> Result<_> {
                        let lambdas = crate::functions::log_grid(1e-6, route.theorem.constants.lambda_max, 200);
                        verify_interpolation(xi, &route.wl1.v, &route.wl1.phi_v, &route.wl2.v, &lambdas)?;
                        interpolation_rate(&route.wl1, &route.wl2, &route.coupling1, &route.coupling2, xi, InterpolationOptions { n_max: r.n_max, lambda_max: None })
                    })();
                    b.cert("supplied_xi", true, &res.as_ref().map(|t| to_value(&t.constants)).map_err(Clone::clone));
                    if let Ok(t) = &res {
                        let c = to_value(&t.constants);
                        b.rate("xi_tv", &t.tv, c.clone(), None, Some(v.values().to_vec()));
                        b.rate("xi_v1", &t.v1, c, Some(route.wl1.v.clone()), Some(v.values().to_vec()));
                    }
                }
            }
            if let Some(psi) = &model.psi {
                let rr = weak_psi_r(model, wl.k, wl.sigma_bar);
                let f = feller_rate(s, wl, phi, psi, rr, &opts);
                b.cert("feller_route", false, &f.as_ref().map(|f| json!({"route": route_constants(&f.route), "flags": f.pipeline.flags})).map_err(Clone::clone));
                if let Ok(f) = &f {
                    let c = route_constants(&f.route);
                    b.rate("feller_tv", &f.route.theorem.tv, c.clone(), None, Some(v.values().to_vec()));
                    b.rate("feller_v1", &f.route.theorem.v1, c, Some(f.route.wl1.v.clone()), Some(v.values().to_vec()));
                }
            }
            if let Some(v2) = &model.v2 {
                let res = check_weak_lyapunov(s, v2, phi, None, None).and_then(|wl2| interpolated_route(s, wl, &wl2, &opts));
                b.cert("interpolated_route", false, &res.as_ref().map(route_constants).map_err(Clone::clone));
                if let Ok(route) = &res {
                    let c = route_constants(route);
                    b.rate("interp_tv", &route.theorem.tv, c.clone(), None, Some(v2.values().to_vec()));
                    b.rate("interp_v1", &route.theorem.v1, c, Some(route.wl1.v.clone()), Some(v2.values().to_vec()));
                }
            }
        }
    }

    let st = stationary_distribution(s, r.tol.min(1e-10))?;
    b.check(
        "stationary",
        st.residual <= 1e-8,
        false,
        json!({"pi": st.pi.values(), "multiplicity": st.multiplicity, "unique": st.unique, "residual": st.residual, "method": to_value(&st.method)}),
    );
    let uq = uniqueness_check(s, 1e-10, contraction.as_ref().map(|(w, c)| (w, c)))?;
    // a usable contraction certificate with several closed classes is a contradiction
    let uq_ok = uq.certified != Some(false) || contraction.is_none();
    b.check("uniqueness", uq_ok, contraction.is_some(), to_value(&uq));

    if let Some((wl, coup)) = &contraction {
        let mut rng = seeded_rng(r.seed ^ 0x45_58_49_53);
        let mut worst: f64 = 0.0;
        let mut first = None;
        let mut error = None;
        for i in 0..r.measures.max(1) {
            let mu0 = if i == 0 { SignedMeasure::dirac(n, 0) } else { random_probability(n, &mut rng)? };
            match existence_check(s, wl, coup, &mu0, r.n_max) {
                Ok(e) => {
                    worst = worst.max(e.fraction);
                    first.get_or_insert(e);
                }
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let data = json!({
            "draws": r.measures.max(1),
            "worst_fraction": worst,
            "weight": wl.phi,
            "mu_star": first.as_ref().map(|e| e.mu_star.clone()),
            "residual": first.as_ref().map(|e| e.residual),
            "error": error,
        });
        b.check("existence", error.is_none(), true, data);
    }

    let ces = cesaro_invariant(CDyn::Kernel(s), &SignedMeasure::dirac(n, 0), 1e7, CESARO_TOL, None)?;
    b.check("cesaro", ces.converged, false, to_value(&ces));

    Ok(Certification { certificates: b.certs, envelopes: b.envs, checks: b.checks, grid: (0..=r.n_max).map(|k| k as f64).collect() })
}

fn certify_generator(model: &Model, l: &GeneratorMatrix, r: &Resolved) -> Result<Certification> {
    let n = l.size();
    let mut b = Builder { certs: vec![], envs: vec![], checks: vec![], table_grid: log_table_grid(r.t_max, r.t_points, false) };
    let t_grid: Vec<f64> = (0..=r.t_points).map(|k| r.t_max * k as f64 / r.t_points as f64).collect();

    let d = doeblin_transfer(l, &T_CANDIDATES);
    b.cert("doeblin_semigroup", false, &d);
    if let Ok(d) = &d {
        b.geometric("doeblin_semigroup", &d.envelope, json!({"t": d.t_big, "alpha": d.cert.alpha}), None, None);
    }

    if let Some(v) = &model.v {
        let g = check_generator_lyapunov(l, v, None, None);
        b.cert("generator_lyapunov", false, &g);
        if let Ok(g) = &g {
            let mut worst = f64::NEG_INFINITY;
            for &t in &t_grid[1..] {
                worst = worst.max(semigroup_lyapunov_excess(l, g, t)?);
            }
            b.check("drift_semigroup", worst <= DRIFT_SLACK, true, json!({"sigma": g.sigma, "b": g.b, "times": t_grid.len() - 1, "worst_excess": worst}));
            let h = harris_transfer(l, v, g, &T_CANDIDATES, &A_FACTORS);
            b.cert("harris_semigroup", false, &h);
            if let Ok(h) = &h {
                let c = json!({"t": h.t_big, "gamma": h.harris.gamma, "beta": h.harris.beta, "c_v": h.growth.c_v});
                let mut tv = h.envelope.clone();
                tv.norm = NormTag::Tv;
                b.geometric("harris_semigroup_tv", &tv, c.clone(), None, Some(v.values().to_vec()));
                b.geometric("harris_semigroup_v", &h.envelope, c, Some(v.values().to_vec()), Some(v.values().to_vec()));
            }
            if let Some(cs) = &model.file.coupling {
                let t = cs.t.expect("validated");
                let res = (|| -> Result<_> {
                    let st = semigroup_at(l, t)?;
                    let coup = check_local_coupling(&st, v, cs.a, 1)?;
                    let lyap = check_lyapunov(&st, v, None, LyapunovObjective::MinHarrisGamma { gamma_h: coup.certified_gamma(), a: cs.a })?;
                    let rate = harris_rate(&lyap, &coup)?;
                    let env = semigroup_harris_rate(rate.gamma, &SemigroupGrowth::new(1.0 + g.b / g.sigma, 0.0)?, rate.beta, t)?;
                    Ok((coup, rate, env))
                })();
                b.cert("local_coupling", true, &res.as_ref().map(|x| json!({"coupling": to_value(&x.0), "rate": to_value(&x.1)})).map_err(Clone::clone));
                if let Ok((_, _, env)) = &res {
                    b.geometric("coupling_semigroup_v", env, json!({"t": t, "a": cs.a}), Some(v.values().to_vec()), Some(v.values().to_vec()));
                }
            }
        }
    } else if model.file.coupling.is_some() {
        b.cert::<()>("local_coupling", true, &Err(Error::param("coupling", "needs weight_v")));
    }

    let mut cesaro_drift = None;
    if let (Some(v), Some(phi)) = (&model.v, &model.phi) {
        let g = check_generator_lyapunov(l, v, Some(phi), None);
        b.cert("generator_weak_lyapunov", false, &g);
        if let Ok(g) = &g {
            cesaro_drift = Some((g.sigma, g.b, g.v.clone(), g.target.clone()));
            let mut worst = f64::NEG_INFINITY;
            for t in [0.5, 1.0, 2.0] {
                let (sig, k) = implicit_drift_bound(g, t)?;
                worst = worst.max(implicit_drift_excess(&semigroup_at(l, t)?, &g.v, &g.target, sig, k)?);
            }
            b.check("implicit_drift", worst <= DRIFT_SLACK, true, json!({"times": [0.5, 1.0, 2.0], "worst_excess": worst}));

            if let Some(psi) = &model.psi {
                let rr = weak_psi_r(model, g.b, g.sigma);
                let mut best: Option<crate::continuous::ContinuousFeller> = None;
                let mut last = None;
                for &tb in &T_ROUTE {
                    let opts = RouteOptions { n_candidates: vec![1, 2, 4, 8], ..Default::default() };
                    match continuous_feller_rate(l, g, phi, psi, rr, tb, r.t_max, &opts) {
                        Ok(c) => {
                            if best.as_ref().map_or(true, |b| c.rate.tv.envelope(r.t_max) < b.rate.tv.envelope(r.t_max)) {
                                best = Some(c);
                            }
                        }
                        Err(e) => last = Some(e),
                    }
                }
                let res = best.ok_or_else(|| last.unwrap_or_else(|| Error::param("t", "no candidates")));
                b.cert("feller_semigroup", false, &res.as_ref().map(|c| json!({"rate": to_value(&c.rate.t0), "n": c.rate.n, "t": c.rate.t_big, "route": route_constants(&c.route), "flags": c.pipeline.flags})).map_err(Clone::clone));
                if let Ok(c) = &res {
                    let k = json!({"t0": c.rate.t0, "n": c.rate.n, "t": c.rate.t_big, "growth": c.rate.growth});
                    b.rate("feller_semigroup_tv", &c.rate.tv, k.clone(), None, Some(v.values().to_vec()));
                    b.rate("feller_semigroup_v1", &c.rate.v1, k, Some(c.route.wl1.v.clone()), Some(v.values().to_vec()));
                }
                let ex = concave_semigroup_excess(l, g, psi, 1.0)?;
                b.check("concave_semigroup", ex <= DRIFT_SLACK, false, json!({"t": 1.0, "excess": ex}));
            }

            // second route: V₁ = φ(V) with its own generator certificate
            let v1 = WeightFunction::new(g.target.iter().map(|&x| x.max(1.0)).collect())?;
            let res = check_generator_lyapunov(l, &v1, Some(phi), None).and_then(|g1| {
                let a = [3.0 * g1.b / g1.sigma, 3.0 * g.b / g.sigma];
                let mut best: Option<crate::continuous::ContinuousSubgeometric> = None;
                let mut last = None;
                for &tb in &T_ROUTE {
                    match continuous_subgeometric_rate(l, &g1, g, tb, a, None, r.t_max) {
                        Ok(c) => {
                            if best.as_ref().map_or(true, |b| c.rate.tv.envelope(r.t_max) < b.rate.tv.envelope(r.t_max)) {
                                best = Some(c);
                            }
                        }
                        Err(e) => last = Some(e),
                    }
                }
                best.ok_or_else(|| last.unwrap_or_else(|| Error::param("t", "no candidates")))
            });
            b.cert("subgeometric_semigroup", false, &res.as_ref().map(|c| json!({"t0": c.rate.t0, "n": c.rate.n, "t": c.rate.t_big, "theorem": to_value(&c.theorem.constants)})).map_err(Clone::clone));
            if let Ok(c) = &res {
                let k = json!({"t0": c.rate.t0, "n": c.rate.n, "t": c.rate.t_big, "growth": c.rate.growth});
                b.rate("subgeometric_semigroup_tv", &c.rate.tv, k.clone(), None, Some(v.values().to_vec()));
                b.rate("subgeometric_semigroup_v1", &c.rate.v1, k, Some(v1.values().to_vec()), Some(v.values().to_vec()));
            }
        }
    }

    let drift = cesaro_drift.as_ref().map(|(s, k, v, w)| (*s, *k, v.as_slice(), w.as_slice()));
    let ces = cesaro_invariant(CDyn::Generator(l), &SignedMeasure::dirac(n, 0), 1e7, CESARO_TOL, drift)?;
    let moment_ok = ces.moment.map_or(true, |(got, bound)| got <= bound * (1.0 + SLACK));
    b.check("cesaro", ces.converged && moment_ok, false, to_value(&ces));
    Ok(Certification { certificates: b.certs, envelopes: b.envs, checks: b.checks, grid: t_grid })
}

/// `ν_k` on the certification grid for every test measure.
pub struct Trajectory {
    pub kind: String,
    pub nu0: SignedMeasure,
    pub states: Vec<Vec<f64>>,
}

/// The test measures: `δ₀ − δ_{n−1}` followed by `measures` Dirichlet differences.
pub fn test_measures(n: usize, r: &Resolved) -> Result<Vec<(String, SignedMeasure)>> {
    let mut out = vec![("dirac_difference".to_string(), SignedMeasure::dirac_difference(n, 0, n - 1))];
    if n == 1 {
        out[0].1 = SignedMeasure::zeros(1);
        return Ok(out);
    }
    let mut rng = seeded_rng(r.seed);
    for _ in 0..r.measures {
        out.push(("dirichlet_difference".to_string(), random_zero_mean(n, &mut rng)?));
    }
    Ok(out)
}

pub fn simulate(model: &Model, grid: &[f64], r: &Resolved) -> Result<Vec<Trajectory>> {
    let n = model.size();
    let step = match &model.dynamics {
        Dynamics::Kernel(s) => s.clone(),
        Dynamics::Generator(l) => semigroup_at(l, grid[1] - grid[0])?,
    };
    let mut out = vec![];
    for (kind, nu0) in test_measures(n, r)? {
        let mut states = Vec::with_capacity(grid.len());
        let zero_mean = nu0.is_zero_mean();
        let mut cur = nu0.clone();
        states.push(cur.values().to_vec());
        for _ in 1..grid.len() {
            cur = if zero_mean { apply_zero_mean(&step, &cur)? } else { apply(&step, &cur)? };
            states.push(cur.values().to_vec());
        }
        out.push(Trajectory { kind, nu0, states });
    }
    Ok(out)
}

/// One decay table in the CSV layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub rows: Vec<CsvRow>,
}

/// Absent norms or envelopes are empty fields.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct CsvRow {
    pub n_or_t: f64,
    pub tv: f64,
    pub v1_norm: Option<f64>,
    pub v2_norm: Option<f64>,
    pub envelope_tv: Option<f64>,
    pub envelope_v1: Option<f64>,
}

pub const CSV_HEADER: &str = "n_or_t,tv,v1_norm,v2_norm,envelope_tv,envelope_v1";

impl CsvTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(vec![]);
        for r in &self.rows {
            w.serialize(r).expect("rows serialize");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8");
        format!("{CSV_HEADER}\n{body}")
    }

    pub fn parse(text: &str) -> std::result::Result<CsvTable, String> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().map_err(|e| e.to_string())?.iter().collect::<Vec<_>>().join(",");
        if header != CSV_HEADER {
            return Err(format!("header must be `{CSV_HEADER}`, got `{header}`"));
        }
        let rows = rd.deserialize().collect::<std::result::Result<Vec<CsvRow>, _>>().map_err(|e| e.to_string())?;
        Ok(CsvTable { rows })
    }

/// `(tv ratio, v1 ratio, passed)` of the table against its own envelope columns.
    pub fn verify(&self) -> (f64, f64, bool) {
        let check = |pick: &dyn Fn(&CsvRow) -> Option<(f64, f64)>| -> Validation {
            let mut v = Validation::empty();
            for r in &self.rows {
                if let Some((measured, env)) = pick(r) {
                    v = v.merge(validate_envelope(&[(r.n_or_t, measured)], &move |_: f64| env, 1.0, SLACK));
                }
            }
            v
        };
        let tv = check(&|r| r.envelope_tv.map(|e| (r.tv, e)));
        let v1 = check(&|r| r.v1_norm.zip(r.envelope_v1));
        (tv.worst_ratio, v1.worst_ratio, tv.passed && v1.passed)
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        format!("{x}")
    }
}

/// Builds the CSV of a trajectory: TV against the smallest TV envelope, and
/// the first weighted envelope with its own output and input weights.
pub fn decay_csv(cert: &Certification, traj: &Trajectory) -> CsvTable {
    let nu0 = traj.nu0.values();
    let tvs: Vec<(&Certified, f64)> = cert.envelopes.iter().filter(|e| e.is_tv()).map(|e| (e, e.input_scale(nu0))).collect();
    let primary = cert.envelopes.iter().find(|e| !e.is_tv());
    let rows = cert
        .grid
        .iter()
        .zip(&traj.states)
        .map(|(&t, nu)| {
            let env_tv = tvs.iter().map(|(e, sc)| e.bound(t) * sc).fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.min(b))));
            CsvRow {
                n_or_t: t,
                tv: nu.iter().map(|x| x.abs()).sum(),
                v1_norm: primary.map(|p| p.output(nu)),
                v2_norm: primary.map(|p| norm_of(nu, p.in_weight.as_deref())),
                envelope_tv: env_tv,
                envelope_v1: primary.map(|p| p.bound(t) * p.input_scale(nu0)),
            }
        })
        .collect();
    CsvTable { rows }
}

/// Compares every envelope with every trajectory.
pub fn validate(cert: &mut Certification, trajs: &[Trajectory]) {
    for env in &mut cert.envelopes {
        let mut v = Validation::empty();
        for tr in trajs.iter().filter(|t| t.nu0.is_zero_mean()) {
            let scale = env.input_scale(tr.nu0.values());
            let measured: Vec<(f64, f64)> = cert.grid.iter().zip(&tr.states).map(|(&t, nu)| (t, env.output(nu))).collect();
            v = v.merge(validate_envelope(&measured, env, scale, SLACK));
        }
        env.entry.verification = Some(v);
    }
}

fn assemble(model: &Model, r: &Resolved, cert: Certification, trajectories: Vec<TrajectoryEntry>) -> Report {
    let mut rep = Report {
        tool: TOOL.into(),
        version: VERSION.into(),
        model: model.file.name.clone(),
        input_hash: model.content_hash.clone(),
        settings: r.clone(),
        status: Status::Ok,
        certificates: cert.certificates,
        envelopes: cert.envelopes.into_iter().map(|e| e.entry).collect(),
        checks: cert.checks,
        trajectories,
    };
    rep.settle();
    rep
}

/// Certificates and checks only.
pub fn run_certify(model: &Model, s: &Settings) -> Result<Report> {
    let r = Resolved::new(model, s)?;
    let mut cert = certify(model, &r)?;
    cert.envelopes.clear();
    Ok(assemble(model, &r, cert, vec![]))
}

/// Certificates and envelope tables, plus one CSV with a column per envelope.
pub fn run_rate(model: &Model, s: &Settings) -> Result<(Report, String)> {
    let r = Resolved::new(model, s)?;
    let cert = certify(model, &r)?;
    let mut csv = String::from("n_or_t");
    for e in &cert.envelopes {
        csv.push(',');
        csv.push_str(&e.entry.id);
    }
    csv.push('\n');
    for &t in &cert.grid {
        csv.push_str(&fmt_f64(t));
        for e in &cert.envelopes {
            csv.push(',');
            csv.push_str(&fmt_f64(e.bound(t)));
        }
        csv.push('\n');
    }
    Ok((assemble(model, &r, cert, vec![]), csv))
}

pub fn csv_name(i: usize) -> String {
    format!("decay_{i:03}.csv")
}

/// Decay tables of every test measure.
pub fn run_simulate(model: &Model, s: &Settings) -> Result<Vec<(String, CsvTable)>> {
    let r = Resolved::new(model, s)?;
    let cert = certify(model, &r)?;
    let trajs = simulate(model, &cert.grid, &r)?;
    Ok(trajs.iter().enumerate().map(|(i, t)| (csv_name(i), decay_csv(&cert, t))).collect())
}

/// Everything: certificates, envelopes, simulation and validation.
pub fn run_report(model: &Model, s: &Settings) -> Result<(Report, Vec<(String, CsvTable)>)> {
    let r = Resolved::new(model, s)?;
    let mut cert = certify(model, &r)?;
    let trajs = simulate(model, &cert.grid, &r)?;
    validate(&mut cert, &trajs);
    let mut tables = vec![];
    let mut entries = vec![];
    for (i, t) in trajs.iter().enumerate() {
        let table = decay_csv(&cert, t);
        let (tv_ratio, v1_ratio, passed) = table.verify();
        let zero_mean = t.nu0.is_zero_mean();
        entries.push(TrajectoryEntry { index: i, kind: t.kind.clone(), zero_mean, csv: csv_name(i), tv_ratio, v1_ratio, passed: passed || !zero_mean });
        tables.push((csv_name(i), table));
    }
    Ok((assemble(model, &r, cert, entries), tables))
}

/// Exit status of a failed pipeline: a certification failure of the model
/// itself is 1, anything else about the input is 3.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Certification(_) => 1,
        _ => 3,
    }
}

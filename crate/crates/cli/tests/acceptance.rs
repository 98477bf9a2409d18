//! Acceptance suite: one line per criterion, exit status nonzero only on an
//! unexpected failure. Criteria listed in `KNOWN_RED` are reported but do not
//! fail the run; the decisions ledger explains each one.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use ergocert_core::certify::{check_doeblin, check_local_coupling, check_lyapunov, check_weak_lyapunov, CouplingCert, LyapunovObjective, WeakLyapunovCert};
use ergocert_core::continuous::{
    cesaro_invariant, check_generator_lyapunov, continuous_feller_rate, continuous_subgeometric_rate, doeblin_transfer, semigroup_lyapunov_excess, Dynamics as CDyn,
};
use ergocert_core::fixtures;
use ergocert_core::functions::{ScalarFunction, Shape};
use ergocert_core::geometric::{coupling_matrix_rate, doeblin_rate, geometric_route, harris_beta, harris_gamma};
use ergocert_core::harness::{apply_zero_mean, existence_check, random_probability, random_zero_mean, seeded_rng, simulate_decay, simulate_decay_continuous, uniqueness_check, NormSpec};
use ergocert_core::kernel::{GeneratorMatrix, StochasticKernel};
use ergocert_core::measure::{total_variation, weighted_norm, SignedMeasure, WeightFunction};
use ergocert_core::model::{validate_model, Dynamics, Model};
use ergocert_core::subgeometric::{chain_rate, difference_bound_f, difference_bound_h, feller_pipeline, h_comparison_rate, psi_builder_polynomial, rate_f, RouteOptions};
use rand::Rng;

const KNOWN_RED: &[&str] = &["6a"];

type Outcome = Result<(bool, String), String>;

struct Line {
    id: &'static str,
    passed: bool,
    text: String,
}

fn run(id: &'static str, title: &str, limit_s: f64, f: impl FnOnce() -> Outcome) -> Line {
    let start = Instant::now();
    let res = f();
    let secs = start.elapsed().as_secs_f64();
    let (passed, detail) = match res {
        Ok((ok, d)) => (ok && secs < limit_s, d),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = match (passed, KNOWN_RED.contains(&id)) {
        (true, false) => "PASS",
        (true, true) => "PASS (listed as known red)",
        (false, true) => "FAIL (known red)",
        (false, false) => "FAIL",
    };
    let text = format!("criterion {id:<3} {tag:<5} {title}: {detail} [{secs:.2} s, limit {limit_s} s]");
    println!("{text}");
    Line { id, passed, text }
}

fn model(file: ergocert_core::model::ModelFile) -> Model {
    validate_model(file).expect("fixture validates")
}

fn kernel(m: &Model) -> &StochasticKernel {
    match &m.dynamics {
        Dynamics::Kernel(s) => s,
        Dynamics::Generator(_) => panic!("{} is not a kernel fixture", m.file.name),
    }
}

fn generator(m: &Model) -> &GeneratorMatrix {
    match &m.dynamics {
        Dynamics::Generator(l) => l,
        Dynamics::Kernel(_) => panic!("{} is not a generator fixture", m.file.name),
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Least-squares slope of `y` against `x`.
fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn e(x: impl std::fmt::Display) -> String {
    x.to_string()
}

fn c1_doeblin() -> Outcome {
    let m = model(fixtures::two_state());
    let s = kernel(&m);
    let cert = check_doeblin(s).map_err(e)?;
    let env = doeblin_rate(&cert);
    let tab = simulate_decay(s, &SignedMeasure::dirac_difference(2, 0, 1), 100, &[NormSpec::tv()]).map_err(e)?;
    let mut worst: f64 = 0.0;
    for r in &tab.rows {
        let exact = 2.0 * 0.3f64.powi(r[0] as i32);
        worst = worst.max((r[1] / exact - 1.0).abs()).max((r[1] / (2.0 * env.eval(r[0])) - 1.0).abs());
    }
    let ok = (cert.alpha - 0.7).abs() < 1e-12 && worst <= 1e-12;
    Ok((ok, format!("alpha = {}, max |ratio - 1| = {worst:.2e} over n <= 100", cert.alpha)))
}

fn c2_harris() -> Outcome {
    let m = model(fixtures::reflected_walk());
    let s = kernel(&m);
    let v = m.v.as_ref().unwrap();
    let powers: Vec<usize> = (0..=10).map(|k| 1 << k).collect();
    let route = geometric_route(s, v, &powers, &[1.25, 1.5, 2.0, 3.0], None).map_err(e)?;
    let mut rng = seeded_rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let nu = random_zero_mean(s.size(), &mut rng).map_err(e)?;
        let scale = weighted_norm(&nu, v).map_err(e)?;
        let tab = simulate_decay(s, &nu, 500, &[NormSpec::tv(), NormSpec::weighted("v", v)]).map_err(e)?;
        for r in &tab.rows {
            worst = worst.max(r[1] / (route.tv.eval(r[0]) * scale)).max(r[2] / (route.weighted.eval(r[0]) * scale));
        }
    }
    Ok((
        worst <= 1.0 + 1e-9,
        format!("N = {}, gamma = {:.6}, beta = {:.4e}, max ratio {worst:.3e} over 200 measures, n <= 500", route.rate.envelope.step, route.rate.gamma, route.rate.beta),
    ))
}

/// Spectral radius of `[[γ_L, K], [(1 − γ_H)/A, γ_H]]` from trace and determinant.
fn rho_oracle(gl: f64, k: f64, gh: f64, a: f64) -> f64 {
    let tr = gl + gh;
    let det = gl * gh - k * (1.0 - gh) / a;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 + disc).abs().max((tr / 2.0 - disc).abs())
}

fn c3_beta() -> Outcome {
    let grid: Vec<f64> = (0..50).map(|i| (i as f64 + 0.5) / 50.0).collect();
    let ka = [(0.02, 1.0), (0.1, 1.0), (1.0, 5.0), (5.0, 10.0), (2.0, 3.0), (10.0, 1.5)];
    let (mut points, mut equalized, mut feasible, mut bad) = (0, 0, 0, vec![]);
    let mut worst_resid: f64 = 0.0;
    let mut worst_rho: f64 = 0.0;
    for &(k, a) in &ka {
        for &gl in &grid {
            for &gh in &grid {
                points += 1;
                let holds = 1.0 - gl > k / a;
                let rho = coupling_matrix_rate(gl, k, gh, a);
                let oracle = rho_oracle(gl, k, gh, a);
                worst_rho = worst_rho.max((rho - oracle).abs());
                if (rho < 1.0) != holds || (oracle < 1.0) != holds {
                    bad.push(format!("rho at ({gl}, {gh}, {k}, {a})"));
                }
                if !holds {
                    continue;
                }
                feasible += 1;
                let (beta, eq) = harris_beta(gh, gl, k, a).map_err(e)?;
                if eq {
                    equalized += 1;
                    let (qa, b) = (1.0 - gh, 1.0 - gl - k / a);
                    let terms = [k * beta * beta, (k + b - qa) * beta, qa];
                    let resid = (terms[0] + terms[1] - terms[2]).abs() / terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
                    worst_resid = worst_resid.max(resid);
                    if resid > 1e-12 {
                        bad.push(format!("quadratic at ({gl}, {gh}, {k}, {a})"));
                    }
                }
                match harris_gamma(gh, gl, k, a) {
                    Some(g) if g > 0.0 && g < 1.0 => {}
                    g => bad.push(format!("gamma {g:?} at ({gl}, {gh}, {k}, {a})")),
                }
            }
        }
    }
    Ok((
        bad.is_empty(),
        format!(
            "{points} points, {feasible} feasible, {equalized} equalized, quadratic residual {worst_resid:.1e}, |rho - oracle| {worst_rho:.1e}, {} exceptions{}",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    ))
}

fn power_g(c: f64, p: f64) -> ScalarFunction {
    ScalarFunction::custom_with_derivative(format!("{c}*v^{p}"), move |v: f64| c * v.powf(p), move |v: f64| c * p * v.powf(p - 1.0), Shape::Convex, (0.0, f64::INFINITY))
        .expect("valid power")
}

fn c4_difference() -> Outcome {
    const N: usize = 10_000;
    let mut rng = seeded_rng(4);
    let mut worst_h: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    for _ in 0..20 {
        // u ↦ u − g(u) stays increasing and nonnegative on [0, u₀]
        let p: f64 = rng.gen_range(1.0..3.0);
        let u0: f64 = rng.gen_range(0.5..2.0);
        let c = rng.gen_range(0.1..0.9) / (p * u0.powf(p - 1.0));
        let g = power_g(c, p);
        let bound = difference_bound_h(&g, u0, N).map_err(e)?;
        let mut u = u0;
        for b in &bound {
            worst_h = worst_h.max(u / b);
            u -= c * u.powf(p);
        }
    }
    for _ in 0..20 {
        let p = rng.gen_range(1.2..3.0);
        let c = rng.gen_range(0.5..2.0);
        let m = rng.gen_range(0.5..2.0);
        let u0 = m * rng.gen_range(0.1..1.0);
        let zeta = power_g(c, p);
        let bound = difference_bound_f(&zeta, (0.0, 1.0), m, u0, N).map_err(e)?;
        let mut u = u0;
        for b in &bound {
            worst_f = worst_f.max(u / b);
            // minimizer of (1 − λ)u + Mcλᵖ in closed form, clipped to [0, 1]
            let lam = (u / (m * c * p)).powf(1.0 / (p - 1.0)).min(1.0);
            u = (1.0 - lam) * u + m * c * lam.powf(p);
        }
    }
    let ok = worst_h <= 1.0 && worst_f <= 1.0;
    Ok((ok, format!("max iterate/bound: H {worst_h:.6}, F {worst_f:.6} over 20 + 20 instances, n <= {N}")))
}

fn c5_closed_forms() -> Outcome {
    let lambdas = log_grid(1e-6, 1.0, 200);
    let ts: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5).collect();
    let mut worst_f: f64 = 0.0;
    let mut worst_t: f64 = 0.0;
    for p in [1.5, 2.0, 3.0] {
        let g = ScalarFunction::power_on(p, (0.0, 1.0)).map_err(e)?;
        let f = rate_f(&g, &lambdas).map_err(e)?;
        for &l in &lambdas {
            let exact = (l.powf(1.0 - p) - 1.0) / (p - 1.0);
            let got = f.eval(l);
            if exact > 0.0 {
                worst_f = worst_f.max((got - exact).abs() / exact);
            } else {
                worst_f = worst_f.max(got.abs());
            }
        }
        for &t in &ts {
            let exact = (1.0 + (p - 1.0) * t).powf(-1.0 / (p - 1.0));
            worst_t = worst_t.max((f.inverse(t) - exact).abs() / exact);
        }
    }
    Ok((worst_f <= 1e-6 && worst_t <= 1e-6, format!("max relative error: F {worst_f:.2e}, Theta {worst_t:.2e}")))
}

fn theta_points(theta: impl Fn(f64) -> f64, lo: f64, hi: f64, transform: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    log_grid(lo, hi, 60).into_iter().map(|t| (t.ln(), transform(theta(t)))).collect()
}

fn polynomial_pipeline() -> ergocert_core::Result<ergocert_core::subgeometric::FellerPipeline> {
    let phi = ScalarFunction::power(0.5)?;
    let psi = psi_builder_polynomial(&phi, 16.0, 0.5)?;
    feller_pipeline(&phi, &psi, 16.0)
}

fn c6a_polynomial() -> Outcome {
    let pipe = polynomial_pipeline().map_err(e)?;
    let s = slope(&theta_points(|t| pipe.theta_psi(t), 10.0, 1e3, f64::ln));
    let far = slope(&theta_points(|t| pipe.theta_psi(t), 1e5, 1e7, f64::ln));
    Ok(((s + 1.0).abs() <= 0.03, format!("fitted slope {s:.4} on [10, 1e3] (target -1 +/- 3%), {far:.4} on [1e5, 1e7]")))
}

fn c6b_stretched() -> Outcome {
    let phi = ScalarFunction::log_power(1.0).map_err(e)?;
    let psi = ScalarFunction::power(0.5).map_err(e)?;
    let pipe = feller_pipeline(&phi, &psi, 16.0).map_err(e)?;
    let s = slope(&theta_points(|t| pipe.theta_psi(t), 10.0, 1e3, |x| (-x.ln()).ln()));
    Ok(((s - 0.5).abs() <= 0.03 * 0.5, format!("fitted stretched exponent {s:.4} on [10, 1e3] (target 0.5 +/- 3%)")))
}

fn c7_chain() -> Outcome {
    let m = model(fixtures::reflected_walk());
    let s = kernel(&m);
    let v = m.v.as_ref().unwrap();
    let phi = m.phi.as_ref().unwrap();
    let wl = check_weak_lyapunov(s, v, phi, None, None).map_err(e)?;
    let route = chain_rate(s, &wl, phi, &RouteOptions::default()).map_err(e)?;
    let v1 = WeightFunction::new(route.wl1.v.clone()).map_err(e)?;
    let mut rng = seeded_rng(7);
    let (mut worst_tv, mut worst_v1): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let nu = random_zero_mean(s.size(), &mut rng).map_err(e)?;
        let scale = weighted_norm(&nu, v).map_err(e)?;
        let tab = simulate_decay(s, &nu, 500, &[NormSpec::tv(), NormSpec::weighted("v1", &v1)]).map_err(e)?;
        for r in &tab.rows[1..] {
            worst_tv = worst_tv.max(r[1] / (route.theorem.tv.envelope(r[0]) * scale));
            worst_v1 = worst_v1.max(r[2] / (route.theorem.v1.envelope(r[0]) * scale));
        }
    }
    Ok((worst_tv <= 1.0 && worst_v1 <= 1.0, format!("max ratio: TV {worst_tv:.3e}, V1 {worst_v1:.3e} over 100 measures, n <= 500")))
}

fn c8_continuous() -> Outcome {
    let m = model(fixtures::birth_death());
    let l = generator(&m);
    let v = m.v.as_ref().unwrap();
    let phi = m.phi.as_ref().unwrap();
    let psi = m.psi.as_ref().unwrap();
    let times: Vec<f64> = (1..=50).map(|k| k as f64).collect();
    let n = l.size();

    // (a) drift envelope of the semigroup
    let g = check_generator_lyapunov(l, v, None, None).map_err(e)?;
    let mut excess = f64::NEG_INFINITY;
    for &t in &times {
        excess = excess.max(semigroup_lyapunov_excess(l, &g, t).map_err(e)?);
    }

    let mut rng = seeded_rng(8);
    let mut measures = vec![SignedMeasure::dirac_difference(n, 0, n - 1)];
    for _ in 0..20 {
        measures.push(random_zero_mean(n, &mut rng).map_err(e)?);
    }
    let tables = measures
        .iter()
        .map(|nu| Ok((total_variation(nu), weighted_norm(nu, v)?, simulate_decay_continuous(l, nu, &times, &[NormSpec::tv()])?)))
        .collect::<ergocert_core::Result<Vec<_>>>()
        .map_err(e)?;

    // (b) Doeblin transfer
    let d = doeblin_transfer(l, &[0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]).map_err(e)?;
    let mut worst_d: f64 = 0.0;
    for (tv0, _, tab) in &tables {
        for r in &tab.rows {
            worst_d = worst_d.max(r[1] / (d.envelope.eval(r[0]) * tv0));
        }
    }

    // (c) composed subgeometric envelopes, relative to ‖ν‖_V
    let gw = check_generator_lyapunov(l, v, Some(phi), None).map_err(e)?;
    let v1 = WeightFunction::new(gw.target.iter().map(|&x| x.max(1.0)).collect()).map_err(e)?;
    let g1 = check_generator_lyapunov(l, &v1, Some(phi), None).map_err(e)?;
    let mut sub = None;
    let mut feller = None;
    for tb in [4.0, 8.0, 16.0, 32.0] {
        if let Ok(c) = continuous_subgeometric_rate(l, &g1, &gw, tb, [3.0 * g1.b / g1.sigma, 3.0 * gw.b / gw.sigma], None, 50.0) {
            if sub.as_ref().map_or(true, |b: &ergocert_core::continuous::ContinuousSubgeometric| c.rate.tv.envelope(50.0) < b.rate.tv.envelope(50.0)) {
                sub = Some(c);
            }
        }
        let opts = RouteOptions { n_candidates: vec![1, 2, 4, 8], ..Default::default() };
        if let Ok(c) = continuous_feller_rate(l, &gw, phi, psi, 16.0, tb, 50.0, &opts) {
            if feller.as_ref().map_or(true, |b: &ergocert_core::continuous::ContinuousFeller| c.rate.tv.envelope(50.0) < b.rate.tv.envelope(50.0)) {
                feller = Some(c);
            }
        }
    }
    let sub = sub.ok_or("no subgeometric continuous route")?;
    let feller = feller.ok_or("no continuous Feller route")?;
    let (mut worst_s, mut worst_f): (f64, f64) = (0.0, 0.0);
    for (_, vn, tab) in &tables {
        for r in &tab.rows {
            worst_s = worst_s.max(r[1] / (sub.rate.tv.envelope(r[0]) * vn));
            worst_f = worst_f.max(r[1] / (feller.rate.tv.envelope(r[0]) * vn));
        }
    }
    let ok = excess <= 1e-8 && worst_d <= 1.0 + 1e-9 && worst_s <= 1.0 && worst_f <= 1.0;
    Ok((
        ok,
        format!(
            "(a) drift excess {excess:.2e} at 50 times; (b) Doeblin T = {}, max ratio {worst_d:.3e}; (c) max ratio subgeometric {worst_s:.3e}, Feller {worst_f:.3e}",
            d.t_big
        ),
    ))
}

fn c9_comparison() -> Outcome {
    let ts: Vec<f64> = (0..=198).map(|i| 1.0 + i as f64 * 0.5).collect();
    let phi = ScalarFunction::power(0.5).map_err(e)?;
    let h = h_comparison_rate(&phi, &ts).map_err(e)?;
    let mut worst: f64 = 0.0;
    for &t in &ts {
        let exact = (1.0 + t / 2.0).powi(-2);
        worst = worst.max((h.theta(t) - exact).abs() / exact);
    }
    // the TV envelope of the polynomial route is Θ_ψ(n)/n
    let pipe = polynomial_pipeline().map_err(e)?;
    let sh = slope(&theta_points(|t| h.theta(t), 1e5, 1e7, f64::ln));
    let sp = slope(&theta_points(|t| pipe.theta_psi(t) / t, 1e5, 1e7, f64::ln));
    let rel = (sh - sp).abs() / sp.abs();
    Ok((worst <= 1e-6 && rel <= 0.05, format!("max relative error {worst:.2e} on [1, 100]; slopes on [1e5, 1e7]: comparison {sh:.4}, route {sp:.4} ({:.2}% apart)", 100.0 * rel)))
}

/// A contraction certificate for the existence check: the one-step
/// geometric drift read as a weak drift with `φ(V) = V`, coupled at the
/// smallest power and threshold that work.
fn contraction(s: &StochasticKernel, v: &WeightFunction) -> Result<(WeakLyapunovCert, CouplingCert), String> {
    let l1 = check_lyapunov(s, v, None, LyapunovObjective::MinGammaL).map_err(e)?;
    let wl = WeakLyapunovCert {
        sigma_bar: 1.0 - l1.gamma_l,
        k: l1.k.max(1e-12),
        phi: "identity".into(),
        v: v.values().to_vec(),
        phi_v: v.values().to_vec(),
        source_hash: s.content_hash(),
    };
    let mut last = None;
    for n in (0..=10).map(|k| 1usize << k) {
        for f in [1.25, 1.5, 2.0, 3.0] {
            match check_local_coupling(s, v, f * wl.k / wl.sigma_bar, n) {
                Ok(c) if c.certified_gamma() < 1.0 => return Ok((wl, c)),
                Ok(_) => {}
                Err(err) => last = Some(err.to_string()),
            }
        }
    }
    Err(last.unwrap_or_else(|| "no usable coupling threshold".into()))
}

fn c10_existence() -> Outcome {
    let mut notes = vec![];
    let mut ok = true;
    let mut certified = vec![];
    for f in [fixtures::two_state(), fixtures::three_state_harris(), fixtures::reflected_walk()] {
        let m = model(f);
        let s = kernel(&m).clone();
        let v = m.v.clone().unwrap_or_else(|| WeightFunction::ones(s.size()));
        let (wl, coup) = contraction(&s, &v)?;
        let mut rng = seeded_rng(10);
        let mut worst: f64 = 0.0;
        for i in 0..20 {
            let mu0 = if i == 0 { SignedMeasure::dirac(s.size(), 0) } else { random_probability(s.size(), &mut rng).map_err(e)? };
            match existence_check(&s, &wl, &coup, &mu0, 200) {
                Ok(x) => {
                    worst = worst.max(x.fraction);
                    if m.file.name == "two_state" {
                        let err = (x.mu_star[0] - 4.0 / 7.0).abs().max((x.mu_star[1] - 3.0 / 7.0).abs());
                        ok &= err <= 1e-10;
                    }
                }
                Err(err) => {
                    ok = false;
                    notes.push(format!("{}: {err}", m.file.name));
                }
            }
        }
        notes.push(format!("{} budget used {worst:.3}", m.file.name));
        certified.push((m.file.name.clone(), s, wl, coup));
    }
    for (name, s, wl, coup) in &certified {
        let u = uniqueness_check(s, 1e-10, Some((wl, coup))).map_err(e)?;
        ok &= u.multiplicity == 1 && u.certified == Some(true);
        notes.push(format!("{name} multiplicity {}", u.multiplicity));
    }
    let bd = model(fixtures::block_diagonal());
    let u = uniqueness_check(kernel(&bd), 1e-10, None).map_err(e)?;
    ok &= u.multiplicity == 2 && u.nullity == 2;
    notes.push(format!("block_diagonal multiplicity {}", u.multiplicity));
    let p2 = model(fixtures::period_two());
    let c = cesaro_invariant(CDyn::Kernel(kernel(&p2)), &SignedMeasure::dirac(2, 0), 1e7, 1e-12, None).map_err(e)?;
    let err = (c.mu[0] - 0.5).abs().max((c.mu[1] - 0.5).abs());
    ok &= err <= 1e-10;
    notes.push(format!("period_two Cesaro error {err:.1e}"));
    Ok((ok, notes.join(", ")))
}

fn c11_cli() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir).map_err(e)?.filter_map(|d| d.ok().map(|d| d.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
    files.sort();
    if files.len() != fixtures::suite().len() {
        return Err(format!("expected {} fixture files in {}", fixtures::suite().len(), dir.display()));
    }
    let mut ok = true;
    let mut codes = vec![];
    for f in &files {
        let runs: Vec<_> = (0..2)
            .map(|_| Command::new(env!("CARGO_BIN_EXE_ergocert")).arg("report").arg(f).args(["--seed", "11"]).output())
            .collect::<std::io::Result<_>>()
            .map_err(e)?;
        let code = runs[0].status.code();
        ok &= code == Some(0) && runs[1].status.code() == Some(0) && runs[0].stdout == runs[1].stdout;
        codes.push(format!("{} {}", f.file_stem().unwrap().to_string_lossy(), code.map_or("signal".into(), |c| c.to_string())));
    }
    Ok((ok, format!("exit codes {}; repeat runs byte-identical: {ok}", codes.join(", "))))
}

fn main() {
    // the zero-mean helper is the one the simulations rely on; check it keeps mass at zero
    let s = kernel(&model(fixtures::two_state())).clone();
    let nu = apply_zero_mean(&s, &SignedMeasure::dirac_difference(2, 0, 1)).expect("apply");
    assert!(nu.mass().abs() <= 1e-17);

    let lines = vec![
        run("1", "Doeblin envelope is exact on the two-state chain", 1.0, c1_doeblin),
        run("2", "Harris envelope dominates walk trajectories", 10.0, c2_harris),
        run("3", "equalizing beta and the 2x2 criterion", 1.0, c3_beta),
        run("4", "difference inequalities dominate their recurrences", 5.0, c4_difference),
        run("5", "rate integral and inverse closed forms", 2.0, c5_closed_forms),
        run("6a", "polynomial pipeline slope", 5.0, c6a_polynomial),
        run("6b", "stretched-exponential pipeline exponent", 5.0, c6b_stretched),
        run("7", "chain-route envelopes dominate walk trajectories", 30.0, c7_chain),
        run("8", "continuous-time transfers on the birth-death chain", 60.0, c8_continuous),
        run("9", "comparison rate closed form and slope", 5.0, c9_comparison),
        run("10", "existence budget, multiplicity, Cesaro average", 30.0, c10_existence),
        run("11", "report over the fixture suite", 60.0, c11_cli),
    ];
    let unexpected: Vec<&Line> = lines.iter().filter(|l| !l.passed && !KNOWN_RED.contains(&l.id)).collect();
    let passed = lines.iter().filter(|l| l.passed).count();
    println!("{passed}/{} criteria pass; known red: {}", lines.len(), KNOWN_RED.join(", "));
    if !unexpected.is_empty() {
        for l in unexpected {
            eprintln!("unexpected failure: {}", l.text);
        }
        std::process::exit(1);
    }
}

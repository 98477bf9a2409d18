//! Simulate-and-compare: decay tables, envelope validation, random test
//! measures and the finite-scale existence and uniqueness checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::certify::{CouplingCert, WeakLyapunovCert};
use crate::error::{Error, Result};
use crate::geometric::GeometricEnvelope;
use crate::kernel::{apply, closed_classes, semigroup_at, solve_on_class, GeneratorMatrix, StochasticKernel};
use crate::measure::{check_len, total_variation, triple_norm, weighted_norm, SignedMeasure, WeightFunction};
use crate::subgeometric::RateFunction;

/// Anything that bounds a decay curve at step or time `t`.
pub trait Envelope {
    fn bound(&self, t: f64) -> f64;
}

impl Envelope for GeometricEnvelope {
    fn bound(&self, t: f64) -> f64 {
        self.eval(t)
    }
}

impl Envelope for RateFunction {
    fn bound(&self, t: f64) -> f64 {
        self.envelope(t)
    }
}

impl<F: Fn(f64) -> f64> Envelope for F {
    fn bound(&self, t: f64) -> f64 {
        self(t)
    }
}

/// `‖ν_n‖` per requested norm at each step or time.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecayTable {
    pub columns: Vec<String>,
    /// Row `i` is `(t_i, norm_1, norm_2, …)`.
    pub rows: Vec<Vec<f64>>,
    pub zero_mean: bool,
}

impl DecayTable {
    pub fn column(&self, name: &str) -> Option<Vec<(f64, f64)>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| (r[0], r[j + 1])).collect())
    }
}

/// Norm requested from [`simulate_decay`]: TV, or weighted by the given weight.
#[derive(Clone, Debug)]
pub struct NormSpec {
    pub name: String,
    pub weight: Option<WeightFunction>,
}

impl NormSpec {
    pub fn tv() -> Self {
        NormSpec { name: "tv".into(), weight: None }
    }

    pub fn weighted(name: impl Into<String>, w: &WeightFunction) -> Self {
        NormSpec { name: name.into(), weight: Some(w.clone()) }
    }

    fn eval(&self, nu: &SignedMeasure) -> Result<f64> {
        match &self.weight {
            None => Ok(total_variation(nu)),
            Some(w) => weighted_norm(nu, w),
        }
    }
}

fn row(t: f64, nu: &SignedMeasure, norms: &[NormSpec]) -> Result<Vec<f64>> {
    let mut r = vec![t];
    for n in norms {
        r.push(n.eval(nu)?);
    }
    Ok(r)
}

/// `Sν` with the rounding residue of the mass spread back out uniformly.
///
/// The exact image of a zero-mass measure has zero mass, and the residue
/// would otherwise be preserved by `S` and dominate once `Sⁿν` is small.
pub fn apply_zero_mean(s: &StochasticKernel, nu: &SignedMeasure) -> Result<SignedMeasure> {
    let out = apply(s, nu)?;
    let shift = out.mass() / out.len() as f64;
    SignedMeasure::new(out.values().iter().map(|x| x - shift).collect())
}

/// Norms of `Sⁿν` for `n = 0..=n_max`. A non-zero-mean ν is accepted and flagged.
pub fn simulate_decay(s: &StochasticKernel, nu: &SignedMeasure, n_max: usize, norms: &[NormSpec]) -> Result<DecayTable> {
    check_len(s.size(), nu.len())?;
    if n_max == 0 {
        return Err(Error::param("n_max", "must be at least 1"));
    }
    let mut rows = Vec::with_capacity(n_max + 1);
    let zero_mean = nu.is_zero_mean();
    let mut cur = nu.clone();
    rows.push(row(0.0, &cur, norms)?);
    for n in 1..=n_max {
        cur = if zero_mean { apply_zero_mean(s, &cur)? } else { apply(s, &cur)? };
        rows.push(row(n as f64, &cur, norms)?);
    }
    Ok(DecayTable { columns: norms.iter().map(|n| n.name.clone()).collect(), rows, zero_mean })
}

/// Norms of `S_tν` on a time grid, each time by its own uniformization.
pub fn simulate_decay_continuous(l: &GeneratorMatrix, nu: &SignedMeasure, t_grid: &[f64], norms: &[NormSpec]) -> Result<DecayTable> {
    check_len(l.size(), nu.len())?;
    let zero_mean = nu.is_zero_mean();
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let st = semigroup_at(l, t)?;
        let img = if zero_mean { apply_zero_mean(&st, nu)? } else { apply(&st, nu)? };
        rows.push(row(t, &img, norms)?);
    }
    Ok(DecayTable { columns: norms.iter().map(|n| n.name.clone()).collect(), rows, zero_mean })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Validation {
    pub passed: bool,
    /// Largest measured/envelope ratio, 0 for an all-zero table.
    pub worst_ratio: f64,
    pub worst_at: Option<f64>,
}

impl Validation {
    /// Combines two outcomes, keeping the worse ratio.
    pub fn merge(self, other: Validation) -> Validation {
        let passed = self.passed && other.passed;
        if other.worst_ratio > self.worst_ratio {
            Validation { passed, ..other }
        } else {
            Validation { passed, ..self }
        }
    }

    pub fn empty() -> Validation {
        Validation { passed: true, worst_ratio: 0.0, worst_at: None }
    }
}

/// Rounding allowance, relative to the input norm. Mass that rounding adds
/// to a zero-mean measure never contracts, so tiny measured values carry an
/// absolute error of this order.
pub const ROUNDOFF_FLOOR: f64 = 1e-14;

/// Pass iff `measured ≤ envelope·scale·(1 + slack) + ROUNDOFF_FLOOR·scale` at
/// every point, where `scale` is the input norm the envelope is relative to.
///
/// The ratio is `measured/(envelope·scale + ROUNDOFF_FLOOR·scale)`, taken over
/// points above the rounding level.
pub fn validate_envelope(measured: &[(f64, f64)], env: &dyn Envelope, scale: f64, slack: f64) -> Validation {
    let mut v = Validation::empty();
    let floor = ROUNDOFF_FLOOR * scale;
    for &(t, m) in measured {
        if m <= floor {
            continue;
        }
        let b = env.bound(t) * scale;
        let ratio = if b.is_nan() { f64::INFINITY } else { m / (b + floor) };
        if ratio > v.worst_ratio {
            v.worst_ratio = ratio;
            v.worst_at = Some(t);
        }
        if !(m <= b * (1.0 + slack) + floor) {
            v.passed = false;
        }
    }
    v
}

/// `ν = p − q` with `p, q` independent symmetric Dirichlet(1) vectors.
pub fn random_zero_mean(n: usize, rng: &mut ChaCha8Rng) -> Result<SignedMeasure> {
    if n < 2 {
        return Err(Error::param("n", "needs at least two states"));
    }
    let d = Dirichlet::new_with_size(1.0, n).map_err(|e| Error::param("n", e.to_string()))?;
    let p = d.sample(rng);
    let q = d.sample(rng);
    let mut nu: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a - b).collect();
    let drift: f64 = nu.iter().sum::<f64>() / n as f64;
    for x in &mut nu {
        *x -= drift;
    }
    SignedMeasure::new(nu)
}

/// A probability vector from Dirichlet(1).
pub fn random_probability(n: usize, rng: &mut ChaCha8Rng) -> Result<SignedMeasure> {
    if n < 2 {
        return Ok(SignedMeasure::dirac(1, 0));
    }
    let d = Dirichlet::new_with_size(1.0, n).map_err(|e| Error::param("n", e.to_string()))?;
    SignedMeasure::new(d.sample(rng))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, Serialize)]
pub struct Existence {
    pub mu_star: Vec<f64>,
    /// `|||Sμ₀ − μ₀|||` under `‖·‖ + β‖·‖_V`, plus the 1e-9 allowance.
    pub budget: f64,
    /// `α Σ_k ‖S^k(Sμ₀ − μ₀)‖_{φ(V)}` over the iterations run.
    pub consumed: f64,
    pub fraction: f64,
    /// `‖Sμ* − μ*‖`.
    pub residual: f64,
}

/// Iterates `μ_k = S^kμ₀` and tracks the Cauchy budget of the one-step contraction:
/// the partial sums `α Σ_{k<n} ‖μ_{k+1} − μ_k‖_{φ(V)}` may never
/// exceed the triple norm of `Sμ₀ − μ₀`; an overrun is an error.
pub fn existence_check(s: &StochasticKernel, wl: &WeakLyapunovCert, coupling: &CouplingCert, mu0: &SignedMeasure, n_max: usize) -> Result<Existence> {
    check_len(s.size(), mu0.len())?;
    if !mu0.is_probability(1e-12) {
        return Err(Error::InvalidMeasure("the starting measure must be a probability vector".into()));
    }
    if !(coupling.a > wl.k / wl.sigma_bar) {
        return Err(crate::Failure::Precondition { inequality: format!("A = {} > K/sigma = {}", coupling.a, wl.k / wl.sigma_bar) }.into());
    }
    let gamma_h = coupling.certified_gamma();
    let beta = (1.0 - gamma_h) / (wl.k * coupling.n as f64);
    let alpha = beta * (wl.sigma_bar - wl.k / coupling.a);
    let v = WeightFunction::new(wl.v.clone())?;
    let phi_norm = |nu: &SignedMeasure| -> f64 { nu.values().iter().zip(&wl.phi_v).map(|(a, b)| a.abs() * b).sum() };
    let mut mu = mu0.clone();
    let next = apply(s, &mu)?;
    let mut nu = next.sub(&mu)?;
    let budget = triple_norm(&nu, &v, beta)? + 1e-9;
    let mut consumed = 0.0;
    mu = next;
    for k in 0..n_max {
        consumed += alpha * phi_norm(&nu);
        if consumed > budget {
            return Err(Error::Hypothesis(format!("Cauchy budget {budget} exceeded at step {k}: consumed {consumed}")));
        }
        nu = apply(s, &nu)?;
        mu = mu.add(&nu)?;
    }
    let residual = total_variation(&apply(s, &mu)?.sub(&mu)?);
    Ok(Existence {
        mu_star: mu.into_values(),
        budget,
        consumed,
        fraction: if budget > 0.0 { consumed / budget } else { 0.0 },
        residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Uniqueness {
    /// Number of closed communicating classes.
    pub multiplicity: usize,
    /// Numerical nullity of `S − I` from its singular values.
    pub nullity: usize,
    pub unique: bool,
    /// The two counts agree.
    pub consistent: bool,
    /// With a certificate: it is usable and no pair of class equilibria
    /// `ν = π_i − π_j` (for which `Sν = ν`) escapes `α‖ν‖_{φ(V)} ≤ 0`.
    pub certified: Option<bool>,
}

/// Stationary multiplicity by closed classes, cross-checked by the SVD nullity.
pub fn uniqueness_check(s: &StochasticKernel, tol: f64, cert: Option<(&WeakLyapunovCert, &CouplingCert)>) -> Result<Uniqueness> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let n = s.size();
    let multiplicity = closed_classes(s).len();
    let m = s.matrix() - nalgebra::DMatrix::<f64>::identity(n, n);
    let sv = m.svd(false, false).singular_values;
    let nullity = sv.iter().filter(|&&x| x <= tol * n as f64).count();
    let certified = match cert {
        None => None,
        Some((wl, c)) => Some(contraction_forbids_pairs(s, wl, c)?),
    };
    Ok(Uniqueness { multiplicity, nullity, unique: multiplicity == 1, consistent: multiplicity == nullity, certified })
}

fn contraction_forbids_pairs(s: &StochasticKernel, wl: &WeakLyapunovCert, c: &CouplingCert) -> Result<bool> {
    if wl.source_hash != s.content_hash() || !(c.a > wl.k / wl.sigma_bar) || !(c.certified_gamma() < 1.0) {
        return Ok(false);
    }
    let beta = (1.0 - c.certified_gamma()) / (wl.k * c.n as f64);
    let alpha = beta * (wl.sigma_bar - wl.k / c.a);
    let pis = closed_classes(s).iter().map(|cl| solve_on_class(s, cl)).collect::<Result<Vec<_>>>()?;
    for i in 0..pis.len() {
        for j in i + 1..pis.len() {
            let nu: f64 = pis[i].iter().zip(&pis[j]).zip(&wl.phi_v).map(|((a, b), w)| (a - b).abs() * w).sum();
            if alpha * nu > 1e-12 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> StochasticKernel {
        StochasticKernel::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap()
    }

    #[test]
    fn decay_examples() {
        let u = StochasticKernel::uniform_rows(&[0.2, 0.3, 0.5]).unwrap();
        let nu = SignedMeasure::new(vec![0.5, -0.25, -0.25]).unwrap();
        let t = simulate_decay(&u, &nu, 3, &[NormSpec::tv()]).unwrap();
        assert!(t.rows[1..].iter().all(|r| r[1].abs() < 1e-15));

        let t = simulate_decay(&two_state(), &SignedMeasure::dirac_difference(2, 0, 1), 20, &[NormSpec::tv()]).unwrap();
        for r in &t.rows {
            assert!((r[1] - 2.0 * 0.3f64.powi(r[0] as i32)).abs() < 1e-15);
        }

        let id = StochasticKernel::identity(2);
        let t = simulate_decay(&id, &SignedMeasure::dirac_difference(2, 0, 1), 5, &[NormSpec::tv()]).unwrap();
        assert!(t.rows.iter().all(|r| r[1] == 2.0));
        assert!(!simulate_decay(&id, &SignedMeasure::dirac(2, 0), 2, &[NormSpec::tv()]).unwrap().zero_mean);
    }

    #[test]
    fn validation_examples() {
        let env = GeometricEnvelope::discrete(1.0, 0.3, crate::geometric::NormTag::Tv, crate::geometric::NormTag::Tv);
        let zero = vec![(1.0, 0.0), (2.0, 0.0)];
        let v = validate_envelope(&zero, &env, 1.0, 0.0);
        assert!(v.passed && v.worst_ratio == 0.0);

        let t = simulate_decay(&two_state(), &SignedMeasure::dirac_difference(2, 0, 1), 50, &[NormSpec::tv()]).unwrap();
        let col = t.column("tv").unwrap();
        let v = validate_envelope(&col, &env, 2.0, 1e-9);
        assert!(v.passed && (v.worst_ratio - 1.0).abs() < 1e-12, "{v:?}");
        let v = validate_envelope(&col, &env, 1.0, 1e-9);
        assert!(!v.passed && v.worst_at == Some(0.0));
        let half = |n: f64| 0.5 * env.eval(n);
        let v = validate_envelope(&col[1..], &half, 2.0, 1e-9);
        assert!(!v.passed && (v.worst_ratio - 2.0).abs() < 1e-9);
    }

    #[test]
    fn uniqueness_examples() {
        let u = uniqueness_check(&StochasticKernel::identity(4), 1e-10, None).unwrap();
        assert_eq!((u.multiplicity, u.nullity), (4, 4));
        let block = StochasticKernel::new(vec![
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 0.7],
            vec![0.0, 0.0, 0.6, 0.4],
        ])
        .unwrap();
        let u = uniqueness_check(&block, 1e-10, None).unwrap();
        assert_eq!((u.multiplicity, u.nullity, u.unique), (2, 2, false));
        let u = uniqueness_check(&two_state(), 1e-10, None).unwrap();
        assert!(u.unique && u.consistent);
    }

    #[test]
    fn random_measures_are_zero_mean() {
        let mut rng = seeded_rng(7);
        for _ in 0..20 {
            let nu = random_zero_mean(5, &mut rng).unwrap();
            assert!(nu.mass().abs() < 1e-14);
            let p = random_probability(5, &mut rng).unwrap();
            assert!(p.is_probability(1e-12));
        }
    }
}

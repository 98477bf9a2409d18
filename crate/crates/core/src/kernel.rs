//! Stochastic kernels, generators and the semigroup they generate.
//!
//! Kernels act on measures from the left: `(Sμ)(y) = Σ_x μ(x) S(x, y)`, so row
//! `x` is the law after one step from `x`. Functions are acted on from the
//! right: `(Pf)(x) = Σ_y S(x, y) f(y)`.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measure::{check_len, total_variation, SignedMeasure};

/// Row-sum tolerance at construction.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticKernel {
    m: DMatrix<f64>,
}

impl StochasticKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_matrix(rows_to_matrix(&rows).map_err(Error::InvalidKernel)?)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        validate_square(&m).map_err(Error::InvalidKernel)?;
        for x in 0..m.nrows() {
            let mut sum = 0.0;
            for y in 0..m.ncols() {
                let v = m[(x, y)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidKernel(format!("entry ({x}, {y}) = {v} is not a finite nonnegative number")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidKernel(format!("row {x} sums to {sum}")));
            }
        }
        Ok(StochasticKernel { m })
    }

    /// Wraps a product of validated kernels; rounding may move row sums by a few ulps.
    pub(crate) fn from_product(m: DMatrix<f64>) -> Self {
        debug_assert!(m.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
        StochasticKernel { m }
    }

    pub fn identity(n: usize) -> Self {
        StochasticKernel { m: DMatrix::identity(n, n) }
    }

    /// Every row equal to `eta`.
    pub fn uniform_rows(eta: &[f64]) -> Result<Self> {
        let n = eta.len();
        Self::from_matrix(DMatrix::from_fn(n, n, |_, y| eta[y]))
    }

    pub fn size(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.m[(x, y)]
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        self.m.row(x).iter().cloned().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size()).map(|x| self.row(x)).collect()
    }

    /// The kernel of `n` steps.
    pub fn power(&self, n: usize) -> StochasticKernel {
        StochasticKernel::from_product(matrix_power(&self.m, n))
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &StochasticKernel) -> Result<StochasticKernel> {
        check_len(self.size(), other.size())?;
        Ok(StochasticKernel::from_product(&self.m * &other.m))
    }

    pub fn content_hash(&self) -> String {
        matrix_hash("kernel", &self.m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    m: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_matrix(rows_to_matrix(&rows).map_err(Error::InvalidGenerator)?)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        validate_square(&m).map_err(Error::InvalidGenerator)?;
        for x in 0..m.nrows() {
            let mut sum = 0.0;
            let mut scale: f64 = 0.0;
            for y in 0..m.ncols() {
                let v = m[(x, y)];
                if !v.is_finite() || (x != y && v < 0.0) {
                    return Err(Error::InvalidGenerator(format!("entry ({x}, {y}) = {v} is not an admissible rate")));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum.abs() > ROW_SUM_TOL * scale.max(1.0) {
                return Err(Error::InvalidGenerator(format!("row {x} sums to {sum}")));
            }
        }
        Ok(GeneratorMatrix { m })
    }

    pub fn size(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// The uniformization rate `max_x |L(x, x)|`.
    pub fn exit_rate(&self) -> f64 {
        (0..self.size()).map(|x| -self.m[(x, x)]).fold(0.0, f64::max)
    }

    /// `(Lf)(x) = Σ_y L(x, y) f(y)`.
    pub fn act(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), f.len())?;
        Ok((0..self.size())
            .map(|x| (0..self.size()).map(|y| self.m[(x, y)] * f[y]).sum())
            .collect())
    }

    pub fn content_hash(&self) -> String {
        matrix_hash("generator", &self.m)
    }
}

/// Growth bound `‖S_t μ‖_V ≤ C_V e^{ω_V t} ‖μ‖_V`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SemigroupGrowth {
    pub c_v: f64,
    pub omega_v: f64,
}

impl SemigroupGrowth {
    pub fn new(c_v: f64, omega_v: f64) -> Result<Self> {
        if !(c_v >= 1.0) || !c_v.is_finite() {
            return Err(Error::param("c_v", format!("must be >= 1, got {c_v}")));
        }
        if !(omega_v >= 0.0) || !omega_v.is_finite() {
            return Err(Error::param("omega_v", format!("must be >= 0, got {omega_v}")));
        }
        Ok(SemigroupGrowth { c_v, omega_v })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 {
        return Err("matrix is empty".into());
    }
    if let Some(x) = rows.iter().position(|r| r.len() != n) {
        return Err(format!("row {x} has {} entries, expected {n}", rows[x].len()));
    }
    Ok(DMatrix::from_fn(n, n, |x, y| rows[x][y]))
}

fn validate_square(m: &DMatrix<f64>) -> std::result::Result<(), String> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(format!("matrix must be square and nonempty, got {}x{}", m.nrows(), m.ncols()));
    }
    Ok(())
}

fn matrix_hash(tag: &str, m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update((m.nrows() as u64).to_le_bytes());
    for x in 0..m.nrows() {
        for y in 0..m.ncols() {
            h.update(m[(x, y)].to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub(crate) fn hash_values(tag: &str, values: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    for v in values {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

fn matrix_power(m: &DMatrix<f64>, mut n: usize) -> DMatrix<f64> {
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

/// `Sμ`.
pub fn apply(s: &StochasticKernel, mu: &SignedMeasure) -> Result<SignedMeasure> {
    check_len(s.size(), mu.len())?;
    Ok(SignedMeasure::from_vec_unchecked(left_mul(&s.m, mu.values())))
}

pub(crate) fn left_mul(m: &DMatrix<f64>, mu: &[f64]) -> Vec<f64> {
    let n = m.ncols();
    let mut out = vec![0.0; n];
    for (x, &w) in mu.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (y, o) in out.iter_mut().enumerate() {
            *o += w * m[(x, y)];
        }
    }
    out
}

/// `Pf`.
pub fn dual_apply(s: &StochasticKernel, f: &[f64]) -> Result<Vec<f64>> {
    check_len(s.size(), f.len())?;
    Ok(right_mul(&s.m, f))
}

pub(crate) fn right_mul(m: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|x| (0..m.ncols()).map(|y| m[(x, y)] * f[y]).sum()).collect()
}

/// `Sⁿμ` by repeated application.
pub fn power_apply(s: &StochasticKernel, n: usize, mu: &SignedMeasure) -> Result<SignedMeasure> {
    check_len(s.size(), mu.len())?;
    let mut cur = mu.values().to_vec();
    for _ in 0..n {
        cur = left_mul(&s.m, &cur);
    }
    Ok(SignedMeasure::from_vec_unchecked(cur))
}

/// Closed communicating classes of the support graph, sorted by smallest state.
pub fn closed_classes(s: &StochasticKernel) -> Vec<Vec<usize>> {
    let n = s.size();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for x in 0..n {
        for y in 0..n {
            if s.m[(x, y)] > 0.0 {
                g.add_edge(nodes[x], nodes[y], ());
            }
        }
    }
    let mut component = vec![0usize; n];
    let sccs = tarjan_scc(&g);
    for (c, scc) in sccs.iter().enumerate() {
        for node in scc {
            component[node.index()] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, scc)| {
            scc.iter().all(|node| {
                let x = node.index();
                (0..n).all(|y| s.m[(x, y)] == 0.0 || component[y] == *c)
            })
        })
        .map(|(_, scc)| {
            let mut states: Vec<usize> = scc.iter().map(|v| v.index()).collect();
            states.sort_unstable();
            states
        })
        .collect();
    closed.sort();
    closed
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryMethod {
    PowerIteration,
    NullSpaceSolve,
}

#[derive(Clone, Debug)]
pub struct Stationary {
    pub pi: SignedMeasure,
    /// Number of closed classes; the stationary probabilities form a simplex of this dimension minus one.
    pub multiplicity: usize,
    pub unique: bool,
    pub residual: f64,
    pub iterations: usize,
    pub method: StationaryMethod,
}

const POWER_ITERATION_BUDGET: usize = 10_000;

/// A stationary probability vector, flagged when it is not unique.
///
/// Lazy power iteration `π ← π(S + I)/2` (which has the same fixed points and
/// no periodicity) runs first; a direct solve on one closed class follows if
/// the budget runs out.
pub fn stationary_distribution(s: &StochasticKernel, tol: f64) -> Result<Stationary> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let n = s.size();
    let classes = closed_classes(s);
    let multiplicity = classes.len();
    let residual_of = |pi: &[f64]| -> f64 {
        let spi = left_mul(&s.m, pi);
        spi.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
    };

    let mut pi = vec![1.0 / n as f64; n];
    for it in 1..=POWER_ITERATION_BUDGET {
        let spi = left_mul(&s.m, &pi);
        for (p, q) in pi.iter_mut().zip(&spi) {
            *p = 0.5 * (*p + q);
        }
        if it % 8 == 0 || it == POWER_ITERATION_BUDGET {
            let r = residual_of(&pi);
            if r <= tol {
                return Ok(Stationary {
                    pi: SignedMeasure::from_vec_unchecked(pi),
                    multiplicity,
                    unique: multiplicity == 1,
                    residual: r,
                    iterations: it,
                    method: StationaryMethod::PowerIteration,
                });
            }
        }
    }

    let class = &classes[0];
    let pi = solve_on_class(s, class)?;
    let r = residual_of(&pi);
    if r > tol {
        return Err(Error::NoConvergence(format!(
            "stationary residual {r} above tolerance {tol} after {POWER_ITERATION_BUDGET} power iterations and a direct solve"
        )));
    }
    Ok(Stationary {
        pi: SignedMeasure::from_vec_unchecked(pi),
        multiplicity,
        unique: multiplicity == 1,
        residual: r,
        iterations: POWER_ITERATION_BUDGET,
        method: StationaryMethod::NullSpaceSolve,
    })
}

/// Stationary law of the restriction to a closed class, embedded in the full space.
pub(crate) fn solve_on_class(s: &StochasticKernel, class: &[usize]) -> Result<Vec<f64>> {
    let k = class.len();
    // (Sᵀ − I)π = 0 with the last equation replaced by Σπ = 1.
    let mut a = DMatrix::from_fn(k, k, |i, j| s.m[(class[j], class[i])] - if i == j { 1.0 } else { 0.0 });
    let mut rhs = nalgebra::DVector::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    rhs[k - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoConvergence("singular system in the stationary solve".into()))?;
    let mut pi = vec![0.0; s.size()];
    for (i, &x) in class.iter().enumerate() {
        pi[x] = sol[i].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    Ok(pi)
}

/// Largest `q·h` handled by a single Poisson series before squaring.
const UNIFORMIZATION_CHUNK: f64 = 8.0;
/// Poisson tail mass left out of the series.
const POISSON_TAIL: f64 = 1e-13;

/// `exp(tL)` by uniformization.
///
/// With `q = max|L(x,x)|` and `P = I + L/q`, `exp(hL) = Σ_j e^{−qh}(qh)^j/j! P^j`.
/// The horizon is split as `t = 2^k h` with `qh ≤ 8` and the chunk is squared
/// `k` times.
pub fn semigroup_at(l: &GeneratorMatrix, t: f64) -> Result<StochasticKernel> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param("t", format!("must be finite and nonnegative, got {t}")));
    }
    let n = l.size();
    let q = l.exit_rate();
    if t == 0.0 || q == 0.0 {
        return Ok(StochasticKernel::identity(n));
    }
    let mut k = 0u32;
    let mut h = t;
    while q * h > UNIFORMIZATION_CHUNK {
        h *= 0.5;
        k += 1;
    }
    let p = DMatrix::identity(n, n) + l.matrix() / q;
    let qh = q * h;
    let mut weight = (-qh).exp();
    let mut acc = DMatrix::identity(n, n) * weight;
    let mut term = DMatrix::identity(n, n);
    let mut covered = weight;
    let mut j = 0u32;
    while 1.0 - covered > POISSON_TAIL && j < 10_000 {
        j += 1;
        term = &term * &p;
        weight *= qh / j as f64;
        acc += &term * weight;
        covered += weight;
    }
    acc /= covered;
    for _ in 0..k {
        acc = &acc * &acc;
    }
    for x in 0..n {
        let s: f64 = acc.row(x).sum();
        for y in 0..n {
            acc[(x, y)] = acc[(x, y)].max(0.0) / s;
        }
    }
    Ok(StochasticKernel { m: acc })
}

/// Total-variation distance of `Sμ` from `μ`.
pub fn invariance_residual(s: &StochasticKernel, mu: &SignedMeasure) -> Result<f64> {
    Ok(total_variation(&apply(s, mu)?.sub(mu)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> StochasticKernel {
        StochasticKernel::new(vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap()
    }

    #[test]
    fn apply_examples() {
        let s = two_state();
        let nu = SignedMeasure::dirac_difference(2, 0, 1);
        let out = apply(&s, &nu).unwrap();
        assert!((out.values()[0] - 0.3).abs() < 1e-15 && (out.values()[1] + 0.3).abs() < 1e-15);
        let id = StochasticKernel::identity(3);
        let mu = SignedMeasure::new(vec![0.2, -0.5, 0.1]).unwrap();
        assert_eq!(apply(&id, &mu).unwrap(), mu);
        let u = StochasticKernel::uniform_rows(&[0.2, 0.3, 0.5]).unwrap();
        let nu = SignedMeasure::new(vec![0.4, -0.1, -0.3]).unwrap();
        assert!(total_variation(&apply(&u, &nu).unwrap()) < 1e-15);
        assert!(total_variation(&power_apply(&u, 3, &nu).unwrap()) < 1e-15);
        assert_eq!(power_apply(&u, 0, &nu).unwrap(), nu);
    }

    #[test]
    fn dual_examples() {
        let s = StochasticKernel::new(vec![vec![0.8, 0.2, 0.0], vec![0.6, 0.2, 0.2], vec![0.0, 0.6, 0.4]]).unwrap();
        let pv = dual_apply(&s, &[1.0, 2.0, 4.0]).unwrap();
        for (a, b) in pv.iter().zip([1.2, 1.8, 2.8]) {
            assert!((a - b).abs() < 1e-14);
        }
        let c = dual_apply(&s, &[3.0; 3]).unwrap();
        assert!(c.iter().all(|v| (v - 3.0).abs() < 1e-14));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(StochasticKernel::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(StochasticKernel::new(vec![vec![1.2, -0.2], vec![0.5, 0.5]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![-1.0, 0.5], vec![1.0, -1.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![1.0, -1.0], vec![1.0, -1.0]]).is_err());
    }

    #[test]
    fn stationary_examples() {
        let st = stationary_distribution(&two_state(), 1e-12).unwrap();
        assert!((st.pi.values()[0] - 4.0 / 7.0).abs() < 1e-11);
        assert!(st.unique);
        let eta = [0.1, 0.6, 0.3];
        let st = stationary_distribution(&StochasticKernel::uniform_rows(&eta).unwrap(), 1e-12).unwrap();
        for (a, b) in st.pi.values().iter().zip(eta) {
            assert!((a - b).abs() < 1e-12);
        }
        let st = stationary_distribution(&StochasticKernel::identity(3), 1e-12).unwrap();
        assert!(!st.unique);
        assert_eq!(st.multiplicity, 3);
        let flip = StochasticKernel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let st = stationary_distribution(&flip, 1e-12).unwrap();
        assert!((st.pi.values()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn closed_class_structure() {
        let s = StochasticKernel::new(vec![vec![0.5, 0.5, 0.0], vec![0.4, 0.6, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(closed_classes(&s), vec![vec![0, 1], vec![2]]);
        let t = StochasticKernel::new(vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert_eq!(closed_classes(&t), vec![vec![1]]);
    }

    #[test]
    fn semigroup_examples() {
        let l = GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(semigroup_at(&l, 0.0).unwrap(), StochasticKernel::identity(2));
        let s1 = semigroup_at(&l, 1.0).unwrap();
        let e = (-2.0f64).exp();
        assert!((s1.entry(0, 0) - (1.0 + e) / 2.0).abs() < 1e-12);
        assert!((s1.entry(0, 1) - (1.0 - e) / 2.0).abs() < 1e-12);
        let s_far = semigroup_at(&l, 40.0).unwrap();
        assert!((s_far.entry(1, 0) - 0.5).abs() < 1e-12);
        assert!(semigroup_at(&l, -1.0).is_err());
        let zero = GeneratorMatrix::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(semigroup_at(&zero, 5.0).unwrap(), StochasticKernel::identity(2));
    }
}

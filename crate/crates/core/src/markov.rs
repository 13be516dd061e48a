//! Chain-level quantities of a row-stochastic transition matrix.
//!
//! [`build_markov`] turns strongly connected counts into `P` and its
//! stationary distribution. The dense quantities (spectrum, group inverse of
//! `Q = I - P`, mean first passage times) are computed lazily, once, and
//! cached inside the [`MarkovModel`].

use std::io::Write;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use ndarray_linalg::types::c64;
use ndarray_linalg::{EigVals, FactorizeInto, Inverse, Solve};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::graph::{strongly_connected_components, TransitionGraph};
use crate::sparse::CsrMatrix;
use crate::trajectory::State;

/// Row sums must be within this distance of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("state {state} has no outgoing transitions")]
    ZeroRow { state: usize },
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("chain is not irreducible ({components} strongly connected components)")]
    NotIrreducible { components: usize },
    #[error("chain is periodic with period {period}")]
    PeriodicityDetected { period: usize },
    #[error("stationary iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("eigensolver failed: {0}")]
    SolverFailure(String),
    #[error("chain has no states")]
    Empty,
}

/// Anything that can act on a row vector from the right, `x -> x^T P`.
pub trait TransitionOperator: Sync {
    fn n(&self) -> usize;
    fn left_mul(&self, x: &[f64], out: &mut [f64]);
    fn to_dense(&self) -> Array2<f64>;
    /// Stored entries, used to estimate iteration cost.
    fn nnz(&self) -> usize;
}

impl TransitionOperator for CsrMatrix<f64> {
    fn n(&self) -> usize {
        self.rows()
    }

    fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        CsrMatrix::left_mul(self, x, out)
    }

    fn to_dense(&self) -> Array2<f64> {
        CsrMatrix::to_dense(self)
    }

    fn nnz(&self) -> usize {
        CsrMatrix::nnz(self)
    }
}

/// `P_ij = A_ij / sum_k A_ik`.
pub fn row_normalize(counts: &CsrMatrix<u64>) -> Result<CsrMatrix<f64>, MarkovError> {
    for r in 0..counts.rows() {
        if counts.row(r).1.iter().all(|&c| c == 0) {
            return Err(MarkovError::ZeroRow { state: r });
        }
    }
    let sums: Vec<f64> = (0..counts.rows())
        .map(|r| counts.row(r).1.iter().sum::<u64>() as f64)
        .collect();
    let mut row = 0usize;
    let mut k = 0usize;
    let ptr = counts.row_ptr().to_vec();
    Ok(counts.map(|c| {
        while k >= ptr[row + 1] {
            row += 1;
        }
        k += 1;
        c as f64 / sums[row]
    }))
}

/// Checks that every row of `p` is a probability vector.
pub fn check_stochastic(p: &CsrMatrix<f64>) -> Result<(), MarkovError> {
    for r in 0..p.rows() {
        let (_, vals) = p.row(r);
        if vals
            .iter()
            .any(|&v| !(0.0..=1.0 + ROW_SUM_TOLERANCE).contains(&v))
        {
            return Err(MarkovError::NotStochastic {
                row: r,
                sum: f64::NAN,
            });
        }
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(MarkovError::NotStochastic { row: r, sum });
        }
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of the class containing state 0: the gcd over all edges `u -> v`
/// of `level(u) + 1 - level(v)`, where levels are breadth-first distances.
/// Exact for irreducible chains.
pub fn chain_period<T: Copy>(p: &CsrMatrix<T>) -> usize {
    let n = p.rows();
    if n == 0 {
        return 0;
    }
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in p.row(u).0 {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0;
    for (u, v, _) in p.iter() {
        if level[u] != usize::MAX && level[v] != usize::MAX {
            g = gcd(g, (level[u] + 1).abs_diff(level[v]));
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryMethod {
    PowerIteration,
    DirectSolve,
}

#[derive(Debug, Clone)]
pub struct StationaryOptions {
    /// Target for `||pi^T P - pi^T||_inf`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Starting vector; uniform when absent.
    pub warm_start: Option<Vec<f64>>,
    /// Largest chain for which a dense solve may replace slow iteration.
    pub direct_limit: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions {
            tolerance: 1e-12,
            max_iterations: 1_000_000,
            warm_start: None,
            direct_limit: 12_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySolution {
    pub pi: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub method: StationaryMethod,
}

/// `||x^T P - x^T||_inf`.
pub fn stationary_residual<P: TransitionOperator + ?Sized>(p: &P, x: &[f64]) -> f64 {
    let mut y = vec![0.0; x.len()];
    p.left_mul(x, &mut y);
    y.iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn normalize_l1(x: &mut [f64]) {
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
}

/// Stationary distribution of an irreducible, aperiodic chain. Periodic
/// chains are rejected up front.
pub fn stationary_distribution(
    p: &CsrMatrix<f64>,
    opts: &StationaryOptions,
) -> Result<StationarySolution, MarkovError> {
    if p.rows() == 0 {
        return Err(MarkovError::Empty);
    }
    let period = chain_period(p);
    if period > 1 {
        return Err(MarkovError::PeriodicityDetected { period });
    }
    stationary_of_operator(p, opts)
}

/// Power iteration on any operator, switching to a dense solve when the
/// observed contraction rate predicts that iterating would be slower.
pub fn stationary_of_operator<P: TransitionOperator + ?Sized>(
    p: &P,
    opts: &StationaryOptions,
) -> Result<StationarySolution, MarkovError> {
    let n = p.n();
    if n == 0 {
        return Err(MarkovError::Empty);
    }
    let mut x = match &opts.warm_start {
        Some(w)
            if w.len() == n
                && w.iter().all(|v| v.is_finite() && *v >= 0.0)
                && w.iter().sum::<f64>() > 0.0 =>
        {
            let mut w = w.clone();
            normalize_l1(&mut w);
            w
        }
        _ => vec![1.0 / n as f64; n],
    };
    if n <= GTH_LIMIT {
        return direct_stationary(p, opts, 0);
    }
    let mut y = vec![0.0; n];
    const PROBE: usize = 64;
    let mut probe_residual = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iterations {
        p.left_mul(&x, &mut y);
        residual = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < opts.tolerance {
            return Ok(StationarySolution {
                pi: x,
                iterations: it,
                residual,
                method: StationaryMethod::PowerIteration,
            });
        }
        if it % PROBE == 0 && it > 0 && n <= opts.direct_limit {
            let rate = (residual / probe_residual).powf(1.0 / PROBE as f64);
            let remaining = if rate < 1.0 {
                (opts.tolerance / residual).ln() / rate.ln()
            } else {
                f64::INFINITY
            };
            // Rough cost model: sparse sweeps against one dense LU.
            let iterate_cost = remaining * (p.nnz() + n) as f64 * 20.0;
            let direct_cost = (n as f64).powi(3) / 1.5;
            if iterate_cost > direct_cost || remaining > (opts.max_iterations - it) as f64 {
                return direct_stationary(p, opts, it);
            }
            probe_residual = residual;
        } else if it == 0 {
            probe_residual = residual;
        }
        std::mem::swap(&mut x, &mut y);
        normalize_l1(&mut x);
    }
    Err(MarkovError::NoConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Chains up to this size are solved by state reduction without iterating.
const GTH_LIMIT: usize = 256;

/// Grassmann-Taksar-Heyman state reduction. Every operation adds or
/// divides nonnegative numbers, so small entries keep full relative
/// accuracy.
fn gth(mut a: Array2<f64>) -> Result<Vec<f64>, MarkovError> {
    let n = a.nrows();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(MarkovError::SingularSystem(format!(
                "state {k} cannot reach lower states"
            )));
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let f = a[(i, k)];
            if f != 0.0 {
                for j in 0..k {
                    a[(i, j)] += f * a[(k, j)];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * a[(i, k)]).sum();
    }
    normalize_l1(&mut pi);
    Ok(pi)
}

/// Solves `pi^T (I - P) = 0`, `sum pi = 1` densely, then polishes with a few
/// power steps if needed.
fn direct_stationary<P: TransitionOperator + ?Sized>(
    p: &P,
    opts: &StationaryOptions,
    iterations_before: usize,
) -> Result<StationarySolution, MarkovError> {
    let n = p.n();
    let dense = p.to_dense();
    let pi = if n <= GTH_LIMIT {
        gth(dense)?
    } else {
        lu_stationary(&dense)?
    };
    polish(p, opts, pi, iterations_before)
}

fn lu_stationary(dense: &Array2<f64>) -> Result<Vec<f64>, MarkovError> {
    let n = dense.nrows();
    // The diagonal of I - P is taken as the off-diagonal row mass rather
    // than 1 - P_ii, which cancels badly for sticky states.
    let mut a = -dense.t().to_owned();
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| dense[(i, j)]).sum();
        a[(i, i)] = off;
    }
    a.row_mut(n - 1).fill(1.0);
    let mut b = Array1::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let sol = a
        .solve_into(b)
        .map_err(|e| MarkovError::SingularSystem(e.to_string()))?;
    let mut pi: Vec<f64> = sol.iter().map(|v| v.max(0.0)).collect();
    normalize_l1(&mut pi);
    Ok(pi)
}

fn polish<P: TransitionOperator + ?Sized>(
    p: &P,
    opts: &StationaryOptions,
    mut pi: Vec<f64>,
    iterations_before: usize,
) -> Result<StationarySolution, MarkovError> {
    let n = p.n();
    let mut residual = stationary_residual(p, &pi);
    let mut iterations = iterations_before;
    let mut y = vec![0.0; n];
    let mut polish = 0;
    while residual >= opts.tolerance && polish < 1000 {
        p.left_mul(&pi, &mut y);
        std::mem::swap(&mut pi, &mut y);
        normalize_l1(&mut pi);
        residual = stationary_residual(p, &pi);
        polish += 1;
        iterations += 1;
    }
    if residual >= opts.tolerance {
        return Err(MarkovError::NoConvergence {
            iterations,
            residual,
        });
    }
    Ok(StationarySolution {
        pi,
        iterations,
        residual,
        method: StationaryMethod::DirectSolve,
    })
}

/// Eigenvalues of a chain with left eigenvectors for the leading ones.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// All eigenvalues: the Perron root first, then by descending modulus
    /// (ties by real, then imaginary part, descending).
    pub eigenvalues: Vec<c64>,
    /// Left eigenvectors of `eigenvalues[0..k]`, unit 2-norm, phase chosen
    /// so that the largest-modulus entry is real and positive.
    pub left_vectors: Vec<Vec<c64>>,
}

impl Spectrum {
    pub fn lambda2(&self) -> Option<c64> {
        self.eigenvalues.get(1).copied()
    }

    /// Whether the second eigenvalue is real (to 1e-10).
    pub fn lambda2_is_real(&self) -> bool {
        self.lambda2().is_some_and(|l| l.im.abs() <= 1e-10)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max)
    }
}

fn sort_eigenvalues(vals: &mut [c64]) {
    vals.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    let one = c64::new(1.0, 0.0);
    if let Some(k) =
        (0..vals.len()).min_by(|&i, &j| (vals[i] - one).norm().total_cmp(&(vals[j] - one).norm()))
    {
        vals[..=k].rotate_right(1);
    }
}

/// Full spectrum of `p`, with left eigenvectors for the leading `k`
/// eigenvalues found by shifted inverse iteration on `P^T`.
pub fn eigen_spectrum(p: &CsrMatrix<f64>, k: usize) -> Result<Spectrum, MarkovError> {
    let n = p.rows();
    if n == 0 {
        return Err(MarkovError::Empty);
    }
    let pt = p.transpose().to_dense();
    let mut eigenvalues: Vec<c64> = pt
        .eigvals()
        .map_err(|e| MarkovError::SolverFailure(e.to_string()))?
        .to_vec();
    sort_eigenvalues(&mut eigenvalues);
    let left_vectors = eigenvalues
        .iter()
        .take(k.min(n))
        .map(|&lambda| left_eigenvector(&pt, lambda))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Spectrum {
        eigenvalues,
        left_vectors,
    })
}

fn orient(v: &mut [c64]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let big = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(c64::new(1.0, 0.0));
    if norm == 0.0 || big.norm() == 0.0 {
        return;
    }
    let phase = big.conj() / big.norm();
    v.iter_mut().for_each(|z| *z = *z * phase / norm);
}

/// Right eigenvector of `pt` (= left eigenvector of `P`) for `lambda`.
fn left_eigenvector(pt: &Array2<f64>, lambda: c64) -> Result<Vec<c64>, MarkovError> {
    let n = pt.nrows();
    let shift = 1e-10 * lambda.norm().max(1.0);
    let start = |k: usize| 1.0 + (k as f64 + 1.0).sqrt() / n as f64;
    let fail = |e: ndarray_linalg::error::LinalgError| MarkovError::SolverFailure(e.to_string());
    let mut v: Vec<c64> = if lambda.im.abs() <= 1e-12 {
        let mut a = pt.clone();
        for i in 0..n {
            a[(i, i)] -= lambda.re + shift;
        }
        let lu = a.factorize_into().map_err(fail)?;
        let mut x = Array1::from_shape_fn(n, start);
        for _ in 0..3 {
            x = lu.solve_into(x).map_err(fail)?;
            let m = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            x.mapv_inplace(|v| v / m);
        }
        x.iter().map(|&v| c64::new(v, 0.0)).collect()
    } else {
        let sigma = lambda + c64::new(shift, shift);
        let mut a = pt.mapv(|v| c64::new(v, 0.0));
        for i in 0..n {
            a[(i, i)] -= sigma;
        }
        let lu = a.factorize_into().map_err(fail)?;
        let mut x = Array1::from_shape_fn(n, |k| c64::new(start(k), 0.5 * start(n - 1 - k)));
        for _ in 0..3 {
            x = lu.solve_into(x).map_err(fail)?;
            let m = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
            x.mapv_inplace(|v| v / m);
        }
        x.to_vec()
    };
    orient(&mut v);
    Ok(v)
}

/// `Q# = (I - P + 1 pi^T)^-1 - 1 pi^T`.
pub fn group_inverse(p: &CsrMatrix<f64>, pi: &[f64]) -> Result<Array2<f64>, MarkovError> {
    let n = p.rows();
    let mut z = -p.to_dense();
    for i in 0..n {
        let off: f64 = p.row_iter(i).filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
        z[(i, i)] = off;
    }
    for mut row in z.rows_mut() {
        row.iter_mut().zip(pi).for_each(|(v, &pj)| *v += pj);
    }
    let mut q = z
        .inv()
        .map_err(|e| MarkovError::SingularSystem(e.to_string()))?;
    if q.iter().any(|v| !v.is_finite()) {
        return Err(MarkovError::SingularSystem("non-finite inverse".into()));
    }
    for mut row in q.rows_mut() {
        row.iter_mut().zip(pi).for_each(|(v, &pj)| *v -= pj);
    }
    Ok(q)
}

/// `m_ij = (Q#_jj - Q#_ij) / pi_j`, with `m_ii = 0`.
pub fn mean_first_passage(group_inverse: &Array2<f64>, pi: &[f64]) -> Array2<f64> {
    let n = pi.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (group_inverse[(j, j)] - group_inverse[(i, j)]) / pi[j]
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KemenyMethod {
    /// Sum of `1 / (1 - lambda_j)` over the non-unit eigenvalues.
    Spectral,
    /// `sum_j m_ij pi_j` from the first state.
    Mfpt,
    /// Trace of the group inverse.
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cluster {
    Positive,
    Negative,
    Undefined,
}

impl Cluster {
    pub fn sign(self) -> i8 {
        match self {
            Cluster::Positive => 1,
            Cluster::Negative => -1,
            Cluster::Undefined => 0,
        }
    }

    pub fn from_sign(s: i8) -> Cluster {
        match s.signum() {
            1 => Cluster::Positive,
            -1 => Cluster::Negative,
            _ => Cluster::Undefined,
        }
    }
}

/// Two-way split of the states by the sign of the second left eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralClusters {
    pub labels: Vec<Cluster>,
    pub lambda2: c64,
    /// `lambda2` is complex, so the split uses the real part only.
    pub indicative: bool,
    /// No usable second eigenvector: `lambda2` vanishes or is repeated.
    pub degenerate: bool,
}

/// An ergodic chain over named states.
pub struct MarkovModel {
    states: Vec<State>,
    p: CsrMatrix<f64>,
    pt: CsrMatrix<f64>,
    stationary: StationarySolution,
    spectrum: OnceLock<Result<Spectrum, MarkovError>>,
    group_inverse: OnceLock<Result<Array2<f64>, MarkovError>>,
    mfpt: OnceLock<Result<Array2<f64>, MarkovError>>,
}

impl std::fmt::Debug for MarkovModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MarkovModel")
            .field("n", &self.n())
            .field("nnz", &self.p.nnz())
            .field("stationary", &self.stationary.method)
            .finish_non_exhaustive()
    }
}

/// Row-normalizes a strongly connected graph and solves for `pi`.
pub fn build_markov(graph: &TransitionGraph) -> Result<MarkovModel, MarkovError> {
    let p = row_normalize(graph.counts())?;
    MarkovModel::with_options(graph.states().to_vec(), p, &StationaryOptions::default())
}

impl MarkovModel {
    /// Model of an explicit transition matrix.
    pub fn from_matrix(states: Vec<State>, p: CsrMatrix<f64>) -> Result<MarkovModel, MarkovError> {
        MarkovModel::with_options(states, p, &StationaryOptions::default())
    }

    pub fn with_options(
        states: Vec<State>,
        p: CsrMatrix<f64>,
        opts: &StationaryOptions,
    ) -> Result<MarkovModel, MarkovError> {
        assert_eq!(states.len(), p.rows(), "one state per row");
        if p.rows() == 0 {
            return Err(MarkovError::Empty);
        }
        check_stochastic(&p)?;
        let (_, components) = strongly_connected_components(&p);
        if components != 1 {
            return Err(MarkovError::NotIrreducible { components });
        }
        let stationary = stationary_distribution(&p, opts)?;
        let pt = p.transpose();
        Ok(MarkovModel {
            states,
            p,
            pt,
            stationary,
            spectrum: OnceLock::new(),
            group_inverse: OnceLock::new(),
            mfpt: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn index_of(&self, state: &State) -> Option<usize> {
        self.states.binary_search(state).ok()
    }

    pub fn transition_matrix(&self) -> &CsrMatrix<f64> {
        &self.p
    }

    /// Rows of `P^T`: the predecessors of each state.
    pub fn transposed(&self) -> &CsrMatrix<f64> {
        &self.pt
    }

    pub fn pi(&self) -> &[f64] {
        &self.stationary.pi
    }

    pub fn stationary(&self) -> &StationarySolution {
        &self.stationary
    }

    /// The spectrum with left eigenvectors for `lambda_1` and `lambda_2`.
    pub fn spectrum(&self) -> Result<&Spectrum, MarkovError> {
        self.spectrum
            .get_or_init(|| eigen_spectrum(&self.p, 2.min(self.n())))
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn group_inverse(&self) -> Result<&Array2<f64>, MarkovError> {
        self.group_inverse
            .get_or_init(|| group_inverse(&self.p, self.pi()))
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn mfpt(&self) -> Result<&Array2<f64>, MarkovError> {
        self.mfpt
            .get_or_init(|| {
                self.group_inverse()
                    .map(|q| mean_first_passage(q, self.pi()))
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Kemeny constant in steps.
    pub fn kemeny(&self, method: KemenyMethod) -> Result<f64, MarkovError> {
        match method {
            KemenyMethod::Spectral => {
                let s = self.spectrum()?;
                Ok(s.eigenvalues[1..]
                    .iter()
                    .map(|&l| (c64::new(1.0, 0.0) / (c64::new(1.0, 0.0) - l)).re)
                    .sum())
            }
            KemenyMethod::Mfpt => Ok(self.kemeny_by_start()?[0]),
            KemenyMethod::Trace => Ok(self.group_inverse()?.diag().sum()),
        }
    }

    /// `sum_j m_ij pi_j` for every start state `i`.
    pub fn kemeny_by_start(&self) -> Result<Vec<f64>, MarkovError> {
        let m = self.mfpt()?;
        let pi = self.pi();
        Ok(m.rows()
            .into_iter()
            .map(|row| row.iter().zip(pi).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Sign split along the second left eigenvector.
    pub fn spectral_clusters(&self) -> Result<SpectralClusters, MarkovError> {
        let n = self.n();
        let s = self.spectrum()?;
        let Some(lambda2) = s.lambda2() else {
            return Ok(SpectralClusters {
                labels: vec![Cluster::Undefined; n],
                lambda2: c64::new(0.0, 0.0),
                indicative: false,
                degenerate: true,
            });
        };
        let complex = lambda2.im.abs() > 1e-10;
        let repeated = s.eigenvalues[2..].iter().any(|&l| {
            (l - lambda2).norm() < 1e-8 && !(complex && (l - lambda2.conj()).norm() < 1e-8)
        });
        let degenerate = lambda2.norm() < 1e-10 || repeated;
        let labels = if degenerate {
            vec![Cluster::Undefined; n]
        } else {
            let v = &s.left_vectors[1];
            let scale = v.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
            v.iter()
                .map(|z| {
                    if z.re.abs() <= 1e-12 * scale {
                        Cluster::Undefined
                    } else if z.re > 0.0 {
                        Cluster::Positive
                    } else {
                        Cluster::Negative
                    }
                })
                .collect()
        };
        Ok(SpectralClusters {
            labels,
            lambda2,
            indicative: complex,
            degenerate,
        })
    }

    /// `pi` and the eigen summary as JSON.
    pub fn summary_json(&self) -> serde_json::Value {
        let spectrum = self.spectrum().ok();
        let lambda2 = spectrum.and_then(Spectrum::lambda2);
        json!({
            "n": self.n(),
            "nnz": self.p.nnz(),
            "kemeny": self.kemeny(KemenyMethod::Mfpt).ok(),
            "lambda2": lambda2.map(|l| json!({"re": l.re, "im": l.im})),
            "lambda2_real": spectrum.map(Spectrum::lambda2_is_real),
            "spectral_radius": spectrum.map(Spectrum::spectral_radius),
            "stationary": {
                "method": self.stationary.method,
                "iterations": self.stationary.iterations,
                "residual": self.stationary.residual,
            },
            "pi": self.states.iter().zip(self.pi()).map(|(s, p)| json!({"state": s.to_string(), "pi": p})).collect::<Vec<_>>(),
        })
    }

    /// Mean first passage times as a row-major little-endian `f64` matrix
    /// in the snapshot container format.
    pub fn write_mfpt<W: Write>(&self, sink: W) -> Result<(), crate::store::StoreError> {
        let m = self
            .mfpt()
            .map_err(|e| crate::store::StoreError::Invalid(e.to_string()))?;
        let data: Vec<f64> = m.iter().copied().collect();
        let meta = json!({
            "kind": "mfpt",
            "n": self.n(),
            "states": self.states.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "dtype": "float64",
            "byte_order": "little",
            "layout": "row-major",
        });
        crate::store::write_container(
            sink,
            &meta,
            &[("mfpt", crate::store::ColumnRef::F64(&data))],
        )
    }
}

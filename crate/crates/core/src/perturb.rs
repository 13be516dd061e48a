//! Node disruptions as row perturbations of `P`.
//!
//! Damping a set of transitions out of state `i` moves the removed mass
//! proportionally onto the remaining entries of row `i`, so `P + E` stays
//! row-stochastic with every modified row of `E` summing to zero. A
//! disrupted station damps every transition into it and into the running
//! states that end at it.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{
    stationary_of_operator, stationary_residual, MarkovError, MarkovModel, StationaryOptions,
    TransitionOperator,
};
use crate::sparse::CsrMatrix;
use crate::trajectory::State;

/// Below this remaining mass a row counts as saturated: the damped entries
/// carry (almost) all of it.
const SATURATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbError {
    #[error("intensity {0} outside (0, 1]")]
    InvalidIntensity(f64),
    #[error("no transition {from} -> {to}")]
    NoSuchEdge { from: usize, to: usize },
    #[error("row {from} has no transitions into the damped set")]
    NoSuchEdges { from: usize },
    #[error("state {0} has no inflows")]
    IsolatedTarget(usize),
    #[error("state index {0} out of range")]
    UnknownState(usize),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

fn check_intensity(t: f64) -> Result<(), PerturbError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(PerturbError::InvalidIntensity(t))
    }
}

/// One modified row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowUpdate {
    pub source: usize,
    /// Damped destinations.
    pub damped: Vec<usize>,
    /// Nonzero entries of `E` in this row, by column.
    pub delta: Vec<(usize, f64)>,
    /// The perturbed row, by column.
    pub row: Vec<(usize, f64)>,
    /// The damped entries held all the mass, which went onto the diagonal.
    pub saturated: bool,
}

impl RowUpdate {
    pub fn delta_sum(&self) -> f64 {
        self.delta.iter().map(|(_, v)| v).sum()
    }
}

fn merge_row(cols: &[usize], vals: &[f64], delta: BTreeMap<usize, f64>) -> Vec<(usize, f64)> {
    let mut out: BTreeMap<usize, f64> = cols.iter().copied().zip(vals.iter().copied()).collect();
    for (c, d) in delta {
        *out.entry(c).or_insert(0.0) += d;
    }
    out.into_iter()
        .map(|(c, v)| (c, v.clamp(0.0, 1.0)))
        .filter(|&(_, v)| v != 0.0)
        .collect()
}

/// Damps the single transition `i -> p` by the fraction `t`.
pub fn edge_perturbation(
    p_matrix: &CsrMatrix<f64>,
    i: usize,
    p: usize,
    t: f64,
) -> Result<RowUpdate, PerturbError> {
    check_intensity(t)?;
    let (cols, vals) = p_matrix.row(i);
    let k = cols
        .binary_search(&p)
        .map_err(|_| PerturbError::NoSuchEdge { from: i, to: p })?;
    let p_ip = vals[k];
    if p_ip == 0.0 {
        return Err(PerturbError::NoSuchEdge { from: i, to: p });
    }
    // 1 - P_ip, taken from the row itself so E sums to zero to rounding.
    let rest: f64 = cols
        .iter()
        .zip(vals)
        .filter(|(&c, _)| c != p)
        .map(|(_, v)| v)
        .sum();
    let mut delta = BTreeMap::new();
    let saturated = rest <= SATURATION;
    if saturated {
        delta.insert(p, -t * p_ip);
        *delta.entry(i).or_insert(0.0) += t * p_ip;
    } else {
        let c = t * p_ip / rest;
        for (&j, &v) in cols.iter().zip(vals) {
            delta.insert(j, if j == p { -t * v } else { c * v });
        }
    }
    Ok(RowUpdate {
        source: i,
        damped: vec![p],
        row: merge_row(cols, vals, delta.clone()),
        delta: delta.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        saturated,
    })
}

/// Damps all transitions from `i` into the set `s` by the fraction `t`,
/// rescaling the rest of the row.
pub fn multi_edge_perturbation(
    p_matrix: &CsrMatrix<f64>,
    i: usize,
    s: &[usize],
    t: f64,
) -> Result<RowUpdate, PerturbError> {
    check_intensity(t)?;
    let (cols, vals) = p_matrix.row(i);
    let in_s = |j: usize| s.contains(&j);
    let sigma: f64 = cols
        .iter()
        .zip(vals)
        .filter(|(&c, _)| in_s(c))
        .map(|(_, v)| v)
        .sum();
    if sigma == 0.0 {
        return Err(PerturbError::NoSuchEdges { from: i });
    }
    let rho: f64 = cols
        .iter()
        .zip(vals)
        .filter(|(&c, _)| !in_s(c))
        .map(|(_, v)| v)
        .sum();
    let saturated = rho <= SATURATION || sigma >= 1.0 - SATURATION;
    let mut delta = BTreeMap::new();
    if saturated {
        for (&j, &v) in cols.iter().zip(vals) {
            if in_s(j) {
                delta.insert(j, -t * v);
            }
        }
        *delta.entry(i).or_insert(0.0) += t * sigma;
    } else {
        let kappa = t * sigma / rho;
        for (&j, &v) in cols.iter().zip(vals) {
            delta.insert(j, if in_s(j) { -t * v } else { kappa * v });
        }
    }
    let mut damped: Vec<usize> = s
        .iter()
        .copied()
        .filter(|&j| p_matrix.get(i, j).is_some())
        .collect();
    damped.sort_unstable();
    damped.dedup();
    Ok(RowUpdate {
        source: i,
        damped,
        row: merge_row(cols, vals, delta.clone()),
        delta: delta.into_iter().filter(|(_, v)| *v != 0.0).collect(),
        saturated,
    })
}

/// `P` with some rows replaced.
pub struct PerturbedMatrix<'a> {
    base: &'a CsrMatrix<f64>,
    rows: BTreeMap<usize, &'a [(usize, f64)]>,
}

impl<'a> PerturbedMatrix<'a> {
    pub fn new(base: &'a CsrMatrix<f64>, updates: &'a [RowUpdate]) -> Self {
        PerturbedMatrix {
            base,
            rows: updates
                .iter()
                .map(|u| (u.source, u.row.as_slice()))
                .collect(),
        }
    }

    /// Entries of row `i` of the perturbed matrix.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        match self.rows.get(&i) {
            Some(r) => r.to_vec(),
            None => self.base.row_iter(i).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.rows.get(&i) {
            Some(r) => r.iter().find(|(c, _)| *c == j).map_or(0.0, |(_, v)| *v),
            None => self.base.get(i, j).unwrap_or(0.0),
        }
    }
}

impl TransitionOperator for PerturbedMatrix<'_> {
    fn n(&self) -> usize {
        self.base.rows()
    }

    fn left_mul(&self, x: &[f64], out: &mut [f64]) {
        self.base.left_mul(x, out);
        for (&r, row) in &self.rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            self.base.row_iter(r).for_each(|(c, v)| out[c] -= xr * v);
            row.iter().for_each(|&(c, v)| out[c] += xr * v);
        }
    }

    fn to_dense(&self) -> Array2<f64> {
        let mut d = self.base.to_dense();
        for (&r, row) in &self.rows {
            d.row_mut(r).fill(0.0);
            for &(c, v) in row.iter() {
                d[(r, c)] = v;
            }
        }
        d
    }

    fn nnz(&self) -> usize {
        self.base.nnz()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiSolver {
    /// Power iteration started from the base distribution.
    #[default]
    WarmStart,
    /// Exact low-rank update through the base group inverse, checked and
    /// polished by warm-started iteration.
    GroupInverseUpdate,
}

/// A disruption and its stationary distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedResult {
    pub target: usize,
    pub t: f64,
    pub updates: Vec<RowUpdate>,
    pub pi_tilde: Vec<f64>,
    pub residual: f64,
    pub solver: PiSolver,
}

impl PerturbedResult {
    pub fn matrix<'a>(&'a self, model: &'a MarkovModel) -> PerturbedMatrix<'a> {
        PerturbedMatrix::new(model.transition_matrix(), &self.updates)
    }

    /// `pi~_j - pi_j`.
    pub fn delta(&self, pi: &[f64]) -> Vec<f64> {
        self.pi_tilde.iter().zip(pi).map(|(a, b)| a - b).collect()
    }

    /// `(pi~_j - pi_j) / pi_j`.
    pub fn rel_delta(&self, pi: &[f64]) -> Vec<f64> {
        self.pi_tilde
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b) / b)
            .collect()
    }

    /// Export as `{target, t, states: [{state, pi, pi_tilde, delta, rel_delta}]}`.
    pub fn to_json(&self, model: &MarkovModel) -> serde_json::Value {
        let pi = model.pi();
        let states: Vec<serde_json::Value> = model
            .states()
            .iter()
            .enumerate()
            .map(|(j, s)| {
                serde_json::json!({
                    "state": s.to_string(),
                    "pi": pi[j],
                    "pi_tilde": self.pi_tilde[j],
                    "delta": self.pi_tilde[j] - pi[j],
                    "rel_delta": (self.pi_tilde[j] - pi[j]) / pi[j],
                })
            })
            .collect();
        serde_json::json!({
            "target": model.states()[self.target].to_string(),
            "t": self.t,
            "states": states,
        })
    }
}

/// States whose inflows a disruption of `target` damps: a station's dwell
/// state together with every running state ending there, or just the state
/// itself for a running target.
pub fn disruption_set(model: &MarkovModel, target: usize) -> Vec<usize> {
    match &model.states()[target] {
        State::Dwell(station) => {
            let mut set: Vec<usize> = model
                .states()
                .iter()
                .enumerate()
                .filter(|(_, s)| matches!(s, State::Running(_, to) if to == station))
                .map(|(k, _)| k)
                .collect();
            set.push(target);
            set.sort_unstable();
            set
        }
        State::Running(..) => vec![target],
    }
}

/// The row updates of a disruption: each source feeding the damped set by
/// one transition gets a single-edge update, sources feeding it through
/// several get a multi-edge update.
pub fn disruption_updates(
    model: &MarkovModel,
    target: usize,
    t: f64,
) -> Result<Vec<RowUpdate>, PerturbError> {
    check_intensity(t)?;
    if target >= model.n() {
        return Err(PerturbError::UnknownState(target));
    }
    let set = disruption_set(model, target);
    let p = model.transition_matrix();
    let pt = model.transposed();
    let mut sources: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &j in &set {
        for &i in pt.row(j).0 {
            if i != j {
                sources.entry(i).or_default().push(j);
            }
        }
    }
    if sources.is_empty() {
        return Err(PerturbError::IsolatedTarget(target));
    }
    sources
        .into_iter()
        .map(|(i, mut s)| {
            s.sort_unstable();
            s.dedup();
            if s.len() == 1 {
                edge_perturbation(p, i, s[0], t)
            } else {
                multi_edge_perturbation(p, i, &s, t)
            }
        })
        .collect()
}

/// Disrupts `target` with intensity `t` and solves for the new stationary
/// distribution.
pub fn disrupt_node(
    model: &MarkovModel,
    target: usize,
    t: f64,
    solver: PiSolver,
) -> Result<PerturbedResult, PerturbError> {
    let updates = disruption_updates(model, target, t)?;
    let (pi_tilde, residual) = match solver {
        PiSolver::WarmStart => warm_start_solve(model, &updates, model.pi())?,
        PiSolver::GroupInverseUpdate => group_inverse_solve(model, &updates)?,
    };
    Ok(PerturbedResult {
        target,
        t,
        updates,
        pi_tilde,
        residual,
        solver,
    })
}

fn warm_start_solve(
    model: &MarkovModel,
    updates: &[RowUpdate],
    start: &[f64],
) -> Result<(Vec<f64>, f64), PerturbError> {
    let op = PerturbedMatrix::new(model.transition_matrix(), updates);
    let opts = StationaryOptions {
        warm_start: Some(start.to_vec()),
        ..StationaryOptions::default()
    };
    let sol = stationary_of_operator(&op, &opts)?;
    Ok((sol.pi, sol.residual))
}

/// With `E` nonzero on rows `R`, the perturbed distribution satisfies
/// `pi~^T = pi^T + pi~_R^T G` for `G = E_R Q#`; restricting to `R` gives a
/// small system for `pi~_R`.
fn group_inverse_solve(
    model: &MarkovModel,
    updates: &[RowUpdate],
) -> Result<(Vec<f64>, f64), PerturbError> {
    let q = model.group_inverse()?;
    let pi = model.pi();
    let n = model.n();
    let r = updates.len();
    let mut g = Array2::<f64>::zeros((r, n));
    for (a, u) in updates.iter().enumerate() {
        let mut row = g.row_mut(a);
        for &(k, e) in &u.delta {
            row.scaled_add(e, &q.row(k));
        }
    }
    let rows: Vec<usize> = updates.iter().map(|u| u.source).collect();
    // (I - G[:, R])^T y = pi_R
    let mut a = Array2::<f64>::eye(r);
    for (x, _) in rows.iter().enumerate() {
        for (y, &ry) in rows.iter().enumerate() {
            a[(y, x)] -= g[(x, ry)];
        }
    }
    let b = Array1::from_iter(rows.iter().map(|&k| pi[k]));
    let y = a
        .solve_into(b)
        .map_err(|e| MarkovError::SingularSystem(e.to_string()))?;
    let mut pi_tilde = pi.to_vec();
    for (x, &yx) in y.iter().enumerate() {
        pi_tilde
            .iter_mut()
            .zip(g.row(x))
            .for_each(|(p, &gv)| *p += yx * gv);
    }
    pi_tilde.iter_mut().for_each(|v| *v = v.max(0.0));
    let s: f64 = pi_tilde.iter().sum();
    pi_tilde.iter_mut().for_each(|v| *v /= s);
    let op = PerturbedMatrix::new(model.transition_matrix(), updates);
    let residual = stationary_residual(&op, &pi_tilde);
    if residual > 1e-10 {
        return warm_start_solve(model, updates, &pi_tilde);
    }
    Ok((pi_tilde, residual))
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub t: f64,
    /// Disrupt dwell states only (stations), not running states.
    pub dwell_only: bool,
    pub parallel: bool,
    pub solver: PiSolver,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            t: 0.95,
            dwell_only: true,
            parallel: true,
            solver: PiSolver::GroupInverseUpdate,
        }
    }
}

/// Disrupts every (dwell) state in turn. Failures are kept per target.
pub fn perturb_all_nodes(
    model: &MarkovModel,
    opts: &SweepOptions,
) -> BTreeMap<usize, Result<PerturbedResult, PerturbError>> {
    let targets: Vec<usize> = (0..model.n())
        .filter(|&k| !opts.dwell_only || model.states()[k].is_dwell())
        .collect();
    if opts.solver == PiSolver::GroupInverseUpdate {
        // Compute the shared factor once, outside the parallel section.
        let _ = model.group_inverse();
    }
    let run = |&k: &usize| (k, disrupt_node(model, k, opts.t, opts.solver));
    if opts.parallel {
        targets.par_iter().map(run).collect()
    } else {
        targets.iter().map(run).collect()
    }
}

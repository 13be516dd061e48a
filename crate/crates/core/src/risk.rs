//! Station-level risk scores derived from a disruption sweep.
//!
//! For each disrupted station `i` the impact on state `j != i` is the
//! absolute change of its stationary probability, kept only when the
//! relative change exceeds `gamma`. Summing a row measures how much the
//! station's disruption moves the network (influence); counting the
//! disruptions that hit a station measures its exposure (fragility).
//! Remoteness is the stationary-weighted mean first passage time into a
//! state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{MarkovError, MarkovModel};
use crate::perturb::{PerturbError, PerturbedResult};

pub const DEFAULT_GAMMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("sweep lacks dwell state(s) {missing:?}")]
    IncompleteSweep { missing: Vec<usize> },
    #[error("threshold {0} must be a finite non-negative number")]
    InvalidGamma(f64),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Sparse `W`: row `i` lists `(j, |pi~_j - pi_j|)` for the states whose
/// relative change under disruption `i` exceeds the threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpactMatrix {
    pub rows: BTreeMap<usize, Vec<(usize, f64)>>,
}

impl ImpactMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows
            .get(&i)
            .and_then(|r| r.iter().find(|(c, _)| *c == j))
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows
            .get(&i)
            .map_or(0.0, |r| r.iter().map(|(_, v)| v).sum())
    }

    /// Number of rows with an entry in column `j`.
    pub fn column_hits(&self, j: usize) -> usize {
        self.rows
            .values()
            .filter(|r| r.iter().any(|(c, _)| *c == j))
            .count()
    }
}

/// Impact row of one disruption.
pub fn impact_row(pi: &[f64], result: &PerturbedResult, gamma: f64) -> Vec<(usize, f64)> {
    result
        .pi_tilde
        .iter()
        .zip(pi)
        .enumerate()
        .filter(|&(j, _)| j != result.target)
        .filter_map(|(j, (&tilde, &base))| {
            let change = (tilde - base).abs();
            (change / base > gamma).then_some((j, change))
        })
        .collect()
}

/// Builds `W` from a sweep. Failed disruptions contribute empty rows; every
/// dwell state must at least be present.
pub fn impact_matrix(
    model: &MarkovModel,
    sweep: &BTreeMap<usize, Result<PerturbedResult, PerturbError>>,
    gamma: f64,
) -> Result<ImpactMatrix, RiskError> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(RiskError::InvalidGamma(gamma));
    }
    let missing: Vec<usize> = (0..model.n())
        .filter(|&k| model.states()[k].is_dwell() && !sweep.contains_key(&k))
        .collect();
    if !missing.is_empty() {
        return Err(RiskError::IncompleteSweep { missing });
    }
    let pi = model.pi();
    Ok(ImpactMatrix {
        rows: sweep
            .iter()
            .map(|(&i, r)| {
                (
                    i,
                    r.as_ref()
                        .map(|r| impact_row(pi, r, gamma))
                        .unwrap_or_default(),
                )
            })
            .collect(),
    })
}

/// Divides by the maximum; an all-zero input stays zero.
fn max_normalize(raw: &[f64]) -> (Vec<f64>, bool) {
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        (raw.iter().map(|v| v / max).collect(), true)
    } else {
        (vec![0.0; raw.len()], false)
    }
}

/// `I_i = sum_j W_ij / max_k sum_j W_kj` over the disrupted states, in
/// ascending state order. The flag is false when every impact is zero.
pub fn systemic_influence(w: &ImpactMatrix) -> (Vec<f64>, bool) {
    let raw: Vec<f64> = w.rows.keys().map(|&i| w.row_sum(i)).collect();
    max_normalize(&raw)
}

/// Number of disruptions whose impact on each of `states` is nonzero.
pub fn hit_counts(w: &ImpactMatrix, states: &[usize]) -> Vec<usize> {
    let mut hits: BTreeMap<usize, usize> = BTreeMap::new();
    for row in w.rows.values() {
        for &(j, v) in row {
            if v > 0.0 {
                *hits.entry(j).or_default() += 1;
            }
        }
    }
    states
        .iter()
        .map(|s| hits.get(s).copied().unwrap_or(0))
        .collect()
}

/// `phi_i = #{disruptions j : W_ji > 0} / max_k #{...}` for the given
/// states.
pub fn systemic_fragility(w: &ImpactMatrix, states: &[usize]) -> (Vec<f64>, bool) {
    let raw: Vec<f64> = hit_counts(w, states)
        .into_iter()
        .map(|h| h as f64)
        .collect();
    max_normalize(&raw)
}

/// `r_i = sum_j pi_j m_ji` for every state.
pub fn remoteness(model: &MarkovModel) -> Result<Vec<f64>, MarkovError> {
    let m = model.mfpt()?;
    let pi = model.pi();
    Ok((0..model.n())
        .map(|i| m.column(i).iter().zip(pi).map(|(a, b)| a * b).sum())
        .collect())
}

/// Per-station scores of one day, aligned with `stations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMeasures {
    pub gamma: f64,
    /// Dwell-state indices, ascending.
    pub stations: Vec<usize>,
    pub remoteness: Vec<f64>,
    pub influence: Vec<f64>,
    pub fragility: Vec<f64>,
    /// Unnormalized row sums of `W`.
    pub impact_sums: Vec<f64>,
    /// Unnormalized hit counts.
    pub hit_counts: Vec<usize>,
    pub impact: ImpactMatrix,
    pub warnings: Vec<String>,
}

impl RiskMeasures {
    /// Scores the dwell states of `model` from a full dwell sweep.
    pub fn compute(
        model: &MarkovModel,
        sweep: &BTreeMap<usize, Result<PerturbedResult, PerturbError>>,
        gamma: f64,
    ) -> Result<RiskMeasures, RiskError> {
        let w = impact_matrix(model, sweep, gamma)?;
        let stations: Vec<usize> = (0..model.n())
            .filter(|&k| model.states()[k].is_dwell())
            .collect();
        let r_all = remoteness(model)?;
        let mut warnings = Vec::new();
        for (k, r) in sweep {
            if let Err(e) = r {
                warnings.push(format!("disruption of {} failed: {e}", model.states()[*k]));
            }
        }
        let impact_sums: Vec<f64> = stations.iter().map(|&i| w.row_sum(i)).collect();
        let (influence, fragility, hit_counts) = if stations.len() < 2 {
            warnings.push("fewer than two stations: influence and fragility are undefined".into());
            (Vec::new(), Vec::new(), Vec::new())
        } else {
            let (influence, any) = max_normalize(&impact_sums);
            if !any {
                warnings.push(format!(
                    "no impact exceeds gamma = {gamma}; all scores are zero"
                ));
            }
            let hits = hit_counts(&w, &stations);
            let (fragility, any) =
                max_normalize(&hits.iter().map(|&h| h as f64).collect::<Vec<_>>());
            if !any {
                warnings.push(format!(
                    "no station changes by more than gamma = {gamma}; fragility is zero"
                ));
            }
            (influence, fragility, hits)
        };
        Ok(RiskMeasures {
            gamma,
            remoteness: stations.iter().map(|&k| r_all[k]).collect(),
            stations,
            influence,
            fragility,
            impact_sums,
            hit_counts,
            impact: w,
            warnings,
        })
    }
}

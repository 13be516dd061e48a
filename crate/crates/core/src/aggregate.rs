//! The per-day pipeline and its summary over a date range.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    build_transition_graph, strongly_connected_restrict, SccResult, TransitionGraph,
};
use crate::ingest::{StationDirectory, StationId, Trip};
use crate::markov::{build_markov, KemenyMethod, MarkovModel, StationaryOptions};
use crate::perturb::{perturb_all_nodes, PerturbError, PerturbedResult, PiSolver, SweepOptions};
use crate::risk::{RiskMeasures, DEFAULT_GAMMA};
use crate::sparse::CsrMatrix;
use crate::trajectory::{discretize_day, State, Step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub step: Step,
    /// Disruption intensity.
    pub t: f64,
    /// Relative-change threshold of the risk scores.
    pub gamma: f64,
    pub solver: PiSolver,
    /// Run the disruption sweep in parallel.
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            step: Step::ONE_MINUTE,
            t: 0.95,
            gamma: DEFAULT_GAMMA,
            solver: PiSolver::GroupInverseUpdate,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    /// States of the retained component.
    pub n: usize,
    pub edges: usize,
    /// States before restriction.
    pub states_total: usize,
    pub dropped_fraction: f64,
    /// Kemeny constant, in steps.
    pub kemeny: f64,
    pub lambda2_re: f64,
    pub lambda2_im: f64,
    pub clusters_indicative: bool,
    pub clusters_degenerate: bool,
    pub trips_total: usize,
    pub trips_used: usize,
}

/// Day-level values of one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station_id: StationId,
    pub name: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    /// Index of the dwell state in `DayResult::states`.
    pub state_index: usize,
    /// Observed transitions into the dwell state from other states.
    pub inflow: u64,
    /// Observed transitions out of the dwell state to other states.
    pub outflow: u64,
    pub pi: f64,
    pub cluster: i8,
    pub remoteness: f64,
    pub influence: f64,
    pub fragility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub chain: ChainSummary,
    /// Sorted by station id.
    pub stations: Vec<StationRecord>,
    /// States of the retained component, in index order.
    pub states: Vec<State>,
    /// Transition counts between `states`.
    pub counts: CsrMatrix<u64>,
    pub pi: Vec<f64>,
    pub warnings: Vec<String>,
}

impl DayResult {
    pub fn station(&self, id: &StationId) -> Option<&StationRecord> {
        self.stations
            .binary_search_by(|s| s.station_id.cmp(id))
            .ok()
            .map(|k| &self.stations[k])
    }

    /// Rebuilds the day's chain, starting the stationary solve from the
    /// stored distribution.
    pub fn model(&self) -> Result<MarkovModel, crate::markov::MarkovError> {
        let p = crate::markov::row_normalize(&self.counts)?;
        let opts = StationaryOptions {
            warm_start: Some(self.pi.clone()),
            ..StationaryOptions::default()
        };
        MarkovModel::with_options(self.states.clone(), p, &opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayFailure {
    pub stage: String,
    pub message: String,
    pub warnings: Vec<String>,
}

impl fmt::Display for DayFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

/// Outcome of one day: complete results or a failure marker, never a
/// partial mix.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySnapshot {
    pub operation_day: NaiveDate,
    pub outcome: Result<DayResult, DayFailure>,
}

impl DailySnapshot {
    pub fn result(&self) -> Result<&DayResult, &DayFailure> {
        self.outcome.as_ref()
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

/// Everything the pipeline computes for a day, before it is reduced to a
/// snapshot.
pub struct DayAnalysis {
    pub graph: TransitionGraph,
    pub scc: SccResult,
    pub model: MarkovModel,
    pub sweep: BTreeMap<usize, Result<PerturbedResult, PerturbError>>,
    pub risk: RiskMeasures,
    pub snapshot: DailySnapshot,
}

fn failure(stage: &str, e: impl fmt::Display, warnings: &[String]) -> DayFailure {
    DayFailure {
        stage: stage.into(),
        message: e.to_string(),
        warnings: warnings.to_vec(),
    }
}

/// Runs discretization, counting, restriction, chain analysis, the full
/// station sweep and the risk scores for one day.
pub fn analyze_day(
    day: NaiveDate,
    trips: &[Trip],
    directory: Option<&StationDirectory>,
    config: &PipelineConfig,
) -> Result<DayAnalysis, DayFailure> {
    let (sequences, ingest_warnings) = discretize_day(trips, config.step);
    let mut warnings: Vec<String> = ingest_warnings.iter().map(ToString::to_string).collect();
    let graph = build_transition_graph(&sequences).map_err(|e| failure("graph", e, &warnings))?;
    let scc = strongly_connected_restrict(&graph).map_err(|e| failure("scc", e, &warnings))?;
    let model = build_markov(&scc.largest).map_err(|e| failure("markov", e, &warnings))?;
    let kemeny = model
        .kemeny(KemenyMethod::Mfpt)
        .map_err(|e| failure("markov", e, &warnings))?;
    let clusters = model
        .spectral_clusters()
        .map_err(|e| failure("spectrum", e, &warnings))?;
    let sweep = perturb_all_nodes(
        &model,
        &SweepOptions {
            t: config.t,
            dwell_only: true,
            parallel: config.parallel,
            solver: config.solver,
        },
    );
    let risk = RiskMeasures::compute(&model, &sweep, config.gamma)
        .map_err(|e| failure("risk", e, &warnings))?;
    warnings.extend(risk.warnings.iter().cloned());

    let counts = scc.largest.counts();
    let counts_t = counts.transpose();
    let off_diagonal = |m: &CsrMatrix<u64>, i: usize| -> u64 {
        m.row_iter(i).filter(|&(j, _)| j != i).map(|(_, c)| c).sum()
    };
    let names: BTreeMap<&StationId, &str> = trips
        .iter()
        .flat_map(|t| t.stops.iter())
        .map(|s| (&s.station_id, s.station_name.as_str()))
        .collect();
    let mut stations: Vec<StationRecord> = risk
        .stations
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let id = model.states()[i].station().expect("dwell state").clone();
            let info = directory.and_then(|d| d.get(&id));
            let name = info
                .map(|s| s.name.clone())
                .or_else(|| names.get(&id).map(|s| s.to_string()))
                .unwrap_or_else(|| id.to_string());
            StationRecord {
                lat: info.and_then(|s| s.lat),
                lon: info.and_then(|s| s.lon),
                name,
                state_index: i,
                inflow: off_diagonal(&counts_t, i),
                outflow: off_diagonal(counts, i),
                pi: model.pi()[i],
                cluster: clusters.labels[i].sign(),
                remoteness: risk.remoteness[k],
                influence: risk.influence.get(k).copied().unwrap_or(f64::NAN),
                fragility: risk.fragility.get(k).copied().unwrap_or(f64::NAN),
                station_id: id,
            }
        })
        .collect();
    stations.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    if clusters.degenerate {
        warnings.push("second eigenvalue vanishes or is repeated; clusters undefined".into());
    } else if clusters.indicative {
        warnings.push("second eigenvalue is complex; clusters are indicative".into());
    }

    let chain = ChainSummary {
        n: model.n(),
        edges: counts.nnz(),
        states_total: graph.n(),
        dropped_fraction: scc.dropped_fraction,
        kemeny,
        lambda2_re: clusters.lambda2.re,
        lambda2_im: clusters.lambda2.im,
        clusters_indicative: clusters.indicative,
        clusters_degenerate: clusters.degenerate,
        trips_total: trips.len(),
        trips_used: sequences.len(),
    };
    let result = DayResult {
        chain,
        stations,
        states: model.states().to_vec(),
        counts: counts.clone(),
        pi: model.pi().to_vec(),
        warnings,
    };
    Ok(DayAnalysis {
        snapshot: DailySnapshot {
            operation_day: day,
            outcome: Ok(result),
        },
        graph,
        scc,
        model,
        sweep,
        risk,
    })
}

/// Runs one day end to end. Failures become a marked snapshot.
pub fn run_day(
    day: NaiveDate,
    trips: &[Trip],
    directory: Option<&StationDirectory>,
    config: &PipelineConfig,
) -> DailySnapshot {
    match analyze_day(day, trips, directory, config) {
        Ok(a) => a.snapshot,
        Err(f) => DailySnapshot {
            operation_day: day,
            outcome: Err(f),
        },
    }
}

/// Runs the given days with up to `jobs` days in flight (0 means one per
/// core). Output is in day order.
pub fn run_days(
    days: &BTreeMap<NaiveDate, Vec<Trip>>,
    directory: Option<&StationDirectory>,
    config: &PipelineConfig,
    jobs: usize,
) -> Vec<DailySnapshot> {
    let work = || -> Vec<DailySnapshot> {
        days.par_iter()
            .map(|(&day, trips)| run_day(day, trips, directory, config))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

/// The seven tracked per-station measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Inflow,
    Outflow,
    Pi,
    Cluster,
    Remoteness,
    Influence,
    Fragility,
}

impl Measure {
    pub const ALL: [Measure; 7] = [
        Measure::Inflow,
        Measure::Outflow,
        Measure::Pi,
        Measure::Cluster,
        Measure::Remoteness,
        Measure::Influence,
        Measure::Fragility,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Inflow => "inflow",
            Measure::Outflow => "outflow",
            Measure::Pi => "pi",
            Measure::Cluster => "cluster",
            Measure::Remoteness => "remoteness",
            Measure::Influence => "influence",
            Measure::Fragility => "fragility",
        }
    }

    pub fn of(self, s: &StationRecord) -> f64 {
        match self {
            Measure::Inflow => s.inflow as f64,
            Measure::Outflow => s.outflow as f64,
            Measure::Pi => s.pi,
            Measure::Cluster => f64::from(s.cluster),
            Measure::Remoteness => s.remoteness,
            Measure::Influence => s.influence,
            Measure::Fragility => s.fragility,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stationary" => Ok(Measure::Pi),
            other => Measure::ALL
                .into_iter()
                .find(|m| m.as_str() == other)
                .ok_or_else(|| format!("unknown measure {s:?}")),
        }
    }
}

/// Descriptive statistics of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl Stats {
    /// `None` for an empty series. NaN values are skipped.
    pub fn of(values: &[f64]) -> Option<Stats> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Some(Stats {
            min: v[0],
            max: v[n - 1],
            median,
            std: var.sqrt(),
            count: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationAggregate {
    pub name: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    /// Days on which the station was in the retained component.
    pub presence: usize,
    pub measures: BTreeMap<Measure, Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyAggregate {
    /// Days that contributed, ascending.
    pub days: Vec<NaiveDate>,
    pub failed_days: Vec<NaiveDate>,
    pub stations: BTreeMap<StationId, StationAggregate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("no successful day among {0} snapshot(s)")]
    NoSuccessfulDays(usize),
}

/// Statistics per station and measure over the days each station was
/// present.
pub fn aggregate_range(snapshots: &[DailySnapshot]) -> Result<MonthlyAggregate, AggregateError> {
    let mut ok: Vec<(NaiveDate, &DayResult)> = snapshots
        .iter()
        .filter_map(|s| s.result().ok().map(|r| (s.operation_day, r)))
        .collect();
    if ok.is_empty() {
        return Err(AggregateError::NoSuccessfulDays(snapshots.len()));
    }
    ok.sort_by_key(|(d, _)| *d);
    let mut failed_days: Vec<NaiveDate> = snapshots
        .iter()
        .filter(|s| !s.is_ok())
        .map(|s| s.operation_day)
        .collect();
    failed_days.sort();

    let mut series: BTreeMap<&StationId, (&StationRecord, Vec<&StationRecord>)> = BTreeMap::new();
    for (_, r) in &ok {
        for s in &r.stations {
            let entry = series.entry(&s.station_id).or_insert((s, Vec::new()));
            entry.0 = s;
            entry.1.push(s);
        }
    }
    let stations = series
        .into_iter()
        .map(|(id, (latest, recs))| {
            let measures = Measure::ALL
                .into_iter()
                .filter_map(|m| {
                    let values: Vec<f64> = recs.iter().map(|r| m.of(r)).collect();
                    Stats::of(&values).map(|s| (m, s))
                })
                .collect();
            (
                id.clone(),
                StationAggregate {
                    name: latest.name.clone(),
                    lat: latest.lat,
                    lon: latest.lon,
                    presence: recs.len(),
                    measures,
                },
            )
        })
        .collect();
    Ok(MonthlyAggregate {
        days: ok.iter().map(|(d, _)| *d).collect(),
        failed_days,
        stations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub rank: usize,
    pub station_id: StationId,
    pub name: String,
    pub pi: f64,
    pub remoteness: f64,
    pub influence: f64,
    pub fragility: f64,
}

/// Stations by descending median of `measure`, ties by station id. The
/// other columns are medians too.
pub fn rankings(aggregate: &MonthlyAggregate, measure: Measure) -> Vec<RankingRow> {
    let median =
        |s: &StationAggregate, m: Measure| s.measures.get(&m).map_or(f64::NAN, |x| x.median);
    let mut rows: Vec<(&StationId, &StationAggregate)> = aggregate
        .stations
        .iter()
        .filter(|(_, s)| !median(s, measure).is_nan())
        .collect();
    rows.sort_by(|a, b| {
        median(b.1, measure)
            .total_cmp(&median(a.1, measure))
            .then_with(|| a.0.cmp(b.0))
    });
    rows.into_iter()
        .enumerate()
        .map(|(k, (id, s))| RankingRow {
            rank: k + 1,
            station_id: id.clone(),
            name: s.name.clone(),
            pi: median(s, Measure::Pi),
            remoteness: median(s, Measure::Remoteness),
            influence: median(s, Measure::Influence),
            fragility: median(s, Measure::Fragility),
        })
        .collect()
}

pub const RANKING_HEADER: [&str; 7] = [
    "rank",
    "station_id",
    "name",
    "pi",
    "remoteness",
    "influence",
    "fragility",
];

/// Writes ranking rows with six decimals.
pub fn write_rankings_csv<W: Write>(rows: &[RankingRow], sink: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(RANKING_HEADER)?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.station_id.to_string(),
            r.name.clone(),
            format!("{:.6}", r.pi),
            format!("{:.6}", r.remoteness),
            format!("{:.6}", r.influence),
            format!("{:.6}", r.fragility),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Station ids present in at least one successful day.
pub fn station_universe(snapshots: &[DailySnapshot]) -> BTreeSet<StationId> {
    snapshots
        .iter()
        .filter_map(|s| s.result().ok())
        .flat_map(|r| r.stations.iter().map(|s| s.station_id.clone()))
        .collect()
}

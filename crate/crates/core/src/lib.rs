//! Discrete-time Markov chain models of daily railway operations.
//!
//! Each operation day of actual (observed, not scheduled) train runs is turned
//! into one finite-state homogeneous Markov chain:
//!
//! 1. [`ingest`] parses trip records into validated [`ingest::Trip`]s.
//! 2. [`trajectory`] discretizes every trip into a minute-resolution sequence
//!    of [`trajectory::State`]s: *dwell* states (a train standing at a
//!    station) and *running* states (a train between two stations).
//! 3. [`graph`] counts the observed state transitions into a weighted
//!    multigraph and keeps its largest strongly connected component.
//! 4. [`markov`] row-normalizes the counts into a transition matrix and
//!    derives the stationary distribution, the eigenspectrum, the group
//!    inverse of `I - P`, mean first passage times and the Kemeny constant.
//! 5. [`perturb`] disrupts a station by damping all of its inflows and solves
//!    for the perturbed stationary distribution.
//! 6. [`risk`] turns a full disruption sweep into remoteness, systemic
//!    influence and systemic fragility scores.
//! 7. [`aggregate`] runs the whole pipeline per day and summarizes a date
//!    range; [`store`] persists the results for later serving.
//!
//! ```
//! use stationrank::synthetic::{synthetic_day, SyntheticConfig};
//! use stationrank::aggregate::{run_day, PipelineConfig};
//!
//! let (trips, directory) = synthetic_day(&SyntheticConfig::small(7));
//! let day = trips[0].operation_day;
//! let snapshot = run_day(day, &trips, Some(&directory), &PipelineConfig::default());
//! let result = snapshot.result().expect("toy day runs end to end");
//! assert!(result.chain.kemeny > 0.0);
//! ```

pub mod aggregate;
pub mod graph;
pub mod ingest;
pub mod markov;
pub mod perturb;
pub mod risk;
pub mod sparse;
pub mod store;
pub mod synthetic;
pub mod trajectory;

pub use aggregate::{run_day, DailySnapshot, MonthlyAggregate, PipelineConfig};
pub use graph::{build_transition_graph, strongly_connected_restrict, TransitionGraph};
pub use ingest::{parse_actual_data, SourceFormat, StationDirectory, StationId, Trip};
pub use markov::{build_markov, MarkovModel};
pub use perturb::{disrupt_node, perturb_all_nodes, PerturbedResult};
pub use risk::RiskMeasures;
pub use trajectory::{discretize_trip, State, StateSequence, Step};

// The guide under `book/` is compiled and run as doc-tests so its snippets
// cannot drift from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/state-space.md")]
    mod state_space {}
    #[doc = include_str!("../../../book/src/ergodic-core.md")]
    mod ergodic_core {}
    #[doc = include_str!("../../../book/src/chain-quantities.md")]
    mod chain_quantities {}
    #[doc = include_str!("../../../book/src/disruptions.md")]
    mod disruptions {}
    #[doc = include_str!("../../../book/src/systemic-risk.md")]
    mod systemic_risk {}
    #[doc = include_str!("../../../book/src/time-series.md")]
    mod time_series {}
    #[doc = include_str!("../../../book/src/interfaces.md")]
    mod interfaces {}
}

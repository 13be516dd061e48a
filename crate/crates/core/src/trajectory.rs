//! Discretization of trips into per-step state sequences.
//!
//! A trip is sampled on a regular grid starting at its first recorded time.
//! A sample falling inside the closed interval `[arrival, departure]` of a
//! halting stop is that station's dwell state; a sample strictly between the
//! departure from one halt and the arrival at the next is a running state.
//! Passthrough waypoints split a run into physical legs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{IngestWarning, StationId, Trip};

/// A node of the chain. The derived ordering (dwell states first, then by
/// station ids) is the canonical state index order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    /// Train standing at a station.
    Dwell(StationId),
    /// Train between two stations, in this direction.
    Running(StationId, StationId),
}

impl State {
    pub fn is_dwell(&self) -> bool {
        matches!(self, State::Dwell(_))
    }

    /// The station of a dwell state.
    pub fn station(&self) -> Option<&StationId> {
        match self {
            State::Dwell(s) => Some(s),
            State::Running(..) => None,
        }
    }

    /// Stations this state touches: one for a dwell, both ends for a run.
    pub fn stations(&self) -> impl Iterator<Item = &StationId> {
        let (a, b) = match self {
            State::Dwell(s) => (s, None),
            State::Running(x, y) => (x, Some(y)),
        };
        std::iter::once(a).chain(b)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            State::Dwell(_) => "dwell",
            State::Running(..) => "running",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Dwell(s) => write!(f, "D:{s}"),
            State::Running(a, b) => write!(f, "R:{a}>{b}"),
        }
    }
}

impl FromStr for State {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(id) = s.strip_prefix("D:") {
            return Ok(State::Dwell(id.into()));
        }
        if let Some(rest) = s.strip_prefix("R:") {
            if let Some((a, b)) = rest.split_once('>') {
                if a != b {
                    return Ok(State::Running(a.into(), b.into()));
                }
            }
        }
        Err(format!("not a state label: {s:?}"))
    }
}

/// Whether `b` may directly follow `a` in a sequence.
pub fn is_legal_transition(a: &State, b: &State) -> bool {
    match (a, b) {
        _ if a == b => true,
        (State::Dwell(x), State::Running(y, _)) => x == y,
        (State::Running(_, y), State::Dwell(x)) => x == y,
        (State::Dwell(_), State::Dwell(_)) => true,
        // Past a passthrough waypoint.
        (State::Running(_, m), State::Running(n, _)) => m == n,
    }
}

/// Sampling interval. It must divide a minute or be a whole number of
/// minutes, so that grid points stay aligned with minute timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step(u32);

impl Step {
    pub const ONE_MINUTE: Step = Step(60);

    pub fn from_seconds(seconds: u32) -> Result<Step, TrajectoryError> {
        if seconds == 0 || (60 % seconds != 0 && seconds % 60 != 0) {
            return Err(TrajectoryError::InvalidStep(seconds));
        }
        Ok(Step(seconds))
    }

    pub fn from_minutes(minutes: u32) -> Result<Step, TrajectoryError> {
        minutes
            .checked_mul(60)
            .ok_or(TrajectoryError::InvalidStep(u32::MAX))
            .and_then(Step::from_seconds)
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    pub fn minutes(self) -> f64 {
        f64::from(self.0) / 60.0
    }
}

impl Default for Step {
    fn default() -> Self {
        Step::ONE_MINUTE
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryError {
    #[error("trip {trip_id}: step too coarse near {at}: {detail}")]
    StateAmbiguity {
        trip_id: String,
        at: NaiveDateTime,
        detail: String,
    },
    #[error("trip {trip_id}: degenerate trip: {reason}")]
    DegenerateTrip { trip_id: String, reason: String },
    #[error("trip {trip_id}: consecutive points at the same station {station}")]
    SelfLoopLeg { trip_id: String, station: StationId },
    #[error("step of {0} s neither divides nor is a multiple of one minute")]
    InvalidStep(u32),
}

/// One trip as a sequence of states, one per grid step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSequence {
    pub trip_id: String,
    pub operation_day: NaiveDate,
    /// Time of the first sample, in minutes after midnight of the operation
    /// day (may exceed 1440 for runs past midnight).
    pub start_minute: i64,
    pub step: Step,
    pub states: Vec<State>,
}

impl StateSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Adjacent pairs, i.e. the observed transitions.
    pub fn transitions(&self) -> impl Iterator<Item = (&State, &State)> {
        self.states.windows(2).map(|w| (&w[0], &w[1]))
    }
}

/// A halting stop: its station and closed dwell interval in seconds
/// relative to the first sample.
struct Halt {
    station: StationId,
    arrive: i64,
    depart: i64,
}

/// A passthrough waypoint and the time it is passed.
struct Waypoint {
    station: StationId,
    at: i64,
}

/// Maps a trip onto the sampling grid.
pub fn discretize_trip(trip: &Trip, step: Step) -> Result<StateSequence, TrajectoryError> {
    let degenerate = |reason: String| TrajectoryError::DegenerateTrip {
        trip_id: trip.trip_id.clone(),
        reason,
    };
    trip.validate().map_err(degenerate)?;

    let first = trip.stops.iter().position(|s| !s.is_passthrough);
    let last = trip.stops.iter().rposition(|s| !s.is_passthrough);
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) if f < l => (f, l),
        _ => return Err(degenerate("fewer than two halting stops".into())),
    };
    let stops = &trip.stops[first..=last];
    let t0 = stops[0].first_time().expect("validated");
    let t_end = stops[stops.len() - 1].last_time().expect("validated");
    if t_end == t0 {
        return Err(degenerate("all stops share one timestamp".into()));
    }
    let rel = |t: NaiveDateTime| (t - t0).num_seconds();

    // Split into halts and the waypoints between consecutive halts.
    let mut halts: Vec<Halt> = Vec::new();
    let mut legs: Vec<Vec<Waypoint>> = Vec::new();
    let mut pending: Vec<Waypoint> = Vec::new();
    for stop in stops {
        let (a, d) = (
            stop.first_time().expect("validated"),
            stop.last_time().expect("validated"),
        );
        if stop.is_passthrough {
            pending.push(Waypoint {
                station: stop.station_id.clone(),
                at: rel(a),
            });
        } else {
            if !halts.is_empty() {
                legs.push(std::mem::take(&mut pending));
            }
            halts.push(Halt {
                station: stop.station_id.clone(),
                arrive: rel(a),
                depart: rel(d),
            });
        }
    }

    let dt = i64::from(step.seconds());
    let span = rel(t_end);
    let n = (span / dt + 1) as usize;
    let time_of = |k: usize| t0 + chrono::Duration::seconds(k as i64 * dt);
    let ambiguity = |k: usize, detail: String| TrajectoryError::StateAmbiguity {
        trip_id: trip.trip_id.clone(),
        at: time_of(k),
        detail,
    };

    let mut states: Vec<Option<State>> = vec![None; n];
    let mut prev_hi: Option<usize> = None;
    for (j, halt) in halts.iter().enumerate() {
        // Samples k with arrive <= k*dt <= depart.
        let lo = (halt.arrive + dt - 1).div_euclid(dt) as usize;
        let hi = (halt.depart.div_euclid(dt) as usize).min(n - 1);
        if lo > hi {
            return Err(ambiguity(
                lo.min(n - 1),
                format!("dwell at {} falls between two samples", halt.station),
            ));
        }
        if let Some(ph) = prev_hi {
            if lo <= ph {
                return Err(ambiguity(
                    lo,
                    format!(
                        "dwells at {} and {} share a sample",
                        halts[j - 1].station,
                        halt.station
                    ),
                ));
            }
            let from = &halts[j - 1];
            if from.station == halt.station && legs[j - 1].is_empty() {
                return Err(TrajectoryError::SelfLoopLeg {
                    trip_id: trip.trip_id.clone(),
                    station: halt.station.clone(),
                });
            }
            let run: Vec<usize> = (ph + 1..lo).collect();
            if run.is_empty() {
                if halt.arrive - from.depart > 60 {
                    return Err(ambiguity(
                        ph,
                        format!(
                            "run {} -> {} lasts over a minute but is never sampled",
                            from.station, halt.station
                        ),
                    ));
                }
            } else {
                fill_run(trip, from, halt, &legs[j - 1], &run, dt, &mut states)?;
            }
        }
        for slot in &mut states[lo..=hi] {
            assert!(slot.is_none(), "sample assigned twice");
            *slot = Some(State::Dwell(halt.station.clone()));
        }
        prev_hi = Some(hi);
    }

    let states: Vec<State> = states
        .into_iter()
        .enumerate()
        .map(|(k, s)| s.ok_or_else(|| ambiguity(k, "sample left unassigned".into())))
        .collect::<Result<_, _>>()?;
    let midnight = trip
        .operation_day
        .and_hms_opt(0, 0, 0)
        .expect("valid midnight");
    Ok(StateSequence {
        trip_id: trip.trip_id.clone(),
        operation_day: trip.operation_day,
        start_minute: (t0 - midnight).num_minutes(),
        step,
        states,
    })
}

/// Assigns running states to the samples of one leg. Waypoints passed
/// within a single step collapse: each sampled section runs from its own
/// starting point to the start of the next sampled section.
fn fill_run(
    trip: &Trip,
    from: &Halt,
    to: &Halt,
    waypoints: &[Waypoint],
    run: &[usize],
    dt: i64,
    states: &mut [Option<State>],
) -> Result<(), TrajectoryError> {
    let point = |r: usize| -> &StationId {
        if r == 0 {
            &from.station
        } else {
            &waypoints[r - 1].station
        }
    };
    // Section index of each sample: waypoints already passed.
    let section: Vec<usize> = run
        .iter()
        .map(|&k| {
            waypoints
                .iter()
                .take_while(|w| w.at <= k as i64 * dt)
                .count()
        })
        .collect();
    let mut sampled: Vec<usize> = section.clone();
    sampled.dedup();
    for (g, &r) in sampled.iter().enumerate() {
        let a = if g == 0 { &from.station } else { point(r) };
        let b = sampled.get(g + 1).map_or(&to.station, |&next| point(next));
        if a == b {
            return Err(TrajectoryError::SelfLoopLeg {
                trip_id: trip.trip_id.clone(),
                station: a.clone(),
            });
        }
        let state = State::Running(a.clone(), b.clone());
        for (&k, _) in run.iter().zip(&section).filter(|(_, &s)| s == r) {
            assert!(states[k].is_none(), "sample assigned twice");
            states[k] = Some(state.clone());
        }
    }
    Ok(())
}

/// Discretizes every trip of a day. Trips that cannot be discretized are
/// skipped with a warning; the output keeps the input order.
pub fn discretize_day(trips: &[Trip], step: Step) -> (Vec<StateSequence>, Vec<IngestWarning>) {
    let results: Vec<Result<StateSequence, TrajectoryError>> =
        trips.par_iter().map(|t| discretize_trip(t, step)).collect();
    let mut sequences = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for (trip, r) in trips.iter().zip(results) {
        match r {
            Ok(s) => sequences.push(s),
            Err(e) => warnings.push(IngestWarning::trip(
                trip.trip_id.clone(),
                format!("skipped: {e}"),
            )),
        }
    }
    (sequences, warnings)
}

/// Writes sequences as `trip_id,minute,state_kind,from,to` rows, one per
/// sample. `to` is empty for dwell states.
pub fn write_sequences_csv<W: Write>(sequences: &[StateSequence], sink: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["trip_id", "minute", "state_kind", "from", "to"])?;
    for seq in sequences {
        let dt = seq.step.seconds() as i64;
        for (k, state) in seq.states.iter().enumerate() {
            let secs = seq.start_minute * 60 + k as i64 * dt;
            let minute = if secs % 60 == 0 {
                (secs / 60).to_string()
            } else {
                format!("{}", secs as f64 / 60.0)
            };
            let (from, to) = match state {
                State::Dwell(s) => (s.as_str(), ""),
                State::Running(a, b) => (a.as_str(), b.as_str()),
            };
            w.write_record([seq.trip_id.as_str(), &minute, state.kind(), from, to])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Mode, StopEvent};

    fn at(hm: &str) -> Option<NaiveDateTime> {
        if hm.is_empty() {
            return None;
        }
        let fmt = if hm.len() > 5 { "%H:%M:%S" } else { "%H:%M" };
        Some(
            NaiveDate::from_ymd_opt(2019, 10, 1)
                .unwrap()
                .and_time(chrono::NaiveTime::parse_from_str(hm, fmt).unwrap()),
        )
    }

    fn stop(id: &str, arr: &str, dep: &str, pass: bool) -> StopEvent {
        StopEvent {
            station_id: id.into(),
            station_name: id.into(),
            arrival: at(arr),
            departure: at(dep),
            is_passthrough: pass,
        }
    }

    fn trip(stops: Vec<StopEvent>) -> Trip {
        Trip {
            trip_id: "T".into(),
            operation_day: NaiveDate::from_ymd_opt(2019, 10, 1).unwrap(),
            stops,
            mode: Mode::Train,
        }
    }

    fn d(s: &str) -> State {
        State::Dwell(s.into())
    }

    fn r(a: &str, b: &str) -> State {
        State::Running(a.into(), b.into())
    }

    #[test]
    fn bracketing_rule() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:02", "10:03", false),
        ]);
        let s = discretize_trip(&t, Step::ONE_MINUTE).unwrap();
        assert_eq!(s.states, vec![d("A"), r("A", "B"), d("B"), d("B")]);
        assert_eq!(s.start_minute, 600);
    }

    #[test]
    fn zero_minute_run_is_a_direct_hop() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:01", "", false),
        ]);
        let s = discretize_trip(&t, Step::ONE_MINUTE).unwrap();
        assert_eq!(s.states, vec![d("A"), d("B")]);
    }

    #[test]
    fn dwell_then_run_then_longer_dwell() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:03", "10:05", false),
            stop("C", "10:08", "", false),
        ]);
        let s = discretize_trip(&t, Step::ONE_MINUTE).unwrap();
        assert_eq!(
            s.states[..7],
            [
                d("A"),
                r("A", "B"),
                r("A", "B"),
                d("B"),
                d("B"),
                d("B"),
                r("B", "C")
            ]
        );
        assert_eq!(s.len(), 9);
    }

    #[test]
    fn passthrough_splits_the_run() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("M", "10:02", "10:02", true),
            stop("B", "10:04", "", false),
        ]);
        let s = discretize_trip(&t, Step::ONE_MINUTE).unwrap();
        assert_eq!(
            s.states,
            vec![d("A"), r("A", "M"), r("M", "B"), r("M", "B"), d("B")]
        );
    }

    #[test]
    fn waypoints_inside_one_step_collapse() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("M", "10:01:10", "", true),
            stop("N", "10:01:40", "", true),
            stop("B", "10:03", "", false),
        ]);
        // Seconds are not truncated here since the trip is built by hand.
        let s = discretize_trip(&t, Step::ONE_MINUTE).unwrap();
        assert_eq!(s.states, vec![d("A"), r("A", "N"), r("N", "B"), d("B")]);
        assert!(s.transitions().all(|(a, b)| is_legal_transition(a, b)));
    }

    #[test]
    fn coarse_step_is_ambiguous() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:01", "10:01", false),
            stop("C", "10:02", "", false),
        ]);
        let err = discretize_trip(&t, Step::from_minutes(2).unwrap()).unwrap_err();
        assert!(matches!(err, TrajectoryError::StateAmbiguity { .. }));
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:03", "10:04", false),
        ]);
        let err = discretize_trip(&t, Step::from_minutes(4).unwrap()).unwrap_err();
        assert!(matches!(err, TrajectoryError::StateAmbiguity { .. }));
    }

    #[test]
    fn half_minute_step() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:01", "", false),
        ]);
        let s = discretize_trip(&t, Step::from_seconds(30).unwrap()).unwrap();
        assert_eq!(s.states, vec![d("A"), r("A", "B"), d("B")]);
    }

    #[test]
    fn degenerate_trips() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:00", "", false),
        ]);
        assert!(matches!(
            discretize_trip(&t, Step::ONE_MINUTE),
            Err(TrajectoryError::DegenerateTrip { .. })
        ));
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("M", "10:02", "", true),
        ]);
        assert!(matches!(
            discretize_trip(&t, Step::ONE_MINUTE),
            Err(TrajectoryError::DegenerateTrip { .. })
        ));
    }

    #[test]
    fn self_loop_leg_is_rejected() {
        let t = trip(vec![
            stop("A", "", "10:00", false),
            stop("A", "10:05", "", false),
        ]);
        assert!(matches!(
            discretize_trip(&t, Step::ONE_MINUTE),
            Err(TrajectoryError::SelfLoopLeg { .. })
        ));
    }

    #[test]
    fn invalid_steps() {
        assert!(Step::from_seconds(0).is_err());
        assert!(Step::from_seconds(45).is_err());
        assert!(Step::from_seconds(20).is_ok());
        assert!(Step::from_seconds(180).is_ok());
    }

    #[test]
    fn day_skips_failures() {
        let good = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:02", "", false),
        ]);
        let bad = trip(vec![
            stop("A", "", "10:00", false),
            stop("B", "10:00", "", false),
        ]);
        let (seqs, warns) = discretize_day(&[good.clone(), bad, good], Step::ONE_MINUTE);
        assert_eq!(seqs.len(), 2);
        assert_eq!(warns.len(), 1);
        assert!(discretize_day(&[], Step::ONE_MINUTE).0.is_empty());
    }

    #[test]
    fn labels_round_trip() {
        for s in [d("8503000"), r("1", "2")] {
            assert_eq!(s.to_string().parse::<State>().unwrap(), s);
        }
        assert!("R:1>1".parse::<State>().is_err());
        assert!(d("Z") < r("A", "B"));
    }
}

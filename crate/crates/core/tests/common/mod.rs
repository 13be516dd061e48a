//! Independent reference implementations for the integration tests. None of
//! them call into the numerical routines they check.
#![allow(dead_code)]

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use stationrank::ingest::{Mode, StopEvent};
use stationrank::markov::{row_normalize, MarkovModel};
use stationrank::sparse::CsrMatrix;
use stationrank::synthetic::random_counts;
use stationrank::trajectory::StateSequence;
use stationrank::State;
use stationrank::{StationId, Trip};

/// `n` dwell states with ids that sort in index order.
pub fn states(n: usize) -> Vec<State> {
    (0..n)
        .map(|k| State::Dwell(format!("S{k:04}").into()))
        .collect()
}

pub fn model_of_counts(counts: &CsrMatrix<u64>) -> MarkovModel {
    let p = row_normalize(counts).expect("no zero rows");
    MarkovModel::from_matrix(states(counts.rows()), p).expect("ergodic")
}

/// The `k`-th chain of the standard random family: `n` in `[3, 50]`.
pub fn random_chain(k: u64) -> MarkovModel {
    let n = 3 + (k as usize * 7919) % 48;
    model_of_counts(&random_counts(1000 + k, n, 2 * n, 9))
}

pub fn dense(p: &CsrMatrix<f64>) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; p.cols()]; p.rows()];
    for (i, j, v) in p.iter() {
        d[i][j] = v;
    }
    d
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "singular system");
        for r in col + 1..n {
            let f = a[r][col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Mean first passage times from the first-step equations
/// `m_ij = 1 + sum_{k != j} P_ik m_kj`, one linear system per target.
pub fn mfpt_first_step(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = p.len();
    let mut m = vec![vec![0.0; n]; n];
    for j in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        let a: Vec<Vec<f64>> = others
            .iter()
            .map(|&i| {
                others
                    .iter()
                    .map(|&k| if i == k { 1.0 - p[i][k] } else { -p[i][k] })
                    .collect()
            })
            .collect();
        let x = solve(a, vec![1.0; others.len()]);
        for (r, &i) in others.iter().enumerate() {
            m[i][j] = x[r];
        }
    }
    m
}

/// Stationary distribution from `pi^T (I - P) = 0` with one equation
/// replaced by the normalization.
pub fn stationary_direct(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - p[j][i];
        }
    }
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    solve(a, b)
}

/// Reachability by breadth-first search from every vertex.
pub fn reachability(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut queue = vec![s];
            while let Some(v) = queue.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push(w);
                    }
                }
            }
            seen
        })
        .collect()
}

/// Components of mutual reachability, numbered by their smallest vertex in
/// ascending order.
pub fn brute_force_scc(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let reach = reachability(n, edges);
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if comp[i] != usize::MAX {
            continue;
        }
        for j in i..n {
            if reach[i][j] && reach[j][i] {
                comp[j] = next;
            }
        }
        next += 1;
    }
    comp
}

/// Relabels a partition so that labels appear in first-occurrence order.
pub fn canonical_partition(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

pub fn frobenius(a: &ndarray::Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn base_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2019, 10, 1)
        .unwrap()
        .and_hms_opt(5, 0, 0)
        .unwrap()
}

/// A trip over a pool of eight stations with whole-minute times: halts
/// dwell 0 to 4 minutes, legs run 1 to 8 minutes, and about a third of the
/// intermediate stops are passed without halting. Consecutive stops differ.
pub fn random_trip<R: Rng>(rng: &mut R, id: usize) -> Trip {
    let len = rng.random_range(2..=9);
    let mut t = base_time() + Duration::minutes(rng.random_range(0..600));
    let mut prev: Option<usize> = None;
    let mut stops = Vec::with_capacity(len);
    for k in 0..len {
        let station = loop {
            let s = rng.random_range(0..8);
            if Some(s) != prev {
                break s;
            }
        };
        prev = Some(station);
        let pass = k > 0 && k + 1 < len && rng.random_bool(0.35);
        let arrival = (k > 0).then(|| {
            t += Duration::minutes(rng.random_range(1..=8));
            t
        });
        let departure = if k + 1 == len {
            None
        } else if pass {
            arrival
        } else {
            if k > 0 {
                t += Duration::minutes(rng.random_range(0..=4));
            }
            Some(t)
        };
        stops.push(StopEvent {
            station_id: format!("85000{station:02}").into(),
            station_name: format!("Station {station}"),
            arrival,
            departure,
            is_passthrough: pass,
        });
    }
    Trip {
        trip_id: format!("T{id:05}"),
        operation_day: base_time().date(),
        stops,
        mode: Mode::Train,
    }
}

/// Trains between every ordered pair of `leaves` leaf stations, each via
/// the hub `H`, `per_pair` times a day.
pub fn star_trips(leaves: usize, per_pair: usize) -> Vec<Trip> {
    let t = |m: i64| base_time() + Duration::minutes(m);
    let stop = |id: String, a: Option<i64>, d: Option<i64>| StopEvent {
        station_name: id.clone(),
        station_id: id.into(),
        arrival: a.map(t),
        departure: d.map(t),
        is_passthrough: false,
    };
    let mut trips = Vec::new();
    for a in 0..leaves {
        for b in (0..leaves).filter(|&b| b != a) {
            for k in 0..per_pair {
                let s = (trips.len() * 7 + k * 60) as i64 % 900;
                trips.push(Trip {
                    trip_id: format!("S{}", trips.len()),
                    operation_day: base_time().date(),
                    stops: vec![
                        stop(format!("L{a}"), None, Some(s)),
                        stop("H".into(), Some(s + 3 + a as i64), Some(s + 5 + a as i64)),
                        stop(format!("L{b}"), Some(s + 8 + (a + b) as i64), None),
                    ],
                    mode: Mode::Train,
                });
            }
        }
    }
    trips
}

struct Point {
    station: StationId,
    arrive: NaiveDateTime,
    depart: NaiveDateTime,
    halt: bool,
}

fn points(trip: &Trip) -> Vec<Point> {
    let pts: Vec<Point> = trip
        .stops
        .iter()
        .map(|s| Point {
            station: s.station_id.clone(),
            arrive: s.arrival.or(s.departure).unwrap(),
            depart: s.departure.or(s.arrival).unwrap(),
            halt: !s.is_passthrough,
        })
        .collect();
    let first = pts.iter().position(|p| p.halt).unwrap();
    let last = pts.iter().rposition(|p| p.halt).unwrap();
    pts.into_iter().skip(first).take(last - first + 1).collect()
}

/// Checks a sequence against the trip without reusing the discretizer:
/// the length, what each sample may be given its time, and which pairs of
/// consecutive states may occur. Returns the number of violations.
pub fn violations(trip: &Trip, seq: &StateSequence) -> usize {
    let pts = points(trip);
    let dt = chrono::Duration::seconds(i64::from(seq.step.seconds()));
    let t0 = pts[0].arrive;
    let span = pts.last().unwrap().depart - t0;
    let mut bad = 0;
    if seq.states.len() as i64 != span.num_seconds() / dt.num_seconds() + 1 {
        bad += 1;
    }
    let halts: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].halt).collect();
    for (k, state) in seq.states.iter().enumerate() {
        let t = t0 + dt * k as i32;
        let at_halt = halts
            .iter()
            .find(|&&h| pts[h].arrive <= t && t <= pts[h].depart);
        let ok = match (at_halt, state) {
            (Some(&h), State::Dwell(s)) => *s == pts[h].station,
            (None, State::Running(a, b)) => {
                // Bracketing halts and the leg between them.
                let next = halts.iter().copied().find(|&h| pts[h].arrive > t).unwrap();
                let prev = halts
                    .iter()
                    .copied()
                    .rev()
                    .find(|&h| pts[h].depart < t)
                    .unwrap();
                let passed = (prev..next).filter(|&i| i == prev || pts[i].arrive <= t);
                let ahead = (prev + 1..=next).filter(|&i| i == next || pts[i].arrive > t);
                a != b
                    && passed.clone().any(|i| pts[i].station == *a)
                    && ahead.clone().any(|i| pts[i].station == *b)
            }
            _ => false,
        };
        bad += !ok as usize;
    }
    for (k, w) in seq.states.windows(2).enumerate() {
        let ok = match (&w[0], &w[1]) {
            (x, y) if x == y => true,
            (State::Dwell(a), State::Running(b, _)) => a == b,
            (State::Running(_, a), State::Dwell(b)) => a == b,
            (State::Running(_, m), State::Running(n, _)) => {
                m == n && pts.iter().any(|p| !p.halt && p.station == *m)
            }
            (State::Dwell(a), State::Dwell(b)) => {
                // Only a direct hop between consecutive halts, short enough
                // to fall between two samples.
                let t = t0 + dt * k as i32;
                halts.windows(2).any(|h| {
                    let (x, y) = (&pts[h[0]], &pts[h[1]]);
                    x.station == *a
                        && y.station == *b
                        && h[1] == h[0] + 1
                        && x.departure_covers(t)
                        && y.arrive - x.depart <= dt
                })
            }
        };
        bad += !ok as usize;
    }
    bad
}

impl Point {
    fn departure_covers(&self, t: NaiveDateTime) -> bool {
        self.arrive <= t && t <= self.depart
    }
}

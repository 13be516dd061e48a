//! Seeded synthetic networks and chains for tests, examples and benchmarks.
//!
//! [`synthetic_day`] lays stations on a grid over a Swiss-sized bounding
//! box and runs lines along every grid row and column in both directions.
//! Some trains run express and pass every other station without halting.
//! Optional one-way spur trips end at depots that nothing leaves, so the
//! restriction to the strongly connected core has something to remove.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{Mode, StationDirectory, StationId, StationInfo, StopEvent, Trip};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub day: NaiveDate,
    pub rows: usize,
    pub cols: usize,
    /// Departures per line and direction.
    pub trains_per_line: usize,
    /// Every n-th train of a line runs express (0 disables).
    pub express_every: usize,
    /// One-way trips to terminal depots.
    pub spurs: usize,
    /// Inclusive range of dwell minutes at intermediate halts.
    pub dwell_minutes: (i64, i64),
    /// Inclusive range of running minutes between adjacent grid stations.
    pub run_minutes: (i64, i64),
}

impl SyntheticConfig {
    /// A 2x3 grid; runs in milliseconds.
    pub fn small(seed: u64) -> Self {
        SyntheticConfig {
            seed,
            day: NaiveDate::from_ymd_opt(2019, 10, 1).expect("valid date"),
            rows: 2,
            cols: 3,
            trains_per_line: 6,
            express_every: 3,
            spurs: 1,
            dwell_minutes: (1, 3),
            run_minutes: (2, 5),
        }
    }

    /// About 2000 states and 8000 transition edges.
    pub fn benchmark(seed: u64) -> Self {
        SyntheticConfig {
            rows: 20,
            cols: 21,
            trains_per_line: 24,
            run_minutes: (1, 5),
            express_every: 2,
            spurs: 8,
            ..SyntheticConfig::small(seed)
        }
    }

    /// A grid of roughly `stations` stations.
    pub fn with_stations(seed: u64, stations: usize) -> Self {
        let cols = ((stations as f64).sqrt().ceil() as usize).max(2);
        let rows = stations.div_ceil(cols).max(1);
        SyntheticConfig {
            rows,
            cols,
            ..SyntheticConfig::small(seed)
        }
    }
}

fn station_id(r: usize, c: usize, cols: usize) -> StationId {
    StationId(format!("85{:05}", 10_000 + r * cols + c))
}

fn depot_id(k: usize) -> StationId {
    StationId(format!("85{:05}", 90_000 + k))
}

/// Trips of one operation day and the matching station directory.
pub fn synthetic_day(config: &SyntheticConfig) -> (Vec<Trip>, StationDirectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (rows, cols) = (config.rows, config.cols);
    let mut directory = StationDirectory::new();
    let coord = |r: usize, c: usize| {
        let lat = 47.7 - 1.9 * r as f64 / (rows.max(2) - 1) as f64;
        let lon = 6.0 + 4.4 * c as f64 / (cols.max(2) - 1) as f64;
        (lat, lon)
    };
    for r in 0..rows {
        for c in 0..cols {
            let (lat, lon) = coord(r, c);
            directory.insert(
                station_id(r, c, cols),
                StationInfo {
                    name: format!("Grid {r:02}/{c:02}"),
                    lat: Some(lat),
                    lon: Some(lon),
                },
            );
        }
    }

    let mut lines: Vec<(String, Vec<(StationId, String)>)> = Vec::new();
    let name = |r: usize, c: usize| format!("Grid {r:02}/{c:02}");
    if cols > 1 {
        for r in 0..rows {
            let path: Vec<_> = (0..cols)
                .map(|c| (station_id(r, c, cols), name(r, c)))
                .collect();
            lines.push((format!("E{r:02}"), path.clone()));
            lines.push((format!("W{r:02}"), path.into_iter().rev().collect()));
        }
    }
    if rows > 1 {
        for c in 0..cols {
            let path: Vec<_> = (0..rows)
                .map(|r| (station_id(r, c, cols), name(r, c)))
                .collect();
            lines.push((format!("S{c:02}"), path.clone()));
            lines.push((format!("N{c:02}"), path.into_iter().rev().collect()));
        }
    }

    let midnight = config.day.and_hms_opt(0, 0, 0).expect("valid midnight");
    let mut trips = Vec::new();
    for (line, path) in &lines {
        for k in 0..config.trains_per_line {
            let express = config.express_every > 0
                && k % config.express_every == config.express_every - 1
                && path.len() > 2;
            let start = midnight + Duration::minutes(rng.random_range(300..1320));
            trips.push(Trip {
                trip_id: format!("{line}-{k:03}"),
                operation_day: config.day,
                stops: run_path(
                    &mut rng,
                    config,
                    path,
                    start,
                    express.then_some(k / config.express_every.max(1) % 2),
                ),
                mode: Mode::Train,
            });
        }
    }
    for k in 0..config.spurs {
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let depot = depot_id(k);
        let (lat, lon) = coord(r, c);
        directory.insert(
            depot.clone(),
            StationInfo {
                name: format!("Depot {k}"),
                lat: Some(lat + 0.02),
                lon: Some(lon + 0.02),
            },
        );
        let path = vec![
            (station_id(r, c, cols), name(r, c)),
            (depot, format!("Depot {k}")),
        ];
        let start = midnight + Duration::minutes(rng.random_range(300..1320));
        trips.push(Trip {
            trip_id: format!("SPUR-{k:03}"),
            operation_day: config.day,
            stops: run_path(&mut rng, config, &path, start, None),
            mode: Mode::Train,
        });
    }
    (trips, directory)
}

fn run_path(
    rng: &mut ChaCha8Rng,
    config: &SyntheticConfig,
    path: &[(StationId, String)],
    start: NaiveDateTime,
    express: Option<usize>,
) -> Vec<StopEvent> {
    let mut t = start;
    let last = path.len() - 1;
    path.iter()
        .enumerate()
        .map(|(k, (id, name))| {
            let arrival = if k == 0 {
                None
            } else {
                // Express legs take at least two minutes so that every
                // passed station is sampled.
                let lo = if express.is_some() {
                    config.run_minutes.0.max(2)
                } else {
                    config.run_minutes.0
                };
                t += Duration::minutes(rng.random_range(lo..=config.run_minutes.1.max(lo)));
                Some(t)
            };
            let pass = express.is_some_and(|phase| k > 0 && k < last && (k + phase) % 2 == 1);
            let departure = if k == last {
                None
            } else if pass {
                arrival
            } else {
                if k > 0 {
                    t += Duration::minutes(
                        rng.random_range(config.dwell_minutes.0..=config.dwell_minutes.1),
                    );
                }
                Some(t)
            };
            StopEvent {
                station_id: id.clone(),
                station_name: name.clone(),
                arrival,
                departure,
                is_passthrough: pass,
            }
        })
        .collect()
}

/// Random strongly connected, aperiodic count matrix: a ring through all
/// states, self-loops on a few, plus extra random edges.
pub fn random_counts(seed: u64, n: usize, extra_edges: usize, max_count: u64) -> CsrMatrix<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut trip = Vec::with_capacity(2 * n + extra_edges);
    let w = |rng: &mut ChaCha8Rng| rng.random_range(1..=max_count.max(1));
    for k in 0..n {
        trip.push((perm[k], perm[(k + 1) % n], w(&mut rng)));
    }
    trip.push((perm[0], perm[0], w(&mut rng)));
    for _ in 0..n / 4 {
        let i = rng.random_range(0..n);
        trip.push((i, i, w(&mut rng)));
    }
    for _ in 0..extra_edges {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        trip.push((i, j, w(&mut rng)));
    }
    CsrMatrix::from_triplets(n, n, trip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let a = synthetic_day(&SyntheticConfig::small(3));
        let b = synthetic_day(&SyntheticConfig::small(3));
        assert_eq!(a.0, b.0);
        assert_ne!(a.0, synthetic_day(&SyntheticConfig::small(4)).0);
        assert!(a.0.iter().all(|t| t.validate().is_ok()));
        assert!(a.0.iter().any(|t| t.stops.iter().any(|s| s.is_passthrough)));
    }

    #[test]
    fn random_counts_are_strongly_connected() {
        let m = random_counts(9, 30, 40, 5);
        let (_, comps) = crate::graph::strongly_connected_components(&m);
        assert_eq!(comps, 1);
        assert_eq!(crate::markov::chain_period(&m), 1);
    }
}

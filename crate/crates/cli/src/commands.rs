use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde_json::{json, Value};
use stationrank::aggregate::{
    aggregate_range, rankings, run_day, run_days, write_rankings_csv, DayResult, Measure,
    PipelineConfig, RankingRow, RANKING_HEADER,
};
use stationrank::ingest::{group_by_operation_day, load_station_directory, parse_actual_data};
use stationrank::perturb::{disrupt_node, PiSolver};
use stationrank::store::{ResultsStore, StoreError};
use stationrank::{SourceFormat, StationDirectory, StationId, Trip};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some days failed; the rest were written.
    Partial,
}

fn store_error(e: StoreError) -> CliError {
    CliError::new("StoreFailure", e.to_string())
}

fn input_files(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    let unreadable =
        |e: std::io::Error| CliError::new("InputUnreadable", format!("{}: {e}", input.display()));
    let meta = fs::metadata(input).map_err(unreadable)?;
    if meta.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(unreadable)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::new(
            "InputUnreadable",
            format!("no .csv files in {}", input.display()),
        ));
    }
    Ok(files)
}

fn read_file(path: &Path) -> Result<Vec<Trip>, CliError> {
    let unreadable = |e: &dyn std::fmt::Display| {
        CliError::new("InputUnreadable", format!("{}: {e}", path.display()))
    };
    let mut first = String::new();
    BufReader::new(File::open(path).map_err(|e| unreadable(&e))?)
        .read_line(&mut first)
        .map_err(|e| unreadable(&e))?;
    let format = SourceFormat::detect(&first);
    let file = File::open(path).map_err(|e| unreadable(&e))?;
    let parsed = parse_actual_data(BufReader::new(file), format).map_err(|e| unreadable(&e))?;
    for w in &parsed.warnings {
        log::warn!("{}: {w}", path.display());
    }
    if parsed.dropped_non_train > 0 {
        log::info!(
            "{}: skipped {} non-train rows",
            path.display(),
            parsed.dropped_non_train
        );
    }
    Ok(parsed.trips)
}

/// Trips of the configured range, by operation day.
pub fn read_days(cfg: &RunConfig) -> Result<BTreeMap<NaiveDate, Vec<Trip>>, CliError> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| CliError::new("InputMissing", "no --input given"))?;
    let mut trips = Vec::new();
    for file in input_files(input)? {
        trips.extend(read_file(&file)?);
    }
    let mut days = group_by_operation_day(trips);
    days.retain(|d, _| cfg.contains(*d));
    if days.is_empty() {
        return Err(CliError::new(
            "NoDays",
            "no operation day of the input falls in the requested range",
        ));
    }
    Ok(days)
}

pub fn read_directory(cfg: &RunConfig) -> Result<Option<StationDirectory>, CliError> {
    let Some(path) = &cfg.stations else {
        return Ok(None);
    };
    let file = File::open(path)
        .map_err(|e| CliError::new("InputUnreadable", format!("{}: {e}", path.display())))?;
    let (dir, warnings) = load_station_directory(BufReader::new(file))
        .map_err(|e| CliError::new("InputUnreadable", format!("{}: {e}", path.display())))?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(Some(dir))
}

fn pipeline(cfg: &RunConfig) -> PipelineConfig {
    PipelineConfig {
        step: cfg.step,
        t: cfg.t,
        gamma: cfg.gamma,
        ..PipelineConfig::default()
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn analyze(cfg: &RunConfig, out: &mut dyn Write) -> Result<Status, CliError> {
    let days = read_days(cfg)?;
    let directory = read_directory(cfg)?;
    let snapshots = run_days(&days, directory.as_ref(), &pipeline(cfg), cfg.jobs);
    let store = ResultsStore::new(&cfg.out);
    for s in &snapshots {
        store.write_snapshot(s).map_err(store_error)?;
    }
    store.write_summary(&snapshots).map_err(store_error)?;

    let io = |e: std::io::Error| CliError::new("OutputFailure", e.to_string());
    writeln!(
        out,
        "{:<12} {:<7} {:>7} {:>8} {:>14} {:>16}",
        "day", "status", "n", "edges", "kemeny", "dropped_fraction"
    )
    .map_err(io)?;
    for s in &snapshots {
        match s.result() {
            Ok(r) => writeln!(
                out,
                "{:<12} {:<7} {:>7} {:>8} {:>14} {:>16}",
                s.operation_day,
                "ok",
                r.chain.n,
                r.chain.edges,
                f6(r.chain.kemeny),
                f6(r.chain.dropped_fraction)
            ),
            Err(f) => writeln!(out, "{:<12} {:<7} {f}", s.operation_day, "failed"),
        }
        .map_err(io)?;
    }
    let aggregate =
        aggregate_range(&snapshots).map_err(|e| CliError::new("AllDaysFailed", e.to_string()))?;
    store.write_aggregate(&aggregate).map_err(store_error)?;
    writeln!(out, "results in {}", cfg.out.display()).map_err(io)?;
    Ok(if snapshots.iter().all(|s| s.is_ok()) {
        Status::Ok
    } else {
        Status::Partial
    })
}

/// The stored day, or a fresh analysis when there is no snapshot yet and
/// an input is configured.
fn day_result(cfg: &RunConfig, day: NaiveDate) -> Result<DayResult, CliError> {
    let store = ResultsStore::new(&cfg.out);
    let snapshot = match store.read_snapshot(day) {
        Ok(s) => s,
        Err(StoreError::Missing(_)) if cfg.input.is_some() => {
            let single = RunConfig {
                from: Some(day),
                to: Some(day),
                ..cfg.clone()
            };
            let days = read_days(&single).map_err(|e| match e.kind {
                "NoDays" => {
                    CliError::new("DayUnavailable", format!("the input has no trips on {day}"))
                }
                _ => e,
            })?;
            let directory = read_directory(cfg)?;
            run_day(day, &days[&day], directory.as_ref(), &pipeline(cfg))
        }
        Err(StoreError::Missing(_)) => {
            return Err(CliError::new(
                "DayUnavailable",
                format!("no snapshot for {day} and no --input to compute it"),
            ))
        }
        Err(e) => return Err(store_error(e)),
    };
    snapshot
        .outcome
        .map_err(|f| CliError::new("DayUnavailable", format!("analysis of {day} failed: {f}")))
}

fn file_stem(day: NaiveDate, station: &StationId) -> String {
    let id: String = station
        .0
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{day}_{id}")
}

/// Disrupts one station and writes its JSON result plus a GeoJSON map of
/// the relative changes.
pub fn disrupt(
    cfg: &RunConfig,
    station: &str,
    day: NaiveDate,
    out: &mut dyn Write,
) -> Result<Status, CliError> {
    let result = day_result(cfg, day)?;
    let id = StationId::from(station);
    let record = result.station(&id).ok_or_else(|| {
        CliError::new(
            "UnknownStation",
            format!("{id} is not in the strongly connected network of {day}"),
        )
    })?;
    let model = result
        .model()
        .map_err(|e| CliError::new("ChainFailure", e.to_string()))?;
    let perturbed = disrupt_node(&model, record.state_index, cfg.t, PiSolver::WarmStart)
        .map_err(|e| CliError::new("DisruptionFailure", e.to_string()))?;
    let pi = model.pi();

    let mut features = Vec::new();
    let mut stations = Vec::new();
    for s in &result.stations {
        let k = s.state_index;
        let rel = (perturbed.pi_tilde[k] - pi[k]) / pi[k];
        let sign = if rel > 0.0 {
            "positive"
        } else if rel < 0.0 {
            "negative"
        } else {
            "zero"
        };
        let props = json!({
            "id": s.station_id,
            "name": s.name,
            "pi": pi[k],
            "pi_tilde": perturbed.pi_tilde[k],
            "rel_delta": rel,
            "sign": sign,
            "target": k == record.state_index,
        });
        let geometry = match (s.lat, s.lon) {
            (Some(lat), Some(lon)) => json!({"type": "Point", "coordinates": [lon, lat]}),
            _ => Value::Null,
        };
        features.push(json!({"type": "Feature", "geometry": geometry, "properties": props}));
        stations.push(props);
    }
    let mut export = perturbed.to_json(&model);
    export["operation_day"] = json!(day.to_string());
    export["station_id"] = json!(id);
    export["stations"] = Value::Array(stations);
    let geojson = json!({"type": "FeatureCollection", "features": features});

    let dir = cfg.out.join("disruptions");
    let write = |path: &Path, v: &Value| -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(v).expect("JSON values serialize");
        bytes.push(b'\n');
        fs::write(path, bytes)
            .map_err(|e| CliError::new("OutputFailure", format!("{}: {e}", path.display())))
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::new("OutputFailure", e.to_string()))?;
    let stem = file_stem(day, &id);
    let (json_path, geo_path) = (
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.geojson")),
    );
    write(&json_path, &export)?;
    write(&geo_path, &geojson)?;

    let others = result
        .stations
        .iter()
        .filter(|s| s.state_index != record.state_index);
    let rel = |s: &&stationrank::aggregate::StationRecord| {
        (perturbed.pi_tilde[s.state_index] - pi[s.state_index]) / pi[s.state_index]
    };
    let gain = others.clone().max_by(|a, b| rel(a).total_cmp(&rel(b)));
    let loss = others.min_by(|a, b| rel(a).total_cmp(&rel(b)));
    let io = |e: std::io::Error| CliError::new("OutputFailure", e.to_string());
    writeln!(
        out,
        "disrupted {} ({}) on {day} at t = {}",
        record.name,
        id,
        f6(cfg.t)
    )
    .map_err(io)?;
    writeln!(out, "own rel_delta {}", f6(rel(&record))).map_err(io)?;
    if let (Some(g), Some(l)) = (gain, loss) {
        writeln!(
            out,
            "max gain {} at {} ({})",
            f6(rel(&g)),
            g.name,
            g.station_id
        )
        .map_err(io)?;
        writeln!(
            out,
            "max loss {} at {} ({})",
            f6(rel(&l)),
            l.name,
            l.station_id
        )
        .map_err(io)?;
    }
    writeln!(
        out,
        "wrote {} and {}",
        json_path.display(),
        geo_path.display()
    )
    .map_err(io)?;
    Ok(Status::Ok)
}

fn print_rows(out: &mut dyn Write, rows: &[RankingRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "{:>5} {:<10} {:<28} {:>12} {:>14} {:>12} {:>12}",
        RANKING_HEADER[0],
        RANKING_HEADER[1],
        RANKING_HEADER[2],
        RANKING_HEADER[3],
        RANKING_HEADER[4],
        RANKING_HEADER[5],
        RANKING_HEADER[6]
    )?;
    for r in rows {
        writeln!(
            out,
            "{:>5} {:<10} {:<28} {:>12} {:>14} {:>12} {:>12}",
            r.rank,
            r.station_id.0,
            r.name,
            f6(r.pi),
            f6(r.remoteness),
            f6(r.influence),
            f6(r.fragility)
        )?;
    }
    Ok(())
}

/// Prints the `top` highest and lowest medians of `measure` and writes both
/// tables as CSV.
pub fn rank(
    cfg: &RunConfig,
    measure: Measure,
    top: usize,
    out: &mut dyn Write,
) -> Result<Status, CliError> {
    let store = ResultsStore::new(&cfg.out);
    let aggregate = store.read_aggregate().map_err(|e| match e {
        StoreError::Missing(_) => CliError::new(
            "AggregateMissing",
            format!("no aggregate in {}; run analyze first", cfg.out.display()),
        ),
        e => store_error(e),
    })?;
    let rows = rankings(&aggregate, measure);
    let highest = &rows[..top.min(rows.len())];
    let lowest = &rows[rows.len().saturating_sub(top)..];
    let io = |e: std::io::Error| CliError::new("OutputFailure", e.to_string());
    writeln!(
        out,
        "highest {measure} (median over {} days)",
        aggregate.days.len()
    )
    .map_err(io)?;
    print_rows(out, highest).map_err(io)?;
    writeln!(out).map_err(io)?;
    writeln!(out, "lowest {measure}").map_err(io)?;
    print_rows(out, lowest).map_err(io)?;
    for (which, part) in [("top", highest), ("bottom", lowest)] {
        let path = cfg.out.join(format!("rank_{measure}_{which}{top}.csv"));
        let file = File::create(&path).map_err(io)?;
        write_rankings_csv(part, file)
            .map_err(|e| CliError::new("OutputFailure", e.to_string()))?;
    }
    Ok(Status::Ok)
}

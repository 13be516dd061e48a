//! On-disk results.
//!
//! A results directory holds
//!
//! ```text
//! snapshots/YYYY-MM-DD.snap   one per analysed day
//! aggregate.json              statistics over the range
//! rankings_<measure>.csv      one table per measure
//! summary.json                per-day chain summary
//! ```
//!
//! Snapshot files use a small container: the eight bytes `SRSNAP01`, a
//! little-endian `u64` header length, a UTF-8 JSON header, zero padding to
//! an eight-byte boundary, then the arrays listed in the header's `arrays`
//! field as little-endian `f64` or `u64` values. Offsets are relative to the
//! start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::aggregate::{
    rankings, write_rankings_csv, ChainSummary, DailySnapshot, DayFailure, DayResult, Measure,
    MonthlyAggregate, StationRecord,
};
use crate::sparse::CsrMatrix;
use crate::trajectory::State;

pub const MAGIC: &[u8; 8] = b"SRSNAP01";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid results file: {0}")]
    Invalid(String),
    #[error("no results for {0}")]
    Missing(String),
}

#[derive(Debug, Clone, Copy)]
pub enum ColumnRef<'a> {
    F64(&'a [f64]),
    U64(&'a [u64]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Column {
    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            Column::F64(v) => Some(v),
            Column::U64(_) => None,
        }
    }

    pub fn as_u64(&self) -> Option<&[u64]> {
        match self {
            Column::U64(v) => Some(v),
            Column::F64(_) => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    len: usize,
    offset: usize,
}

/// Writes `meta` (which must be a JSON object) plus the arrays.
pub fn write_container<W: Write>(
    mut sink: W,
    meta: &Value,
    arrays: &[(&str, ColumnRef<'_>)],
) -> Result<(), StoreError> {
    let mut header = match meta {
        Value::Object(m) => m.clone(),
        _ => {
            return Err(StoreError::Invalid(
                "container metadata must be an object".into(),
            ))
        }
    };
    let mut offset = 0;
    let entries: Vec<ArrayEntry> = arrays
        .iter()
        .map(|(name, col)| {
            let (dtype, len) = match col {
                ColumnRef::F64(v) => ("f64", v.len()),
                ColumnRef::U64(v) => ("u64", v.len()),
            };
            let e = ArrayEntry {
                name: name.to_string(),
                dtype: dtype.into(),
                len,
                offset,
            };
            offset += len * 8;
            e
        })
        .collect();
    header.insert("arrays".into(), serde_json::to_value(&entries)?);
    let header = serde_json::to_vec(&Value::Object(header))?;
    sink.write_all(MAGIC)?;
    sink.write_all(&(header.len() as u64).to_le_bytes())?;
    sink.write_all(&header)?;
    let pad = (8 - (16 + header.len()) % 8) % 8;
    sink.write_all(&[0u8; 8][..pad])?;
    for (_, col) in arrays {
        match col {
            ColumnRef::F64(v) => v
                .iter()
                .try_for_each(|x| sink.write_all(&x.to_le_bytes()))?,
            ColumnRef::U64(v) => v
                .iter()
                .try_for_each(|x| sink.write_all(&x.to_le_bytes()))?,
        }
    }
    sink.flush()?;
    Ok(())
}

/// Reads only the JSON header of a container, without the array listing.
pub fn read_container_header<R: Read>(mut source: R) -> Result<Value, StoreError> {
    let mut prefix = [0u8; 16];
    source
        .read_exact(&mut prefix)
        .map_err(|_| StoreError::Invalid("missing magic".into()))?;
    if &prefix[..8] != MAGIC {
        return Err(StoreError::Invalid("missing magic".into()));
    }
    let hlen = u64::from_le_bytes(prefix[8..].try_into().expect("8 bytes"));
    let mut header = Vec::new();
    source.take(hlen).read_to_end(&mut header)?;
    if header.len() as u64 != hlen {
        return Err(StoreError::Invalid("truncated header".into()));
    }
    let mut meta: Value = serde_json::from_slice(&header)?;
    if let Some(m) = meta.as_object_mut() {
        m.remove("arrays");
    }
    Ok(meta)
}

/// Reads a container back into its header and named arrays.
pub fn read_container<R: Read>(
    mut source: R,
) -> Result<(Value, BTreeMap<String, Column>), StoreError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let bad = |m: &str| StoreError::Invalid(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let hend = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let mut meta: Value = serde_json::from_slice(&bytes[16..hend])?;
    let payload = hend + (8 - hend % 8) % 8;
    let entries: Vec<ArrayEntry> = match meta.as_object_mut().and_then(|m| m.remove("arrays")) {
        Some(v) => serde_json::from_value(v)?,
        None => Vec::new(),
    };
    let mut arrays = BTreeMap::new();
    for e in entries {
        let start = payload + e.offset;
        let end = e
            .len
            .checked_mul(8)
            .and_then(|l| start.checked_add(l))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated payload"))?;
        let words = bytes[start..end]
            .chunks_exact(8)
            .map(|c| c.try_into().expect("8 bytes"));
        let col = match e.dtype.as_str() {
            "f64" => Column::F64(words.map(f64::from_le_bytes).collect()),
            "u64" => Column::U64(words.map(u64::from_le_bytes).collect()),
            other => return Err(StoreError::Invalid(format!("unknown dtype {other}"))),
        };
        arrays.insert(e.name, col);
    }
    Ok((meta, arrays))
}

#[derive(Serialize, Deserialize)]
struct StationMeta {
    station_id: String,
    name: String,
    lat: Option<f64>,
    lon: Option<f64>,
    state_index: usize,
    cluster: i8,
}

/// Serializes a snapshot into the container format.
pub fn encode_snapshot<W: Write>(snapshot: &DailySnapshot, sink: W) -> Result<(), StoreError> {
    let day = snapshot.operation_day.format("%Y-%m-%d").to_string();
    match &snapshot.outcome {
        Err(f) => write_container(
            sink,
            &json!({"kind": "day", "version": 1, "operation_day": day, "status": "failed", "failure": f}),
            &[],
        ),
        Ok(r) => {
            let stations: Vec<StationMeta> = r
                .stations
                .iter()
                .map(|s| StationMeta {
                    station_id: s.station_id.to_string(),
                    name: s.name.clone(),
                    lat: s.lat,
                    lon: s.lon,
                    state_index: s.state_index,
                    cluster: s.cluster,
                })
                .collect();
            let meta = json!({
                "kind": "day",
                "version": 1,
                "operation_day": day,
                "status": "ok",
                "chain": r.chain,
                "warnings": r.warnings,
                "states": r.states.iter().map(ToString::to_string).collect::<Vec<_>>(),
                "stations": stations,
            });
            let u = |v: &[usize]| v.iter().map(|&x| x as u64).collect::<Vec<u64>>();
            let (row_ptr, col_idx) = (u(r.counts.row_ptr()), u(r.counts.col_indices()));
            let per = |f: fn(&StationRecord) -> f64| r.stations.iter().map(f).collect::<Vec<f64>>();
            let (s_pi, s_rem, s_inf, s_frag) = (
                per(|s| s.pi),
                per(|s| s.remoteness),
                per(|s| s.influence),
                per(|s| s.fragility),
            );
            let inflow: Vec<u64> = r.stations.iter().map(|s| s.inflow).collect();
            let outflow: Vec<u64> = r.stations.iter().map(|s| s.outflow).collect();
            write_container(
                sink,
                &meta,
                &[
                    ("pi", ColumnRef::F64(&r.pi)),
                    ("counts_row_ptr", ColumnRef::U64(&row_ptr)),
                    ("counts_col", ColumnRef::U64(&col_idx)),
                    ("counts_val", ColumnRef::U64(r.counts.values())),
                    ("station_pi", ColumnRef::F64(&s_pi)),
                    ("station_remoteness", ColumnRef::F64(&s_rem)),
                    ("station_influence", ColumnRef::F64(&s_inf)),
                    ("station_fragility", ColumnRef::F64(&s_frag)),
                    ("station_inflow", ColumnRef::U64(&inflow)),
                    ("station_outflow", ColumnRef::U64(&outflow)),
                ],
            )
        }
    }
}

/// Parses a snapshot written by [`encode_snapshot`].
pub fn decode_snapshot<R: Read>(source: R) -> Result<DailySnapshot, StoreError> {
    let (meta, arrays) = read_container(source)?;
    let bad = |m: &str| StoreError::Invalid(m.to_string());
    if meta["kind"] != "day" {
        return Err(bad("not a day snapshot"));
    }
    let day = meta["operation_day"]
        .as_str()
        .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
        .ok_or_else(|| bad("bad operation_day"))?;
    if meta["status"] == "failed" {
        let f: DayFailure = serde_json::from_value(meta["failure"].clone())?;
        return Ok(DailySnapshot {
            operation_day: day,
            outcome: Err(f),
        });
    }
    let chain: ChainSummary = serde_json::from_value(meta["chain"].clone())?;
    let warnings: Vec<String> = serde_json::from_value(meta["warnings"].clone())?;
    let labels: Vec<String> = serde_json::from_value(meta["states"].clone())?;
    let states: Vec<State> = labels
        .iter()
        .map(|l| l.parse::<State>().map_err(StoreError::Invalid))
        .collect::<Result<_, _>>()?;
    let stations: Vec<StationMeta> = serde_json::from_value(meta["stations"].clone())?;
    let f64s = |name: &str| -> Result<&[f64], StoreError> {
        arrays
            .get(name)
            .and_then(Column::as_f64)
            .ok_or_else(|| StoreError::Invalid(format!("missing array {name}")))
    };
    let u64s = |name: &str| -> Result<&[u64], StoreError> {
        arrays
            .get(name)
            .and_then(Column::as_u64)
            .ok_or_else(|| StoreError::Invalid(format!("missing array {name}")))
    };
    let n = states.len();
    let us = |v: &[u64]| v.iter().map(|&x| x as usize).collect::<Vec<usize>>();
    let counts = CsrMatrix::from_raw(
        n,
        n,
        us(u64s("counts_row_ptr")?),
        us(u64s("counts_col")?),
        u64s("counts_val")?.to_vec(),
    )
    .map_err(StoreError::Invalid)?;
    let pi = f64s("pi")?.to_vec();
    let cols = (
        f64s("station_pi")?,
        f64s("station_remoteness")?,
        f64s("station_influence")?,
        f64s("station_fragility")?,
        u64s("station_inflow")?,
        u64s("station_outflow")?,
    );
    let m = stations.len();
    if pi.len() != n
        || [
            cols.0.len(),
            cols.1.len(),
            cols.2.len(),
            cols.3.len(),
            cols.4.len(),
            cols.5.len(),
        ]
        .iter()
        .any(|&l| l != m)
    {
        return Err(bad("array lengths disagree with the header"));
    }
    let stations = stations
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            if s.state_index >= n {
                return Err(bad("station state index out of range"));
            }
            Ok(StationRecord {
                station_id: s.station_id.into(),
                name: s.name,
                lat: s.lat,
                lon: s.lon,
                state_index: s.state_index,
                inflow: cols.4[k],
                outflow: cols.5[k],
                pi: cols.0[k],
                cluster: s.cluster,
                remoteness: cols.1[k],
                influence: cols.2[k],
                fragility: cols.3[k],
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DailySnapshot {
        operation_day: day,
        outcome: Ok(DayResult {
            chain,
            stations,
            states,
            counts,
            pi,
            warnings,
        }),
    })
}

/// Writes `bytes` to `path` through a temporary sibling, so readers never
/// observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

/// A results directory.
#[derive(Debug, Clone)]
pub struct ResultsStore {
    root: PathBuf,
}

impl ResultsStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResultsStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshot_path(&self, day: NaiveDate) -> PathBuf {
        self.root
            .join("snapshots")
            .join(format!("{}.snap", day.format("%Y-%m-%d")))
    }

    pub fn aggregate_path(&self) -> PathBuf {
        self.root.join("aggregate.json")
    }

    pub fn rankings_path(&self, measure: Measure) -> PathBuf {
        self.root.join(format!("rankings_{measure}.csv"))
    }

    pub fn write_snapshot(&self, snapshot: &DailySnapshot) -> Result<PathBuf, StoreError> {
        fs::create_dir_all(self.root.join("snapshots"))?;
        let path = self.snapshot_path(snapshot.operation_day);
        let mut buf = Vec::new();
        encode_snapshot(snapshot, &mut buf)?;
        write_atomic(&path, &buf)?;
        Ok(path)
    }

    pub fn read_snapshot(&self, day: NaiveDate) -> Result<DailySnapshot, StoreError> {
        let path = self.snapshot_path(day);
        let file = fs::File::open(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::Missing(day.to_string()),
            _ => StoreError::Io(e),
        })?;
        let snap = decode_snapshot(io::BufReader::new(file))?;
        if snap.operation_day != day {
            return Err(StoreError::Invalid(format!(
                "{} holds day {}",
                path.display(),
                snap.operation_day
            )));
        }
        Ok(snap)
    }

    /// Chain summary of a day from the snapshot header alone; `Ok(None)`
    /// for a day whose analysis failed.
    pub fn read_chain_summary(&self, day: NaiveDate) -> Result<Option<ChainSummary>, StoreError> {
        let file = fs::File::open(self.snapshot_path(day)).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::Missing(day.to_string()),
            _ => StoreError::Io(e),
        })?;
        let meta = read_container_header(io::BufReader::new(file))?;
        if meta["kind"] != "day" || meta["operation_day"] != day.format("%Y-%m-%d").to_string() {
            return Err(StoreError::Invalid(format!(
                "snapshot for {day} is not a day header"
            )));
        }
        match meta["status"].as_str() {
            Some("ok") => Ok(Some(serde_json::from_value(meta["chain"].clone())?)),
            Some("failed") => Ok(None),
            _ => Err(StoreError::Invalid(format!(
                "snapshot for {day} has no status"
            ))),
        }
    }

    /// Days with a snapshot file, ascending. The files are not opened.
    pub fn list_days(&self) -> Result<Vec<NaiveDate>, StoreError> {
        let dir = self.root.join("snapshots");
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut days = Vec::new();
        for entry in entries {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(day) = name
                .strip_suffix(".snap")
                .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
            {
                days.push(day);
            }
        }
        days.sort();
        Ok(days)
    }

    pub fn write_aggregate(&self, aggregate: &MonthlyAggregate) -> Result<(), StoreError> {
        fs::create_dir_all(&self.root)?;
        let mut bytes = serde_json::to_vec_pretty(aggregate)?;
        bytes.push(b'\n');
        write_atomic(&self.aggregate_path(), &bytes)?;
        for m in [
            Measure::Remoteness,
            Measure::Influence,
            Measure::Fragility,
            Measure::Pi,
        ] {
            let mut buf = Vec::new();
            write_rankings_csv(&rankings(aggregate, m), &mut buf)
                .map_err(|e| StoreError::Invalid(e.to_string()))?;
            write_atomic(&self.rankings_path(m), &buf)?;
        }
        Ok(())
    }

    pub fn read_aggregate(&self) -> Result<MonthlyAggregate, StoreError> {
        let bytes = fs::read(self.aggregate_path()).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::Missing("aggregate".into()),
            _ => StoreError::Io(e),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Per-day status and chain summary.
    pub fn write_summary(&self, snapshots: &[DailySnapshot]) -> Result<(), StoreError> {
        fs::create_dir_all(&self.root)?;
        let days: Vec<Value> = snapshots
            .iter()
            .map(|s| match &s.outcome {
                Ok(r) => json!({"operation_day": s.operation_day, "status": "ok", "chain": r.chain, "warnings": r.warnings.len()}),
                Err(f) => json!({"operation_day": s.operation_day, "status": "failed", "failure": f}),
            })
            .collect();
        let mut bytes = serde_json::to_vec_pretty(&json!({ "days": days }))?;
        bytes.push(b'\n');
        write_atomic(&self.root.join("summary.json"), &bytes)?;
        Ok(())
    }
}

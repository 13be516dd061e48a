//! Trip record ingestion.
//!
//! Two tabular sources are understood:
//!
//! * the canonical trip CSV (`trip_id,operation_day,seq,station_id,
//!   station_name,arrival,departure,mode,passthrough`, comma-separated,
//!   timestamps `YYYY-MM-DDTHH:MM`), which is also what
//!   [`write_canonical_csv`] produces;
//! * the SBB "Ist-Daten" daily export (semicolon-separated, German column
//!   names). Only rows with product `Zug` survive; other modes are counted
//!   in [`ParsedTrips::dropped_non_train`].
//!
//! Timestamps are truncated to the minute. Malformed rows and invalid trips
//! are reported as [`IngestWarning`]s and never abort a parse.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque station key (the SBB feed uses the numeric BPUIC code).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub String);

impl StationId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StationId {
    fn from(s: &str) -> Self {
        StationId(s.to_owned())
    }
}

impl From<String> for StationId {
    fn from(s: String) -> Self {
        StationId(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopEvent {
    pub station_id: StationId,
    pub station_name: String,
    pub arrival: Option<NaiveDateTime>,
    pub departure: Option<NaiveDateTime>,
    /// The vehicle passes the station without halting.
    pub is_passthrough: bool,
}

impl StopEvent {
    /// Earliest recorded time at this stop.
    pub fn first_time(&self) -> Option<NaiveDateTime> {
        self.arrival.or(self.departure)
    }

    /// Latest recorded time at this stop.
    pub fn last_time(&self) -> Option<NaiveDateTime> {
        self.departure.or(self.arrival)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Bus,
    Tram,
    Metro,
    Boat,
    Other(String),
}

impl Mode {
    pub fn as_str(&self) -> &str {
        match self {
            Mode::Train => "train",
            Mode::Bus => "bus",
            Mode::Tram => "tram",
            Mode::Metro => "metro",
            Mode::Boat => "boat",
            Mode::Other(s) => s,
        }
    }

    fn parse_canonical(s: &str) -> Mode {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "train" => Mode::Train,
            "bus" => Mode::Bus,
            "tram" => Mode::Tram,
            "metro" => Mode::Metro,
            "boat" => Mode::Boat,
            other => Mode::Other(other.to_owned()),
        }
    }

    /// `PRODUKT_ID` values of the SBB feed.
    fn parse_sbb(s: &str) -> Mode {
        match s.trim().to_ascii_lowercase().as_str() {
            "zug" => Mode::Train,
            "bus" => Mode::Bus,
            "tram" => Mode::Tram,
            "metro" => Mode::Metro,
            "schiff" => Mode::Boat,
            other => Mode::Other(other.to_owned()),
        }
    }
}

/// One vehicle run within an operation day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub trip_id: String,
    /// Service day; a run past midnight keeps the day it started on.
    pub operation_day: NaiveDate,
    pub stops: Vec<StopEvent>,
    pub mode: Mode,
}

impl Trip {
    /// Checks the per-trip invariants, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.stops.len() < 2 {
            return Err(format!(
                "trip has {} stop(s), need at least 2",
                self.stops.len()
            ));
        }
        let mut last: Option<NaiveDateTime> = None;
        for (k, stop) in self.stops.iter().enumerate() {
            let (first, end) = match (stop.first_time(), stop.last_time()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(format!(
                        "stop {k} ({}) has neither arrival nor departure",
                        stop.station_id
                    ))
                }
            };
            if let (Some(a), Some(d)) = (stop.arrival, stop.departure) {
                if d < a {
                    return Err(format!(
                        "stop {k} ({}) departs {d} before arriving {a}",
                        stop.station_id
                    ));
                }
            }
            if let Some(prev) = last {
                if first < prev {
                    return Err(format!(
                        "stop {k} ({}) at {first} precedes the previous stop at {prev}",
                        stop.station_id
                    ));
                }
            }
            last = Some(end);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    CanonicalCsv,
    SbbIstDatenCsv,
}

impl SourceFormat {
    /// Guesses the format from the first line of a file.
    pub fn detect(header_line: &str) -> SourceFormat {
        if header_line.contains(';') && header_line.to_ascii_uppercase().contains("BETRIEBSTAG") {
            SourceFormat::SbbIstDatenCsv
        } else {
            SourceFormat::CanonicalCsv
        }
    }
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" | "canonical_csv" => Ok(SourceFormat::CanonicalCsv),
            "sbb" | "sbb_ist_daten" | "sbb_ist_daten_csv" => Ok(SourceFormat::SbbIstDatenCsv),
            other => Err(format!("unknown input format {other:?}")),
        }
    }
}

/// Non-fatal problem found while reading or transforming input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarning {
    /// 1-based data row (header excluded), when the problem is row-local.
    pub row: Option<usize>,
    pub trip_id: Option<String>,
    pub message: String,
}

impl IngestWarning {
    pub fn row(row: usize, message: impl Into<String>) -> Self {
        IngestWarning {
            row: Some(row),
            trip_id: None,
            message: message.into(),
        }
    }

    pub fn trip(trip_id: impl Into<String>, message: impl Into<String>) -> Self {
        IngestWarning {
            row: None,
            trip_id: Some(trip_id.into()),
            message: message.into(),
        }
    }
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = self.row {
            write!(f, "row {r}: ")?;
        }
        if let Some(t) = &self.trip_id {
            write!(f, "trip {t}: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable source{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    UnreadableSource { row: Option<usize>, message: String },
    #[error("header lacks required column(s) {missing:?} (found {found:?})")]
    MissingColumns {
        missing: Vec<String>,
        found: Vec<String>,
    },
    #[error("no valid data rows ({rows_read} row(s) read)")]
    EmptyInput { rows_read: usize },
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.record() as usize);
        IngestError::UnreadableSource {
            row,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for IngestError {
    fn from(e: std::io::Error) -> Self {
        IngestError::UnreadableSource {
            row: None,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTrips {
    pub trips: Vec<Trip>,
    pub warnings: Vec<IngestWarning>,
    /// Rows skipped by the train-only filter of the SBB adapter.
    pub dropped_non_train: usize,
}

/// Parses a trip table. See the module docs for the accepted layouts.
pub fn parse_actual_data<R: Read>(
    source: R,
    format: SourceFormat,
) -> Result<ParsedTrips, IngestError> {
    match format {
        SourceFormat::CanonicalCsv => parse_canonical(source),
        SourceFormat::SbbIstDatenCsv => parse_sbb(source),
    }
}

const CANONICAL_HEADER: [&str; 9] = [
    "trip_id",
    "operation_day",
    "seq",
    "station_id",
    "station_name",
    "arrival",
    "departure",
    "mode",
    "passthrough",
];

struct Columns {
    names: Vec<String>,
}

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        Columns {
            names: headers
                .iter()
                .map(|h| h.trim().trim_start_matches('\u{feff}').to_owned())
                .collect(),
        }
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|h| h.eq_ignore_ascii_case(name))
    }

    fn require(&self, required: &[&str]) -> Result<Vec<usize>, IngestError> {
        let missing: Vec<String> = required
            .iter()
            .filter(|c| self.find(c).is_none())
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(IngestError::MissingColumns {
                missing,
                found: self.names.clone(),
            });
        }
        Ok(required
            .iter()
            .map(|c| self.find(c).expect("checked above"))
            .collect())
    }
}

fn field<'r>(record: &'r csv::StringRecord, col: Option<usize>) -> &'r str {
    col.and_then(|c| record.get(c)).map(str::trim).unwrap_or("")
}

/// Truncates to whole minutes.
fn truncate_minute(t: NaiveDateTime) -> NaiveDateTime {
    t.with_second(0)
        .and_then(|t| t.with_nanosecond(0))
        .expect("second 0 is always valid")
}

fn parse_iso_timestamp(s: &str) -> Result<Option<NaiveDateTime>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| Some(truncate_minute(t)))
        .ok_or_else(|| format!("bad timestamp {s:?}"))
}

fn parse_sbb_timestamp(s: &str) -> Result<Option<NaiveDateTime>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    const FORMATS: [&str; 4] = [
        "%d.%m.%Y %H:%M",
        "%d.%m.%Y %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| Some(truncate_minute(t)))
        .ok_or_else(|| format!("bad timestamp {s:?}"))
}

fn parse_day(s: &str) -> Result<NaiveDate, String> {
    ["%Y-%m-%d", "%d.%m.%Y"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
        .ok_or_else(|| format!("bad operation day {s:?}"))
}

fn parse_flag(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "f" | "no" => Ok(false),
        "1" | "true" | "t" | "yes" => Ok(true),
        other => Err(format!("bad boolean {other:?}")),
    }
}

/// Rows collected for one `(trip_id, operation_day)` key, ordered by
/// sequence number.
#[derive(Default)]
struct TripRows {
    first_row: usize,
    mode: Option<Mode>,
    stops: BTreeMap<i64, StopEvent>,
}

type TripKey = (String, NaiveDate);

fn finish_trips(
    groups: HashMap<TripKey, TripRows>,
    warnings: &mut Vec<IngestWarning>,
) -> Vec<Trip> {
    let mut groups: Vec<(TripKey, TripRows)> = groups.into_iter().collect();
    groups.sort_by_key(|(_, rows)| rows.first_row);
    let mut trips = Vec::with_capacity(groups.len());
    for ((trip_id, operation_day), rows) in groups {
        let trip = Trip {
            trip_id,
            operation_day,
            stops: rows.stops.into_values().collect(),
            mode: rows.mode.unwrap_or(Mode::Train),
        };
        match trip.validate() {
            Ok(()) => trips.push(trip),
            Err(why) => warnings.push(IngestWarning::trip(
                trip.trip_id.clone(),
                format!("excluded: {why}"),
            )),
        }
    }
    trips
}

fn parse_canonical<R: Read>(source: R) -> Result<ParsedTrips, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let cols = Columns::new(reader.headers()?);
    let req = cols.require(&[
        "trip_id",
        "operation_day",
        "seq",
        "station_id",
        "arrival",
        "departure",
    ])?;
    let (c_trip, c_day, c_seq, c_station, c_arr, c_dep) =
        (req[0], req[1], req[2], req[3], req[4], req[5]);
    let c_name = cols.find("station_name");
    let c_mode = cols.find("mode");
    let c_pass = cols.find("passthrough");

    let mut warnings = Vec::new();
    let mut groups: HashMap<TripKey, TripRows> = HashMap::new();
    let mut rows_read = 0usize;
    let mut valid_rows = 0usize;
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        rows_read += 1;
        let parsed = (|| -> Result<(TripKey, i64, StopEvent, Mode), String> {
            let trip_id = field(&rec, Some(c_trip));
            if trip_id.is_empty() {
                return Err("empty trip_id".into());
            }
            let station = field(&rec, Some(c_station));
            if station.is_empty() {
                return Err("empty station_id".into());
            }
            let day = parse_day(field(&rec, Some(c_day)))?;
            let seq: i64 = field(&rec, Some(c_seq))
                .parse()
                .map_err(|_| format!("bad seq {:?}", field(&rec, Some(c_seq))))?;
            let arrival = parse_iso_timestamp(field(&rec, Some(c_arr)))?;
            let departure = parse_iso_timestamp(field(&rec, Some(c_dep)))?;
            if arrival.is_none() && departure.is_none() {
                return Err("neither arrival nor departure".into());
            }
            let name = field(&rec, c_name);
            let stop = StopEvent {
                station_id: StationId::from(station),
                station_name: if name.is_empty() {
                    station.to_owned()
                } else {
                    name.to_owned()
                },
                arrival,
                departure,
                is_passthrough: parse_flag(field(&rec, c_pass))?,
            };
            Ok((
                (trip_id.to_owned(), day),
                seq,
                stop,
                Mode::parse_canonical(field(&rec, c_mode)),
            ))
        })();
        match parsed {
            Ok((key, seq, stop, mode)) => {
                valid_rows += 1;
                let entry = groups.entry(key.clone()).or_insert_with(|| TripRows {
                    first_row: row,
                    ..TripRows::default()
                });
                entry.mode.get_or_insert(mode);
                if entry.stops.insert(seq, stop).is_some() {
                    warnings.push(IngestWarning {
                        row: Some(row),
                        trip_id: Some(key.0),
                        message: format!("duplicate seq {seq}; keeping the later row"),
                    });
                }
            }
            Err(msg) => warnings.push(IngestWarning::row(row, msg)),
        }
    }
    if valid_rows == 0 {
        return Err(IngestError::EmptyInput { rows_read });
    }
    let trips = finish_trips(groups, &mut warnings);
    Ok(ParsedTrips {
        trips,
        warnings,
        dropped_non_train: 0,
    })
}

/// Picks the observed time of an SBB event: the prognosis column holds the
/// measured time when its status is `REAL`, otherwise a forecast or
/// estimate, which is still preferred over the scheduled time.
fn sbb_event_time(scheduled: &str, observed: &str) -> Result<Option<NaiveDateTime>, String> {
    match parse_sbb_timestamp(observed)? {
        Some(t) => Ok(Some(t)),
        None => parse_sbb_timestamp(scheduled),
    }
}

fn parse_sbb<R: Read>(source: R) -> Result<ParsedTrips, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .flexible(true)
        .from_reader(source);
    let cols = Columns::new(reader.headers()?);
    let req = cols.require(&[
        "BETRIEBSTAG",
        "FAHRT_BEZEICHNER",
        "PRODUKT_ID",
        "BPUIC",
        "ANKUNFTSZEIT",
        "ABFAHRTSZEIT",
    ])?;
    let (c_day, c_trip, c_product, c_station, c_arr, c_dep) =
        (req[0], req[1], req[2], req[3], req[4], req[5]);
    let c_name = cols.find("HALTESTELLEN_NAME");
    let c_arr_obs = cols.find("AN_PROGNOSE");
    let c_dep_obs = cols.find("AB_PROGNOSE");
    let c_pass = cols.find("DURCHFAHRT_TF");
    let c_cancel = cols.find("FAELLT_AUS_TF");

    let mut warnings = Vec::new();
    let mut groups: HashMap<TripKey, TripRows> = HashMap::new();
    let mut rows_read = 0usize;
    let mut valid_rows = 0usize;
    let mut dropped_non_train = 0usize;
    let mut cancelled = 0usize;
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        rows_read += 1;
        let mode = Mode::parse_sbb(field(&rec, Some(c_product)));
        if mode != Mode::Train {
            dropped_non_train += 1;
            continue;
        }
        match parse_flag(field(&rec, c_cancel)) {
            Ok(true) => {
                cancelled += 1;
                continue;
            }
            Ok(false) => {}
            Err(msg) => {
                warnings.push(IngestWarning::row(row, msg));
                continue;
            }
        }
        let parsed = (|| -> Result<(TripKey, StopEvent), String> {
            let trip_id = field(&rec, Some(c_trip));
            let station = field(&rec, Some(c_station));
            if trip_id.is_empty() || station.is_empty() {
                return Err("empty FAHRT_BEZEICHNER or BPUIC".into());
            }
            let day = parse_day(field(&rec, Some(c_day)))?;
            let arrival = sbb_event_time(field(&rec, Some(c_arr)), field(&rec, c_arr_obs))?;
            let departure = sbb_event_time(field(&rec, Some(c_dep)), field(&rec, c_dep_obs))?;
            if arrival.is_none() && departure.is_none() {
                return Err("neither arrival nor departure".into());
            }
            let name = field(&rec, c_name);
            Ok((
                (trip_id.to_owned(), day),
                StopEvent {
                    station_id: StationId::from(station),
                    station_name: if name.is_empty() {
                        station.to_owned()
                    } else {
                        name.to_owned()
                    },
                    arrival,
                    departure,
                    is_passthrough: parse_flag(field(&rec, c_pass))?,
                },
            ))
        })();
        match parsed {
            Ok((key, stop)) => {
                valid_rows += 1;
                let entry = groups.entry(key.clone()).or_insert_with(|| TripRows {
                    first_row: row,
                    mode: Some(Mode::Train),
                    ..TripRows::default()
                });
                // The feed has no sequence column: rows are in stop order, and
                // a repeated row for the stop just read replaces it.
                let last = entry
                    .stops
                    .last_key_value()
                    .map(|(&seq, s)| (seq, s.station_id == stop.station_id));
                match last {
                    Some((seq, true)) => {
                        entry.stops.insert(seq, stop);
                        warnings.push(IngestWarning {
                            row: Some(row),
                            trip_id: Some(key.0),
                            message: "duplicate stop row; keeping the later row".into(),
                        });
                    }
                    Some((seq, false)) => {
                        entry.stops.insert(seq + 1, stop);
                    }
                    None => {
                        entry.stops.insert(0, stop);
                    }
                }
            }
            Err(msg) => warnings.push(IngestWarning::row(row, msg)),
        }
    }
    if cancelled > 0 {
        warnings.push(IngestWarning {
            row: None,
            trip_id: None,
            message: format!("{cancelled} cancelled stop row(s) skipped"),
        });
    }
    if valid_rows == 0 {
        return Err(IngestError::EmptyInput { rows_read });
    }
    let trips = finish_trips(groups, &mut warnings);
    Ok(ParsedTrips {
        trips,
        warnings,
        dropped_non_train,
    })
}

fn format_timestamp(t: Option<NaiveDateTime>) -> String {
    use chrono::Timelike;
    t.map(|t| {
        let f = if t.second() == 0 {
            "%Y-%m-%dT%H:%M"
        } else {
            "%Y-%m-%dT%H:%M:%S"
        };
        t.format(f).to_string()
    })
    .unwrap_or_default()
}

/// Serializes trips as canonical CSV. Parsing the output with
/// [`SourceFormat::CanonicalCsv`] yields the same trips.
pub fn write_canonical_csv<W: Write>(trips: &[Trip], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CANONICAL_HEADER)?;
    for trip in trips {
        let day = trip.operation_day.format("%Y-%m-%d").to_string();
        for (seq, stop) in trip.stops.iter().enumerate() {
            w.write_record([
                trip.trip_id.as_str(),
                day.as_str(),
                &seq.to_string(),
                stop.station_id.as_str(),
                stop.station_name.as_str(),
                &format_timestamp(stop.arrival),
                &format_timestamp(stop.departure),
                trip.mode.as_str(),
                if stop.is_passthrough { "true" } else { "false" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Buckets trips by their operation day (never by the calendar day of
/// individual stops).
pub fn group_by_operation_day(trips: Vec<Trip>) -> BTreeMap<NaiveDate, Vec<Trip>> {
    let mut days: BTreeMap<NaiveDate, Vec<Trip>> = BTreeMap::new();
    for trip in trips {
        days.entry(trip.operation_day).or_default().push(trip);
    }
    days
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInfo {
    pub name: String,
    /// WGS84 degrees.
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

impl StationInfo {
    pub fn has_coordinates(&self) -> bool {
        self.lat.is_some() && self.lon.is_some()
    }
}

/// Station names and coordinates keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StationDirectory {
    stations: BTreeMap<StationId, StationInfo>,
}

impl StationDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts unless the id is already present; returns whether it was new.
    pub fn insert(&mut self, id: StationId, info: StationInfo) -> bool {
        use std::collections::btree_map::Entry;
        match self.stations.entry(id) {
            Entry::Vacant(v) => {
                v.insert(info);
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    pub fn get(&self, id: &StationId) -> Option<&StationInfo> {
        self.stations.get(id)
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StationId, &StationInfo)> {
        self.stations.iter()
    }

    /// Stations referenced by `trips` that lack an entry or coordinates.
    pub fn missing_coordinates(&self, trips: &[Trip]) -> Vec<StationId> {
        let mut missing: Vec<StationId> = trips
            .iter()
            .flat_map(|t| t.stops.iter())
            .filter(|s| {
                !self
                    .get(&s.station_id)
                    .is_some_and(StationInfo::has_coordinates)
            })
            .map(|s| s.station_id.clone())
            .collect();
        missing.sort();
        missing.dedup();
        missing
    }

    /// Adds entries (without coordinates) for stations only known from trips.
    pub fn fill_from_trips(&mut self, trips: &[Trip]) {
        for stop in trips.iter().flat_map(|t| t.stops.iter()) {
            self.insert(
                stop.station_id.clone(),
                StationInfo {
                    name: stop.station_name.clone(),
                    lat: None,
                    lon: None,
                },
            );
        }
    }
}

/// Reads a `station_id,name,lat,lon` table. Duplicate ids keep the first
/// occurrence and produce a warning; unparsable coordinates are recorded
/// as missing.
pub fn load_station_directory<R: Read>(
    source: R,
) -> Result<(StationDirectory, Vec<IngestWarning>), IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let cols = Columns::new(reader.headers()?);
    let req = cols.require(&["station_id", "name", "lat", "lon"])?;
    let mut directory = StationDirectory::new();
    let mut warnings = Vec::new();
    let mut rows_read = 0;
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        rows_read += 1;
        let id = field(&rec, Some(req[0]));
        if id.is_empty() {
            warnings.push(IngestWarning::row(row, "empty station_id"));
            continue;
        }
        let coord = |c: usize, lo: f64, hi: f64| -> Option<f64> {
            field(&rec, Some(c))
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && (lo..=hi).contains(v))
        };
        let (lat, lon) = (coord(req[2], -90.0, 90.0), coord(req[3], -180.0, 180.0));
        if lat.is_none() || lon.is_none() {
            warnings.push(IngestWarning::row(
                row,
                format!("station {id} has missing or invalid coordinates"),
            ));
        }
        let name = field(&rec, Some(req[1]));
        let info = StationInfo {
            name: if name.is_empty() {
                id.to_owned()
            } else {
                name.to_owned()
            },
            lat,
            lon,
        };
        if !directory.insert(StationId::from(id), info) {
            warnings.push(IngestWarning::row(
                row,
                format!("duplicate station_id {id}; keeping the first row"),
            ));
        }
    }
    if directory.is_empty() {
        return Err(IngestError::EmptyInput { rows_read });
    }
    Ok((directory, warnings))
}

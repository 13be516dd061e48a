//! Run configuration: command-line flags over a flat `key = value` file over
//! built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use stationrank::trajectory::Step;

use crate::error::CliError;

/// Keys accepted in a config file. They match the long flag names.
pub const KEYS: &[&str] = &[
    "input",
    "stations",
    "from",
    "to",
    "step-minutes",
    "t",
    "gamma",
    "jobs",
    "out",
    "top",
    "addr",
    "static",
    "workers",
];

pub const FILE_HELP: &str = "\
CONFIG FILE
  --config FILE reads one `key = value` pair per line. Blank lines and lines
  starting with '#' are ignored; keys are the long flag names without the
  dashes (step-minutes, t, gamma, jobs, out, input, stations, from, to, top,
  addr, static, workers; `_` may stand for `-`). Flags given on the command
  line win over the file, the file wins over the defaults.

EXIT STATUS
  0 success, 1 some days failed, 2 fatal error (a JSON error object is
  written to stderr).";

/// Values parsed from a config file, keyed by canonical flag name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileValues(pub BTreeMap<String, String>);

impl FileValues {
    pub fn parse(text: &str, origin: &Path) -> Result<FileValues, CliError> {
        let mut values = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad =
                |what: &str| CliError::config(format!("{}:{}: {what}", origin.display(), no + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(bad(&format!("unknown key {key:?}")));
            }
            let value = value.trim().trim_matches('"').to_string();
            values.insert(key, value);
        }
        Ok(FileValues(values))
    }

    pub fn load(path: &Path) -> Result<FileValues, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// The file's value for `key`, parsed.
    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::config(format!("config value {key} = {v:?}: {e}")))
            })
            .transpose()
    }
}

/// Flag values as given; `None` when absent.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub step_minutes: Option<f64>,
    pub t: Option<f64>,
    pub gamma: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub step: Step,
    pub t: f64,
    pub gamma: f64,
    /// Days analysed at once; 0 means one per core.
    pub jobs: usize,
    /// Results directory.
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(flags: &Overrides, file: &FileValues) -> Result<RunConfig, CliError> {
        let step_minutes = pick(flags.step_minutes, file.get("step-minutes")?, 1.0);
        let step = step_from_minutes(step_minutes)?;
        let config = RunConfig {
            input: flags.input.clone().or(file.get("input")?),
            stations: flags.stations.clone().or(file.get("stations")?),
            from: flags.from.or(file.get("from")?),
            to: flags.to.or(file.get("to")?),
            step,
            t: pick(flags.t, file.get("t")?, 0.95),
            gamma: pick(
                flags.gamma,
                file.get("gamma")?,
                stationrank::risk::DEFAULT_GAMMA,
            ),
            jobs: pick(flags.jobs, file.get("jobs")?, 0),
            out: pick(
                flags.out.clone(),
                file.get("out")?,
                PathBuf::from("results"),
            ),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if let (Some(a), Some(b)) = (self.from, self.to) {
            if a > b {
                return Err(CliError::config(format!("empty date range {a} .. {b}")));
            }
        }
        if !(self.t.is_finite() && self.t > 0.0 && self.t <= 1.0) {
            return Err(CliError::config(format!(
                "t must lie in (0, 1], got {}",
                self.t
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(CliError::config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.from.is_none_or(|f| day >= f) && self.to.is_none_or(|t| day <= t)
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn step_from_minutes(minutes: f64) -> Result<Step, CliError> {
    let seconds = minutes * 60.0;
    if !(seconds.is_finite() && seconds >= 1.0 && seconds <= f64::from(u32::MAX))
        || seconds.fract() != 0.0
    {
        return Err(CliError::config(format!(
            "step-minutes {minutes} is not a whole number of seconds"
        )));
    }
    Step::from_seconds(seconds as u32).map_err(|e| CliError::config(e.to_string()))
}

/// Settings of `serve`, resolved the same way.
pub fn serve_settings(
    addr: Option<SocketAddr>,
    static_dir: Option<PathBuf>,
    workers: Option<usize>,
    file: &FileValues,
) -> Result<(SocketAddr, Option<PathBuf>, usize), CliError> {
    let default_addr: SocketAddr = "127.0.0.1:8080".parse().expect("valid address");
    Ok((
        pick(addr, file.get("addr")?, default_addr),
        static_dir.or(file.get("static")?),
        pick(workers, file.get("workers")?, 2),
    ))
}

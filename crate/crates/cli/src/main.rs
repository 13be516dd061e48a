//! `stationrank`: batch analysis of actual railway trip data.

mod commands;
mod config;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use stationrank::aggregate::Measure;
use stationrank_service::ServiceConfig;

use commands::Status;
use config::{FileValues, Overrides, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "stationrank", version, about = "Markov-chain analysis of railway operations", after_help = config::FILE_HELP)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat key = value file with defaults for the flags below.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Trip CSV file, or a directory of them (canonical or SBB actual-data format).
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Station directory CSV with station_id, name, lat, lon.
    #[arg(long, global = true, value_name = "FILE")]
    stations: Option<PathBuf>,
    /// First operation day (inclusive).
    #[arg(long, global = true, value_name = "YYYY-MM-DD")]
    from: Option<NaiveDate>,
    /// Last operation day (inclusive).
    #[arg(long, global = true, value_name = "YYYY-MM-DD")]
    to: Option<NaiveDate>,
    /// Discretization step in minutes [default: 1].
    #[arg(long, global = true, value_name = "MIN")]
    step_minutes: Option<f64>,
    /// Disruption intensity in (0, 1] [default: 0.95].
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Relative-change threshold of the risk scores [default: 0.05].
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Days analysed concurrently, 0 for one per core [default: 0].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Results directory [default: results].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analyse every day in range and write snapshots, aggregate and rankings.
    Analyze,
    /// Disrupt one station on one day; writes JSON and GeoJSON.
    Disrupt {
        #[arg(long)]
        station: String,
        #[arg(long, value_name = "YYYY-MM-DD")]
        day: NaiveDate,
    },
    /// Print the highest and lowest monthly medians of a measure.
    Rank {
        /// remoteness, influence, fragility, pi, inflow, outflow or cluster.
        #[arg(long, default_value = "influence")]
        measure: Measure,
        /// Rows per table [default: 10].
        #[arg(long)]
        top: Option<usize>,
    },
    /// Serve the results directory over HTTP.
    Serve {
        /// Listen address [default: 127.0.0.1:8080].
        #[arg(long)]
        addr: Option<SocketAddr>,
        /// Built web UI bundle to serve under /.
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
        /// Concurrent on-demand disruptions [default: 2].
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<Status, CliError> {
    let c = cli.common;
    let file = match &c.config {
        Some(path) => FileValues::load(path)?,
        None => FileValues::default(),
    };
    let flags = Overrides {
        input: c.input,
        stations: c.stations,
        from: c.from,
        to: c.to,
        step_minutes: c.step_minutes,
        t: c.t,
        gamma: c.gamma,
        jobs: c.jobs,
        out: c.out,
    };
    let cfg = RunConfig::resolve(&flags, &file)?;
    let stdout = &mut std::io::stdout().lock();
    match cli.command {
        Command::Analyze => commands::analyze(&cfg, stdout),
        Command::Disrupt { station, day } => commands::disrupt(&cfg, &station, day, stdout),
        Command::Rank { measure, top } => {
            let top = match top {
                Some(n) => n,
                None => file.get("top")?.unwrap_or(10),
            };
            commands::rank(&cfg, measure, top, stdout)
        }
        Command::Serve {
            addr,
            static_dir,
            workers,
        } => {
            let (addr, static_dir, workers) =
                config::serve_settings(addr, static_dir, workers, &file)?;
            let service = ServiceConfig {
                results: cfg.out.clone(),
                static_dir,
                workers,
                ..ServiceConfig::default()
            };
            stationrank_service::run(addr, service)
                .map_err(|e| CliError::new("ServeFailure", e.to_string()))?;
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}

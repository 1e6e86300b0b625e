//! Per-run files: the effective config, trip and sample CSVs, and a small
//! JSON summary of counters the CSVs do not carry.

use std::fs;
use std::path::Path;

use anyhow::Context;
use braess_core::metrics::{MetricsLog, Sample, TripRecord};
use braess_core::network::build_grid;
use braess_core::simulation::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const TRIPS_FILE: &str = "trips.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.json";
/// Written last, so its presence marks a finished run.
pub const CONFIG_FILE: &str = "config.toml";
pub const ABORT_FILE: &str = "abort.txt";

/// Column prefix of per-element occupancy in the samples CSV.
pub const OCCUPANCY_PREFIX: &str = "occ_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub arrived: u64,
    pub deferred: u64,
    pub deferral_events: u64,
    pub completed: u64,
    pub total_lane_length_m: f64,
}

/// Parses and validates a run config, including the network it describes.
pub fn parse_config(text: &str) -> CliResult<SimConfig> {
    let config: SimConfig =
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
    config
        .validate()
        .map_err(|e| CliError::usage(format!("config: {e}")))?;
    build_grid(&config.grid_spec()).map_err(|e| CliError::usage(format!("config: {e}")))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> CliResult<SimConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Usage)?;
    parse_config(&text)
}

pub fn config_toml(config: &SimConfig) -> String {
    toml::to_string(config).expect("configs always serialize")
}

/// SHA-256 of the serialized config, hex encoded.
pub fn config_hash(config: &SimConfig) -> String {
    hex::encode(Sha256::digest(config_toml(config).as_bytes()))
}

pub fn write_trips(path: &Path, trips: &[TripRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in trips {
        w.serialize(t)?;
    }
    // An empty log still gets its header row.
    if trips.is_empty() {
        w.write_record([
            "vehicle_id",
            "route_id",
            "entry_time",
            "exit_time",
            "travel_time",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trips(path: &Path) -> CliResult<Vec<TripRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_samples(path: &Path, element_names: &[String], samples: &[Sample]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["clock".to_string(), "active_count".to_string()];
    header.extend(
        element_names
            .iter()
            .map(|n| format!("{OCCUPANCY_PREFIX}{n}")),
    );
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for s in samples {
        row.clear();
        row.push(s.clock.to_string());
        row.push(s.active_count.to_string());
        row.extend(s.occupancy.iter().map(|n| n.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Element names (from the header) and samples.
pub fn read_samples(path: &Path) -> CliResult<(Vec<String>, Vec<Sample>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let names: Vec<String> = header
        .iter()
        .skip(2)
        .map(|h| h.strip_prefix(OCCUPANCY_PREFIX).unwrap_or(h).to_string())
        .collect();
    let bad = |what: &str| CliError::usage(format!("{}: malformed {what}", path.display()));
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let mut fields = record.iter();
        let clock = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("clock"))?;
        let active_count = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("active_count"))?;
        let occupancy = fields
            .map(|f| f.parse().map_err(|_| bad("occupancy")))
            .collect::<CliResult<Vec<u32>>>()?;
        samples.push(Sample {
            clock,
            active_count,
            occupancy,
        });
    }
    Ok((names, samples))
}

/// Writes every run file into `dir`, the config last.
pub fn write_run(dir: &Path, log: &MetricsLog) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join(CONFIG_FILE));
    write_trips(&dir.join(TRIPS_FILE), &log.trips)?;
    write_samples(&dir.join(SAMPLES_FILE), &log.element_names, &log.samples)?;
    let summary = RunSummary {
        arrived: log.arrived,
        deferred: log.deferred,
        deferral_events: log.deferral_events,
        completed: log.trips.len() as u64,
        total_lane_length_m: log.total_lane_length_m,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
    fs::write(dir.join(CONFIG_FILE), config_toml(&log.config))?;
    Ok(())
}

/// Reads a finished run back into a log.
pub fn load_run(dir: &Path) -> CliResult<MetricsLog> {
    let config = load_config(&dir.join(CONFIG_FILE))?;
    let summary_path = dir.join(SUMMARY_FILE);
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(&summary_path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", summary_path.display())))?;
    let trips = read_trips(&dir.join(TRIPS_FILE))?;
    let (element_names, samples) = read_samples(&dir.join(SAMPLES_FILE))?;
    Ok(MetricsLog {
        trips,
        samples,
        element_names,
        total_lane_length_m: summary.total_lane_length_m,
        warmup: config.warmup,
        horizon: config.horizon,
        dt: config.dt,
        arrived: summary.arrived,
        deferred: summary.deferred,
        deferral_events: summary.deferral_events,
        config,
    })
}

//! Cartesian sweeps over the run parameters, with a resumable on-disk
//! layout: each run lives in `runs/<config hash>/` and counts as done once
//! its `config.toml` exists and matches.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use braess_core::network::Variant;
use braess_core::simulation::{run, ArrivalProcess, SimConfig, SimError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::{self, ABORT_FILE, CONFIG_FILE};
use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variants: Vec<Variant>,
    /// Arrival rate at each inflow node.
    pub demands_veh_per_hr: Vec<f64>,
    pub edge_lengths_m: Vec<f64>,
    pub base_speed_limits_mps: Vec<f64>,
    #[serde(default = "default_added_limit")]
    pub added_path_speed_limit_mps: f64,
    #[serde(default = "default_inflow_sets")]
    pub inflow_sets: Vec<Vec<String>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub arrival_process: ArrivalProcess,
    pub dt_s: Option<f64>,
    pub horizon_s: Option<f64>,
    pub warmup_s: Option<f64>,
    pub reroute_enabled: Option<bool>,
}

fn default_added_limit() -> f64 {
    35.0
}
fn default_inflow_sets() -> Vec<Vec<String>> {
    vec![vec!["A".to_string()]]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub inflow_set: Vec<String>,
    pub demand: f64,
    pub seed: u64,
    pub config: SimConfig,
}

impl SweepSpec {
    pub fn parse(text: &str) -> CliResult<Self> {
        let spec: SweepSpec =
            toml::from_str(text).map_err(|e| CliError::usage(format!("sweep spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        let lists = [
            ("variants", self.variants.is_empty()),
            ("demands_veh_per_hr", self.demands_veh_per_hr.is_empty()),
            ("edge_lengths_m", self.edge_lengths_m.is_empty()),
            (
                "base_speed_limits_mps",
                self.base_speed_limits_mps.is_empty(),
            ),
            ("inflow_sets", self.inflow_sets.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((field, _)) = lists.iter().find(|(_, empty)| *empty) {
            return Err(CliError::usage(format!(
                "sweep spec: `{field}` must not be empty"
            )));
        }
        if let Some(i) = self.inflow_sets.iter().position(|s| s.is_empty()) {
            return Err(CliError::usage(format!(
                "sweep spec: `inflow_sets[{i}]` must not be empty"
            )));
        }
        for cell in self.cells() {
            output::parse_config(&output::config_toml(&cell.config))
                .map_err(|e| CliError::usage(format!("sweep spec: {e}")))?;
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.inflow_sets.len()
            * self.base_speed_limits_mps.len()
            * self.edge_lengths_m.len()
            * self.variants.len()
            * self.demands_veh_per_hr.len()
            * self.seeds.len()
    }

    /// Every cell, ordered by inflow set, limit, length, variant, demand
    /// and seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::with_capacity(self.cell_count());
        for set in &self.inflow_sets {
            let nodes: Vec<&str> = set.iter().map(String::as_str).collect();
            for &limit in &self.base_speed_limits_mps {
                for &length in &self.edge_lengths_m {
                    for &variant in &self.variants {
                        for &demand in &self.demands_veh_per_hr {
                            for &seed in &self.seeds {
                                let mut config =
                                    SimConfig::grid(variant, length, limit, &nodes, demand, seed);
                                config.network.added_path_speed_limit =
                                    self.added_path_speed_limit_mps;
                                config.demand.arrival_process = self.arrival_process;
                                config.dt = self.dt_s.unwrap_or(config.dt);
                                config.horizon = self.horizon_s.unwrap_or(config.horizon);
                                config.warmup = self.warmup_s.unwrap_or(config.warmup);
                                config.reroute_enabled = self.reroute_enabled.unwrap_or(false);
                                cells.push(Cell {
                                    inflow_set: set.clone(),
                                    demand,
                                    seed,
                                    config,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hash: String,
    /// Run directory, relative to the manifest.
    pub dir: String,
    pub variant: Variant,
    pub inflow_set: Vec<String>,
    pub edge_length_m: f64,
    pub base_speed_limit_mps: f64,
    pub added_path_speed_limit_mps: f64,
    pub demand_veh_per_hr: f64,
    pub seed: u64,
    pub status: RunStatus,
    /// Zero when an earlier sweep already produced the run.
    pub wall_time_s: f64,
    pub reused: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SweepSpec,
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn failed(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed)
    }
}

/// Whether `dir` holds a finished run of exactly `config`.
pub fn is_complete(dir: &Path, config: &SimConfig) -> bool {
    fs::read_to_string(dir.join(CONFIG_FILE)).is_ok_and(|text| text == output::config_toml(config))
}

struct Outcome {
    wall_time: f64,
    reused: bool,
    error: Option<String>,
}

fn execute(dir: &Path, config: &SimConfig) -> CliResult<Outcome> {
    if is_complete(dir, config) {
        return Ok(Outcome {
            wall_time: 0.0,
            reused: true,
            error: None,
        });
    }
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join(ABORT_FILE));
    let start = Instant::now();
    let result = run(config);
    let wall_time = start.elapsed().as_secs_f64();
    match result {
        Ok(log) => {
            output::write_run(dir, &log)?;
            Ok(Outcome {
                wall_time,
                reused: false,
                error: None,
            })
        }
        Err(e) => {
            write_abort(dir, &e)?;
            Ok(Outcome {
                wall_time,
                reused: false,
                error: Some(e.to_string()),
            })
        }
    }
}

/// Records why a run stopped, with the vehicle dump for collisions.
pub fn write_abort(dir: &Path, e: &SimError) -> CliResult<()> {
    let mut text = format!("{e}\n");
    if let SimError::Collision { dump, .. } = e {
        text.push('\n');
        text.push_str(dump);
    }
    fs::write(dir.join(ABORT_FILE), text)?;
    Ok(())
}

/// Runs every cell of `spec` under `out`, at most `parallelism` at a time,
/// then writes the manifest.
pub fn run_sweep(spec: &SweepSpec, out: &Path, parallelism: usize) -> CliResult<Manifest> {
    spec.validate()?;
    let cells = spec.cells();
    let runs_dir = out.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir)?;

    let hashes: Vec<String> = cells
        .iter()
        .map(|c| output::config_hash(&c.config))
        .collect();
    // Duplicate cells share one run directory; execute each hash once.
    let mut unique: Vec<usize> = (0..cells.len()).collect();
    unique.sort_by(|&a, &b| hashes[a].cmp(&hashes[b]));
    unique.dedup_by(|a, b| hashes[*a] == hashes[*b]);
    let done = unique
        .iter()
        .filter(|&&i| is_complete(&runs_dir.join(&hashes[i]), &cells[i].config))
        .count();
    eprintln!(
        "sweep: {} cells, {} distinct runs, {} already complete",
        cells.len(),
        unique.len(),
        done
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    let outcomes: BTreeMap<String, Outcome> = pool.install(|| {
        unique
            .par_iter()
            .map(|&i| {
                execute(&runs_dir.join(&hashes[i]), &cells[i].config)
                    .map(|o| (hashes[i].clone(), o))
            })
            .collect::<CliResult<_>>()
    })?;

    let runs = cells
        .iter()
        .zip(&hashes)
        .map(|(cell, hash)| {
            let outcome = &outcomes[hash];
            ManifestEntry {
                hash: hash.clone(),
                dir: PathBuf::from(RUNS_DIR)
                    .join(hash)
                    .to_string_lossy()
                    .into_owned(),
                variant: cell.config.network.variant,
                inflow_set: cell.inflow_set.clone(),
                edge_length_m: cell.config.network.edge_length,
                base_speed_limit_mps: cell.config.network.base_speed_limit,
                added_path_speed_limit_mps: cell.config.network.added_path_speed_limit,
                demand_veh_per_hr: cell.demand,
                seed: cell.seed,
                status: if outcome.error.is_none() {
                    RunStatus::Complete
                } else {
                    RunStatus::Failed
                },
                wall_time_s: outcome.wall_time,
                reused: outcome.reused,
                error: outcome.error.clone(),
            }
        })
        .collect();
    let manifest = Manifest {
        spec: spec.clone(),
        runs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(out.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

//! Plot-ready tables computed from a finished sweep.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use braess_core::metrics::{
    find_critical_point, fit_critical_line, CriticalPoint, FlowDensityPoint, MetricsLog,
};
use braess_core::network::{build_grid, Variant};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::output;
use crate::sweep::{Manifest, ManifestEntry, RunStatus};
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Analysis {
    FlowVsDemand,
    TtVsDemand,
    RouteShares,
    FlowDensity,
    CriticalPoints,
}

/// Everything the analyses need from one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDigest {
    pub output_flow: f64,
    pub mean_travel_time: Option<f64>,
    /// Flow per route, including unused routes at zero.
    pub route_flows: BTreeMap<String, f64>,
    pub route_shares: BTreeMap<String, f64>,
    pub flow_density: Vec<FlowDensityPoint>,
}

impl RunDigest {
    pub fn new(log: &MetricsLog, bin: f64) -> CliResult<Self> {
        let net =
            build_grid(&log.config.grid_spec()).map_err(|e| CliError::usage(e.to_string()))?;
        let mut route_flows: BTreeMap<String, f64> =
            net.routes.iter().map(|r| (r.id.clone(), 0.0)).collect();
        let mut route_shares = route_flows.clone();
        route_flows.extend(log.route_flows());
        route_shares.extend(log.route_shares());
        Ok(RunDigest {
            output_flow: log.output_flow(),
            mean_travel_time: log.mean_travel_time(),
            route_flows,
            route_shares,
            flow_density: log.flow_density_curve(bin),
        })
    }
}

/// Sweep conditions shared by every table.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
struct Condition {
    inflow_set: String,
    base_speed_limit_mps: f64,
    added_path_speed_limit_mps: f64,
    edge_length_m: f64,
    variant: Variant,
    demand_veh_per_hr: f64,
}

impl Condition {
    fn of(run: &ManifestEntry) -> Self {
        Condition {
            inflow_set: run.inflow_set.join("+"),
            base_speed_limit_mps: run.base_speed_limit_mps,
            added_path_speed_limit_mps: run.added_path_speed_limit_mps,
            edge_length_m: run.edge_length_m,
            variant: run.variant,
            demand_veh_per_hr: run.demand_veh_per_hr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub variant: Variant,
    pub inflow_set: String,
    pub edge_length_m: f64,
    pub base_speed_limit_mps: f64,
    pub added_path_speed_limit_mps: f64,
    pub demand_veh_per_hr: f64,
    /// `mean`, `min`, `max` or `n` (contributing seeds).
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteShareRow {
    pub variant: Variant,
    pub inflow_set: String,
    pub edge_length_m: f64,
    pub base_speed_limit_mps: f64,
    pub added_path_speed_limit_mps: f64,
    pub demand_veh_per_hr: f64,
    pub route_id: String,
    /// `mean`, `min` or `max` over seeds.
    pub statistic: String,
    pub share: f64,
    pub flow_veh_per_hr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDensityRow {
    pub variant: Variant,
    pub inflow_set: String,
    pub edge_length_m: f64,
    pub base_speed_limit_mps: f64,
    pub added_path_speed_limit_mps: f64,
    pub demand_veh_per_hr: f64,
    pub seed: u64,
    pub bin_start_s: f64,
    pub density_veh_per_km: f64,
    pub flow_veh_per_hr: f64,
}

/// A `point` row per edge length, then one `fit` row per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRow {
    pub inflow_set: String,
    pub base_speed_limit_mps: f64,
    pub added_path_speed_limit_mps: f64,
    pub kind: String,
    pub edge_length_m: Option<f64>,
    /// Empty when the curves never cross.
    pub critical_demand_veh_per_hr: Option<f64>,
    pub travel_time_s: Option<f64>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Stats(Vec<StatRow>),
    RouteShares(Vec<RouteShareRow>),
    FlowDensity(Vec<FlowDensityRow>),
    CriticalPoints(Vec<CriticalRow>),
}

impl Table {
    pub fn write_csv<W: Write>(&self, out: W) -> CliResult<()> {
        fn rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> CliResult<()> {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        }
        match self {
            Table::Stats(r) => rows(out, r),
            Table::RouteShares(r) => rows(out, r),
            Table::FlowDensity(r) => rows(out, r),
            Table::CriticalPoints(r) => rows(out, r),
        }
    }
}

/// Hashes of runs that are not usable: failed, or missing on disk.
pub fn missing_runs(manifest: &Manifest, root: &Path) -> Vec<String> {
    let mut missing: Vec<String> = manifest
        .runs
        .iter()
        .filter(|r| {
            r.status == RunStatus::Failed || !root.join(&r.dir).join(output::CONFIG_FILE).exists()
        })
        .map(|r| r.hash.clone())
        .collect();
    missing.sort();
    missing.dedup();
    missing
}

fn min_mean_max(values: &[f64]) -> [(&'static str, f64); 4] {
    let n = values.len() as f64;
    [
        ("mean", values.iter().sum::<f64>() / n),
        ("min", values.iter().copied().fold(f64::INFINITY, f64::min)),
        (
            "max",
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
        ("n", n),
    ]
}

/// Loads every run of the manifest (relative to `root`) and builds the
/// table for `analysis`. Flow-density bins are `bin` seconds wide.
pub fn analyze(manifest: &Manifest, root: &Path, analysis: Analysis, bin: f64) -> CliResult<Table> {
    let missing = missing_runs(manifest, root);
    if !missing.is_empty() {
        return Err(CliError::usage(format!(
            "{} runs are missing or failed:\n  {}",
            missing.len(),
            missing.join("\n  ")
        )));
    }
    let mut digests: Vec<(Condition, u64, RunDigest)> = Vec::with_capacity(manifest.runs.len());
    for run in &manifest.runs {
        let log = output::load_run(&root.join(&run.dir))?;
        digests.push((Condition::of(run), run.seed, RunDigest::new(&log, bin)?));
    }
    digests.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite conditions")
            .then(a.1.cmp(&b.1))
    });
    Ok(tabulate(&digests, analysis))
}

fn grouped(digests: &[(Condition, u64, RunDigest)]) -> Vec<(&Condition, Vec<&RunDigest>)> {
    let mut groups: Vec<(&Condition, Vec<&RunDigest>)> = Vec::new();
    for (cond, _, d) in digests {
        match groups.last_mut() {
            Some((c, ds)) if *c == cond => ds.push(d),
            _ => groups.push((cond, vec![d])),
        }
    }
    groups
}

fn tabulate(digests: &[(Condition, u64, RunDigest)], analysis: Analysis) -> Table {
    let stat_rows = |value: &dyn Fn(&RunDigest) -> Option<f64>| {
        let mut rows = Vec::new();
        for (c, ds) in grouped(digests) {
            let values: Vec<f64> = ds.iter().filter_map(|d| value(d)).collect();
            if values.is_empty() {
                continue;
            }
            for (statistic, v) in min_mean_max(&values) {
                rows.push(StatRow {
                    variant: c.variant,
                    inflow_set: c.inflow_set.clone(),
                    edge_length_m: c.edge_length_m,
                    base_speed_limit_mps: c.base_speed_limit_mps,
                    added_path_speed_limit_mps: c.added_path_speed_limit_mps,
                    demand_veh_per_hr: c.demand_veh_per_hr,
                    statistic: statistic.to_string(),
                    value: v,
                });
            }
        }
        rows
    };
    match analysis {
        Analysis::FlowVsDemand => Table::Stats(stat_rows(&|d| Some(d.output_flow))),
        Analysis::TtVsDemand => Table::Stats(stat_rows(&|d| d.mean_travel_time)),
        Analysis::RouteShares => {
            let mut rows = Vec::new();
            for (c, ds) in grouped(digests) {
                for route in ds[0].route_flows.keys() {
                    let shares: Vec<f64> = ds
                        .iter()
                        .map(|d| d.route_shares.get(route).copied().unwrap_or(0.0))
                        .collect();
                    let flows: Vec<f64> = ds.iter().map(|d| d.route_flows[route]).collect();
                    for ((statistic, share), (_, flow)) in min_mean_max(&shares)
                        .into_iter()
                        .zip(min_mean_max(&flows))
                        .take(3)
                    {
                        rows.push(RouteShareRow {
                            variant: c.variant,
                            inflow_set: c.inflow_set.clone(),
                            edge_length_m: c.edge_length_m,
                            base_speed_limit_mps: c.base_speed_limit_mps,
                            added_path_speed_limit_mps: c.added_path_speed_limit_mps,
                            demand_veh_per_hr: c.demand_veh_per_hr,
                            route_id: route.clone(),
                            statistic: statistic.to_string(),
                            share,
                            flow_veh_per_hr: flow,
                        });
                    }
                }
            }
            Table::RouteShares(rows)
        }
        Analysis::FlowDensity => Table::FlowDensity(
            digests
                .iter()
                .flat_map(|(c, seed, d)| {
                    d.flow_density.iter().map(move |p| FlowDensityRow {
                        variant: c.variant,
                        inflow_set: c.inflow_set.clone(),
                        edge_length_m: c.edge_length_m,
                        base_speed_limit_mps: c.base_speed_limit_mps,
                        added_path_speed_limit_mps: c.added_path_speed_limit_mps,
                        demand_veh_per_hr: c.demand_veh_per_hr,
                        seed: *seed,
                        bin_start_s: p.bin_start_s,
                        density_veh_per_km: p.density_veh_per_km,
                        flow_veh_per_hr: p.flow_veh_per_hr,
                    })
                })
                .collect(),
        ),
        Analysis::CriticalPoints => Table::CriticalPoints(critical_rows(digests)),
    }
}

/// Seed-averaged travel time per demand, for each variant of each group.
type Curves = BTreeMap<Variant, Vec<(f64, f64)>>;

/// (inflow set, limit, added limit) -> edge length -> curves
type CurveGroups = Vec<((String, f64, f64), Vec<(f64, Curves)>)>;

fn critical_rows(digests: &[(Condition, u64, RunDigest)]) -> Vec<CriticalRow> {
    let mut groups: CurveGroups = Vec::new();
    for (c, ds) in grouped(digests) {
        let tts: Vec<f64> = ds.iter().filter_map(|d| d.mean_travel_time).collect();
        if tts.len() != ds.len() {
            continue;
        }
        let tt = tts.iter().sum::<f64>() / tts.len() as f64;
        let key = (
            c.inflow_set.clone(),
            c.base_speed_limit_mps,
            c.added_path_speed_limit_mps,
        );
        if groups.last().is_none_or(|g| g.0 != key) {
            groups.push((key, Vec::new()));
        }
        let lengths = &mut groups.last_mut().unwrap().1;
        if lengths.last().is_none_or(|l| l.0 != c.edge_length_m) {
            lengths.push((c.edge_length_m, Curves::new()));
        }
        let curves = &mut lengths.last_mut().unwrap().1;
        curves
            .entry(c.variant)
            .or_default()
            .push((c.demand_veh_per_hr, tt));
    }

    let mut rows = Vec::new();
    for ((inflow_set, limit, added), lengths) in groups {
        let row = |kind: &str| CriticalRow {
            inflow_set: inflow_set.clone(),
            base_speed_limit_mps: limit,
            added_path_speed_limit_mps: added,
            kind: kind.to_string(),
            edge_length_m: None,
            critical_demand_veh_per_hr: None,
            travel_time_s: None,
            slope: None,
            intercept: None,
            r_squared: None,
            points: None,
        };
        let mut points = Vec::new();
        for (length, curves) in lengths {
            let crossing = critical_point(&curves);
            if let Some(c) = crossing {
                points.push(CriticalPoint {
                    edge_length_m: length,
                    speed_limit_mps: limit,
                    demand_veh_per_hr: c.demand,
                    travel_time_s: c.travel_time,
                });
            }
            rows.push(CriticalRow {
                edge_length_m: Some(length),
                critical_demand_veh_per_hr: crossing.map(|c| c.demand),
                travel_time_s: crossing.map(|c| c.travel_time),
                ..row("point")
            });
        }
        let fit = fit_critical_line(&points);
        rows.push(CriticalRow {
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            r_squared: fit.map(|f| f.r_squared),
            points: Some(points.len()),
            ..row("fit")
        });
    }
    rows
}

/// Crossing over the demands both variants share.
fn critical_point(curves: &Curves) -> Option<braess_core::metrics::Crossing> {
    let base = curves.get(&Variant::Baseline)?;
    let added = curves.get(&Variant::AddedPath)?;
    let shared: Vec<(f64, f64, f64)> = base
        .iter()
        .filter_map(|&(d, b)| added.iter().find(|(e, _)| *e == d).map(|&(_, a)| (d, b, a)))
        .collect();
    let demands: Vec<f64> = shared.iter().map(|s| s.0).collect();
    let b: Vec<f64> = shared.iter().map(|s| s.1).collect();
    let a: Vec<f64> = shared.iter().map(|s| s.2).collect();
    find_critical_point(&demands, &b, &a)
}

//! Trip and sample logs, and the aggregates computed from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::simulation::SimConfig;

/// One completed trip. Times are in seconds; `entry_time` is when the
/// vehicle was inserted into the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub vehicle_id: u64,
    pub route_id: String,
    pub entry_time: f64,
    pub exit_time: f64,
    pub travel_time: f64,
}

/// Network state after one step inside the measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clock: f64,
    pub active_count: u32,
    /// Vehicle count per element, in flat element order.
    pub occupancy: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub trips: Vec<TripRecord>,
    pub samples: Vec<Sample>,
    pub element_names: Vec<String>,
    pub total_lane_length_m: f64,
    pub warmup: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Arrivals that came due during the run.
    pub arrived: u64,
    /// Arrivals still waiting for space at the end of the run.
    pub deferred: u64,
    /// Insertion attempts refused for lack of space.
    pub deferral_events: u64,
    pub config: SimConfig,
}

/// One bin of the flow-density relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDensityPoint {
    pub bin_start_s: f64,
    pub density_veh_per_km: f64,
    pub flow_veh_per_hr: f64,
}

impl MetricsLog {
    pub fn window_length(&self) -> f64 {
        self.horizon - self.warmup
    }

    /// Trips completed inside the measurement window.
    pub fn window_trips(&self) -> impl Iterator<Item = &TripRecord> {
        self.trips
            .iter()
            .filter(|t| t.exit_time >= self.warmup && t.exit_time <= self.horizon)
    }

    /// Completions per hour over the measurement window.
    pub fn output_flow(&self) -> f64 {
        self.window_trips().count() as f64 * 3600.0 / self.window_length()
    }

    fn route_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for t in self.window_trips() {
            *counts.entry(t.route_id.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Completions per hour over the measurement window, by route id.
    pub fn route_flows(&self) -> BTreeMap<String, f64> {
        let scale = 3600.0 / self.window_length();
        self.route_counts()
            .into_iter()
            .map(|(route, n)| (route, n as f64 * scale))
            .collect()
    }

    /// Fraction of window completions using each route.
    pub fn route_shares(&self) -> BTreeMap<String, f64> {
        let counts = self.route_counts();
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(route, n)| (route, n as f64 / total as f64))
            .collect()
    }

    /// Mean travel time of window completions; `None` if there are none.
    pub fn mean_travel_time(&self) -> Option<f64> {
        mean(self.window_trips().map(|t| t.travel_time))
    }

    pub fn route_travel_times(&self) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for t in self.window_trips() {
            let e = sums.entry(t.route_id.clone()).or_insert((0.0, 0));
            e.0 += t.travel_time;
            e.1 += 1;
        }
        sums.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    }

    /// Mean vehicles per lane-kilometre over the window.
    pub fn mean_density(&self) -> f64 {
        let km = self.total_lane_length_m / 1000.0;
        mean(self.samples.iter().map(|s| f64::from(s.active_count))).unwrap_or(0.0) / km
    }

    /// Flow and density in consecutive bins of `bin` seconds across the
    /// measurement window. A trailing partial bin is dropped.
    pub fn flow_density_curve(&self, bin: f64) -> Vec<FlowDensityPoint> {
        let km = self.total_lane_length_m / 1000.0;
        let bins = (self.window_length() / bin + 1e-9).floor() as usize;
        let mut counts = vec![0usize; bins];
        let mut occ = vec![(0.0, 0usize); bins];
        let index = |t: f64, closed_right: bool| {
            let x = (t - self.warmup) / bin;
            let i = if closed_right {
                (x - 1e-9).ceil() - 1.0
            } else {
                (x + 1e-9).floor()
            };
            (i >= 0.0 && (i as usize) < bins).then_some(i as usize)
        };
        for t in &self.trips {
            if let Some(i) = index(t.exit_time, true) {
                counts[i] += 1;
            }
        }
        for s in &self.samples {
            if let Some(i) = index(s.clock, true) {
                occ[i].0 += f64::from(s.active_count);
                occ[i].1 += 1;
            }
        }
        (0..bins)
            .map(|i| FlowDensityPoint {
                bin_start_s: self.warmup + i as f64 * bin,
                density_veh_per_km: if occ[i].1 == 0 {
                    0.0
                } else {
                    occ[i].0 / occ[i].1 as f64 / km
                },
                flow_veh_per_hr: counts[i] as f64 * 3600.0 / bin,
            })
            .collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Where the added-path travel-time curve first rises above the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub demand: f64,
    /// Travel time at the crossing, where both curves meet.
    pub travel_time: f64,
}

/// Demand at which the added path starts to hurt: the first place where
/// `added - baseline` goes from negative to positive, linearly
/// interpolated. Demands must be increasing.
pub fn find_critical_point(demands: &[f64], baseline: &[f64], added: &[f64]) -> Option<Crossing> {
    assert_eq!(demands.len(), baseline.len());
    assert_eq!(demands.len(), added.len());
    let diff: Vec<f64> = baseline.iter().zip(added).map(|(b, a)| a - b).collect();
    let at = |i: usize, frac: f64| Crossing {
        demand: demands[i - 1] + frac * (demands[i] - demands[i - 1]),
        travel_time: baseline[i - 1] + frac * (baseline[i] - baseline[i - 1]),
    };
    for i in 1..diff.len() {
        let (d0, d1) = (diff[i - 1], diff[i]);
        if d0 < 0.0 && d1 > 0.0 {
            return Some(at(i, -d0 / (d1 - d0)));
        }
        if d0 < 0.0 && d1 == 0.0 {
            // Touching zero counts only if the sign actually flips after it.
            if diff[i + 1..]
                .iter()
                .find(|d| **d != 0.0)
                .is_some_and(|d| *d > 0.0)
            {
                return Some(at(i, 1.0));
            }
        }
    }
    None
}

/// A critical demand observed for one edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub edge_length_m: f64,
    pub speed_limit_mps: f64,
    pub demand_veh_per_hr: f64,
    pub travel_time_s: f64,
}

/// Least-squares line `demand = slope * edge_length + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Where the line reaches `y`.
    pub fn solve_for(&self, y: f64) -> f64 {
        (y - self.intercept) / self.slope
    }
}

/// Fits critical demand against edge length; needs at least three points
/// spanning two distinct lengths.
pub fn fit_critical_line(points: &[CriticalPoint]) -> Option<LineFit> {
    let n = points.len() as f64;
    if points.len() < 3 {
        return None;
    }
    let mx = points.iter().map(|p| p.edge_length_m).sum::<f64>() / n;
    let my = points.iter().map(|p| p.demand_veh_per_hr).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.edge_length_m - mx).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.edge_length_m - mx) * (p.demand_veh_per_hr - my))
        .sum();
    let syy: f64 = points
        .iter()
        .map(|p| (p.demand_veh_per_hr - my).powi(2))
        .sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
        points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    fn log(trips: Vec<(f64, f64, &str)>, samples: Vec<(f64, u32)>) -> MetricsLog {
        MetricsLog {
            trips: trips
                .into_iter()
                .enumerate()
                .map(|(i, (entry, exit, r))| TripRecord {
                    vehicle_id: i as u64,
                    route_id: r.to_string(),
                    entry_time: entry,
                    exit_time: exit,
                    travel_time: exit - entry,
                })
                .collect(),
            samples: samples
                .into_iter()
                .map(|(clock, n)| Sample {
                    clock,
                    active_count: n,
                    occupancy: vec![n],
                })
                .collect(),
            element_names: vec!["AC".into()],
            total_lane_length_m: 2000.0,
            warmup: 600.0,
            horizon: 3600.0,
            dt: 0.1,
            arrived: 0,
            deferred: 0,
            deferral_events: 0,
            config: SimConfig::grid(Variant::Baseline, 200.0, 15.0, &["A"], 500.0, 0),
        }
    }

    #[test]
    fn output_flow_counts_only_the_window() {
        let l = log(
            vec![
                (0.0, 100.0, "A-C-M-B"),
                (500.0, 600.0, "A-C-M-B"),
                (3000.0, 3600.0, "A-N-D-B"),
                (3590.0, 3700.0, "A-N-D-B"),
            ],
            vec![],
        );
        assert_eq!(l.window_trips().count(), 2);
        assert!((l.output_flow() - 2.4).abs() < 1e-12);
        let flows = l.route_flows();
        assert!((flows["A-C-M-B"] - 1.2).abs() < 1e-12);
        let shares = l.route_shares();
        assert!((shares["A-N-D-B"] - 0.5).abs() < 1e-12);
        assert!((l.mean_travel_time().unwrap() - 350.0).abs() < 1e-12);
    }

    #[test]
    fn flow_density_bins() {
        let samples = (1..=30000).map(|k| (600.0 + k as f64 * 0.1, 4)).collect();
        let l = log(
            vec![
                (600.0, 630.0, "r"),
                (600.0, 660.0, "r"),
                (600.0, 661.0, "r"),
            ],
            samples,
        );
        let curve = l.flow_density_curve(60.0);
        assert_eq!(curve.len(), 50);
        assert!((curve[0].flow_veh_per_hr - 120.0).abs() < 1e-9);
        assert!((curve[1].flow_veh_per_hr - 60.0).abs() < 1e-9);
        assert!((curve[0].density_veh_per_km - 2.0).abs() < 1e-12);
        assert!((l.mean_density() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn critical_point_interpolates_first_crossing() {
        let d = [100.0, 200.0, 300.0, 400.0];
        let b = [50.0, 60.0, 70.0, 80.0];
        let a = [40.0, 55.0, 80.0, 70.0];
        // diff: -10, -5, +10, -10 -> crossing between 200 and 300 at 1/3.
        let c = find_critical_point(&d, &b, &a).unwrap();
        assert!((c.demand - 233.333_333_333).abs() < 1e-6);
        assert!((c.travel_time - 63.333_333_333).abs() < 1e-6);
        assert_eq!(find_critical_point(&d, &b, &b), None);
        assert_eq!(find_critical_point(&d, &b, &[90.0, 90.0, 90.0, 90.0]), None);
    }

    #[test]
    fn critical_point_worked_example() {
        let d = [200.0, 400.0, 600.0, 800.0];
        let b = [0.0; 4];
        let c = find_critical_point(&d, &b, &[-5.0, -1.0, 3.0, 8.0]).unwrap();
        assert!((c.demand - 450.0).abs() < 1e-9);
        assert_eq!(find_critical_point(&d, &b, &[-5.0, -1.0, -3.0, -8.0]), None);
    }

    #[test]
    fn critical_point_through_exact_zero() {
        let d = [1.0, 2.0, 3.0];
        assert_eq!(
            find_critical_point(&d, &[0.0; 3], &[-1.0, 0.0, 1.0]).map(|c| c.demand),
            Some(2.0)
        );
        assert_eq!(find_critical_point(&d, &[0.0; 3], &[-1.0, 0.0, -1.0]), None);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let pts: Vec<CriticalPoint> = [100.0, 200.0, 300.0]
            .iter()
            .map(|&x| CriticalPoint {
                edge_length_m: x,
                speed_limit_mps: 15.0,
                demand_veh_per_hr: 2.0 * x + 50.0,
                travel_time_s: 100.0,
            })
            .collect();
        let fit = fit_critical_line(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 50.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.solve_for(1050.0) - 500.0).abs() < 1e-9);
        assert!(fit_critical_line(&pts[..2]).is_none());
    }
}

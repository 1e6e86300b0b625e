//! Real-time travel-time estimation and per-vehicle route choice.
//!
//! An element (road edge or connector) is cut into the gaps between the
//! vehicles on it. Each gap is costed with [`est_tt`], a constant-acceleration
//! kinematic estimate, and a route costs the sum over its elements. A new
//! vehicle takes the cheapest route.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Element, Route};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("no candidate routes to choose from")]
    NoCandidates,
    #[error("estimator parameter `{name}` must be positive, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorParams {
    /// Assumed magnitude of acceleration and deceleration.
    #[serde(rename = "accel_mps2")]
    pub accel: f64,
    /// Assumed speed at the end of an element (vehicles stop there).
    #[serde(rename = "end_speed_mps")]
    pub end_speed: f64,
    /// Below this |a_ego| a vehicle is treated as cruising.
    #[serde(rename = "small_accel_threshold_mps2")]
    pub small_accel_threshold: f64,
    /// Floor on the cruising speed used as a divisor.
    #[serde(rename = "min_speed_mps")]
    pub min_speed: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            accel: 3.0,
            end_speed: 1.0,
            small_accel_threshold: 0.1,
            min_speed: 0.1,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<(), RoutingError> {
        for (name, value) in [
            ("estimator.accel_mps2", self.accel),
            ("estimator.end_speed_mps", self.end_speed),
            ("estimator.min_speed_mps", self.min_speed),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(RoutingError::InvalidParameter { name, value });
            }
        }
        if self.small_accel_threshold.is_nan() || self.small_accel_threshold < 0.0 {
            return Err(RoutingError::InvalidParameter {
                name: "estimator.small_accel_threshold_mps2",
                value: self.small_accel_threshold,
            });
        }
        Ok(())
    }
}

/// Estimated time to cover `d` metres starting at `v_ego` and arriving at
/// `v_target`.
///
/// A cruising vehicle (|a_ego| below the threshold) holds its speed and only
/// changes speed at the end. Otherwise it is assumed to run up to an
/// intermediate speed and then brake; the time terms of that branch are
/// charged at `v_max` even when the intermediate speed is lower.
pub fn est_tt(
    v_ego: f64,
    a_ego: f64,
    v_target: f64,
    v_max: f64,
    d: f64,
    params: &EstimatorParams,
) -> f64 {
    let a = params.accel;
    if a_ego.abs() < params.small_accel_threshold {
        let v_final = (v_ego * v_ego + 2.0 * a * d).sqrt().min(v_target);
        let d_accel = ((v_ego * v_ego - v_final * v_final) / (2.0 * a)).abs();
        let v_cruise = v_ego.max(params.min_speed);
        (d - d_accel).max(0.0) / v_cruise + 2.0 * d_accel / (v_cruise + v_final)
    } else {
        let v_i = (0.5 * (2.0 * a * d + v_ego * v_ego + v_target * v_target))
            .sqrt()
            .min(v_max);
        let d_accel = ((v_ego * v_ego - v_i * v_i) / (2.0 * a)).abs()
            + ((v_i * v_i - v_target * v_target) / (2.0 * a)).abs();
        ((v_max - v_ego) / a).abs()
            + ((v_max - v_target) / a).abs()
            + (d - d_accel).max(0.0) / v_max
    }
}

/// Kinematic state of one vehicle in an [`EdgeSnapshot`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotVehicle {
    pub offset: f64,
    pub speed: f64,
    pub accel: f64,
}

/// Instantaneous view of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSnapshot {
    pub element: Element,
    pub length: f64,
    pub v_max: f64,
    /// Sorted from the element entry (vehicle 1, the last one) to the front.
    pub vehicles: Vec<SnapshotVehicle>,
}

impl EdgeSnapshot {
    pub fn new(
        element: Element,
        length: f64,
        v_max: f64,
        mut vehicles: Vec<SnapshotVehicle>,
    ) -> Self {
        for v in &mut vehicles {
            v.offset = v.offset.clamp(0.0, length);
        }
        vehicles.sort_by(|a, b| a.offset.total_cmp(&b.offset));
        EdgeSnapshot {
            element,
            length,
            v_max,
            vehicles,
        }
    }

    /// `d_0 .. d_n`: entry to the last vehicle, between consecutive vehicles,
    /// and front vehicle to the end of the element.
    pub fn gaps(&self) -> Vec<f64> {
        let mut gaps = Vec::with_capacity(self.vehicles.len() + 1);
        let mut prev = 0.0;
        for v in &self.vehicles {
            gaps.push(v.offset - prev);
            prev = v.offset;
        }
        gaps.push(self.length - prev);
        gaps
    }
}

/// Estimated traversal time of one element.
pub fn estimate_edge_cost(snapshot: &EdgeSnapshot, params: &EstimatorParams) -> f64 {
    let vehicles = &snapshot.vehicles;
    let v_max = snapshot.v_max;
    if vehicles.is_empty() {
        return snapshot.length / v_max;
    }
    let gaps = snapshot.gaps();
    // The vehicle entering the element arrives at the speed limit, cruising.
    let mut total = est_tt(v_max, 0.0, vehicles[0].speed, v_max, gaps[0], params);
    for (i, v) in vehicles.iter().enumerate() {
        let target = vehicles
            .get(i + 1)
            .map_or(params.end_speed, |next| next.speed);
        total += est_tt(v.speed, v.accel, target, v_max, gaps[i + 1], params);
    }
    total
}

/// Source of element snapshots, implemented by the simulation world.
pub trait TrafficView {
    fn snapshot(&self, element: Element) -> EdgeSnapshot;
}

/// Estimated cost of a route from its `start`-th element to its end.
pub fn route_cost_from<V: TrafficView + ?Sized>(
    route: &Route,
    start: usize,
    view: &V,
    params: &EstimatorParams,
) -> f64 {
    route.elements[start..]
        .iter()
        .map(|el| estimate_edge_cost(&view.snapshot(*el), params))
        .sum()
}

/// Estimated cost of a whole route: its edges and connectors.
pub fn route_cost<V: TrafficView + ?Sized>(
    route: &Route,
    view: &V,
    params: &EstimatorParams,
) -> f64 {
    route_cost_from(route, 0, view, params)
}

/// Per-route costs at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteCostVector {
    pub clock: f64,
    pub costs: Vec<(String, f64)>,
}

impl RouteCostVector {
    /// Cheapest entry; near-equal costs go to the lexicographically smallest
    /// route id.
    pub fn argmin(&self) -> Option<usize> {
        let min = self
            .costs
            .iter()
            .map(|(_, c)| *c)
            .fold(f64::INFINITY, f64::min);
        let tol = min.abs() * 1e-9;
        self.costs
            .iter()
            .enumerate()
            .filter(|(_, (_, c))| *c <= min + tol)
            .min_by(|(_, (a, _)), (_, (b, _))| a.cmp(b))
            .map(|(i, _)| i)
    }
}

/// Picks the cheapest of `candidates`; returns its index and cost.
pub fn select_route<V: TrafficView + ?Sized>(
    candidates: &[&Route],
    clock: f64,
    view: &V,
    params: &EstimatorParams,
) -> Result<(usize, f64), RoutingError> {
    select_route_from(candidates, 0, clock, view, params)
}

/// Like [`select_route`], costing only from element `start` onwards.
pub fn select_route_from<V: TrafficView + ?Sized>(
    candidates: &[&Route],
    start: usize,
    clock: f64,
    view: &V,
    params: &EstimatorParams,
) -> Result<(usize, f64), RoutingError> {
    let costs = RouteCostVector {
        clock,
        costs: candidates
            .iter()
            .map(|r| (r.id.clone(), route_cost_from(r, start, view, params)))
            .collect(),
    };
    let best = costs.argmin().ok_or(RoutingError::NoCandidates)?;
    Ok((best, costs.costs[best].1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::EdgeId;

    fn params() -> EstimatorParams {
        EstimatorParams::default()
    }

    #[test]
    fn constant_speed_traversal() {
        assert!((est_tt(10.0, 0.0, 10.0, 15.0, 100.0, &params()) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn cruise_then_accelerate() {
        // v_final = min(sqrt(325), 10) = 10; d_accel = 75 / 6 = 12.5.
        let t = est_tt(5.0, 0.0, 10.0, 15.0, 50.0, &params());
        assert!((t - (37.5 / 5.0 + 25.0 / 15.0)).abs() < 1e-12);
        assert!((t - 9.1667).abs() < 1e-4);
    }

    #[test]
    fn accelerating_branch_is_verbatim() {
        // v_i = sqrt(163) < v_max, so d_accel = 23 + 27 = 50 = d and the
        // cruise term vanishes; time terms still use v_max.
        let v_max = 17.32;
        let t = est_tt(5.0, 1.0, 1.0, v_max, 50.0, &params());
        let expected = (v_max - 5.0) / 3.0 + (v_max - 1.0) / 3.0;
        assert!((t - expected).abs() < 1e-12);
        assert!((t - 9.5467).abs() < 1e-3);
    }

    #[test]
    fn stopped_vehicle_uses_speed_floor() {
        let t = est_tt(0.0, 0.0, 0.0, 15.0, 7.0, &params());
        assert!(t.is_finite());
        // v_final = 0, d_accel = 0: the whole gap is crossed at 0.1 m/s.
        assert!((t - 70.0).abs() < 1e-9);
    }

    fn edge() -> Element {
        Element::Edge(EdgeId(0))
    }

    #[test]
    fn empty_edge_cost() {
        let snap = EdgeSnapshot::new(edge(), 400.0, 35.0, vec![]);
        assert!((estimate_edge_cost(&snap, &params()) - 400.0 / 35.0).abs() < 1e-12);
        assert!((400.0f64 / 35.0 - 11.43).abs() < 5e-3);
    }

    #[test]
    fn one_stopped_vehicle_mid_edge() {
        let stopped = SnapshotVehicle {
            offset: 50.0,
            speed: 0.0,
            accel: 0.0,
        };
        let snap = EdgeSnapshot::new(edge(), 100.0, 15.0, vec![stopped]);
        assert_eq!(snap.gaps(), [50.0, 50.0]);
        let t0 = est_tt(15.0, 0.0, 0.0, 15.0, 50.0, &params());
        let t1 = est_tt(0.0, 0.0, 1.0, 15.0, 50.0, &params());
        let got = estimate_edge_cost(&snap, &params());
        assert!((got - (t0 + t1)).abs() < 1e-12);
        // Hand values: t0 = 12.5 / 15 + 2 * 37.5 / 15; t1 = 49.8333 / 0.1 + 2 * 0.16667 / 1.1.
        assert!((t0 - 5.8333333).abs() < 1e-6);
        assert!((t1 - 498.6363636).abs() < 1e-6);
    }

    #[test]
    fn free_vehicle_at_entry_vs_empty_formula() {
        // One cruising vehicle at the entry of a 400 m, 15 m/s edge.
        let v = SnapshotVehicle {
            offset: 0.0,
            speed: 15.0,
            accel: 0.0,
        };
        let snap = EdgeSnapshot::new(edge(), 400.0, 15.0, vec![v]);
        let occupied = estimate_edge_cost(&snap, &params());
        let empty = 400.0 / 15.0;
        // Frozen: (400 - 224/6) / 15 + 2 * (224/6) / 16 = 28.8444.
        assert!((occupied - 28.844444444).abs() < 1e-6);
        assert!((occupied - empty) / empty < 0.2);
    }

    #[test]
    fn gaps_close_on_length() {
        let vs = [3.0, 90.0, 41.5, 41.5]
            .iter()
            .map(|&o| SnapshotVehicle {
                offset: o,
                speed: 1.0,
                accel: 0.0,
            })
            .collect();
        let snap = EdgeSnapshot::new(edge(), 100.0, 15.0, vs);
        let gaps = snap.gaps();
        assert!(gaps.iter().all(|g| *g >= 0.0));
        assert!((gaps.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn argmin_tie_breaks_on_id() {
        let v = RouteCostVector {
            clock: 0.0,
            costs: vec![
                ("A-N-D-B".into(), 10.0),
                ("A-C-M-B".into(), 10.0 + 1e-12),
                ("A-C-D-B".into(), 11.0),
            ],
        };
        assert_eq!(v.argmin(), Some(1));
        let empty = RouteCostVector {
            clock: 0.0,
            costs: vec![],
        };
        assert_eq!(empty.argmin(), None);
    }

    #[test]
    fn param_validation() {
        assert!(params().validate().is_ok());
        let bad = EstimatorParams {
            end_speed: 0.0,
            ..params()
        };
        assert!(bad.validate().is_err());
    }
}

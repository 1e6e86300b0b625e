//! Car-following kinematics (IDM) and all-way-stop arbitration.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NodeId;

/// A vehicle granted at a stop must have come down to this speed.
pub const STOPPED_SPEED: f64 = 1.0;
/// Vehicles within this distance of a stop line join the intersection queue.
pub const STOP_ZONE: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("vehicle {vehicle} collided: gap {gap:.4} m to its leader")]
    Collision { vehicle: u64, gap: f64 },
    #[error("IDM parameter `{name}` is invalid: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    #[serde(rename = "min_spacing_m")]
    pub min_spacing: f64,
    #[serde(rename = "time_headway_s")]
    pub time_headway: f64,
    #[serde(rename = "max_accel_mps2")]
    pub max_accel: f64,
    #[serde(rename = "comfortable_decel_mps2")]
    pub comfortable_decel: f64,
    #[serde(rename = "accel_exponent")]
    pub accel_exponent: f64,
    #[serde(rename = "vehicle_length_m")]
    pub vehicle_length: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            min_spacing: 2.0,
            time_headway: 1.0,
            max_accel: 2.6,
            comfortable_decel: 4.5,
            accel_exponent: 4.0,
            vehicle_length: 5.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("idm.min_spacing_m", self.min_spacing),
            ("idm.time_headway_s", self.time_headway),
            ("idm.max_accel_mps2", self.max_accel),
            ("idm.comfortable_decel_mps2", self.comfortable_decel),
            ("idm.vehicle_length_m", self.vehicle_length),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DynamicsError::InvalidParameter { name, value });
            }
        }
        if !(self.accel_exponent >= 1.0 && self.accel_exponent.is_finite()) {
            return Err(DynamicsError::InvalidParameter {
                name: "idm.accel_exponent",
                value: self.accel_exponent,
            });
        }
        Ok(())
    }

    /// Strongest braking the model will apply.
    pub fn max_decel(&self) -> f64 {
        2.0 * self.comfortable_decel
    }
}

/// Desired dynamic gap `s*` for speed `v` and approach rate `dv = v - v_leader`.
pub fn idm_desired_gap(v: f64, dv: f64, params: &IdmParams) -> f64 {
    let brake_term = v * dv / (2.0 * (params.max_accel * params.comfortable_decel).sqrt());
    params.min_spacing + (v * params.time_headway + brake_term).max(0.0)
}

/// IDM acceleration, clamped to `[-2 b_comf, a_max]`.
///
/// Pass `f64::INFINITY` as `gap` for a free road. A non-positive gap means
/// the vehicles overlap and is reported as an error.
pub fn idm_acceleration(
    v: f64,
    gap: f64,
    leader_speed: f64,
    v_desired: f64,
    params: &IdmParams,
) -> Result<f64, DynamicsError> {
    if gap <= 0.0 || gap.is_nan() {
        return Err(DynamicsError::Collision {
            vehicle: u64::MAX,
            gap,
        });
    }
    let free = (v / v_desired).powf(params.accel_exponent);
    let interaction = if gap.is_finite() {
        (idm_desired_gap(v, v - leader_speed, params) / gap).powi(2)
    } else {
        0.0
    };
    let a = params.max_accel * (1.0 - free - interaction);
    Ok(a.clamp(-params.max_decel(), params.max_accel))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    /// Index into the simulation's route table.
    pub route: usize,
    pub element_index: usize,
    /// Position of the vehicle front along the current element, metres.
    pub offset: f64,
    pub speed: f64,
    pub accel: f64,
    pub entry_time: f64,
    pub exit_time: Option<f64>,
}

/// The vehicle ahead, as seen from the follower's front bumper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper distance, metres.
    pub gap: f64,
    pub speed: f64,
}

/// Everything `step_vehicle` needs to know about the vehicle's surroundings.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext<'a> {
    /// Nearest vehicle ahead, possibly on a later element.
    pub leader: Option<Leader>,
    /// Distance to a stop line the vehicle must halt at; treated as a
    /// standing leader.
    pub stop_line: Option<f64>,
    /// Applicable speed on the current element.
    pub v_max: f64,
    /// Distance to and speed cap of the next element, when it is lower.
    pub speed_cap_ahead: Option<(f64, f64)>,
    /// Lengths of the route's elements.
    pub element_lengths: &'a [f64],
    /// The vehicle may not pass the end of the current element.
    pub hold_at_end: bool,
    pub dt: f64,
    /// Clock at the start of the step.
    pub clock: f64,
}

/// Advances one vehicle by one semi-implicit Euler step.
pub fn step_vehicle(
    vehicle: &VehicleState,
    ctx: &StepContext<'_>,
    params: &IdmParams,
) -> Result<VehicleState, DynamicsError> {
    let v = vehicle.speed;
    let tag = |e| match e {
        DynamicsError::Collision { gap, .. } => DynamicsError::Collision {
            vehicle: vehicle.id.0,
            gap,
        },
        other => other,
    };
    let (gap, leader_speed) = ctx.leader.map_or((f64::INFINITY, v), |l| (l.gap, l.speed));
    let mut accel = idm_acceleration(v, gap, leader_speed, ctx.v_max, params).map_err(tag)?;
    if let Some(dist) = ctx.stop_line {
        // A vehicle already pinned at the line sees a zero gap; keep it still.
        let line = if dist > 0.0 {
            idm_acceleration(v, dist, 0.0, ctx.v_max, params).map_err(tag)?
        } else {
            -params.max_decel()
        };
        accel = accel.min(line);
    }
    if let Some((dist, v_next)) = ctx.speed_cap_ahead {
        if v > v_next {
            let required = (v * v - v_next * v_next) / (2.0 * dist.max(0.01));
            if required > 0.5 * params.comfortable_decel {
                accel = accel.min(-required).max(-params.max_decel());
            }
        }
    }

    let speed = (v + accel * ctx.dt).max(0.0);
    let mut next = vehicle.clone();
    next.accel = (speed - v) / ctx.dt;
    next.speed = speed;
    next.offset += speed * ctx.dt;

    let len = ctx.element_lengths[next.element_index];
    if ctx.hold_at_end && next.offset > len {
        next.offset = len;
        next.speed = 0.0;
        next.accel = -v / ctx.dt;
        return Ok(next);
    }
    while next.offset > ctx.element_lengths[next.element_index] {
        let len = ctx.element_lengths[next.element_index];
        if next.element_index + 1 == ctx.element_lengths.len() {
            next.offset = len;
            next.exit_time = Some(ctx.clock + ctx.dt);
            break;
        }
        next.offset -= len;
        next.element_index += 1;
    }
    Ok(next)
}

/// FIFO service state of one all-way-stop intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionQueue {
    pub node: NodeId,
    /// Vehicles at the stop line, in arrival order.
    pub waiting: VecDeque<(VehicleId, f64)>,
    /// Vehicle currently granted the box.
    pub occupant: Option<VehicleId>,
    pub release_time: f64,
}

impl IntersectionQueue {
    pub fn new(node: NodeId) -> Self {
        IntersectionQueue {
            node,
            waiting: VecDeque::new(),
            occupant: None,
            release_time: f64::NEG_INFINITY,
        }
    }

    pub fn contains(&self, vehicle: VehicleId) -> bool {
        self.occupant == Some(vehicle) || self.waiting.iter().any(|(v, _)| *v == vehicle)
    }

    /// Appends an arrival, keeping the queue ordered by arrival time.
    pub fn arrive(&mut self, vehicle: VehicleId, time: f64) {
        let pos = self
            .waiting
            .iter()
            .position(|(_, t)| *t > time)
            .unwrap_or(self.waiting.len());
        self.waiting.insert(pos, (vehicle, time));
    }
}

/// Grants the head of the queue the intersection box if the box is free, the
/// head vehicle has stopped and the previous service interval has elapsed.
pub fn arbitrate_stop(
    queue: &mut IntersectionQueue,
    clock: f64,
    service_time: f64,
    speed_of: impl Fn(VehicleId) -> f64,
) -> Option<VehicleId> {
    if queue.occupant.is_some() || clock < queue.release_time {
        return None;
    }
    let &(head, _) = queue.waiting.front()?;
    if speed_of(head) > STOPPED_SPEED {
        return None;
    }
    queue.waiting.pop_front();
    queue.occupant = Some(head);
    queue.release_time = clock + service_time;
    Some(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> IdmParams {
        IdmParams::default()
    }

    #[test]
    fn desired_gap_examples() {
        assert_eq!(idm_desired_gap(0.0, 0.0, &p()), 2.0);
        assert_eq!(idm_desired_gap(10.0, 0.0, &p()), 12.0);
        // Independent evaluation of s0 + vT + v dv / (2 sqrt(ab)).
        let expected = 2.0 + 10.0 + 20.0 / (2.0 * 11.7f64.sqrt());
        assert!((idm_desired_gap(10.0, 2.0, &p()) - expected).abs() < 1e-12);
        assert!((expected - 14.9235).abs() < 1e-3);
        // Strongly receding leader: the dynamic part is floored at zero.
        assert_eq!(idm_desired_gap(1.0, -100.0, &p()), 2.0);
    }

    /// Second, independently written IDM.
    fn textbook_idm(v: f64, s: f64, vl: f64, v0: f64) -> f64 {
        let (a, b, s0, t, delta) = (2.6f64, 4.5f64, 2.0f64, 1.0f64, 4.0f64);
        let s_star = s0 + f64::max(0.0, v * t + v * (v - vl) / (2.0 * (a * b).sqrt()));
        a * (1.0 - (v / v0).powf(delta) - (s_star / s).powf(2.0))
    }

    #[test]
    fn acceleration_examples() {
        assert_eq!(
            idm_acceleration(0.0, f64::INFINITY, 0.0, 15.0, &p()).unwrap(),
            2.6
        );
        let at_cruise = idm_acceleration(15.0, 1e6, 15.0, 15.0, &p()).unwrap();
        assert!(at_cruise.abs() < 1e-6);
        let got = idm_acceleration(10.0, 14.92, 8.0, 15.0, &p()).unwrap();
        let want = textbook_idm(10.0, 14.92, 8.0, 15.0);
        assert!(want > -9.0 && want < 2.6);
        assert!((got - want).abs() < 1e-12);
        // Very close: clamped at twice the comfortable deceleration.
        let hard = idm_acceleration(15.0, 1.0, 0.0, 15.0, &p()).unwrap();
        assert_eq!(hard, -9.0);
    }

    #[test]
    fn non_positive_gap_is_collision() {
        assert!(matches!(
            idm_acceleration(3.0, 0.0, 0.0, 15.0, &p()),
            Err(DynamicsError::Collision { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(p().validate().is_ok());
        let bad = IdmParams {
            accel_exponent: 0.5,
            ..p()
        };
        assert!(bad.validate().is_err());
        let bad = IdmParams {
            time_headway: 0.0,
            ..p()
        };
        assert!(matches!(
            bad.validate(),
            Err(DynamicsError::InvalidParameter {
                name: "idm.time_headway_s",
                ..
            })
        ));
    }

    fn vehicle(offset: f64, speed: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(1),
            route: 0,
            element_index: 0,
            offset,
            speed,
            accel: 0.0,
            entry_time: 0.0,
            exit_time: None,
        }
    }

    fn ctx(lengths: &[f64], leader: Option<Leader>, hold: bool) -> StepContext<'_> {
        StepContext {
            leader,
            stop_line: None,
            v_max: 15.0,
            speed_cap_ahead: None,
            element_lengths: lengths,
            hold_at_end: hold,
            dt: 0.1,
            clock: 0.0,
        }
    }

    #[test]
    fn starts_from_rest() {
        let lengths = [1000.0];
        let next = step_vehicle(&vehicle(0.0, 0.0), &ctx(&lengths, None, false), &p()).unwrap();
        assert!((next.speed - 0.26).abs() < 1e-12);
        assert!((next.offset - 0.026).abs() < 1e-12);
    }

    #[test]
    fn stops_at_line_without_grant() {
        let lengths = [100.0, 10.0];
        let mut v = vehicle(40.0, 12.0);
        for _ in 0..600 {
            let mut c = ctx(&lengths, None, true);
            c.stop_line = Some(lengths[0] - v.offset);
            v = step_vehicle(&v, &c, &p()).unwrap();
            assert_eq!(v.element_index, 0);
            assert!(v.offset <= lengths[0]);
        }
        assert!(v.speed < 0.05);
        assert!(lengths[0] - v.offset <= STOP_ZONE);
    }

    #[test]
    fn carries_remainder_across_elements() {
        let lengths = [10.0, 10.0, 50.0];
        let mut v = vehicle(9.5, 10.0);
        v = step_vehicle(&v, &ctx(&lengths, None, false), &p()).unwrap();
        assert_eq!(v.element_index, 1);
        assert!((v.offset - (9.5 + v.speed * 0.1 - 10.0)).abs() < 1e-12);
        let mut last = vehicle(49.5, 10.0);
        last.element_index = 2;
        let done = step_vehicle(&last, &ctx(&lengths, None, false), &p()).unwrap();
        assert_eq!(done.exit_time, Some(0.1));
    }

    #[test]
    fn closes_on_standing_leader_without_overlap() {
        // Leader rear is 5 m ahead; follower moving at 3 m/s.
        for &dt in &[0.1, 0.05, 0.01] {
            let lengths = [200.0];
            let mut v = vehicle(0.0, 3.0);
            let leader_rear = 5.0;
            let mut c = ctx(&lengths, None, false);
            c.dt = dt;
            for _ in 0..(60.0 / dt) as usize {
                c.leader = Some(Leader {
                    gap: leader_rear - v.offset,
                    speed: 0.0,
                });
                v = step_vehicle(&v, &c, &p()).unwrap();
                assert!(leader_rear - v.offset > 0.0);
            }
            assert!(v.speed < 1e-3);
            // Settles just short of the minimum spacing.
            assert!(leader_rear - v.offset > 1.9);
        }
    }

    #[test]
    fn fifo_trace_respects_service_time() {
        let mut q = IntersectionQueue::new(NodeId(1));
        assert_eq!(arbitrate_stop(&mut q, 0.0, 2.0, |_| 0.0), None);
        q.arrive(VehicleId(7), 10.0);
        q.arrive(VehicleId(8), 10.5);
        let mut grants = Vec::new();
        let mut clock = 10.5;
        while grants.len() < 2 {
            if let Some(v) = arbitrate_stop(&mut q, clock, 2.0, |_| 0.0) {
                grants.push((v, clock));
                // Box clears immediately; only the service time gates.
                q.occupant = None;
            }
            clock += 0.1;
        }
        assert_eq!(grants[0].0, VehicleId(7));
        assert_eq!(grants[1].0, VehicleId(8));
        assert!(grants[1].1 - grants[0].1 >= 2.0 - 1e-9);
    }

    #[test]
    fn moving_head_or_busy_box_blocks() {
        let mut q = IntersectionQueue::new(NodeId(1));
        q.arrive(VehicleId(1), 0.0);
        assert_eq!(arbitrate_stop(&mut q, 1.0, 2.0, |_| 3.0), None);
        q.occupant = Some(VehicleId(9));
        assert_eq!(arbitrate_stop(&mut q, 1.0, 2.0, |_| 0.0), None);
        q.occupant = None;
        assert_eq!(
            arbitrate_stop(&mut q, 1.0, 2.0, |_| 0.5),
            Some(VehicleId(1))
        );
        assert_eq!(q.release_time, 3.0);
    }

    #[test]
    fn arrivals_stay_sorted() {
        let mut q = IntersectionQueue::new(NodeId(0));
        q.arrive(VehicleId(1), 5.0);
        q.arrive(VehicleId(2), 3.0);
        q.arrive(VehicleId(3), 5.0);
        let order: Vec<_> = q.waiting.iter().map(|(v, _)| v.0).collect();
        assert_eq!(order, [2, 1, 3]);
    }
}

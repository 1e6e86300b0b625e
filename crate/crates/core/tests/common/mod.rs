#![allow(dead_code)]

use std::collections::HashMap;

use braess_core::dynamics::{VehicleId, STOPPED_SPEED, STOP_ZONE};
use braess_core::metrics::MetricsLog;
use braess_core::network::{Control, Element};
use braess_core::simulation::{SimConfig, WorldState};

/// Watches vehicles approach stop lines and flags any that enter a stop
/// node's box without having stopped within the stop zone.
#[derive(Default)]
pub struct StopMonitor {
    /// Vehicle -> index of the route element on which it has stopped.
    stopped_on: HashMap<VehicleId, usize>,
    /// Vehicle -> element index last seen.
    last_index: HashMap<VehicleId, usize>,
    pub crossings: usize,
}

impl StopMonitor {
    pub fn observe(&mut self, world: &WorldState) -> Result<(), String> {
        let net = world.network();
        let mut seen = HashMap::new();
        for v in world.vehicles() {
            let route = world.route(v.route);
            let prev = self
                .last_index
                .get(&v.id)
                .copied()
                .unwrap_or(v.element_index);
            // Every stop approach passed since the last observation must
            // have been stopped on.
            for k in prev..v.element_index {
                self.check_passed(world, v.id, route.elements[k], k)?;
            }
            if let Element::Edge(e) = route.elements[v.element_index] {
                let to = net.edge(e).to;
                let remaining = net.edge(e).length - v.offset;
                if net.node(to).control == Control::AllWayStop
                    && remaining <= STOP_ZONE
                    && v.speed <= STOPPED_SPEED
                {
                    self.stopped_on.insert(v.id, v.element_index);
                }
            }
            seen.insert(v.id, v.element_index);
        }
        self.last_index = seen;
        Ok(())
    }

    fn check_passed(
        &mut self,
        world: &WorldState,
        id: VehicleId,
        el: Element,
        k: usize,
    ) -> Result<(), String> {
        let net = world.network();
        if let Element::Edge(e) = el {
            if net.node(net.edge(e).to).control == Control::AllWayStop {
                self.crossings += 1;
                if self.stopped_on.get(&id) != Some(&k) {
                    return Err(format!(
                        "vehicle {} ran the stop at {} (t = {:.1})",
                        id.0,
                        net.node(net.edge(e).to).name,
                        world.clock()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Runs a configuration, checking world invariants and stop compliance
/// after every step.
pub fn run_checked(config: &SimConfig) -> Result<MetricsLog, String> {
    let mut world = WorldState::new(config.clone()).map_err(|e| e.to_string())?;
    let mut monitor = StopMonitor::default();
    while !world.is_finished() {
        world.step().map_err(|e| e.to_string())?;
        world
            .check_invariants()
            .map_err(|e| format!("t = {:.1}: {e}", world.clock()))?;
        monitor.observe(&world)?;
    }
    Ok(world.into_log())
}

/// Speed profile assumed by each estimator branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// Hold the current speed, then change speed at rate `a` just in time
    /// to arrive at the target speed (or as close to it as reachable).
    CruiseThenChange,
    /// Accelerate at `a` to `v_max`, cruise, then brake at `a` just in time
    /// to arrive at the target speed.
    Trapezoid,
}

/// Time to cover `d` metres, found by stepping the profile with constant
/// acceleration over steps of `dt` and interpolating the final crossing.
pub fn integrate_profile(
    profile: Profile,
    v0: f64,
    v_target: f64,
    v_max: f64,
    a: f64,
    d: f64,
    dt: f64,
) -> f64 {
    let (mut x, mut v, mut t) = (0.0f64, v0, 0.0f64);
    loop {
        let remaining = d - x;
        // Distance needed to go from the current speed to the target.
        let change = (v * v - v_target * v_target).abs() / (2.0 * a);
        let (acc, cap) = match profile {
            Profile::CruiseThenChange if remaining <= change && v < v_target => (a, v_target),
            Profile::CruiseThenChange if remaining <= change && v > v_target => (-a, v_target),
            Profile::CruiseThenChange => (0.0, v),
            Profile::Trapezoid if remaining <= change && v > v_target => (-a, v_target),
            Profile::Trapezoid if v < v_max => (a, v_max),
            Profile::Trapezoid => (0.0, v),
        };
        // Never run past the speed being aimed at within a step.
        let acc = if acc > 0.0 {
            acc.min((cap - v) / dt)
        } else if acc < 0.0 {
            acc.max((cap - v) / dt)
        } else {
            0.0
        };
        let step = v * dt + 0.5 * acc * dt * dt;
        if x + step >= d {
            let s = if acc.abs() < 1e-12 {
                (d - x) / v
            } else {
                ((v * v + 2.0 * acc * (d - x)).max(0.0).sqrt() - v) / acc
            };
            return t + s;
        }
        x += step;
        v += acc * dt;
        t += dt;
    }
}

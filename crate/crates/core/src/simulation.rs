//! World state and the fixed-step main loop.
//!
//! Each step: due arrivals are inserted (one per inflow node), vehicles at
//! stop lines join their intersection queue, every intersection grants at
//! most one vehicle, and all vehicles advance synchronously from the
//! start-of-step snapshot.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    arbitrate_stop, step_vehicle, DynamicsError, IdmParams, IntersectionQueue, Leader, StepContext,
    VehicleId, VehicleState, STOP_ZONE,
};
use crate::metrics::{MetricsLog, Sample, TripRecord};
use crate::network::{
    build_grid, Control, Element, GridSpec, NetworkError, NetworkGraph, NodeId, Route, Variant,
};
use crate::routing::{
    select_route, select_route_from, EdgeSnapshot, EstimatorParams, SnapshotVehicle, TrafficView,
};

/// Insertion speed never exceeds this, m/s.
pub const MAX_INSERTION_SPEED: f64 = 10.0;
/// How far ahead a vehicle looks for its leader across element boundaries.
const LOOKAHEAD: f64 = 200.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("simulation aborted at t = {clock:.1} s: {source}")]
    Collision {
        clock: f64,
        source: DynamicsError,
        /// Human-readable state of every active vehicle.
        dump: String,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub variant: Variant,
    #[serde(rename = "edge_length_m")]
    pub edge_length: f64,
    #[serde(rename = "base_speed_limit_mps")]
    pub base_speed_limit: f64,
    #[serde(rename = "added_path_speed_limit_mps", default = "default_added_limit")]
    pub added_path_speed_limit: f64,
    #[serde(rename = "connector_length_m", default = "default_connector_length")]
    pub connector_length: f64,
    #[serde(default = "default_true")]
    pub cap_through_speed: bool,
}

fn default_added_limit() -> f64 {
    35.0
}
fn default_connector_length() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    #[default]
    Uniform,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    /// Arrival rate per inflow node name.
    #[serde(rename = "rates_veh_per_hr")]
    pub rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub arrival_process: ArrivalProcess,
    #[serde(default)]
    pub seed: u64,
}

impl DemandSpec {
    /// The same rate at every listed node.
    pub fn uniform_rate(nodes: &[&str], rate: f64, seed: u64) -> Self {
        DemandSpec {
            rates: nodes.iter().map(|n| (n.to_string(), rate)).collect(),
            arrival_process: ArrivalProcess::Uniform,
            seed,
        }
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub network: NetworkConfig,
    pub demand: DemandSpec,
    #[serde(rename = "dt_s", default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "horizon_s", default = "default_horizon")]
    pub horizon: f64,
    #[serde(rename = "warmup_s", default = "default_warmup")]
    pub warmup: f64,
    #[serde(rename = "service_time_s", default = "default_service_time")]
    pub service_time: f64,
    #[serde(default)]
    pub reroute_enabled: bool,
    #[serde(default)]
    pub idm: IdmParams,
    #[serde(default)]
    pub estimator: EstimatorParams,
}

fn default_dt() -> f64 {
    0.1
}
fn default_horizon() -> f64 {
    3600.0
}
fn default_warmup() -> f64 {
    600.0
}
fn default_service_time() -> f64 {
    2.0
}

impl SimConfig {
    /// Single- or multi-inflow grid run with the default timing and models.
    pub fn grid(
        variant: Variant,
        edge_length: f64,
        base_speed_limit: f64,
        inflow_nodes: &[&str],
        rate_per_node: f64,
        seed: u64,
    ) -> Self {
        SimConfig {
            network: NetworkConfig {
                variant,
                edge_length,
                base_speed_limit,
                added_path_speed_limit: default_added_limit(),
                connector_length: default_connector_length(),
                cap_through_speed: true,
            },
            demand: DemandSpec::uniform_rate(inflow_nodes, rate_per_node, seed),
            dt: default_dt(),
            horizon: default_horizon(),
            warmup: default_warmup(),
            service_time: default_service_time(),
            reroute_enabled: false,
            idm: IdmParams::default(),
            estimator: EstimatorParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return Err(invalid(
                "dt_s",
                format!("must be in (0, 0.5], got {}", self.dt),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(
                "horizon_s",
                format!("must be positive, got {}", self.horizon),
            ));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(invalid(
                "warmup_s",
                format!("must be in [0, horizon_s), got {}", self.warmup),
            ));
        }
        if !(self.service_time >= 0.0 && self.service_time.is_finite()) {
            return Err(invalid("service_time_s", "must be non-negative"));
        }
        if self.demand.rates.is_empty() {
            return Err(invalid(
                "demand.rates_veh_per_hr",
                "needs at least one inflow node",
            ));
        }
        for (node, rate) in &self.demand.rates {
            if !(*rate >= 0.0 && rate.is_finite()) {
                return Err(invalid(
                    &format!("demand.rates_veh_per_hr.{node}"),
                    format!("must be non-negative, got {rate}"),
                ));
            }
        }
        self.idm.validate().map_err(|e| match e {
            DynamicsError::InvalidParameter { name, value } => {
                invalid(name, format!("invalid value {value}"))
            }
            other => invalid("idm", other.to_string()),
        })?;
        self.estimator
            .validate()
            .map_err(|e| invalid("estimator", e.to_string()))?;
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            variant: self.network.variant,
            edge_length: self.network.edge_length,
            base_speed_limit: self.network.base_speed_limit,
            added_path_speed_limit: self.network.added_path_speed_limit,
            inflow_nodes: self.demand.rates.keys().cloned().collect(),
            connector_length: self.network.connector_length,
            through_accel: self.estimator.accel,
            cap_through_speed: self.network.cap_through_speed,
        }
    }

    pub fn step_count(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }
}

/// One scheduled vehicle arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub node: String,
}

/// Arrival times of every inflow node over `[0, horizon)`, merged by time.
///
/// Uniform arrivals come at a fixed headway of `3600 / rate` seconds with a
/// seeded phase in `[0, headway)`; Poisson arrivals draw exponential
/// headways with the same mean.
pub fn schedule_arrivals(spec: &DemandSpec, horizon: f64) -> Vec<Arrival> {
    let mut arrivals = Vec::new();
    for (stream, (node, &rate)) in spec.rates.iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream as u64);
        let headway = 3600.0 / rate;
        match spec.arrival_process {
            ArrivalProcess::Uniform => {
                let phase = rng.random::<f64>() * headway;
                let mut k = 0u64;
                loop {
                    let t = phase + k as f64 * headway;
                    if t >= horizon {
                        break;
                    }
                    arrivals.push(Arrival {
                        time: t,
                        node: node.clone(),
                    });
                    k += 1;
                }
            }
            ArrivalProcess::Poisson => {
                let exp = Exp::new(rate / 3600.0).expect("positive rate");
                let mut t = exp.sample(&mut rng);
                while t < horizon {
                    arrivals.push(Arrival {
                        time: t,
                        node: node.clone(),
                    });
                    t += exp.sample(&mut rng);
                }
            }
        }
    }
    // Stable: equal times keep node order.
    arrivals.sort_by(|a, b| a.time.total_cmp(&b.time));
    arrivals
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpawnOutcome {
    Inserted(VehicleId),
    Deferred,
    NothingDue,
}

/// Complete state of one simulation run.
#[derive(Debug, Clone)]
pub struct WorldState {
    config: SimConfig,
    net: NetworkGraph,
    routes: Vec<Route>,
    route_lengths: Vec<Vec<f64>>,
    /// Route indices per origin node.
    routes_from: Vec<Vec<usize>>,
    /// Active vehicles, indexed by id.
    vehicles: Vec<Option<VehicleState>>,
    /// Per element, front vehicle first.
    occupancy: Vec<Vec<VehicleId>>,
    /// Per node; `None` at uncontrolled nodes.
    queues: Vec<Option<IntersectionQueue>>,
    schedule: Vec<Arrival>,
    next_arrival: usize,
    /// Due but not yet inserted arrival times, per node.
    pending: Vec<VecDeque<f64>>,
    step_index: u64,
    clock: f64,
    arrived: u64,
    deferral_events: u64,
    trips: Vec<TripRecord>,
    samples: Vec<Sample>,
}

impl WorldState {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let schedule = schedule_arrivals(&config.demand, config.horizon);
        Self::with_schedule(config, schedule)
    }

    /// World driven by an explicit arrival list instead of the demand spec.
    pub fn with_schedule(config: SimConfig, mut schedule: Vec<Arrival>) -> Result<Self, SimError> {
        config.validate()?;
        let net = build_grid(&config.grid_spec())?;
        schedule.sort_by(|a, b| a.time.total_cmp(&b.time));
        for a in &schedule {
            let node = net.node_by_name(&a.node)?;
            if !net.node(node).is_inflow {
                return Err(invalid(
                    "demand.rates_veh_per_hr",
                    format!("`{}` is not an inflow node", a.node),
                ));
            }
        }

        let mut routes = Vec::new();
        let mut routes_from = vec![Vec::new(); net.nodes.len()];
        for node in net.inflow_nodes() {
            for r in net.routes_between(node.id, net.outflow())? {
                routes_from[node.id.0].push(routes.len());
                routes.push(r);
            }
        }
        let route_lengths = routes
            .iter()
            .map(|r| {
                r.elements
                    .iter()
                    .map(|el| net.element_length(*el))
                    .collect()
            })
            .collect();
        let queues = net
            .nodes
            .iter()
            .map(|n| (n.control == Control::AllWayStop).then(|| IntersectionQueue::new(n.id)))
            .collect();
        Ok(WorldState {
            occupancy: vec![Vec::new(); net.element_count()],
            pending: vec![VecDeque::new(); net.nodes.len()],
            config,
            routes,
            route_lengths,
            routes_from,
            vehicles: Vec::new(),
            queues,
            schedule,
            next_arrival: 0,
            step_index: 0,
            clock: 0.0,
            arrived: 0,
            deferral_events: 0,
            trips: Vec::new(),
            samples: Vec::new(),
            net,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn network(&self) -> &NetworkGraph {
        &self.net
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn route(&self, index: usize) -> &Route {
        &self.routes[index]
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.get(id.0 as usize).and_then(Option::as_ref)
    }

    /// Active vehicles in id order.
    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.iter().flatten()
    }

    pub fn occupancy(&self, element: Element) -> &[VehicleId] {
        &self.occupancy[self.net.element_index(element)]
    }

    pub fn queue(&self, node: NodeId) -> Option<&IntersectionQueue> {
        self.queues[node.0].as_ref()
    }

    pub fn current_element(&self, vehicle: &VehicleState) -> Element {
        self.routes[vehicle.route].elements[vehicle.element_index]
    }

    pub fn active_count(&self) -> usize {
        self.occupancy.iter().map(Vec::len).sum()
    }

    pub fn completed_count(&self) -> usize {
        self.trips.len()
    }

    /// Due arrivals still waiting outside the network.
    pub fn deferred_count(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum()
    }

    /// Arrivals that have come due so far.
    pub fn arrived_count(&self) -> u64 {
        self.arrived
    }

    pub fn deferral_events(&self) -> u64 {
        self.deferral_events
    }

    pub fn trips(&self) -> &[TripRecord] {
        &self.trips
    }

    pub fn is_finished(&self) -> bool {
        self.step_index >= self.config.step_count()
    }

    fn v(&self, id: VehicleId) -> &VehicleState {
        self.vehicles[id.0 as usize]
            .as_ref()
            .expect("active vehicle")
    }

    /// Edge ending at a stop-controlled node.
    fn is_stop_approach(&self, element: Element) -> bool {
        match element {
            Element::Edge(e) => self.queues[self.net.edge(e).to.0].is_some(),
            Element::Connector(_) => false,
        }
    }

    fn holds_grant(&self, vehicle: VehicleId, node: NodeId) -> bool {
        self.queues[node.0]
            .as_ref()
            .is_some_and(|q| q.occupant == Some(vehicle))
    }

    /// Leader along `route` ahead of position (`index`, `offset`), skipping
    /// vehicles on the starting element. Also reports a stop line found
    /// further down the route, as a standing leader.
    fn look_ahead(&self, route: usize, index: usize, offset: f64) -> Option<Leader> {
        let elements = &self.routes[route].elements;
        let lengths = &self.route_lengths[route];
        let mut dist = lengths[index] - offset;
        for k in index + 1..elements.len() {
            let el = elements[k];
            if let Some(last) = self.occupancy[self.net.element_index(el)].last() {
                let v = self.v(*last);
                return Some(Leader {
                    gap: dist + v.offset - self.config.idm.vehicle_length,
                    speed: v.speed,
                });
            }
            if self.is_stop_approach(el) {
                return Some(Leader {
                    gap: dist + lengths[k],
                    speed: 0.0,
                });
            }
            dist += lengths[k];
            if dist > LOOKAHEAD {
                break;
            }
        }
        None
    }

    fn context_for(&self, id: VehicleId, pos_in_element: usize) -> StepContext<'_> {
        let v = self.v(id);
        let route = &self.routes[v.route];
        let lengths = &self.route_lengths[v.route];
        let el = route.elements[v.element_index];
        let list = &self.occupancy[self.net.element_index(el)];
        let leader = if pos_in_element > 0 {
            let lead = self.v(list[pos_in_element - 1]);
            Some(Leader {
                gap: lead.offset - self.config.idm.vehicle_length - v.offset,
                speed: lead.speed,
            })
        } else {
            self.look_ahead(v.route, v.element_index, v.offset)
        };
        let hold = self.is_stop_approach(el) && !self.holds_grant(id, self.net.element_node(el));
        let dist_to_end = lengths[v.element_index] - v.offset;
        let stop_line = hold.then_some(dist_to_end);
        let v_max = self.net.element_max_speed(el);
        let speed_cap_ahead = route
            .elements
            .get(v.element_index + 1)
            .map(|next| self.net.element_max_speed(*next))
            .filter(|cap| *cap < v_max && !hold)
            .map(|cap| (dist_to_end, cap));
        StepContext {
            leader,
            stop_line,
            v_max,
            speed_cap_ahead,
            element_lengths: lengths,
            hold_at_end: hold,
            dt: self.config.dt,
            clock: self.clock,
        }
    }

    /// Inserts the oldest due arrival at `node` if there is room.
    pub fn spawn(&mut self, node: NodeId) -> SpawnOutcome {
        if self.pending[node.0].is_empty() {
            return SpawnOutcome::NothingDue;
        }
        let candidates: Vec<&Route> = self.routes_from[node.0]
            .iter()
            .map(|&r| &self.routes[r])
            .collect();
        let (choice, _cost) =
            match select_route(&candidates, self.clock, self, &self.config.estimator) {
                Ok(c) => c,
                Err(_) => return SpawnOutcome::Deferred,
            };
        let route = self.routes_from[node.0][choice];
        let entry = self.routes[route].elements[0];
        let idm = &self.config.idm;
        let required = idm.min_spacing + idm.vehicle_length;

        let on_entry = &self.occupancy[self.net.element_index(entry)];
        let ahead = match on_entry.last() {
            Some(last) => {
                let v = self.v(*last);
                Some(Leader {
                    gap: v.offset - idm.vehicle_length,
                    speed: v.speed,
                })
            }
            None => self.look_ahead(route, 0, 0.0),
        };
        let mut gap = ahead.map_or(f64::INFINITY, |l| l.gap);
        if self.is_stop_approach(entry) {
            gap = gap.min(self.route_lengths[route][0]);
        }
        // A vehicle crossing this node's box towards the entry edge has priority.
        let box_bound = self.queues[node.0]
            .as_ref()
            .and_then(|q| q.occupant)
            .is_some_and(|occ| {
                let o = self.v(occ);
                self.routes[o.route].elements[o.element_index..]
                    .iter()
                    .take(3)
                    .any(|el| *el == entry)
            });
        if gap < required || box_bound {
            self.deferral_events += 1;
            return SpawnOutcome::Deferred;
        }

        let leader_speed = ahead.map_or(0.0, |l| l.speed);
        let safe = (leader_speed * leader_speed
            + 2.0 * idm.comfortable_decel * (gap - idm.min_spacing))
            .sqrt();
        let speed = self
            .net
            .element_max_speed(entry)
            .min(MAX_INSERTION_SPEED)
            .min(safe);
        let id = VehicleId(self.vehicles.len() as u64);
        self.pending[node.0].pop_front().expect("checked non-empty");
        self.vehicles.push(Some(VehicleState {
            id,
            route,
            element_index: 0,
            offset: 0.0,
            speed,
            accel: 0.0,
            entry_time: self.clock,
            exit_time: None,
        }));
        let idx = self.net.element_index(entry);
        self.occupancy[idx].push(id);
        SpawnOutcome::Inserted(id)
    }

    /// Advances the world by one time step.
    pub fn step(&mut self) -> Result<(), SimError> {
        let dt = self.config.dt;

        // Arrivals.
        while let Some(a) = self.schedule.get(self.next_arrival) {
            if a.time > self.clock {
                break;
            }
            let node = self.net.node_by_name(&a.node).expect("validated");
            self.pending[node.0].push_back(a.time);
            self.arrived += 1;
            self.next_arrival += 1;
        }
        for n in 0..self.net.nodes.len() {
            self.spawn(NodeId(n));
        }

        // Stop-line arrivals and grants.
        for e in 0..self.net.edges.len() {
            let el = Element::Edge(crate::network::EdgeId(e));
            if !self.is_stop_approach(el) {
                continue;
            }
            let Some(&front) = self.occupancy[e].first() else {
                continue;
            };
            let offset = self.v(front).offset;
            let node = self.net.edge(crate::network::EdgeId(e)).to;
            let len = self.net.edge(crate::network::EdgeId(e)).length;
            let queue = self.queues[node.0].as_mut().expect("stop node");
            if len - offset <= STOP_ZONE && !queue.contains(front) {
                queue.arrive(front, self.clock);
            }
        }
        let service_time = self.config.service_time;
        let clock = self.clock;
        for n in 0..self.queues.len() {
            if let Some(mut q) = self.queues[n].take() {
                arbitrate_stop(&mut q, clock, service_time, |id| self.v(id).speed);
                self.queues[n] = Some(q);
            }
        }

        // Kinematics, synchronous over the start-of-step state, visited by
        // element then front to back.
        let mut updates = Vec::with_capacity(self.active_count());
        for list in &self.occupancy {
            for (pos, &id) in list.iter().enumerate() {
                let ctx = self.context_for(id, pos);
                let next = step_vehicle(self.v(id), &ctx, &self.config.idm).map_err(|source| {
                    SimError::Collision {
                        clock: self.clock,
                        source,
                        dump: self.dump(),
                    }
                })?;
                updates.push(next);
            }
        }

        let exit_clock = self.clock + dt;
        for next in updates {
            let id = next.id;
            let old_index = self.v(id).element_index;
            let route = next.route;
            for k in old_index
                ..next
                    .element_index
                    .max(old_index + usize::from(next.exit_time.is_some()))
            {
                if let Element::Connector(c) = self.routes[route].elements[k] {
                    let node = self.net.connector(c).at_node;
                    if let Some(q) = self.queues[node.0].as_mut() {
                        if q.occupant == Some(id) {
                            q.occupant = None;
                        }
                    }
                }
            }
            if let Some(exit) = next.exit_time {
                let r = &self.routes[route];
                self.trips.push(TripRecord {
                    vehicle_id: id.0,
                    route_id: r.id.clone(),
                    entry_time: next.entry_time,
                    exit_time: exit,
                    travel_time: exit - next.entry_time,
                });
                self.vehicles[id.0 as usize] = None;
            } else {
                let entered_edge = next.element_index > old_index
                    && matches!(
                        self.routes[route].elements[next.element_index],
                        Element::Edge(_)
                    );
                self.vehicles[id.0 as usize] = Some(next);
                if entered_edge && self.config.reroute_enabled {
                    self.reroute(id);
                }
            }
        }
        debug_assert!(exit_clock >= self.clock);

        self.rebuild_occupancy();
        self.step_index += 1;
        self.clock = self.step_index as f64 * dt;
        if self.clock >= self.config.warmup - 1e-9 {
            self.samples.push(Sample {
                clock: self.clock,
                active_count: self.active_count() as u32,
                occupancy: self.occupancy.iter().map(|l| l.len() as u32).collect(),
            });
        }
        Ok(())
    }

    /// Switches a vehicle that just entered a road edge to the cheapest
    /// route sharing its path so far.
    fn reroute(&mut self, id: VehicleId) {
        let v = self.v(id);
        let (current, index) = (v.route, v.element_index);
        let origin = self.routes[current].origin();
        let prefix = &self.routes[current].elements[..=index];
        let options: Vec<usize> = self.routes_from[origin.0]
            .iter()
            .copied()
            .filter(|&r| {
                self.routes[r].elements.len() > index
                    && self.routes[r].elements[..=index] == *prefix
            })
            .collect();
        if options.len() < 2 {
            return;
        }
        let candidates: Vec<&Route> = options.iter().map(|&r| &self.routes[r]).collect();
        if let Ok((best, _)) = select_route_from(
            &candidates,
            index + 1,
            self.clock,
            self,
            &self.config.estimator,
        ) {
            let chosen = options[best];
            if let Some(v) = self.vehicles[id.0 as usize].as_mut() {
                v.route = chosen;
            }
        }
    }

    fn rebuild_occupancy(&mut self) {
        for list in &mut self.occupancy {
            list.clear();
        }
        for v in self.vehicles.iter().flatten() {
            let el = self.routes[v.route].elements[v.element_index];
            self.occupancy[self.net.element_index(el)].push(v.id);
        }
        let vehicles = &self.vehicles;
        for list in &mut self.occupancy {
            list.sort_by(|a, b| {
                let (va, vb) = (
                    vehicles[a.0 as usize].as_ref().unwrap(),
                    vehicles[b.0 as usize].as_ref().unwrap(),
                );
                vb.offset.total_cmp(&va.offset).then(a.cmp(b))
            });
        }
    }

    /// Text dump of all active vehicles, for abort diagnostics.
    pub fn dump(&self) -> String {
        let mut out = format!(
            "clock {:.2} s, {} active vehicles\n",
            self.clock,
            self.active_count()
        );
        for v in self.vehicles() {
            let el = self.current_element(v);
            let _ = writeln!(
                out,
                "  vehicle {} route {} element {} offset {:.3} speed {:.3} accel {:.3}",
                v.id.0,
                self.routes[v.route].id,
                self.net.element_name(el),
                v.offset,
                v.speed,
                v.accel
            );
        }
        for q in self.queues.iter().flatten() {
            let _ = writeln!(
                out,
                "  node {} occupant {:?} waiting {:?} release {:.2}",
                self.net.node(q.node).name,
                q.occupant.map(|v| v.0),
                q.waiting.iter().map(|(v, _)| v.0).collect::<Vec<_>>(),
                q.release_time
            );
        }
        out
    }

    /// Checks the structural invariants of the world; returns the first
    /// violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = 0usize;
        for el in self.net.elements() {
            let list = self.occupancy(el);
            let len = self.net.element_length(el);
            for (i, id) in list.iter().enumerate() {
                let v = self
                    .vehicle(*id)
                    .ok_or(format!("vehicle {} listed but inactive", id.0))?;
                if self.current_element(v) != el {
                    return Err(format!("vehicle {} listed on the wrong element", id.0));
                }
                if !(0.0..=len).contains(&v.offset) {
                    return Err(format!(
                        "vehicle {} offset {} outside [0, {len}]",
                        id.0, v.offset
                    ));
                }
                if v.speed < 0.0 {
                    return Err(format!("vehicle {} has negative speed", id.0));
                }
                let cap = self.net.element_max_speed(el) + 0.5;
                if v.speed > cap {
                    return Err(format!(
                        "vehicle {} speed {} above cap {cap}",
                        id.0, v.speed
                    ));
                }
                if i > 0 {
                    let ahead = self.v(list[i - 1]);
                    if ahead.offset - v.offset < self.config.idm.vehicle_length {
                        return Err(format!(
                            "vehicles {} and {} overlap on {}",
                            ahead.id.0,
                            id.0,
                            self.net.element_name(el)
                        ));
                    }
                }
            }
            seen += list.len();
        }
        if seen != self.vehicles().count() {
            return Err("occupancy lists do not cover all active vehicles".into());
        }
        for q in self.queues.iter().flatten() {
            if q.waiting
                .iter()
                .zip(q.waiting.iter().skip(1))
                .any(|(a, b)| a.1 > b.1)
            {
                return Err(format!("queue at node {} out of order", q.node.0));
            }
            if q.occupant.is_none() && q.release_time > self.clock + self.config.service_time {
                return Err(format!("queue at node {} released in the future", q.node.0));
            }
        }
        let accounted = self.active_count() + self.completed_count() + self.deferred_count();
        if accounted as u64 != self.arrived {
            return Err(format!(
                "conservation: {} arrived but {} accounted for",
                self.arrived, accounted
            ));
        }
        Ok(())
    }

    /// Consumes the world into its metrics log.
    pub fn into_log(self) -> MetricsLog {
        let element_names = self
            .net
            .elements()
            .map(|el| self.net.element_name(el))
            .collect();
        MetricsLog {
            trips: self.trips,
            samples: self.samples,
            element_names,
            total_lane_length_m: self.net.total_lane_length(),
            warmup: self.config.warmup,
            horizon: self.config.horizon,
            dt: self.config.dt,
            arrived: self.arrived,
            deferred: self.pending.iter().map(VecDeque::len).sum::<usize>() as u64,
            deferral_events: self.deferral_events,
            config: self.config,
        }
    }
}

impl TrafficView for WorldState {
    fn snapshot(&self, element: Element) -> EdgeSnapshot {
        let vehicles = self
            .occupancy(element)
            .iter()
            .map(|id| {
                let v = self.v(*id);
                SnapshotVehicle {
                    offset: v.offset,
                    speed: v.speed,
                    accel: v.accel,
                }
            })
            .collect();
        EdgeSnapshot::new(
            element,
            self.net.element_length(element),
            self.net.element_max_speed(element),
            vehicles,
        )
    }
}

/// Runs a full simulation.
pub fn run(config: &SimConfig) -> Result<MetricsLog, SimError> {
    let mut world = WorldState::new(config.clone())?;
    while !world.is_finished() {
        world.step()?;
    }
    Ok(world.into_log())
}

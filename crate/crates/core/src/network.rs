//! Graph model of the 2x3 stop-controlled grid.
//!
//! The grid has two rows of three intersections:
//!
//! ```text
//!   A ---> C ---> M
//!   |      :      |
//!   v      v      v
//!   N ---> D ---> B
//! ```
//!
//! Vehicles enter at `A` (the only uncontrolled intersection) and leave at
//! `B`. The dotted `C -> D` link is the added path and only exists in the
//! [`Variant::AddedPath`] network. Every movement through an intersection is
//! realised by a short [`Connector`] whose speed cap depends on the turn kind.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Turning speed caps, in m/s.
pub const LEFT_TURN_SPEED: f64 = 10.0;
pub const RIGHT_TURN_SPEED: f64 = 8.0;

/// Name of the uncontrolled origin intersection.
pub const ORIGIN: &str = "A";
/// Name of the single outflow intersection.
pub const OUTFLOW: &str = "B";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network variant `{0}` (expected `baseline` or `added_path`)")]
    InvalidVariant(String),
    #[error("inflow node `{0}` is not part of the grid")]
    UnknownInflowNode(String),
    #[error("the outflow node `{0}` cannot be an inflow node")]
    OutflowAsInflow(String),
    #[error("at least one inflow node is required")]
    NoInflowNodes,
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("route query needs distinct origin and destination, got `{0}` twice")]
    DegenerateQuery(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConnectorId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    AllWayStop,
    Uncontrolled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    /// (row, column), row 0 on top.
    pub grid_position: (usize, usize),
    pub control: Control,
    pub is_inflow: bool,
    pub is_outflow: bool,
}

/// Cost class of a road edge in the route-cost composition of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthClass {
    A,
    B,
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length: f64,
    pub speed_limit: f64,
    pub length_class: LengthClass,
    pub lanes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnKind {
    #[serde(rename = "LT")]
    Left,
    #[serde(rename = "RT")]
    Right,
    #[serde(rename = "TH")]
    Through,
}

impl fmt::Display for TurnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TurnKind::Left => "LT",
            TurnKind::Right => "RT",
            TurnKind::Through => "TH",
        })
    }
}

/// A movement through an intersection.
///
/// `from_edge == None` marks the network entry at the origin and
/// `to_edge == None` the network exit at the outflow node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Connector {
    pub id: ConnectorId,
    pub at_node: NodeId,
    pub from_edge: Option<EdgeId>,
    pub to_edge: Option<EdgeId>,
    pub kind: TurnKind,
    pub length: f64,
    /// Speed cap from [`connector_max_speed`].
    pub max_speed: f64,
}

/// One piece of a route: a road edge or an intersection connector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum Element {
    Edge(EdgeId),
    Connector(ConnectorId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    /// Node names joined by `-`, e.g. `A-C-D-B`.
    pub id: String,
    pub nodes: Vec<NodeId>,
    pub elements: Vec<Element>,
    /// `incidence[e]` is true iff edge `e` is on the route.
    pub incidence: Vec<bool>,
}

impl Route {
    pub fn origin(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.nodes.last().expect("route has nodes")
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.elements.iter().filter_map(|el| match el {
            Element::Edge(e) => Some(*e),
            Element::Connector(_) => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    AddedPath,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::AddedPath => "added_path",
        })
    }
}

impl FromStr for Variant {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "added_path" => Ok(Variant::AddedPath),
            other => Err(NetworkError::InvalidVariant(other.to_string())),
        }
    }
}

/// Inputs of [`build_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub variant: Variant,
    pub edge_length: f64,
    pub base_speed_limit: f64,
    pub added_path_speed_limit: f64,
    pub inflow_nodes: Vec<String>,
    pub connector_length: f64,
    /// Constant acceleration used for the through-movement speed cap.
    pub through_accel: f64,
    /// Cap the through-movement speed at the approach speed limit.
    pub cap_through_speed: bool,
}

impl GridSpec {
    pub fn new(
        variant: Variant,
        edge_length: f64,
        base_speed_limit: f64,
        added_path_speed_limit: f64,
        inflow_nodes: &[&str],
    ) -> Self {
        GridSpec {
            variant,
            edge_length,
            base_speed_limit,
            added_path_speed_limit,
            inflow_nodes: inflow_nodes.iter().map(|s| s.to_string()).collect(),
            connector_length: 10.0,
            through_accel: 3.0,
            cap_through_speed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkGraph {
    pub variant: Variant,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub connectors: Vec<Connector>,
    /// All routes from the origin to the outflow node.
    pub routes: Vec<Route>,
}

/// Speed cap of an intersection movement.
///
/// Turns use fixed empirical caps. A through movement may reach the speed
/// attainable over the approach edge at constant acceleration `accel`, but
/// never more than the approach speed limit.
pub fn connector_max_speed(
    kind: TurnKind,
    accel: f64,
    approach_edge_length: f64,
    approach_speed_limit: f64,
) -> f64 {
    match kind {
        TurnKind::Left => LEFT_TURN_SPEED,
        TurnKind::Right => RIGHT_TURN_SPEED,
        TurnKind::Through => (2.0 * accel * approach_edge_length)
            .sqrt()
            .min(approach_speed_limit),
    }
}

const GRID: [(&str, (usize, usize)); 6] = [
    ("A", (0, 0)),
    ("C", (0, 1)),
    ("M", (0, 2)),
    ("N", (1, 0)),
    ("D", (1, 1)),
    ("B", (1, 2)),
];

// (from, to, class, on added path)
const GRID_EDGES: [(&str, &str, LengthClass, bool); 7] = [
    ("A", "C", LengthClass::A, false),
    ("A", "N", LengthClass::B, false),
    ("C", "M", LengthClass::B, false),
    ("C", "D", LengthClass::C, true),
    ("N", "D", LengthClass::B, false),
    ("M", "B", LengthClass::B, false),
    ("D", "B", LengthClass::A, false),
];

// Vehicles enter the origin and leave the outflow node heading east.
const BOUNDARY_HEADING: (i64, i64) = (0, 1);

fn check_positive(name: &'static str, value: f64) -> Result<(), NetworkError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(NetworkError::NonPositive { name, value })
    }
}

/// Builds the baseline or added-path grid.
pub fn build_grid(spec: &GridSpec) -> Result<NetworkGraph, NetworkError> {
    check_positive("edge_length", spec.edge_length)?;
    check_positive("base_speed_limit", spec.base_speed_limit)?;
    check_positive("added_path_speed_limit", spec.added_path_speed_limit)?;
    check_positive("connector_length", spec.connector_length)?;
    check_positive("through_accel", spec.through_accel)?;
    if spec.inflow_nodes.is_empty() {
        return Err(NetworkError::NoInflowNodes);
    }
    for name in &spec.inflow_nodes {
        if name == OUTFLOW {
            return Err(NetworkError::OutflowAsInflow(name.clone()));
        }
        if !GRID.iter().any(|(n, _)| n == name) {
            return Err(NetworkError::UnknownInflowNode(name.clone()));
        }
    }

    let nodes = GRID
        .iter()
        .enumerate()
        .map(|(i, (name, pos))| Node {
            id: NodeId(i),
            name: name.to_string(),
            grid_position: *pos,
            control: if *name == ORIGIN {
                Control::Uncontrolled
            } else {
                Control::AllWayStop
            },
            is_inflow: spec.inflow_nodes.iter().any(|n| n == name),
            is_outflow: *name == OUTFLOW,
        })
        .collect::<Vec<_>>();
    let node_id = |name: &str| NodeId(GRID.iter().position(|(n, _)| *n == name).unwrap());

    let edges = GRID_EDGES
        .iter()
        .filter(|(_, _, _, added)| !added || spec.variant == Variant::AddedPath)
        .enumerate()
        .map(|(i, (from, to, class, added))| Edge {
            id: EdgeId(i),
            from: node_id(from),
            to: node_id(to),
            length: spec.edge_length,
            speed_limit: if *added {
                spec.added_path_speed_limit
            } else {
                spec.base_speed_limit
            },
            length_class: *class,
            lanes: 1,
        })
        .collect::<Vec<_>>();

    let mut net = NetworkGraph {
        variant: spec.variant,
        nodes,
        edges,
        connectors: Vec::new(),
        routes: Vec::new(),
    };
    net.connectors = build_connectors(&net, spec);
    net.routes = net.routes_between(node_id(ORIGIN), node_id(OUTFLOW))?;
    Ok(net)
}

fn build_connectors(net: &NetworkGraph, spec: &GridSpec) -> Vec<Connector> {
    let mut connectors = Vec::new();
    for node in &net.nodes {
        let incoming: Vec<Option<&Edge>> = if node.name == ORIGIN {
            vec![None]
        } else {
            net.edges
                .iter()
                .filter(|e| e.to == node.id)
                .map(Some)
                .collect()
        };
        let outgoing: Vec<Option<&Edge>> = if node.is_outflow {
            vec![None]
        } else {
            net.edges
                .iter()
                .filter(|e| e.from == node.id)
                .map(Some)
                .collect()
        };
        for from in &incoming {
            for to in &outgoing {
                let h_in = from.map_or(BOUNDARY_HEADING, |e| net.heading(e));
                let h_out = to.map_or(BOUNDARY_HEADING, |e| net.heading(e));
                let kind = turn_kind(h_in, h_out);
                let (approach_len, approach_limit) = match from {
                    Some(e) => (e.length, e.speed_limit),
                    None => (spec.edge_length, spec.base_speed_limit),
                };
                let limit = if spec.cap_through_speed {
                    approach_limit
                } else {
                    f64::INFINITY
                };
                connectors.push(Connector {
                    id: ConnectorId(connectors.len()),
                    at_node: node.id,
                    from_edge: from.map(|e| e.id),
                    to_edge: to.map(|e| e.id),
                    kind,
                    length: spec.connector_length,
                    max_speed: connector_max_speed(kind, spec.through_accel, approach_len, limit),
                });
            }
        }
    }
    connectors
}

/// Classifies a heading change; `rows` grow downwards so a clockwise turn is
/// a right turn.
fn turn_kind(h_in: (i64, i64), h_out: (i64, i64)) -> TurnKind {
    let cross = h_in.1 * h_out.0 - h_in.0 * h_out.1;
    match cross.signum() {
        1 => TurnKind::Right,
        -1 => TurnKind::Left,
        _ => TurnKind::Through,
    }
}

impl NetworkGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn connector(&self, id: ConnectorId) -> &Connector {
        &self.connectors[id.0]
    }

    pub fn node_by_name(&self, name: &str) -> Result<NodeId, NetworkError> {
        self.nodes
            .iter()
            .find(|n| n.name == name)
            .map(|n| n.id)
            .ok_or_else(|| NetworkError::UnknownNode(name.to_string()))
    }

    pub fn origin(&self) -> NodeId {
        self.nodes
            .iter()
            .find(|n| n.control == Control::Uncontrolled)
            .expect("grid has an uncontrolled origin")
            .id
    }

    pub fn outflow(&self) -> NodeId {
        self.nodes
            .iter()
            .find(|n| n.is_outflow)
            .expect("grid has an outflow node")
            .id
    }

    pub fn inflow_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_inflow)
    }

    fn heading(&self, edge: &Edge) -> (i64, i64) {
        let (r0, c0) = self.node(edge.from).grid_position;
        let (r1, c1) = self.node(edge.to).grid_position;
        (r1 as i64 - r0 as i64, c1 as i64 - c0 as i64)
    }

    /// Heading change implied by the grid positions of a connector's
    /// endpoints.
    pub fn geometric_turn(&self, connector: &Connector) -> TurnKind {
        let h_in = connector
            .from_edge
            .map_or(BOUNDARY_HEADING, |e| self.heading(self.edge(e)));
        let h_out = connector
            .to_edge
            .map_or(BOUNDARY_HEADING, |e| self.heading(self.edge(e)));
        turn_kind(h_in, h_out)
    }

    pub fn element_length(&self, element: Element) -> f64 {
        match element {
            Element::Edge(e) => self.edge(e).length,
            Element::Connector(c) => self.connector(c).length,
        }
    }

    /// Speed a vehicle may drive at on the element.
    pub fn element_max_speed(&self, element: Element) -> f64 {
        match element {
            Element::Edge(e) => self.edge(e).speed_limit,
            Element::Connector(c) => self.connector(c).max_speed,
        }
    }

    /// Node whose box the element belongs to (connectors) or ends at (edges).
    pub fn element_node(&self, element: Element) -> NodeId {
        match element {
            Element::Edge(e) => self.edge(e).to,
            Element::Connector(c) => self.connector(c).at_node,
        }
    }

    /// Flat index over edges followed by connectors.
    pub fn element_index(&self, element: Element) -> usize {
        match element {
            Element::Edge(e) => e.0,
            Element::Connector(c) => self.edges.len() + c.0,
        }
    }

    pub fn element_count(&self) -> usize {
        self.edges.len() + self.connectors.len()
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        (0..self.edges.len())
            .map(|i| Element::Edge(EdgeId(i)))
            .chain((0..self.connectors.len()).map(|i| Element::Connector(ConnectorId(i))))
    }

    pub fn element_name(&self, element: Element) -> String {
        match element {
            Element::Edge(e) => {
                let e = self.edge(e);
                format!("{}{}", self.node(e.from).name, self.node(e.to).name)
            }
            Element::Connector(c) => {
                let c = self.connector(c);
                let end = |e: Option<EdgeId>, at_from: bool| match e {
                    Some(e) => {
                        let e = self.edge(e);
                        self.node(if at_from { e.from } else { e.to }).name.clone()
                    }
                    None => "x".to_string(),
                };
                format!(
                    "{}{}{}_{}",
                    end(c.from_edge, true),
                    self.node(c.at_node).name,
                    end(c.to_edge, false),
                    c.kind
                )
            }
        }
    }

    /// Total lane length of all edges and connectors, in metres.
    pub fn total_lane_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.length * e.lanes as f64)
            .sum::<f64>()
            + self.connectors.iter().map(|c| c.length).sum::<f64>()
    }

    pub fn find_connector(&self, from: Option<EdgeId>, to: Option<EdgeId>) -> Option<&Connector> {
        self.connectors
            .iter()
            .find(|c| c.from_edge == from && c.to_edge == to)
    }

    pub fn find_edge(&self, from: &str, to: &str) -> Option<&Edge> {
        self.edges
            .iter()
            .find(|e| self.node(e.from).name == from && self.node(e.to).name == to)
    }

    /// All simple directed paths from `origin` to `destination`, sorted by
    /// node-name sequence, each expanded into edges and connectors.
    ///
    /// Routes leaving the uncontrolled origin start with its entry connector;
    /// routes ending at the outflow node end with its exit connector.
    pub fn routes_between(
        &self,
        origin: NodeId,
        destination: NodeId,
    ) -> Result<Vec<Route>, NetworkError> {
        if origin == destination {
            return Err(NetworkError::DegenerateQuery(
                self.node(origin).name.clone(),
            ));
        }
        let mut paths = Vec::new();
        let mut stack = vec![origin];
        let mut edges = Vec::new();
        self.dfs(destination, &mut stack, &mut edges, &mut paths);

        let mut routes = paths
            .into_iter()
            .map(|(nodes, edges)| self.wrap_route(nodes, edges))
            .collect::<Vec<_>>();
        routes.sort_by(|a, b| self.node_names(&a.nodes).cmp(&self.node_names(&b.nodes)));
        Ok(routes)
    }

    fn node_names(&self, nodes: &[NodeId]) -> Vec<&str> {
        nodes.iter().map(|n| self.node(*n).name.as_str()).collect()
    }

    fn dfs(
        &self,
        destination: NodeId,
        stack: &mut Vec<NodeId>,
        edges: &mut Vec<EdgeId>,
        out: &mut Vec<(Vec<NodeId>, Vec<EdgeId>)>,
    ) {
        let here = *stack.last().unwrap();
        if here == destination {
            out.push((stack.clone(), edges.clone()));
            return;
        }
        for e in self.edges.iter().filter(|e| e.from == here) {
            if stack.contains(&e.to) {
                continue;
            }
            stack.push(e.to);
            edges.push(e.id);
            self.dfs(destination, stack, edges, out);
            edges.pop();
            stack.pop();
        }
    }

    fn wrap_route(&self, nodes: Vec<NodeId>, edges: Vec<EdgeId>) -> Route {
        let mut elements = Vec::with_capacity(edges.len() * 2 + 1);
        let first = self.node(nodes[0]);
        if first.control == Control::Uncontrolled {
            let c = self
                .find_connector(None, Some(edges[0]))
                .expect("entry connector exists");
            elements.push(Element::Connector(c.id));
        }
        for (i, e) in edges.iter().enumerate() {
            elements.push(Element::Edge(*e));
            if let Some(next) = edges.get(i + 1) {
                let c = self
                    .find_connector(Some(*e), Some(*next))
                    .expect("turn connector exists");
                elements.push(Element::Connector(c.id));
            }
        }
        if self.node(*nodes.last().unwrap()).is_outflow {
            let c = self
                .find_connector(Some(*edges.last().unwrap()), None)
                .expect("exit connector exists");
            elements.push(Element::Connector(c.id));
        }
        let mut incidence = vec![false; self.edges.len()];
        for e in &edges {
            incidence[e.0] = true;
        }
        Route {
            id: self.node_names(&nodes).join("-"),
            nodes,
            elements,
            incidence,
        }
    }

    /// Copy of the network with one road edge (and its connectors) removed,
    /// identifiers renumbered and routes re-enumerated.
    pub fn without_edge(&self, removed: EdgeId) -> NetworkGraph {
        let remap_edge = |e: EdgeId| -> Option<EdgeId> {
            match e.0.cmp(&removed.0) {
                std::cmp::Ordering::Less => Some(e),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(EdgeId(e.0 - 1)),
            }
        };
        let edges = self
            .edges
            .iter()
            .filter_map(|e| remap_edge(e.id).map(|id| Edge { id, ..e.clone() }))
            .collect();
        let connectors = self
            .connectors
            .iter()
            .filter(|c| c.from_edge != Some(removed) && c.to_edge != Some(removed))
            .enumerate()
            .map(|(i, c)| Connector {
                id: ConnectorId(i),
                from_edge: c.from_edge.and_then(remap_edge),
                to_edge: c.to_edge.and_then(remap_edge),
                ..c.clone()
            })
            .collect();
        let mut net = NetworkGraph {
            variant: self.variant,
            nodes: self.nodes.clone(),
            edges,
            connectors,
            routes: Vec::new(),
        };
        net.routes = net
            .routes_between(net.origin(), net.outflow())
            .expect("origin and outflow differ");
        net
    }

    /// Node names touched by the given inflow set, sorted, for reporting.
    pub fn inflow_names(&self) -> BTreeSet<String> {
        self.inflow_nodes().map(|n| n.name.clone()).collect()
    }
}

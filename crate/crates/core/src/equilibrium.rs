//! Static user equilibrium on path-enumerated networks with linear edge costs.
//!
//! Two solvers are provided: exhaustive enumeration of integer path splits,
//! and the method of successive averages on the continuous problem. The
//! classical four- and five-edge diamonds are available as constructors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest demand the integer solver enumerates.
pub const MAX_INTEGER_DEMAND: u64 = 200;
/// Largest path count the integer solver enumerates.
pub const MAX_INTEGER_PATHS: usize = 5;
/// Iteration cap of the successive-averages solver.
pub const MSA_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("edge `{0}` is defined twice")]
    DuplicateEdge(String),
    #[error("path `{0}` is defined twice")]
    DuplicatePath(String),
    #[error("path `{path}` uses unknown edge `{edge}`")]
    UnknownEdge { path: String, edge: String },
    #[error("path `{0}` does not connect {1} to {2}")]
    BrokenPath(String, String, String),
    #[error("edge `{0}` has a negative slope or intercept")]
    NegativeCost(String),
    #[error("demand must be finite and non-negative, got {0}")]
    InvalidDemand(f64),
    #[error("problem has no paths")]
    NoPaths,
    #[error("unknown path index {0}")]
    UnknownPath(usize),
    #[error("flow vector has {got} entries for {expected} paths")]
    FlowLength { got: usize, expected: usize },
    #[error("integer enumeration needs an integral demand <= {MAX_INTEGER_DEMAND} and at most {MAX_INTEGER_PATHS} paths (demand {demand}, {paths} paths)")]
    TooLarge { demand: f64, paths: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("problems differ: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearCostEdge {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Cost per vehicle on the edge.
    pub slope: f64,
    pub intercept: f64,
}

impl LinearCostEdge {
    pub fn cost(&self, flow: f64) -> f64 {
        self.slope * flow + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub id: String,
    /// Edge ids in travel order.
    pub edges: Vec<String>,
}

/// Raw, unvalidated problem description (the file format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeProblemSpec {
    #[serde(default)]
    pub name: String,
    pub origin: String,
    pub destination: String,
    #[serde(rename = "demand_veh")]
    pub demand: f64,
    pub edges: Vec<LinearCostEdge>,
    pub paths: Vec<PathSpec>,
}

/// Validated single-origin-destination problem.
#[derive(Debug, Clone, PartialEq)]
pub struct UeProblem {
    spec: UeProblemSpec,
    /// `incidence[p][e]`: edge `e` lies on path `p`.
    incidence: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeResult {
    pub path_flows: Vec<f64>,
    pub edge_flows: Vec<f64>,
    pub path_costs: Vec<f64>,
    /// Equilibrium cost: the cheapest used path (cheapest path without demand).
    pub min_cost: f64,
    /// Largest excess of a used path's cost over the cheapest path.
    pub max_violation: f64,
    /// Flow-weighted mean excess cost, the solver's convergence measure.
    pub mean_excess_cost: f64,
    pub iterations: usize,
}

impl UeProblem {
    pub fn new(spec: UeProblemSpec) -> Result<Self, EquilibriumError> {
        if !(spec.demand >= 0.0 && spec.demand.is_finite()) {
            return Err(EquilibriumError::InvalidDemand(spec.demand));
        }
        if spec.paths.is_empty() {
            return Err(EquilibriumError::NoPaths);
        }
        for (i, e) in spec.edges.iter().enumerate() {
            if spec.edges[..i].iter().any(|o| o.id == e.id) {
                return Err(EquilibriumError::DuplicateEdge(e.id.clone()));
            }
            if !(e.slope >= 0.0 && e.intercept >= 0.0) {
                return Err(EquilibriumError::NegativeCost(e.id.clone()));
            }
        }
        let mut incidence = Vec::with_capacity(spec.paths.len());
        for (i, p) in spec.paths.iter().enumerate() {
            if spec.paths[..i].iter().any(|o| o.id == p.id) {
                return Err(EquilibriumError::DuplicatePath(p.id.clone()));
            }
            let mut row = vec![false; spec.edges.len()];
            let mut at = spec.origin.as_str();
            for edge_id in &p.edges {
                let (idx, edge) = spec
                    .edges
                    .iter()
                    .enumerate()
                    .find(|(_, e)| &e.id == edge_id)
                    .ok_or_else(|| EquilibriumError::UnknownEdge {
                        path: p.id.clone(),
                        edge: edge_id.clone(),
                    })?;
                if edge.from != at || row[idx] {
                    return Err(broken(&spec, p));
                }
                row[idx] = true;
                at = edge.to.as_str();
            }
            if at != spec.destination || p.edges.is_empty() {
                return Err(broken(&spec, p));
            }
            incidence.push(row);
        }
        Ok(UeProblem { spec, incidence })
    }

    pub fn spec(&self) -> &UeProblemSpec {
        &self.spec
    }

    pub fn demand(&self) -> f64 {
        self.spec.demand
    }

    pub fn path_count(&self) -> usize {
        self.spec.paths.len()
    }

    pub fn path_ids(&self) -> impl Iterator<Item = &str> {
        self.spec.paths.iter().map(|p| p.id.as_str())
    }

    pub fn incidence(&self, path: usize, edge: usize) -> bool {
        self.incidence[path][edge]
    }

    /// Same problem with another demand.
    pub fn with_demand(&self, demand: f64) -> Result<Self, EquilibriumError> {
        UeProblem::new(UeProblemSpec {
            demand,
            ..self.spec.clone()
        })
    }

    /// `f_e = sum_p x_p delta_ep`.
    pub fn edge_flows(&self, path_flows: &[f64]) -> Vec<f64> {
        let mut flows = vec![0.0; self.spec.edges.len()];
        for (row, x) in self.incidence.iter().zip(path_flows) {
            for (f, on) in flows.iter_mut().zip(row) {
                if *on {
                    *f += x;
                }
            }
        }
        flows
    }

    fn costs_from_edge_flows(&self, edge_flows: &[f64]) -> Vec<f64> {
        let edge_costs: Vec<f64> = self
            .spec
            .edges
            .iter()
            .zip(edge_flows)
            .map(|(e, f)| e.cost(*f))
            .collect();
        self.incidence
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&edge_costs)
                    .filter(|(on, _)| **on)
                    .map(|(_, c)| c)
                    .sum()
            })
            .collect()
    }

    fn check_flows(&self, flows: &[f64]) -> Result<(), EquilibriumError> {
        if flows.len() != self.path_count() {
            return Err(EquilibriumError::FlowLength {
                got: flows.len(),
                expected: self.path_count(),
            });
        }
        Ok(())
    }

    /// Costs of all paths under the given path flows.
    pub fn path_costs(&self, flows: &[f64]) -> Result<Vec<f64>, EquilibriumError> {
        self.check_flows(flows)?;
        Ok(self.costs_from_edge_flows(&self.edge_flows(flows)))
    }

    /// Cost of path `path` under the given path flows.
    pub fn path_cost(&self, flows: &[f64], path: usize) -> Result<f64, EquilibriumError> {
        if path >= self.path_count() {
            return Err(EquilibriumError::UnknownPath(path));
        }
        Ok(self.path_costs(flows)?[path])
    }

    fn result(&self, path_flows: Vec<f64>, iterations: usize) -> UeResult {
        let edge_flows = self.edge_flows(&path_flows);
        let path_costs = self.costs_from_edge_flows(&edge_flows);
        let cheapest = path_costs.iter().copied().fold(f64::INFINITY, f64::min);
        let used = || {
            path_flows
                .iter()
                .zip(&path_costs)
                .filter(|(x, _)| **x > 0.0)
                .map(|(_, c)| *c)
        };
        let min_cost = used().fold(f64::INFINITY, f64::min);
        let min_cost = if min_cost.is_finite() {
            min_cost
        } else {
            cheapest
        };
        let max_violation = used().map(|c| c - cheapest).fold(0.0, f64::max);
        let total: f64 = path_flows.iter().sum();
        let mean_excess_cost = if total > 0.0 {
            path_flows
                .iter()
                .zip(&path_costs)
                .map(|(x, c)| x * (c - cheapest))
                .sum::<f64>()
                / total
        } else {
            0.0
        };
        UeResult {
            path_flows,
            edge_flows,
            path_costs,
            min_cost,
            max_violation,
            mean_excess_cost,
            iterations,
        }
    }
}

fn broken(spec: &UeProblemSpec, p: &PathSpec) -> EquilibriumError {
    EquilibriumError::BrokenPath(p.id.clone(), spec.origin.clone(), spec.destination.clone())
}

/// Exhaustive search over integer path splits.
///
/// Returns the split with the smallest maximum Wardrop violation; the first
/// such split in enumeration order wins ties, so an exact integer equilibrium
/// is returned whenever one exists.
pub fn solve_ue_integer(problem: &UeProblem) -> Result<UeResult, EquilibriumError> {
    let demand = problem.demand();
    let paths = problem.path_count();
    if demand.fract() != 0.0 || demand > MAX_INTEGER_DEMAND as f64 || paths > MAX_INTEGER_PATHS {
        return Err(EquilibriumError::TooLarge { demand, paths });
    }
    let demand = demand as u64;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut split = vec![0u64; paths];
    enumerate_splits(&mut split, 0, demand, &mut |split| {
        let flows: Vec<f64> = split.iter().map(|&x| x as f64).collect();
        let costs = problem.costs_from_edge_flows(&problem.edge_flows(&flows));
        let cheapest = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let violation = flows
            .iter()
            .zip(&costs)
            .filter(|(x, _)| **x > 0.0)
            .map(|(_, c)| c - cheapest)
            .fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(v, _)| violation < *v) {
            best = Some((violation, flows));
        }
    });
    let (_, flows) = best.expect("at least one split");
    Ok(problem.result(flows, 1))
}

fn enumerate_splits(
    split: &mut [u64],
    index: usize,
    remaining: u64,
    visit: &mut impl FnMut(&[u64]),
) {
    if index + 1 == split.len() {
        split[index] = remaining;
        visit(split);
        return;
    }
    for x in (0..=remaining).rev() {
        split[index] = x;
        enumerate_splits(split, index + 1, remaining - x, visit);
    }
}

/// Method of successive averages: repeatedly average the current flows with
/// the all-or-nothing assignment to the cheapest path, step `1/k`.
///
/// Stops once the flow-weighted mean excess cost drops to `tolerance`.
pub fn solve_ue_continuous(
    problem: &UeProblem,
    tolerance: f64,
) -> Result<UeResult, EquilibriumError> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(EquilibriumError::InvalidTolerance(tolerance));
    }
    let demand = problem.demand();
    let n = problem.path_count();
    if demand == 0.0 {
        return Ok(problem.result(vec![0.0; n], 0));
    }
    let cheapest = |costs: &[f64]| {
        costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    };

    let mut flows = vec![0.0; n];
    let first = cheapest(&problem.path_costs(&flows)?);
    flows[first] = demand;
    let mut residual = f64::INFINITY;
    for k in 2..=MSA_MAX_ITERATIONS {
        let costs = problem.path_costs(&flows)?;
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        residual = flows
            .iter()
            .zip(&costs)
            .map(|(x, c)| x * (c - min))
            .sum::<f64>()
            / demand;
        if residual <= tolerance {
            return Ok(problem.result(flows, k - 1));
        }
        let target = cheapest(&costs);
        let step = 1.0 / k as f64;
        for (i, x) in flows.iter_mut().enumerate() {
            let aon = if i == target { demand } else { 0.0 };
            *x += step * (aon - *x);
        }
    }
    Err(EquilibriumError::NotConverged {
        iterations: MSA_MAX_ITERATIONS,
        residual,
    })
}

/// Which solver [`braess_delta`] uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UeSolver {
    Integer,
    Continuous { tolerance: f64 },
}

impl UeSolver {
    pub fn solve(&self, problem: &UeProblem) -> Result<UeResult, EquilibriumError> {
        match *self {
            UeSolver::Integer => solve_ue_integer(problem),
            UeSolver::Continuous { tolerance } => solve_ue_continuous(problem, tolerance),
        }
    }
}

/// Equilibrium cost with the extra paths minus the cost without them.
/// Positive values exhibit Braess's paradox.
pub fn braess_delta(
    without: &UeProblem,
    with: &UeProblem,
    solver: UeSolver,
) -> Result<f64, EquilibriumError> {
    let (a, b) = (without.spec(), with.spec());
    if a.origin != b.origin || a.destination != b.destination {
        return Err(EquilibriumError::Mismatch("origin/destination".into()));
    }
    if a.demand != b.demand {
        return Err(EquilibriumError::Mismatch("demand".into()));
    }
    let endpoints = |spec: &UeProblemSpec, p: &PathSpec| -> Vec<(String, String)> {
        p.edges
            .iter()
            .map(|id| {
                let e = spec.edges.iter().find(|e| &e.id == id).unwrap();
                (e.from.clone(), e.to.clone())
            })
            .collect()
    };
    for p in &a.paths {
        let key = endpoints(a, p);
        if !b.paths.iter().any(|q| endpoints(b, q) == key) {
            return Err(EquilibriumError::Mismatch(format!(
                "path `{}` is missing from the extended problem",
                p.id
            )));
        }
    }
    Ok(solver.solve(with)?.min_cost - solver.solve(without)?.min_cost)
}

fn edge(id: &str, slope: f64, intercept: f64) -> LinearCostEdge {
    let mut ends = id.chars().map(|c| c.to_string());
    LinearCostEdge {
        id: id.to_string(),
        from: ends.next().unwrap(),
        to: ends.next().unwrap(),
        slope,
        intercept,
    }
}

fn path(id: &str, edges: &[&str]) -> PathSpec {
    PathSpec {
        id: id.to_string(),
        edges: edges.iter().map(|e| e.to_string()).collect(),
    }
}

/// Four-edge diamond: A->C costs 10N, A->D N+50, C->B N+50, D->B 10N.
pub fn four_edge_diamond(demand: f64) -> UeProblemSpec {
    UeProblemSpec {
        name: "four_edge_diamond".into(),
        origin: "A".into(),
        destination: "B".into(),
        demand,
        edges: vec![
            edge("AC", 10.0, 0.0),
            edge("AD", 1.0, 50.0),
            edge("CB", 1.0, 50.0),
            edge("DB", 10.0, 0.0),
        ],
        paths: vec![path("ACB", &["AC", "CB"]), path("ADB", &["AD", "DB"])],
    }
}

/// The four-edge diamond plus the shortcut C->D costing N+10.
pub fn five_edge_diamond(demand: f64) -> UeProblemSpec {
    let mut spec = four_edge_diamond(demand);
    spec.name = "five_edge_diamond".into();
    spec.edges.push(edge("CD", 1.0, 10.0));
    spec.paths.push(path("ACDB", &["AC", "CD", "DB"]));
    spec
}

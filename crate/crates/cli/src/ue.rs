//! The `ue-solve` table: both solvers on one problem, or on a pair of
//! problems with and without extra paths.

use std::fs;
use std::path::Path;

use braess_core::equilibrium::{
    braess_delta, EquilibriumError, UeProblem, UeProblemSpec, UeResult, UeSolver,
};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeRow {
    pub problem: String,
    pub solver: String,
    /// `path_flow`, `path_cost`, `min_cost`, `max_violation`,
    /// `iterations` or `braess_delta`.
    pub quantity: String,
    /// Path id for per-path quantities, empty otherwise.
    pub path: String,
    pub value: f64,
}

pub fn load_problem(path: &Path) -> CliResult<UeProblem> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let spec: UeProblemSpec =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    UeProblem::new(spec).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn solvers(tolerance: f64) -> [(&'static str, UeSolver); 2] {
    [
        ("integer", UeSolver::Integer),
        ("continuous", UeSolver::Continuous { tolerance }),
    ]
}

fn result_rows(problem: &UeProblem, solver: &str, r: &UeResult) -> Vec<UeRow> {
    let name = &problem.spec().name;
    let row = |quantity: &str, path: &str, value: f64| UeRow {
        problem: name.clone(),
        solver: solver.to_string(),
        quantity: quantity.to_string(),
        path: path.to_string(),
        value,
    };
    let mut rows = Vec::new();
    for (id, flow) in problem.path_ids().zip(&r.path_flows) {
        rows.push(row("path_flow", id, *flow));
    }
    for (id, cost) in problem.path_ids().zip(&r.path_costs) {
        rows.push(row("path_cost", id, *cost));
    }
    rows.push(row("min_cost", "", r.min_cost));
    rows.push(row("max_violation", "", r.max_violation));
    rows.push(row("iterations", "", r.iterations as f64));
    rows
}

/// Solves each problem with both solvers; with two problems, also reports
/// the equilibrium cost change from the first to the second. The integer
/// solver is skipped, with a note on stderr, where it does not apply.
pub fn solve(problems: &[UeProblem], tolerance: f64) -> CliResult<Vec<UeRow>> {
    let mut rows = Vec::new();
    for (name, solver) in solvers(tolerance) {
        let mut applicable = true;
        for problem in problems {
            match solver.solve(problem) {
                Ok(r) => rows.extend(result_rows(problem, name, &r)),
                Err(e @ EquilibriumError::TooLarge { .. }) => {
                    eprintln!("{}: {name} solver skipped: {e}", problem.spec().name);
                    applicable = false;
                }
                Err(e) => return Err(CliError::usage(format!("{}: {e}", problem.spec().name))),
            }
        }
        if let ([without, with], true) = (problems, applicable) {
            let delta =
                braess_delta(without, with, solver).map_err(|e| CliError::usage(e.to_string()))?;
            rows.push(UeRow {
                problem: format!("{}->{}", without.spec().name, with.spec().name),
                solver: name.to_string(),
                quantity: "braess_delta".to_string(),
                path: String::new(),
                value: delta,
            });
        }
    }
    Ok(rows)
}

//! Routing problem definitions: instances, rollout state transitions,
//! feasibility masks and objectives for TSP, CVRP, PCTSP and OP.

mod generate;
mod state;

pub use generate::{cvrp_capacity, generate, op_max_length, PCTSP_MIN_PRIZE};
pub use state::{locality_distances, RolloutState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when comparing accumulated floating point quantities
/// against capacity, length or prize limits.
pub const FEAS_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tsp,
    Cvrp,
    Pctsp,
    Op,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Tsp, Task::Cvrp, Task::Pctsp, Task::Op];

    pub fn name(self) -> &'static str {
        match self {
            Task::Tsp => "tsp",
            Task::Cvrp => "cvrp",
            Task::Pctsp => "pctsp",
            Task::Op => "op",
        }
    }

    /// OP maximizes collected prize; the others minimize cost.
    pub fn maximize(self) -> bool {
        matches!(self, Task::Op)
    }

    pub fn has_depot(self) -> bool {
        !matches!(self, Task::Tsp)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(Task::Tsp),
            "cvrp" | "vrp" => Ok(Task::Cvrp),
            "pctsp" => Ok(Task::Pctsp),
            "op" => Ok(Task::Op),
            other => Err(Error::Argument(format!("unknown task {other:?}"))),
        }
    }
}

/// One problem instance. Node 0 is the depot for every task except TSP.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub task: Task,
    pub coords: Vec<[f64; 2]>,
    /// Demands normalized by vehicle capacity (CVRP).
    pub demands: Option<Vec<f64>>,
    pub prizes: Option<Vec<f64>>,
    pub penalties: Option<Vec<f64>>,
    /// Vehicle capacity in original demand units (CVRP).
    pub capacity: Option<f64>,
    pub max_length: Option<f64>,
    pub min_prize: Option<f64>,
    pub seed: u64,
    /// Multiply unit-square lengths by this factor to recover original units.
    pub scale: f64,
}

impl Instance {
    pub fn tsp(coords: Vec<[f64; 2]>) -> Self {
        Instance {
            task: Task::Tsp,
            coords,
            demands: None,
            prizes: None,
            penalties: None,
            capacity: None,
            max_length: None,
            min_prize: None,
            seed: 0,
            scale: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn depot(&self) -> Option<usize> {
        self.task.has_depot().then_some(0)
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    fn payload(&self, name: &str, v: &Option<Vec<f64>>) -> Result<()> {
        match v {
            Some(v) if v.len() != self.n() => Err(Error::Argument(format!(
                "{name} has {} entries for {} nodes",
                v.len(),
                self.n()
            ))),
            None => Err(Error::Argument(format!("{} instance needs {name}", self.task))),
            _ => Ok(()),
        }
    }

    /// Check the structural invariants of the instance.
    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::Argument(format!("instance needs at least 2 nodes, got {}", self.n())));
        }
        for (i, c) in self.coords.iter().enumerate() {
            if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::Argument(format!("node {i} coordinates {c:?} outside the unit square")));
            }
        }
        match self.task {
            Task::Tsp => {}
            Task::Cvrp => {
                self.payload("demands", &self.demands)?;
                let d = self.demands.as_ref().unwrap();
                if d[0] != 0.0 {
                    return Err(Error::Argument("depot demand must be 0".into()));
                }
                if let Some(i) = (1..d.len()).find(|&i| !(d[i] > 0.0 && d[i] <= 1.0)) {
                    return Err(Error::Argument(format!("node {i} normalized demand {} outside (0, 1]", d[i])));
                }
            }
            Task::Pctsp => {
                self.payload("prizes", &self.prizes)?;
                self.payload("penalties", &self.penalties)?;
                if !self.min_prize.is_some_and(|m| m > 0.0) {
                    return Err(Error::Argument("PCTSP needs a positive min_prize".into()));
                }
            }
            Task::Op => {
                self.payload("prizes", &self.prizes)?;
                if self.prizes.as_ref().unwrap()[0] != 0.0 {
                    return Err(Error::Argument("OP depot prize must be 0".into()));
                }
                if !self.max_length.is_some_and(|m| m > 0.0) {
                    return Err(Error::Argument("OP needs a positive max_length".into()));
                }
            }
        }
        Ok(())
    }
}

/// A complete action sequence with its evaluated objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub actions: Vec<usize>,
    /// Tour cost for minimization tasks, collected prize for OP.
    pub objective: f64,
    pub feasible: bool,
}

impl Solution {
    /// Reward in the maximization sense: `-cost`, or the OP prize.
    pub fn reward(&self, task: Task) -> f64 {
        if task.maximize() {
            self.objective
        } else {
            -self.objective
        }
    }

    /// True when `self` is strictly better than `other` for `task`.
    pub fn better_than(&self, other: &Solution, task: Task) -> bool {
        self.reward(task) > other.reward(task)
    }
}

/// Replay `actions` through the state machine and evaluate the objective.
///
/// TSP tours are closed cycles. Depot tasks start at node 0 and end back at
/// it; CVRP's final return is implicit.
pub fn evaluate(instance: &Instance, actions: &[usize]) -> Result<Solution> {
    let mut state = RolloutState::new(instance);
    for &a in actions {
        if state.is_terminal() {
            return Err(Error::Feasibility {
                constraint: "termination",
                detail: format!("action {a} after the route finished"),
            });
        }
        state.step(a)?;
    }
    if !state.is_terminal() {
        return Err(Error::Feasibility {
            constraint: "completeness",
            detail: format!("route unfinished after {} actions", actions.len()),
        });
    }
    let objective = objective_of_terminal(&state);
    Ok(Solution {
        actions: actions.to_vec(),
        objective,
        feasible: true,
    })
}

/// Objective of a complete action sequence (see [`evaluate`]).
pub fn objective(instance: &Instance, actions: &[usize]) -> Result<f64> {
    evaluate(instance, actions).map(|s| s.objective)
}

pub(crate) fn objective_of_terminal(state: &RolloutState<'_>) -> f64 {
    let inst = state.instance();
    match inst.task {
        Task::Tsp => {
            let p = state.partial();
            state.traveled() + inst.dist(*p.last().unwrap(), p[0])
        }
        Task::Cvrp => state.traveled() + inst.dist(state.current().unwrap(), 0),
        Task::Pctsp => {
            let pen = inst.penalties.as_ref().unwrap();
            let unvisited: f64 = (1..inst.n())
                .filter(|&i| !state.visited()[i])
                .map(|i| pen[i])
                .sum();
            state.traveled() + unvisited
        }
        Task::Op => state.collected_prize(),
    }
}

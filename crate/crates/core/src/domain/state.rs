use super::{Instance, Task, FEAS_EPS};
use crate::error::{Error, Result};

/// Partial solution `s_t = {a_1..a_t; x}` plus the task bookkeeping needed
/// to compute feasibility masks.
#[derive(Clone, Debug)]
pub struct RolloutState<'a> {
    inst: &'a Instance,
    visited: Vec<bool>,
    partial: Vec<usize>,
    current: Option<usize>,
    remaining_capacity: f64,
    collected_prize: f64,
    traveled: f64,
    unvisited_customers: usize,
    done: bool,
}

impl<'a> RolloutState<'a> {
    /// Fresh state. Depot tasks start positioned at the depot with nothing
    /// recorded in `partial`; TSP starts with no current node.
    pub fn new(inst: &'a Instance) -> Self {
        let n = inst.n();
        let depot = inst.depot();
        RolloutState {
            inst,
            visited: vec![false; n],
            partial: Vec::with_capacity(n + 4),
            current: depot,
            remaining_capacity: 1.0,
            collected_prize: 0.0,
            traveled: 0.0,
            unvisited_customers: if depot.is_some() { n - 1 } else { n },
            done: false,
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn partial(&self) -> &[usize] {
        &self.partial
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    /// First node of the trajectory for TSP, the depot otherwise.
    pub fn anchor(&self) -> Option<usize> {
        match self.inst.task {
            Task::Tsp => self.partial.first().copied(),
            _ => Some(0),
        }
    }

    pub fn remaining_capacity(&self) -> f64 {
        self.remaining_capacity
    }

    pub fn collected_prize(&self) -> f64 {
        self.collected_prize
    }

    pub fn traveled(&self) -> f64 {
        self.traveled
    }

    pub fn is_terminal(&self) -> bool {
        self.done
    }

    fn customer_feasible(&self, j: usize) -> bool {
        if self.visited[j] {
            return false;
        }
        let inst = self.inst;
        match inst.task {
            Task::Tsp | Task::Pctsp => true,
            Task::Cvrp => inst.demands.as_ref().unwrap()[j] <= self.remaining_capacity + FEAS_EPS,
            Task::Op => {
                let cur = self.current.unwrap();
                self.traveled + inst.dist(cur, j) + inst.dist(j, 0)
                    <= inst.max_length.unwrap() + FEAS_EPS
            }
        }
    }

    /// `true` marks an action allowed in this state.
    pub fn feasible_mask(&self) -> Result<Vec<bool>> {
        if self.done {
            return Err(Error::Contract("feasible_mask on a terminal state".into()));
        }
        let n = self.inst.n();
        let mut mask = vec![false; n];
        match self.inst.task {
            Task::Tsp => {
                for (m, v) in mask.iter_mut().zip(&self.visited) {
                    *m = !v;
                }
            }
            task => {
                let mut any = false;
                for (j, m) in mask.iter_mut().enumerate().skip(1) {
                    *m = self.customer_feasible(j);
                    any |= *m;
                }
                let at_depot = self.current == Some(0);
                mask[0] = match task {
                    Task::Cvrp => !at_depot,
                    Task::Op => !at_depot || !any,
                    Task::Pctsp => {
                        self.collected_prize >= self.inst.min_prize.unwrap() - FEAS_EPS
                            || self.unvisited_customers == 0
                    }
                    Task::Tsp => unreachable!(),
                };
            }
        }
        Ok(mask)
    }

    /// Apply `action`, which must be allowed by [`Self::feasible_mask`].
    pub fn step(&mut self, action: usize) -> Result<()> {
        let n = self.inst.n();
        if action >= n {
            return Err(Error::Feasibility {
                constraint: "node index",
                detail: format!("action {action} out of range for {n} nodes"),
            });
        }
        let mask = self.feasible_mask()?;
        if !mask[action] {
            return Err(Error::Feasibility {
                constraint: self.violated_constraint(action),
                detail: format!("action {action} not allowed after {:?}", self.partial),
            });
        }
        if let Some(cur) = self.current {
            self.traveled += self.inst.dist(cur, action);
        }
        let is_depot = self.inst.depot() == Some(action);
        if is_depot {
            match self.inst.task {
                Task::Cvrp => self.remaining_capacity = 1.0,
                _ => self.done = true,
            }
        } else {
            self.unvisited_customers -= 1;
            match self.inst.task {
                Task::Cvrp => {
                    let d = self.inst.demands.as_ref().unwrap()[action];
                    self.remaining_capacity = (self.remaining_capacity - d).max(0.0);
                }
                Task::Pctsp | Task::Op => {
                    self.collected_prize += self.inst.prizes.as_ref().unwrap()[action];
                }
                Task::Tsp => {}
            }
        }
        self.visited[action] = true;
        self.partial.push(action);
        self.current = Some(action);
        if matches!(self.inst.task, Task::Tsp | Task::Cvrp) && self.unvisited_customers == 0 {
            self.done = true;
        }
        Ok(())
    }

    fn violated_constraint(&self, action: usize) -> &'static str {
        let is_depot = self.inst.depot() == Some(action);
        match self.inst.task {
            _ if !is_depot && self.visited[action] => "already visited",
            Task::Cvrp if is_depot => "empty sub-route",
            Task::Cvrp => "capacity",
            Task::Op if is_depot => "empty route",
            Task::Op => "max_length",
            Task::Pctsp => "min_prize",
            Task::Tsp => "already visited",
        }
    }
}

/// Distance from the current node to every node still open for selection
/// (unvisited customers and the depot); zero elsewhere. All zeros when the
/// trajectory has no current node yet.
pub fn locality_distances(state: &RolloutState<'_>) -> Vec<f64> {
    let inst = state.instance();
    let n = inst.n();
    let Some(cur) = state.current() else {
        return vec![0.0; n];
    };
    let depot = inst.depot();
    (0..n)
        .map(|j| {
            if !state.visited()[j] || depot == Some(j) {
                inst.dist(cur, j)
            } else {
                0.0
            }
        })
        .collect()
}

use crate::domain::{evaluate, objective_of_terminal, Instance, RolloutState, Solution, Task};
use crate::error::{Error, Result};

/// Greedy nearest feasible node (lowest index on ties). CVRP returns to the
/// depot whenever no customer fits the remaining capacity.
pub fn nearest_neighbor(instance: &Instance) -> Result<Solution> {
    if !matches!(instance.task, Task::Tsp | Task::Cvrp) {
        return Err(Error::Unsupported(format!("nearest neighbor for {}", instance.task)));
    }
    let mut st = RolloutState::new(instance);
    if instance.task == Task::Tsp {
        st.step(0)?;
    }
    while !st.is_terminal() {
        let mask = st.feasible_mask()?;
        let cur = st.current().unwrap();
        let mut best: Option<usize> = None;
        for j in 1.min(instance.n())..instance.n() {
            if !mask[j] || instance.depot() == Some(j) {
                continue;
            }
            if best.map_or(true, |b| instance.dist(cur, j) < instance.dist(cur, b)) {
                best = Some(j);
            }
        }
        let next = match best {
            Some(j) => j,
            None if instance.task == Task::Tsp => unreachable!("open TSP node always exists"),
            None => 0,
        };
        st.step(next)?;
    }
    Ok(Solution {
        actions: st.partial().to_vec(),
        objective: objective_of_terminal(&st),
        feasible: true,
    })
}

/// First-improvement 2-opt on a TSP tour for at most `max_passes` sweeps.
pub fn two_opt(instance: &Instance, solution: &Solution, max_passes: usize) -> Result<Solution> {
    if instance.task != Task::Tsp {
        return Err(Error::Unsupported(format!("2-opt for {}", instance.task)));
    }
    let mut tour = solution.actions.clone();
    evaluate(instance, &tour)?;
    let n = tour.len();
    let d = |a: usize, b: usize| instance.dist(a, b);
    for _ in 0..max_passes {
        let mut improved = false;
        for i in 0..n.saturating_sub(2) {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (tour[i], tour[i + 1]);
                let (c, e) = (tour[j], tour[(j + 1) % n]);
                let delta = d(a, c) + d(b, e) - d(a, b) - d(c, e);
                if delta < -1e-12 {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let out = evaluate(instance, &tour)?;
    // rounding can make a sequence of tiny accepted moves slightly worse
    if out.objective > solution.objective {
        return Ok(Solution {
            actions: solution.actions.clone(),
            objective: solution.objective,
            feasible: true,
        });
    }
    Ok(out)
}

/// Largest instance `exact_small` accepts for a task.
pub fn exact_limit(task: Task) -> usize {
    match task {
        Task::Tsp => 10,
        _ => 8,
    }
}

struct Search<'a> {
    inst: &'a Instance,
    best: Option<(f64, Vec<usize>)>,
    /// Prize still collectable from each node, for the OP bound.
    prizes: Vec<f64>,
}

impl Search<'_> {
    fn improves(&self, reward: f64) -> bool {
        self.best.as_ref().map_or(true, |(b, _)| reward > *b)
    }

    /// Optimistic reward reachable from `st`; branches that cannot beat the
    /// incumbent are cut.
    fn bound(&self, st: &RolloutState<'_>) -> f64 {
        match self.inst.task {
            Task::Op => {
                let open: f64 = (1..self.inst.n())
                    .filter(|&j| !st.visited()[j])
                    .map(|j| self.prizes[j])
                    .sum();
                st.collected_prize() + open
            }
            _ => -st.traveled(),
        }
    }

    fn dfs(&mut self, st: &RolloutState<'_>) -> Result<()> {
        if st.is_terminal() {
            let obj = objective_of_terminal(st);
            let reward = if self.inst.task.maximize() { obj } else { -obj };
            if self.improves(reward) {
                self.best = Some((reward, st.partial().to_vec()));
            }
            return Ok(());
        }
        if !self.improves(self.bound(st)) && self.best.is_some() {
            return Ok(());
        }
        let mask = st.feasible_mask()?;
        for (j, ok) in mask.into_iter().enumerate() {
            // TSP tours are cycles: fixing the first node loses nothing
            if !ok || (self.inst.task == Task::Tsp && st.partial().is_empty() && j != 0) {
                continue;
            }
            let mut next = st.clone();
            next.step(j)?;
            self.dfs(&next)?;
        }
        Ok(())
    }
}

/// Global optimum by depth-first enumeration of feasible action sequences
/// with bound pruning.
pub fn exact_small(instance: &Instance) -> Result<Solution> {
    let limit = exact_limit(instance.task);
    if instance.n() > limit {
        return Err(Error::SizeLimit { n: instance.n(), limit });
    }
    instance.validate()?;
    let mut search = Search {
        inst: instance,
        best: None,
        prizes: instance.prizes.clone().unwrap_or_default(),
    };
    search.dfs(&RolloutState::new(instance))?;
    let (_, actions) = search.best.expect("every instance has a feasible solution");
    evaluate(instance, &actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::generate;

    #[test]
    fn collinear_points_in_order() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]);
        assert_eq!(nearest_neighbor(&inst).unwrap().actions, vec![0, 1, 2]);
    }

    #[test]
    fn cvrp_nearest_neighbor_is_feasible() {
        for seed in 0..20 {
            let inst = generate(Task::Cvrp, 15, seed).unwrap();
            let sol = nearest_neighbor(&inst).unwrap();
            assert_eq!(evaluate(&inst, &sol.actions).unwrap().objective, sol.objective);
        }
    }

    #[test]
    fn square_corners() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let opt = exact_small(&inst).unwrap();
        assert!((opt.objective - 4.0).abs() < 1e-12);
        let same = two_opt(&inst, &opt, 10).unwrap();
        assert_eq!(same.actions, opt.actions);
        let crossed = evaluate(&inst, &[0, 2, 1, 3]).unwrap();
        let fixed = two_opt(&inst, &crossed, 1).unwrap();
        assert!((fixed.objective - 4.0).abs() < 1e-12);
    }

    #[test]
    fn size_limit() {
        let inst = generate(Task::Tsp, 11, 0).unwrap();
        assert!(matches!(exact_small(&inst), Err(Error::SizeLimit { n: 11, limit: 10 })));
        let inst = generate(Task::Op, 9, 0).unwrap();
        assert!(exact_small(&inst).is_err());
    }

    #[test]
    fn heuristics_never_beat_the_optimum() {
        for seed in 0..10 {
            let inst = generate(Task::Tsp, 8, seed).unwrap();
            let opt = exact_small(&inst).unwrap().objective;
            let nn = nearest_neighbor(&inst).unwrap();
            assert!(nn.objective >= opt - 1e-12);
            assert!(two_opt(&inst, &nn, 50).unwrap().objective >= opt - 1e-12);
        }
    }
}

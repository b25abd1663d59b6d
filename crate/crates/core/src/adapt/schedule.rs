use serde::{Deserialize, Serialize};

use super::SageConfig;
use crate::domain::Solution;
use crate::error::{Error, Result};

/// Per-iteration decay factor that takes `start` to `end` in `k` steps.
pub fn decay_factor(start: f64, end: f64, k: usize) -> f64 {
    if k == 0 || start == end {
        1.0
    } else {
        (end / start).powf(1.0 / k as f64)
    }
}

/// One line of the adaptation curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub k: usize,
    pub best_cost: f64,
    pub mean_cost: f64,
    pub alpha: f64,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptState {
    pub k: usize,
    pub alpha: f64,
    pub temperature: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub best: Option<Solution>,
    pub history: Vec<HistoryRow>,
}

impl AdaptState {
    /// State at `k = 0` with decay factors derived from the endpoints.
    pub fn new(cfg: &SageConfig) -> Self {
        let (a0, ak, t0, tk) = cfg.schedule_endpoints();
        AdaptState {
            k: 0,
            alpha: a0,
            temperature: t0,
            gamma1: decay_factor(a0, ak, cfg.iterations),
            gamma2: decay_factor(t0, tk, cfg.iterations),
            best: None,
            history: Vec::new(),
        }
    }
}

/// `α ← γ₁α`, `𝒯 ← γ₂𝒯`, `k ← k + 1`.
pub fn schedule_step(state: &AdaptState, cfg: &SageConfig) -> Result<AdaptState> {
    if state.k >= cfg.iterations {
        return Err(Error::Contract(format!(
            "schedule_step at k = {} with only {} iterations",
            state.k, cfg.iterations
        )));
    }
    let k = state.k + 1;
    let alpha = state.alpha * state.gamma1;
    let temperature = state.temperature * state.gamma2;
    Ok(AdaptState {
        k,
        alpha,
        temperature,
        ..state.clone()
    })
}

/// CSV with columns `k,best_cost,mean_cost,alpha,temperature`.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("k,best_cost,mean_cost,alpha,temperature\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k, r.best_cost, r.mean_cost, r.alpha, r.temperature
        ));
    }
    out
}

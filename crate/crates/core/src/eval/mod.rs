//! Reference solvers and metrics: nearest neighbor, 2-opt, exhaustive search
//! for tiny instances, and performance-gap tables.

mod gap;
mod heuristics;

pub use gap::{gap_pct, gap_table, parse_runs_csv, runs_csv, GapReport, GapRow, MethodSummary, RunRow};
pub use heuristics::{exact_small, exact_limit, nearest_neighbor, two_opt};

/// Arithmetic mean; NaN for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

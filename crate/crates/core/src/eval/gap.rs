use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::mean;
use crate::error::{Error, Result};

/// `(obj − obj_B)/obj_B × 100`.
pub fn gap_pct(obj: f64, obj_b: f64) -> f64 {
    (obj - obj_b) / obj_b * 100.0
}

/// One method's objective on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub instance: String,
    pub method: String,
    pub obj: f64,
    pub seconds: Option<f64>,
}

const RUNS_HEADER: &str = "instance,method,obj,seconds";

/// `instance,method,obj,seconds`, the per-method result file consumed by
/// [`parse_runs_csv`].
pub fn runs_csv(rows: &[RunRow]) -> String {
    let mut out = format!("{RUNS_HEADER}\n");
    for r in rows {
        let secs = r.seconds.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.instance, r.method, r.obj, secs);
    }
    out
}

pub fn parse_runs_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RUNS_HEADER => {}
        _ => return Err(Error::Malformed(format!("run file must start with {RUNS_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| Error::Malformed(format!("line {}: {what}", i + 1));
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let obj = f[2].parse().map_err(|_| bad("objective is not a number"))?;
        let seconds = match f[3].trim() {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("seconds is not a number"))?),
        };
        rows.push(RunRow {
            instance: f[0].to_string(),
            method: f[1].to_string(),
            obj,
            seconds,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub instance: String,
    pub method: String,
    pub obj: f64,
    pub obj_b: f64,
    pub gap_pct: f64,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_obj: f64,
    pub mean_obj_b: f64,
    pub mean_gap_pct: f64,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub maximize: bool,
    pub rows: Vec<GapRow>,
    pub summary: Vec<MethodSummary>,
}

/// Join `runs` with the baseline column by instance id. For maximization
/// tasks the sign is flipped so that a negative gap always means the method
/// beat the baseline.
pub fn gap_table(runs: &[RunRow], baseline: &[(String, f64)], maximize: bool) -> Result<GapReport> {
    let base: BTreeMap<&str, f64> = baseline.iter().map(|(id, v)| (id.as_str(), *v)).collect();
    let mut missing: Vec<String> = runs
        .iter()
        .filter(|r| !base.contains_key(r.instance.as_str()))
        .map(|r| r.instance.clone())
        .collect();
    missing.sort();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::Join(missing));
    }
    let sign = if maximize { -1.0 } else { 1.0 };
    let mut rows = Vec::with_capacity(runs.len());
    for r in runs {
        let obj_b = base[r.instance.as_str()];
        if obj_b == 0.0 {
            return Err(Error::Degenerate(format!("baseline objective of {} is zero", r.instance)));
        }
        rows.push(GapRow {
            instance: r.instance.clone(),
            method: r.method.clone(),
            obj: r.obj,
            obj_b,
            gap_pct: sign * gap_pct(r.obj, obj_b),
            seconds: r.seconds,
        });
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let summary = methods
        .iter()
        .map(|m| {
            let sel: Vec<&GapRow> = rows.iter().filter(|r| r.method == *m).collect();
            let col = |f: fn(&GapRow) -> f64| mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            MethodSummary {
                method: m.to_string(),
                mean_obj: col(|r| r.obj),
                mean_obj_b: col(|r| r.obj_b),
                mean_gap_pct: col(|r| r.gap_pct),
                instances: sel.len(),
            }
        })
        .collect();
    Ok(GapReport { maximize, rows, summary })
}

impl GapReport {
    /// `instance,method,obj,obj_B,gap_pct,seconds`; `seconds` is left empty
    /// when timing was not recorded.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance,method,obj,obj_B,gap_pct,seconds\n");
        for r in &self.rows {
            let secs = r.seconds.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", r.instance, r.method, r.obj, r.obj_b, r.gap_pct, secs);
        }
        out
    }

    /// Per-method means, one line each.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,instances,mean_obj,mean_obj_B,mean_gap_pct\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.method, s.instances, s.mean_obj, s.mean_obj_b, s.mean_gap_pct
            );
        }
        out
    }
}

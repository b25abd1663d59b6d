//! Native one-document-per-instance JSON format.
//!
//! Floats are written with 17 significant digits so every `f64` survives a
//! write/read cycle unchanged.

use serde::Deserialize;

use crate::domain::{Instance, Task};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct NativeDoc {
    task: Task,
    n: usize,
    coords: Vec<[f64; 2]>,
    demands: Option<Vec<f64>>,
    prizes: Option<Vec<f64>>,
    penalties: Option<Vec<f64>>,
    capacity: Option<f64>,
    max_length: Option<f64>,
    min_prize: Option<f64>,
    seed: u64,
    #[serde(default = "unit_scale")]
    scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "null".into())
}

fn opt_arr(v: &Option<Vec<f64>>) -> String {
    match v {
        None => "null".into(),
        Some(v) => format!("[{}]", v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",")),
    }
}

pub fn to_native_json(inst: &Instance) -> String {
    let coords = inst
        .coords
        .iter()
        .map(|c| format!("[{},{}]", num(c[0]), num(c[1])))
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "{{\"task\":\"{}\",\"n\":{},\"coords\":[{}],\"demands\":{},\"prizes\":{},\"penalties\":{},\"capacity\":{},\"max_length\":{},\"min_prize\":{},\"seed\":{},\"scale\":{}}}\n",
        inst.task,
        inst.n(),
        coords,
        opt_arr(&inst.demands),
        opt_arr(&inst.prizes),
        opt_arr(&inst.penalties),
        opt_num(inst.capacity),
        opt_num(inst.max_length),
        opt_num(inst.min_prize),
        inst.seed,
        num(inst.scale),
    )
}

pub fn from_native_json(text: &str) -> Result<Instance> {
    let doc: NativeDoc = serde_json::from_str(text)?;
    if doc.n != doc.coords.len() {
        return Err(Error::Malformed(format!(
            "n = {} but {} coordinates",
            doc.n,
            doc.coords.len()
        )));
    }
    let inst = Instance {
        task: doc.task,
        coords: doc.coords,
        demands: doc.demands,
        prizes: doc.prizes,
        penalties: doc.penalties,
        capacity: doc.capacity,
        max_length: doc.max_length,
        min_prize: doc.min_prize,
        seed: doc.seed,
        scale: doc.scale,
    };
    inst.validate()?;
    Ok(inst)
}

//! TSPLIB / CVRPLIB keyword-section documents restricted to `EUC_2D`.

use std::collections::HashSet;

use crate::domain::{Instance, Task};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LibDocument {
    pub name: String,
    /// Value of the `TYPE` keyword (`TSP`, `CVRP`, ...).
    pub kind: String,
    pub dimension: usize,
    pub edge_weight_type: String,
    pub capacity: Option<u64>,
    /// `(id, x, y)` with 1-based ids.
    pub node_coords: Vec<(usize, f64, f64)>,
    pub demands: Option<Vec<(usize, u64)>>,
    pub depot: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Coords,
    Demands,
    Depot,
}

fn malformed(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| malformed(line, format!("cannot parse {what} from {tok:?}")))
}

/// Parse a keyword/section document. Whitespace and CRLF line endings are
/// tolerated; unknown specification keywords (e.g. `COMMENT`) are ignored.
pub fn parse_lib(text: &str) -> Result<LibDocument> {
    let mut name = String::new();
    let mut kind = String::new();
    let mut dimension: Option<usize> = None;
    let mut ewt: Option<String> = None;
    let mut capacity = None;
    let mut coords = Vec::new();
    let mut demands: Option<Vec<(usize, u64)>> = None;
    let mut depots: Vec<usize> = Vec::new();
    let mut section = Section::None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        let upper_head = line.split(|c: char| c.is_whitespace() || c == ':').next().unwrap_or("");
        if upper_head.ends_with("_SECTION") {
            section = match upper_head {
                "NODE_COORD_SECTION" => Section::Coords,
                "DEMAND_SECTION" => {
                    demands.get_or_insert_with(Vec::new);
                    Section::Demands
                }
                "DEPOT_SECTION" => Section::Depot,
                other => return Err(Error::Unsupported(format!("section {other}"))),
            };
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim();
            if key.chars().all(|c| c.is_ascii_uppercase() || c == '_') && !key.is_empty() {
                let value = value.trim();
                section = Section::None;
                match key {
                    "NAME" => name = value.to_string(),
                    "TYPE" => kind = value.to_string(),
                    "DIMENSION" => dimension = Some(parse_num(value, lineno, "DIMENSION")?),
                    "CAPACITY" => capacity = Some(parse_num(value, lineno, "CAPACITY")?),
                    "EDGE_WEIGHT_TYPE" => {
                        if value != "EUC_2D" {
                            return Err(Error::Unsupported(format!("EDGE_WEIGHT_TYPE {value}")));
                        }
                        ewt = Some(value.to_string());
                    }
                    _ => {}
                }
                continue;
            }
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Coords => {
                if toks.len() != 3 {
                    return Err(malformed(lineno, "coordinate line needs `id x y`"));
                }
                let id = parse_num(toks[0], lineno, "node id")?;
                let x: f64 = parse_num(toks[1], lineno, "x")?;
                let y: f64 = parse_num(toks[2], lineno, "y")?;
                if !(x.is_finite() && y.is_finite()) {
                    return Err(malformed(lineno, "non-finite coordinate"));
                }
                coords.push((id, x, y));
            }
            Section::Demands => {
                if toks.len() != 2 {
                    return Err(malformed(lineno, "demand line needs `id demand`"));
                }
                let id = parse_num(toks[0], lineno, "node id")?;
                let d = parse_num(toks[1], lineno, "demand")?;
                demands.get_or_insert_with(Vec::new).push((id, d));
            }
            Section::Depot => {
                for t in toks {
                    let v: i64 = parse_num(t, lineno, "depot id")?;
                    if v == -1 {
                        section = Section::None;
                        break;
                    }
                    if v < 1 {
                        return Err(malformed(lineno, format!("depot id {v}")));
                    }
                    depots.push(v as usize);
                }
            }
            Section::None => {
                return Err(malformed(lineno, format!("unexpected content {line:?}")));
            }
        }
    }

    let dimension = dimension.ok_or_else(|| Error::Malformed("missing DIMENSION".into()))?;
    let edge_weight_type = ewt.unwrap_or_else(|| "EUC_2D".to_string());
    check_ids(coords.iter().map(|c| c.0), dimension, "NODE_COORD_SECTION")?;
    if let Some(d) = &demands {
        check_ids(d.iter().map(|x| x.0), dimension, "DEMAND_SECTION")?;
    }
    if depots.len() > 1 {
        return Err(Error::Unsupported("multiple depots".into()));
    }
    let depot = depots.first().copied().unwrap_or(1);
    if depot > dimension {
        return Err(Error::Malformed(format!("depot {depot} exceeds DIMENSION {dimension}")));
    }
    coords.sort_by_key(|c| c.0);
    if let Some(d) = demands.as_mut() {
        d.sort_by_key(|x| x.0);
    }
    Ok(LibDocument {
        name,
        kind,
        dimension,
        edge_weight_type,
        capacity,
        node_coords: coords,
        demands,
        depot,
    })
}

fn check_ids(ids: impl Iterator<Item = usize>, dimension: usize, section: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id == 0 || id > dimension {
            return Err(Error::Malformed(format!("{section}: node id {id} outside 1..={dimension}")));
        }
        if !seen.insert(id) {
            return Err(Error::Malformed(format!("{section}: duplicate node id {id}")));
        }
    }
    if seen.len() != dimension {
        return Err(Error::Malformed(format!(
            "{section}: {} entries for DIMENSION {dimension}",
            seen.len()
        )));
    }
    Ok(())
}

impl LibDocument {
    fn is_cvrp(&self) -> bool {
        self.kind.eq_ignore_ascii_case("CVRP") || self.demands.is_some()
    }

    /// Map into the unit square. Coordinates are shifted to the origin and
    /// divided by the larger axis extent, so aspect ratio is preserved; the
    /// extent is kept as [`Instance::scale`]. The depot becomes node 0 and
    /// the remaining nodes follow in id order.
    pub fn to_instance(&self) -> Result<Instance> {
        let xs = self.node_coords.iter().map(|c| c.1);
        let ys = self.node_coords.iter().map(|c| c.2);
        let (min_x, max_x) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (min_y, max_y) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let extent = (max_x - min_x).max(max_y - min_y);
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::Degenerate("all nodes share one location".into()));
        }
        let cvrp = self.is_cvrp();
        let order: Vec<usize> = if cvrp {
            std::iter::once(self.depot - 1)
                .chain((0..self.dimension).filter(|&i| i != self.depot - 1))
                .collect()
        } else {
            (0..self.dimension).collect()
        };
        let coords = order
            .iter()
            .map(|&i| {
                let (_, x, y) = self.node_coords[i];
                [((x - min_x) / extent).clamp(0.0, 1.0), ((y - min_y) / extent).clamp(0.0, 1.0)]
            })
            .collect();
        let mut inst = Instance::tsp(coords);
        inst.scale = extent;
        if cvrp {
            let cap = self
                .capacity
                .filter(|&c| c > 0)
                .ok_or_else(|| Error::Malformed("CVRP document without positive CAPACITY".into()))?;
            let raw = self
                .demands
                .as_ref()
                .ok_or_else(|| Error::Malformed("CVRP document without DEMAND_SECTION".into()))?;
            let mut d: Vec<f64> = order.iter().map(|&i| raw[i].1 as f64 / cap as f64).collect();
            d[0] = 0.0;
            inst.task = Task::Cvrp;
            inst.demands = Some(d);
            inst.capacity = Some(cap as f64);
        }
        inst.validate()?;
        Ok(inst)
    }

    /// Build a document from a unit-square instance, scaling coordinates by
    /// [`Instance::scale`] and demands back to integer units.
    pub fn from_instance(inst: &Instance, name: &str) -> Result<LibDocument> {
        let n = inst.n();
        let node_coords = inst
            .coords
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1, c[0] * inst.scale, c[1] * inst.scale))
            .collect();
        let (kind, capacity, demands) = match inst.task {
            Task::Tsp => ("TSP".to_string(), None, None),
            Task::Cvrp => {
                let cap = inst.capacity.ok_or_else(|| Error::Config("CVRP instance without capacity".into()))?;
                let d = inst.demands.as_ref().unwrap();
                let demands = (0..n).map(|i| (i + 1, (d[i] * cap).round() as u64)).collect();
                ("CVRP".to_string(), Some(cap.round() as u64), Some(demands))
            }
            other => return Err(Error::Unsupported(format!("{other} has no TSPLIB representation"))),
        };
        Ok(LibDocument {
            name: name.to_string(),
            kind,
            dimension: n,
            edge_weight_type: "EUC_2D".into(),
            capacity,
            node_coords,
            demands,
            depot: 1,
        })
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "NAME : {}", self.name);
        let _ = writeln!(s, "TYPE : {}", self.kind);
        let _ = writeln!(s, "DIMENSION : {}", self.dimension);
        let _ = writeln!(s, "EDGE_WEIGHT_TYPE : {}", self.edge_weight_type);
        if let Some(c) = self.capacity {
            let _ = writeln!(s, "CAPACITY : {c}");
        }
        s.push_str("NODE_COORD_SECTION\n");
        for (id, x, y) in &self.node_coords {
            let _ = writeln!(s, "{id} {x:?} {y:?}");
        }
        if let Some(d) = &self.demands {
            s.push_str("DEMAND_SECTION\n");
            for (id, v) in d {
                let _ = writeln!(s, "{id} {v}");
            }
            let _ = writeln!(s, "DEPOT_SECTION\n{}\n-1", self.depot);
        }
        s.push_str("EOF\n");
        s
    }
}

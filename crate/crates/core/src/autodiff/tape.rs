use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Logit offset applied to masked entries before exponentiation.
pub const MASK_SENTINEL: f64 = -1e9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Right operand is a single row repeated over the left operand's rows.
    Row,
    /// Right operand is a single value.
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    Relu,
    Log,
    Exp,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Binary { kind: Binary, a: Var, b: Var, bcast: Bcast },
    Scale { a: Var, k: f64 },
    Unary { kind: Unary, a: Var },
    Softmax { a: Var, temp: f64, mask: Option<Vec<bool>> },
    LogSoftmax { a: Var, temp: f64, mask: Option<Vec<bool>> },
    GatherRows { a: Var, idx: Vec<usize> },
    PickPerRow { a: Var, idx: Vec<usize> },
    Sum { a: Var },
    MeanRows { a: Var },
    WeightedSum { a: Var, w: Vec<f64> },
    SliceCols { a: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    NormCols { a: Var, inv_std: Vec<f64> },
    FrobeniusNorm { a: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of tensor operations for reverse-mode
/// differentiation. Nodes are stored in creation order, so parents always
/// precede children and a reverse sweep is a valid topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node recorded after `len`. Handles past that point become
    /// invalid; used to recycle a scratch tape between decode steps.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = if trans_b {
            (bv.cols(), bv.rows())
        } else {
            (bv.rows(), bv.cols())
        };
        if k != k2 || av.shape().len() > 2 || bv.shape().len() > 2 {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), trans_b, &mut out, 0.0);
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, trans_b },
            ng,
        ))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bcast = if av.shape() == bv.shape() {
            Bcast::Same
        } else if bv.numel() == 1 {
            Bcast::Scalar
        } else if bv.rows() == 1 && bv.cols() == av.cols() && av.shape().len() == 2 {
            Bcast::Row
        } else {
            let name = match kind {
                Binary::Add => "add",
                Binary::Sub => "sub",
                Binary::Mul => "mul",
            };
            return Err(Error::shape(name, av.shape(), bv.shape()));
        };
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let cols = av.cols();
        let bd = bv.data();
        let data: Vec<f64> = match bcast {
            Bcast::Same => av.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => av.data().iter().map(|&x| f(x, bd[0])).collect(),
            Bcast::Row => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % cols]))
                .collect(),
        };
        let shape = av.shape().to_vec();
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Binary { kind, a, b, bcast },
            ng,
        ))
    }

    /// Elementwise sum; `b` may be a matching tensor, a row broadcast over
    /// `a`'s rows, or a single value.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Scale { a, k }, ng)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Relu => |x| x.max(0.0),
            Unary::Log => f64::ln,
            Unary::Exp => f64::exp,
        };
        let value = self.value(a).map(f);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Unary { kind, a }, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(Unary::Log, a))
    }

    fn check_mask(&self, a: Var, temp: f64, mask: Option<&[bool]>) -> Result<()> {
        if !(temp > 0.0 && temp.is_finite()) {
            return Err(Error::Argument(format!(
                "temperature must be positive, got {temp}"
            )));
        }
        let av = self.value(a);
        if let Some(m) = mask {
            if m.len() != av.numel() {
                return Err(Error::shape("softmax mask", av.shape(), &[m.len()]));
            }
            let cols = av.cols();
            for r in 0..av.rows() {
                if m[r * cols..(r + 1) * cols].iter().all(|&x| x) {
                    return Err(Error::Infeasible(format!("row {r} has every entry masked")));
                }
            }
        }
        Ok(())
    }

    /// Row-wise softmax of `a / temp`. `mask[i] == true` marks an excluded
    /// entry, whose probability is exactly zero.
    pub fn softmax_temp(&mut self, a: Var, temp: f64, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask(a, temp, mask)?;
        let av = self.value(a);
        let cols = av.cols();
        let mut out = vec![0.0; av.numel()];
        for r in 0..av.rows() {
            let row_mask = mask.map(|m| &m[r * cols..(r + 1) * cols]);
            softmax_row(&av.data()[r * cols..(r + 1) * cols], temp, row_mask, &mut out[r * cols..(r + 1) * cols]);
        }
        let shape = av.shape().to_vec();
        let ng = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Softmax {
                a,
                temp,
                mask: mask.map(|m| m.to_vec()),
            },
            ng,
        ))
    }

    /// Row-wise log-softmax of `a / temp` with the same masking rules as
    /// [`Tape::softmax_temp`]. Masked entries carry a large negative finite
    /// value and no gradient.
    pub fn log_softmax_temp(&mut self, a: Var, temp: f64, mask: Option<&[bool]>) -> Result<Var> {
        self.check_mask(a, temp, mask)?;
        let av = self.value(a);
        let cols = av.cols();
        let mut out = vec![0.0; av.numel()];
        for r in 0..av.rows() {
            let row_mask = mask.map(|m| &m[r * cols..(r + 1) * cols]);
            log_softmax_row(&av.data()[r * cols..(r + 1) * cols], temp, row_mask, &mut out[r * cols..(r + 1) * cols]);
        }
        let shape = av.shape().to_vec();
        let ng = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LogSoftmax {
                a,
                temp,
                mask: mask.map(|m| m.to_vec()),
            },
            ng,
        ))
    }

    /// Select rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Argument(format!("row index {i} out of range {rows}")));
            }
            out.extend_from_slice(av.row(i));
        }
        let ng = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![idx.len(), cols], out),
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    /// `out[r] = a[r, idx[r]]`.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.rows() {
            return Err(Error::shape("pick_per_row", av.shape(), &[idx.len()]));
        }
        let cols = av.cols();
        let mut out = Vec::with_capacity(idx.len());
        for (r, &c) in idx.iter().enumerate() {
            if c >= cols {
                return Err(Error::Argument(format!("column index {c} out of range {cols}")));
            }
            out.push(av.data()[r * cols + c]);
        }
        let ng = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::vector(out),
            Op::PickPerRow {
                a,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, ng)
    }

    /// `Σ_i w[i] · a[i]` over the flattened tensor.
    pub fn weighted_sum(&mut self, a: Var, w: &[f64]) -> Result<Var> {
        let av = self.value(a);
        if w.len() != av.numel() {
            return Err(Error::shape("weighted_sum", av.shape(), &[w.len()]));
        }
        let s = av.data().iter().zip(w).map(|(x, y)| x * y).sum();
        let ng = self.any_grad(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { a, w: w.to_vec() }, ng))
    }

    /// Column means as a `1×cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, x) in out.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / rows as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.any_grad(&[a]);
        self.push(Tensor::from_parts(vec![1, cols], out), Op::MeanRows { a }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if start + len > cols {
            return Err(Error::Argument(format!(
                "column slice {start}..{} exceeds width {cols}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], out),
            Op::SliceCols { a, start },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(Error::shape("concat_cols", self.value(parts[0]).shape(), pv.shape()));
            }
            total += pv.cols();
        }
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let c = pv.cols();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c].copy_from_slice(pv.row(r));
            }
            offset += c;
        }
        let ng = self.any_grad(parts);
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    /// Normalize every column to zero mean and unit variance over the rows
    /// (instance normalization when rows are the nodes of one instance).
    pub fn norm_cols(&mut self, a: Var, eps: f64) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, x) in mean.iter_mut().zip(av.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for ((v, x), m) in var.iter_mut().zip(av.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v / rows as f64 + eps).sqrt())
            .collect();
        let mut out = av.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                let x = &mut out[r * cols + c];
                *x = (*x - mean[c]) * inv_std[c];
            }
        }
        let shape = av.shape().to_vec();
        let ng = self.any_grad(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::NormCols { a, inv_std }, ng)
    }

    /// Euclidean (Frobenius) norm of the whole tensor.
    pub fn frobenius_norm(&mut self, a: Var) -> Var {
        let n = self.value(a).sum_sq().sqrt();
        let ng = self.any_grad(&[a]);
        self.push(Tensor::scalar(n), Op::FrobeniusNorm { a }, ng)
    }

    /// Reverse sweep from a scalar `loss`. Every node on a path to `loss`
    /// that requires gradients receives its total derivative.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), out.cols());
                if self.nodes[a.0].needs_grad {
                    // dA = G · op(B)ᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), !trans_b, &mut da, 0.0);
                    accumulate(grads, *a, av.shape(), da);
                }
                if self.nodes[b.0].needs_grad {
                    let db = if *trans_b {
                        // B is n×k: dB = Gᵀ · A
                        let mut db = vec![0.0; n * k];
                        gemm(n, m, k, g.data(), true, av.data(), false, &mut db, 0.0);
                        db
                    } else {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                        db
                    };
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::Binary { kind, a, b, bcast } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.cols();
                let bidx = |j: usize| match bcast {
                    Bcast::Same => j,
                    Bcast::Row => j % cols,
                    Bcast::Scalar => 0,
                };
                if self.nodes[a.0].needs_grad {
                    let da: Vec<f64> = match kind {
                        Binary::Add | Binary::Sub => g.data().to_vec(),
                        Binary::Mul => g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(j, gj)| gj * bv.data()[bidx(j)])
                            .collect(),
                    };
                    accumulate(grads, *a, av.shape(), da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; bv.numel()];
                    for (j, gj) in g.data().iter().enumerate() {
                        db[bidx(j)] += match kind {
                            Binary::Add => *gj,
                            Binary::Sub => -gj,
                            Binary::Mul => gj * av.data()[j],
                        };
                    }
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::Scale { a, k } => {
                if self.nodes[a.0].needs_grad {
                    let da = g.data().iter().map(|x| x * k).collect();
                    accumulate(grads, *a, out.shape(), da);
                }
            }
            Op::Unary { kind, a } => {
                if self.nodes[a.0].needs_grad {
                    let x = self.value(*a).data();
                    let y = out.data();
                    let da = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, gj)| {
                            gj * match kind {
                                Unary::Tanh => 1.0 - y[j] * y[j],
                                Unary::Relu => {
                                    if x[j] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Unary::Log => 1.0 / x[j],
                                Unary::Exp => y[j],
                            }
                        })
                        .collect();
                    accumulate(grads, *a, out.shape(), da);
                }
            }
            Op::Softmax { a, temp, mask } => {
                if self.nodes[a.0].needs_grad {
                    let cols = out.cols();
                    let p = out.data();
                    let mut da = vec![0.0; p.len()];
                    for r in 0..out.rows() {
                        let s = r * cols..(r + 1) * cols;
                        let dot: f64 = p[s.clone()].iter().zip(&g.data()[s.clone()]).map(|(x, y)| x * y).sum();
                        for j in s {
                            if mask.as_ref().is_some_and(|m| m[j]) {
                                continue;
                            }
                            da[j] = p[j] * (g.data()[j] - dot) / temp;
                        }
                    }
                    accumulate(grads, *a, out.shape(), da);
                }
            }
            Op::LogSoftmax { a, temp, mask } => {
                if self.nodes[a.0].needs_grad {
                    let cols = out.cols();
                    let y = out.data();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..out.rows() {
                        let s = r * cols..(r + 1) * cols;
                        let masked = |j: usize| mask.as_ref().is_some_and(|m| m[j]);
                        let gsum: f64 = s.clone().filter(|&j| !masked(j)).map(|j| g.data()[j]).sum();
                        for j in s {
                            if masked(j) {
                                continue;
                            }
                            da[j] = (g.data()[j] - y[j].exp() * gsum) / temp;
                        }
                    }
                    accumulate(grads, *a, out.shape(), da);
                }
            }
            Op::GatherRows { a, idx } => {
                if self.nodes[a.0].needs_grad {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let mut da = vec![0.0; av.numel()];
                    for (r, &src) in idx.iter().enumerate() {
                        for c in 0..cols {
                            da[src * cols + c] += g.data()[r * cols + c];
                        }
                    }
                    accumulate(grads, *a, av.shape(), da);
                }
            }
            Op::PickPerRow { a, idx } => {
                if self.nodes[a.0].needs_grad {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let mut da = vec![0.0; av.numel()];
                    for (r, &c) in idx.iter().enumerate() {
                        da[r * cols + c] += g.data()[r];
                    }
                    accumulate(grads, *a, av.shape(), da);
                }
            }
            Op::Sum { a } => {
                if self.nodes[a.0].needs_grad {
                    let av = self.value(*a);
                    accumulate(grads, *a, av.shape(), vec![g.data()[0]; av.numel()]);
                }
            }
            Op::WeightedSum { a, w } => {
                if self.nodes[a.0].needs_grad {
                    let g0 = g.data()[0];
                    let da = w.iter().map(|x| x * g0).collect();
                    accumulate(grads, *a, self.value(*a).shape(), da);
                }
            }
            Op::MeanRows { a } => {
                if self.nodes[a.0].needs_grad {
                    let av = self.value(*a);
                    let (rows, cols) = (av.rows(), av.cols());
                    let inv = 1.0 / rows as f64;
                    let mut da = Vec::with_capacity(av.numel());
                    for _ in 0..rows {
                        da.extend(g.data()[..cols].iter().map(|x| x * inv));
                    }
                    accumulate(grads, *a, av.shape(), da);
                }
            }
            Op::SliceCols { a, start } => {
                if self.nodes[a.0].needs_grad {
                    let av = self.value(*a);
                    let (rows, cols, len) = (av.rows(), av.cols(), out.cols());
                    let mut da = vec![0.0; av.numel()];
                    for r in 0..rows {
                        da[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                    }
                    accumulate(grads, *a, av.shape(), da);
                }
            }
            Op::ConcatCols { parts } => {
                let (rows, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    if self.nodes[p.0].needs_grad {
                        let mut dp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(grads, p, pv.shape(), dp);
                    }
                    offset += c;
                }
            }
            Op::NormCols { a, inv_std } => {
                if self.nodes[a.0].needs_grad {
                    let (rows, cols) = (out.rows(), out.cols());
                    let xhat = out.data();
                    let gd = g.data();
                    let mut mean_g = vec![0.0; cols];
                    let mut mean_gx = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let j = r * cols + c;
                            mean_g[c] += gd[j];
                            mean_gx[c] += gd[j] * xhat[j];
                        }
                    }
                    let inv_n = 1.0 / rows as f64;
                    let mut da = vec![0.0; xhat.len()];
                    for r in 0..rows {
                        for c in 0..cols {
                            let j = r * cols + c;
                            da[j] = inv_std[c] * (gd[j] - mean_g[c] * inv_n - xhat[j] * mean_gx[c] * inv_n);
                        }
                    }
                    accumulate(grads, *a, out.shape(), da);
                }
            }
            Op::FrobeniusNorm { a } => {
                if self.nodes[a.0].needs_grad {
                    let av = self.value(*a);
                    let n = out.data()[0];
                    let g0 = g.data()[0];
                    let da = if n > 0.0 {
                        av.data().iter().map(|x| g0 * x / n).collect()
                    } else {
                        vec![0.0; av.numel()]
                    };
                    accumulate(grads, *a, av.shape(), da);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), delta)),
    }
}

pub(crate) fn softmax_row(u: &[f64], temp: f64, mask: Option<&[bool]>, out: &mut [f64]) {
    let masked = |j: usize| mask.is_some_and(|m| m[j]);
    let shifted: Vec<f64> = (0..u.len())
        .map(|j| if masked(j) { u[j] + MASK_SENTINEL } else { u[j] })
        .collect();
    let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for j in 0..u.len() {
        out[j] = if masked(j) { 0.0 } else { ((shifted[j] - max) / temp).exp() };
        z += out[j];
    }
    out.iter_mut().for_each(|p| *p /= z);
}

pub(crate) fn log_softmax_row(u: &[f64], temp: f64, mask: Option<&[bool]>, out: &mut [f64]) {
    let masked = |j: usize| mask.is_some_and(|m| m[j]);
    let shifted: Vec<f64> = (0..u.len())
        .map(|j| if masked(j) { u[j] + MASK_SENTINEL } else { u[j] })
        .collect();
    let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (0..u.len())
        .filter(|&j| !masked(j))
        .map(|j| ((shifted[j] - max) / temp).exp())
        .sum();
    let log_z = z.ln();
    for j in 0..u.len() {
        out[j] = (shifted[j] - max) / temp - log_z;
    }
}

/// Result of a backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like it when `v` did not influence
    /// the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
        assert_eq!(t.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn unary_values_and_derivatives() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(t.value(y).data()[0], 0.0);
        assert_eq!(g.get(x).unwrap().data()[0], 1.0);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(-1.0));
        let y = t.relu(x);
        let g = t.backward(y).unwrap();
        assert_eq!(t.value(y).data()[0], 0.0);
        assert_eq!(g.get(x).unwrap().data()[0], 0.0);

        let e = std::f64::consts::E;
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(e));
        let y = t.log(x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(close(t.value(y).data()[0], 1.0, 1e-15));
        assert!(close(g.get(x).unwrap().data()[0], 1.0 / e, 1e-15));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let u = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let p = t.softmax_temp(u, 1.0, None).unwrap();
        assert_eq!(t.value(p).data(), &[0.5, 0.5]);

        let u = t.constant(Tensor::vector(vec![2.0, 0.0]));
        let p = t.softmax_temp(u, 0.01, None).unwrap();
        assert!(t.value(p).data()[0] > 1.0 - 1e-8);

        let u = t.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let p = t.softmax_temp(u, 1.0, Some(&[false, false, true])).unwrap();
        assert_eq!(t.value(p).data(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn softmax_rejects_fully_masked_and_bad_temperature() {
        let mut t = Tape::new();
        let u = t.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(
            t.softmax_temp(u, 1.0, Some(&[true, true])),
            Err(Error::Infeasible(_))
        ));
        assert!(t.softmax_temp(u, 0.0, None).is_err());
        assert!(t.log_softmax_temp(u, -1.0, None).is_err());
    }

    #[test]
    fn backward_sum_and_square() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, -2.0, 5.0]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn detached_and_unreachable_tensors_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = t.param(Tensor::vector(vec![3.0, 4.0]));
        let unused = t.param(Tensor::vector(vec![0.5, 0.5]));
        let y = t.mul(c, p).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&t, unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn truncate_discards_scratch_nodes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(2.0));
        let mark = t.len();
        let _ = t.tanh(x);
        let _ = t.relu(x);
        t.truncate(mark);
        assert_eq!(t.len(), mark);
        assert_eq!(t.value(x).data(), &[2.0]);
    }
}

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub type NodeId = usize;

/// Recorded primitive. Inputs are node ids on the same tape.
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId, usize),
    Concat(Vec<NodeId>, usize),
    Slice {
        src: NodeId,
        axis: usize,
        start: usize,
    },
    Gather {
        table: NodeId,
        indices: Vec<usize>,
        frozen_row: Option<usize>,
    },
    Sum(NodeId),
    Mean(NodeId),
    RowMax {
        src: NodeId,
        argmax: Vec<usize>,
    },
    Repeat(NodeId),
    Pick(NodeId, usize),
    Focal {
        p: NodeId,
        alpha: f64,
        gamma: f64,
    },
    Gru {
        xp: NodeId,
        h: NodeId,
        u: NodeId,
        // z, r, candidate; each m x d, concatenated
        cache: Vec<f64>,
    },
    /// `x²` with a deliberately wrong gradient; a negative control for the checker.
    #[cfg(test)]
    Faulty(NodeId),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Define-by-run record of one forward pass.
///
/// Single-threaded: all interior state lives in `RefCell`s. A tape carries an
/// optional RNG; when present the tape is in training mode and
/// [`Var::dropout`] is active.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, NodeId>>,
    rng: Option<RefCell<ChaCha8Rng>>,
    consumed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("training", &self.is_training())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Result of [`Tape::backward`]: gradient of the loss for every node it reaches.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, NodeId>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.node(var.id)
    }

    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&n| self.node(n))
    }
}

impl Tape {
    /// An evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            rng: None,
            consumed: Cell::new(false),
        }
    }

    /// A training-mode tape drawing dropout masks from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Tape {
            rng: Some(RefCell::new(rng)),
            ..Tape::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Hands the dropout RNG back so the caller can continue its stream.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng.map(RefCell::into_inner)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: NodeId) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter as a leaf; repeated requests reuse the same node so
    /// its gradient accumulates in one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let value = store.shared(id);
        let var = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value,
                op: Op::Leaf,
            });
            Var {
                tape: self,
                id: nodes.len() - 1,
            }
        };
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    pub fn concat(&self, parts: &[Var<'_>], axis: usize) -> Result<Var<'_>> {
        if parts.is_empty() {
            return Err(Error::dim("concat of zero tensors"));
        }
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| self.value_of(p.id)).collect();
        let out = match axis {
            1 => {
                let rows = values[0].rows();
                if values.iter().any(|v| v.rows() != rows) {
                    return Err(Error::dim("concat along columns needs equal row counts"));
                }
                let cols: usize = values.iter().map(|v| v.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for v in &values {
                        data.extend_from_slice(v.row_slice(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
            0 => {
                let cols = values[0].cols();
                if values.iter().any(|v| v.cols() != cols) {
                    return Err(Error::dim("concat along rows needs equal column counts"));
                }
                let rows: usize = values.iter().map(|v| v.rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for v in &values {
                    data.extend_from_slice(v.data());
                }
                Tensor::new(rows, cols, data)?
            }
            _ => return Err(Error::dim(format!("concat axis {axis} out of range"))),
        };
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.id).collect(), axis)))
    }

    /// Row lookup `table[indices]`. Gradient never flows into `frozen_row`
    /// (the padding row of an embedding table).
    pub fn gather<'t>(
        &'t self,
        table: Var<'t>,
        indices: &[usize],
        frozen_row: Option<usize>,
    ) -> Result<Var<'t>> {
        let t = self.value_of(table.id);
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::dim(format!(
                    "gather index {i} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(indices.len(), t.cols(), data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table: table.id,
                indices: indices.to_vec(),
                frozen_row,
            },
        ))
    }

    /// One fused GRU recurrence step over `m` rows.
    ///
    /// `xp` is the input projection `x·W + b` laid out as `[update | reset |
    /// candidate]` (`m × 3d`), `h` the previous state (`m × d`) and `u` the
    /// recurrent weights with the same column layout (`d × 3d`).
    pub fn gru<'t>(&'t self, xp: Var<'t>, h: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        let xpv = self.value_of(xp.id);
        let hv = self.value_of(h.id);
        let uv = self.value_of(u.id);
        let (m, d) = (hv.rows(), hv.cols());
        if xpv.shape() != [m, 3 * d] || uv.shape() != [d, 3 * d] {
            return Err(Error::dim(format!(
                "gru step: input {:?}, state {:?}, recurrent {:?}",
                xpv.shape(),
                hv.shape(),
                uv.shape()
            )));
        }
        let mut cache = vec![0.0; 3 * m * d];
        let mut out = vec![0.0; m * d];
        let u_data = uv.data();
        for row in 0..m {
            let x = xpv.row_slice(row);
            let hr = hv.row_slice(row);
            let (zs, rest) = cache[3 * row * d..3 * (row + 1) * d].split_at_mut(d);
            let (rs, cs) = rest.split_at_mut(d);
            for j in 0..d {
                let mut az = x[j];
                let mut ar = x[d + j];
                for (k, &hk) in hr.iter().enumerate() {
                    az += hk * u_data[k * 3 * d + j];
                    ar += hk * u_data[k * 3 * d + d + j];
                }
                zs[j] = sigmoid(az);
                rs[j] = sigmoid(ar);
            }
            for j in 0..d {
                let mut ac = x[2 * d + j];
                for k in 0..d {
                    ac += rs[k] * hr[k] * u_data[k * 3 * d + 2 * d + j];
                }
                cs[j] = ac.tanh();
            }
            for j in 0..d {
                out[row * d + j] = (1.0 - zs[j]) * hr[j] + zs[j] * cs[j];
            }
        }
        let out = Tensor::new(m, d, out)?;
        Ok(self.push(
            out,
            Op::Gru {
                xp: xp.id,
                h: h.id,
                u: u.id,
                cache,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. A tape can be replayed only once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::contract("loss is not recorded on this tape"));
        }
        if self.consumed.replace(true) {
            return Err(Error::contract(
                "backward already ran on this tape; record a new forward pass",
            ));
        }
        let nodes = self.nodes.borrow();
        let seed = &nodes[loss.id].value;
        if seed.shape() != [1, 1] {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, found {:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let val = |n: NodeId| nodes[n].value.as_ref();
            propagate(&node.op, &node.value, &g, &val, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate<'a>(
    op: &Op,
    out: &Tensor,
    g: &Tensor,
    val: &dyn Fn(NodeId) -> &'a Tensor,
    grads: &mut [Option<Tensor>],
) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let ga = g.matmul(&val(*b).transpose())?;
            let gb = val(*a).transpose().matmul(g)?;
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::AddRow(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, column_sums(g));
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let ga = g.zip_map(val(*b), |x, y| x * y)?;
            let gb = g.zip_map(val(*a), |x, y| x * y)?;
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::MulConst(a, mask) => accumulate(grads, *a, g.zip_map(mask, |x, m| x * m)?),
        Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
        Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out, |x, y| x * y * (1.0 - y))?),
        Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y))?),
        Op::Relu(a) => {
            accumulate(
                grads,
                *a,
                g.zip_map(val(*a), |x, v| if v > 0.0 { x } else { 0.0 })?,
            );
        }
        Op::Softmax(a, axis) => {
            let ga = if *axis == 1 {
                softmax_backward_rows(out, g)
            } else {
                softmax_backward_rows(&out.transpose(), &g.transpose()).transpose()
            };
            accumulate(grads, *a, ga);
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            for &p in parts {
                let shape = val(p).shape();
                let piece = if *axis == 1 {
                    slice_cols(g, offset, shape[1])
                } else {
                    slice_rows(g, offset, shape[0])
                };
                offset += shape[*axis];
                accumulate(grads, p, piece);
            }
        }
        Op::Slice { src, axis, start } => {
            let s = val(*src);
            let mut full = Tensor::zeros(s.rows(), s.cols());
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    let (rr, cc) = if *axis == 1 {
                        (r, c + start)
                    } else {
                        (r + start, c)
                    };
                    full.set(rr, cc, g.get(r, c));
                }
            }
            accumulate(grads, *src, full);
        }
        Op::Gather {
            table,
            indices,
            frozen_row,
        } => {
            let t = val(*table);
            let mut full = Tensor::zeros(t.rows(), t.cols());
            let cols = t.cols();
            for (r, &i) in indices.iter().enumerate() {
                if Some(i) == *frozen_row {
                    continue;
                }
                let dst = &mut full.data_mut()[i * cols..(i + 1) * cols];
                for (d, s) in dst.iter_mut().zip(g.row_slice(r)) {
                    *d += s;
                }
            }
            accumulate(grads, *table, full);
        }
        Op::Sum(a) => {
            let s = val(*a);
            accumulate(grads, *a, Tensor::filled(s.rows(), s.cols(), g.data()[0]));
        }
        Op::Mean(a) => {
            let s = val(*a);
            let n = s.len().max(1) as f64;
            accumulate(
                grads,
                *a,
                Tensor::filled(s.rows(), s.cols(), g.data()[0] / n),
            );
        }
        Op::RowMax { src, argmax } => {
            let s = val(*src);
            let mut full = Tensor::zeros(s.rows(), s.cols());
            for (r, &c) in argmax.iter().enumerate() {
                full.set(r, c, g.get(r, 0));
            }
            accumulate(grads, *src, full);
        }
        Op::Repeat(a) => accumulate(grads, *a, column_sums(g)),
        Op::Pick(a, index) => {
            let s = val(*a);
            let mut full = Tensor::zeros(s.rows(), s.cols());
            full.data_mut()[*index] = g.data()[0];
            accumulate(grads, *a, full);
        }
        Op::Focal { p, alpha, gamma } => {
            let pt = val(*p).data()[0];
            let d = focal_derivative(pt, *alpha, *gamma);
            accumulate(grads, *p, Tensor::scalar(g.data()[0] * d));
        }
        Op::Gru { xp, h, u, cache } => {
            let (gxp, gh, gu) = gru_backward(val(*h), val(*u), cache, g);
            accumulate(grads, *xp, gxp);
            accumulate(grads, *h, gh);
            accumulate(grads, *u, gu);
        }
        #[cfg(test)]
        Op::Faulty(a) => accumulate(grads, *a, g.zip_map(val(*a), |x, v| x * v)?),
    }
    Ok(())
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, x) in out.iter_mut().zip(g.row_slice(r)) {
            *o += x;
        }
    }
    Tensor::row(out)
}

fn softmax_backward_rows(y: &Tensor, g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row_slice(r);
        let gr = g.row_slice(r);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for c in 0..y.cols() {
            out.set(r, c, yr[c] * (gr[c] - dot));
        }
    }
    out
}

fn slice_cols(t: &Tensor, start: usize, len: usize) -> Tensor {
    let mut data = Vec::with_capacity(t.rows() * len);
    for r in 0..t.rows() {
        data.extend_from_slice(&t.row_slice(r)[start..start + len]);
    }
    Tensor::new(t.rows(), len, data).expect("slice within bounds")
}

fn slice_rows(t: &Tensor, start: usize, len: usize) -> Tensor {
    let c = t.cols();
    Tensor::new(len, c, t.data()[start * c..(start + len) * c].to_vec())
        .expect("slice within bounds")
}

pub(crate) const PROB_FLOOR: f64 = 1e-12;

pub(crate) fn focal_value(pt: f64, alpha: f64, gamma: f64) -> f64 {
    let modulating = if gamma == 0.0 {
        1.0
    } else {
        (1.0 - pt).max(0.0).powf(gamma)
    };
    -alpha * modulating * pt.max(PROB_FLOOR).ln()
}

fn focal_derivative(pt: f64, alpha: f64, gamma: f64) -> f64 {
    let one_minus = (1.0 - pt).max(0.0);
    let log_p = pt.max(PROB_FLOOR).ln();
    let dlog = if pt >= PROB_FLOOR { 1.0 / pt } else { 0.0 };
    let modulating = if gamma == 0.0 {
        1.0
    } else {
        one_minus.powf(gamma)
    };
    // d/dp (1-p)^γ; zero when γ = 0 and taken as zero at p = 1 where log p = 0
    let dmod = if gamma == 0.0 || one_minus == 0.0 {
        0.0
    } else {
        -gamma * one_minus.powf(gamma - 1.0)
    };
    -alpha * (dmod * log_p + modulating * dlog)
}

fn gru_backward(h: &Tensor, u: &Tensor, cache: &[f64], g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (m, d) = (h.rows(), h.cols());
    let ud = u.data();
    let mut gxp = Tensor::zeros(m, 3 * d);
    let mut gh = Tensor::zeros(m, d);
    let mut gu = Tensor::zeros(d, 3 * d);
    let mut da = vec![0.0; 3 * d];
    for row in 0..m {
        let hr = h.row_slice(row);
        let gr = g.row_slice(row);
        let zs = &cache[3 * row * d..3 * row * d + d];
        let rs = &cache[3 * row * d + d..3 * row * d + 2 * d];
        let cs = &cache[3 * row * d + 2 * d..3 * (row + 1) * d];
        // candidate pre-activation
        for j in 0..d {
            da[2 * d + j] = gr[j] * zs[j] * (1.0 - cs[j] * cs[j]);
        }
        let ghr = gh.data_mut();
        let mut dq = vec![0.0; d];
        for (k, dqk) in dq.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                acc += da[2 * d + j] * ud[k * 3 * d + 2 * d + j];
            }
            *dqk = acc;
        }
        for j in 0..d {
            let dz = gr[j] * (cs[j] - hr[j]);
            let dr = dq[j] * hr[j];
            da[j] = dz * zs[j] * (1.0 - zs[j]);
            da[d + j] = dr * rs[j] * (1.0 - rs[j]);
            ghr[row * d + j] += gr[j] * (1.0 - zs[j]) + dq[j] * rs[j];
        }
        for k in 0..d {
            let mut acc = 0.0;
            for j in 0..2 * d {
                acc += da[j] * ud[k * 3 * d + j];
            }
            ghr[row * d + k] += acc;
        }
        let gud = gu.data_mut();
        for k in 0..d {
            let q = rs[k] * hr[k];
            for j in 0..d {
                gud[k * 3 * d + j] += hr[k] * da[j];
                gud[k * 3 * d + d + j] += hr[k] * da[d + j];
                gud[k * 3 * d + 2 * d + j] += q * da[2 * d + j];
            }
        }
        gxp.data_mut()[row * 3 * d..(row + 1) * 3 * d].copy_from_slice(&da);
    }
    (gxp, gh, gu)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.shape()[1]
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let out = self.value().map(f);
        self.tape.push(out, op)
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands recorded on different tapes"))
        }
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = self.value().matmul(&other.value())?;
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Var<'t> {
        let out = self.value().transpose();
        self.tape.push(out, Op::Transpose(self.id))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.tape.push(out, Op::Add(self.id, other.id)))
    }

    /// Adds a `1 × n` row to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row)?;
        let a = self.value();
        let b = row.value();
        if b.rows() != 1 || b.cols() != a.cols() {
            return Err(Error::dim(format!(
                "add_row: {:?} + {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = (*a).clone();
        let cols = a.cols();
        for r in 0..a.rows() {
            for (o, x) in out.data_mut()[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(b.data())
            {
                *o += x;
            }
        }
        Ok(self.tape.push(out, Op::AddRow(self.id, row.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.tape.push(out, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Ok(self.tape.push(out, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(move |x| x * c, Op::Scale(self.id, c))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let out = self.value().softmax(axis)?;
        Ok(self.tape.push(out, Op::Softmax(self.id, axis)))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)` while
    /// training; the identity on an evaluation tape.
    pub fn dropout(self, p: f64) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout rate {p} outside [0, 1)")));
        }
        let Some(rng) = &self.tape.rng else {
            return Ok(self);
        };
        if p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = 1.0 - p;
        let mut rng = rng.borrow_mut();
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        drop(rng);
        let mask = Tensor::new(x.rows(), x.cols(), mask)?;
        let out = x.zip_map(&mask, |a, m| a * m)?;
        Ok(self.tape.push(out, Op::MulConst(self.id, mask)))
    }

    /// Rows `[start, start + len)` (axis 0) or columns (axis 1).
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let out = match axis {
            0 if start + len <= x.rows() => slice_rows(&x, start, len),
            1 if start + len <= x.cols() && len > 0 => slice_cols(&x, start, len),
            _ => {
                return Err(Error::dim(format!(
                    "slice axis {axis} [{start}, {}) of {:?}",
                    start + len,
                    x.shape()
                )))
            }
        };
        Ok(self.tape.push(
            out,
            Op::Slice {
                src: self.id,
                axis,
                start,
            },
        ))
    }

    pub fn row(self, r: usize) -> Result<Var<'t>> {
        self.slice(0, r, 1)
    }

    /// Splits columns into consecutive pieces of the given widths.
    pub fn split(self, widths: &[usize]) -> Result<Vec<Var<'t>>> {
        if widths.iter().sum::<usize>() != self.cols() {
            return Err(Error::dim("split widths do not cover the columns"));
        }
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let piece = self.slice(1, start, w);
                start += w;
                piece
            })
            .collect()
    }

    pub fn sum(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.value();
        let out = Tensor::scalar(x.sum() / x.len().max(1) as f64);
        self.tape.push(out, Op::Mean(self.id))
    }

    /// Maximum of each row as an `m × 1` column. Ties route the gradient to
    /// the first maximal entry.
    pub fn row_max(self) -> Var<'t> {
        let x = self.value();
        let mut argmax = Vec::with_capacity(x.rows());
        let mut data = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let (mut best, mut best_v) = (0, row[0]);
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            argmax.push(best);
            data.push(best_v);
        }
        let out = Tensor::new(x.rows(), 1, data).expect("column shape");
        self.tape.push(
            out,
            Op::RowMax {
                src: self.id,
                argmax,
            },
        )
    }

    /// Broadcasts a `1 × n` row to `rows × n`.
    pub fn repeat_rows(self, rows: usize) -> Result<Var<'t>> {
        let x = self.value();
        if x.rows() != 1 {
            return Err(Error::dim("repeat_rows needs a single row"));
        }
        let data = x.data().repeat(rows);
        let out = Tensor::new(rows, x.cols(), data)?;
        Ok(self.tape.push(out, Op::Repeat(self.id)))
    }

    /// The element at flat index `index` as a `1 × 1` tensor.
    pub fn pick(self, index: usize) -> Result<Var<'t>> {
        let x = self.value();
        let v = *x.data().get(index).ok_or_else(|| {
            Error::contract(format!("index {index} out of range for {:?}", x.shape()))
        })?;
        Ok(self.tape.push(Tensor::scalar(v), Op::Pick(self.id, index)))
    }

    /// `-alpha (1 - p)^gamma log(max(p, 1e-12))` of a `1 × 1` probability.
    pub fn focal(self, alpha: f64, gamma: f64) -> Result<Var<'t>> {
        let pt = self.value().item()?;
        let out = Tensor::scalar(focal_value(pt, alpha, gamma));
        Ok(self.tape.push(
            out,
            Op::Focal {
                p: self.id,
                alpha,
                gamma,
            },
        ))
    }
}

#[cfg(test)]
impl<'t> Var<'t> {
    pub(crate) fn faulty_square(self) -> Var<'t> {
        self.unary(|x| x * x, Op::Faulty(self.id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, -2.0, 5.0]));
        let loss = x.sum();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(3.0));
        let loss = x.mul(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(3.0));
        let loss = x.sum();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x.relu()), Err(Error::Contract(_))));
    }

    #[test]
    fn sigmoid_of_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().value().data(), &[0.5]);
    }

    #[test]
    fn concat_rows_of_vectors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::row(vec![3.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 3.0]);
        assert!(tape.concat(&[a, b], 0).is_err());
    }

    #[test]
    fn dropout_eval_is_identity_and_rate_is_checked() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let y = x.dropout(0.3).unwrap();
        assert_eq!(y.id(), x.id());
        assert!(matches!(x.dropout(1.0), Err(Error::Config(_))));
        assert!(matches!(x.dropout(-0.1), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_training_scales_kept_units() {
        let tape = Tape::training(ChaCha8Rng::seed_from_u64(3));
        let x = tape.constant(Tensor::filled(1, 400, 1.0));
        let y = x.dropout(0.3).unwrap().value();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        assert!(y
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));
        assert!((200..360).contains(&kept), "kept {kept}");
    }

    #[test]
    fn gru_zero_weights_half_state() {
        let tape = Tape::new();
        let xp = tape.constant(Tensor::zeros(1, 6));
        let h = tape.constant(Tensor::row(vec![1.0, 1.0]));
        let u = tape.constant(Tensor::zeros(2, 6));
        let out = tape.gru(xp, h, u).unwrap().value();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn mismatched_tapes_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.constant(Tensor::scalar(1.0));
        let b = t2.constant(Tensor::scalar(1.0));
        assert!(a.add(b).is_err());
        let loss = a.sum();
        assert!(t2.backward(loss).is_err());
    }
}

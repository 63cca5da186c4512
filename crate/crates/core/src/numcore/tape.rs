//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive as it is evaluated. Nodes only ever
//! reference earlier nodes, so a single reverse sweep over the node list
//! visits them in a valid topological order. Adjoints are propagated only
//! along paths that reach a registered parameter.

use std::collections::BTreeMap;

use super::loss::softmax_in_place;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(NodeId, NodeId),
    /// `a @ b^T`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Broadcast a `1 x c` row over every row of `a`.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Silu(NodeId),
    RmsNorm {
        x: NodeId,
        gain: NodeId,
        eps: f64,
    },
    Rope {
        x: NodeId,
        head_dim: usize,
        theta: f64,
        offset: usize,
    },
    ColSlice {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    CausalSoftmax(NodeId),
    RowGather {
        x: NodeId,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
    },
    Sum(NodeId),
    StopGradient,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    /// True when some registered parameter feeds this node.
    tracks: bool,
}

/// Single-writer record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    params: BTreeMap<String, Matrix>,
}

impl Gradients {
    /// Adjoint of any node; exactly zero for nodes the loss does not depend on.
    pub fn wrt(&self, id: NodeId) -> Matrix {
        match &self.adjoints[id.0] {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Gradient of every registered parameter, keyed by name.
    pub fn params(&self) -> &BTreeMap<String, Matrix> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Matrix> {
        self.params
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix, tracks: bool) -> NodeId {
        self.nodes.push(Node { op, value, tracks });
        NodeId(self.nodes.len() - 1)
    }

    fn tracks(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracks
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// Registers a named differentiable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: &Matrix) -> NodeId {
        self.push(Op::Param(name.into()), value.clone(), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let t = self.tracks(a) || self.tracks(b);
        Ok(self.push(Op::MatMul(a, b), v, t))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_t(self.value(b))?;
        let t = self.tracks(a) || self.tracks(b);
        Ok(self.push(Op::MatMulT(a, b), v, t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b))?;
        let t = self.tracks(a) || self.tracks(b);
        Ok(self.push(Op::Add(a, b), v, t))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (rr, rc) = self.value(row).shape();
        let av = self.value(a);
        if rr != 1 || rc != av.cols() {
            return Err(Error::Contract(format!(
                "add_row: row shape {rr}x{rc} does not broadcast over {}x{}",
                av.rows(),
                av.cols()
            )));
        }
        let mut v = av.clone();
        let rv = self.value(row).data().to_vec();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(&rv) {
                *x += b;
            }
        }
        let t = self.tracks(a) || self.tracks(row);
        Ok(self.push(Op::AddRow(a, row), v, t))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Contract(format!(
                "mul: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Matrix::new(av.rows(), av.cols(), data).map_err(|_| non_finite("mul"))?;
        let t = self.tracks(a) || self.tracks(b);
        Ok(self.push(Op::Mul(a, b), v, t))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scaled(s);
        let t = self.tracks(a);
        self.push(Op::Scale(a, s), v, t)
    }

    /// `x * sigmoid(x)`, elementwise.
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let t = self.tracks(a);
        self.push(Op::Silu(a), v, t)
    }

    /// Row-wise RMS normalisation with a learned `1 x d` gain.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: f64) -> Result<NodeId> {
        let xv = self.value(x);
        let gv = self.value(gain);
        if gv.rows() != 1 || gv.cols() != xv.cols() {
            return Err(Error::Contract(format!(
                "rms_norm: gain {:?} incompatible with input {:?}",
                gv.shape(),
                xv.shape()
            )));
        }
        let d = xv.cols();
        let mut v = xv.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let ms = row.iter().map(|a| a * a).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            for (a, g) in row.iter_mut().zip(gv.data()) {
                *a *= inv * g;
            }
        }
        let t = self.tracks(x) || self.tracks(gain);
        Ok(self.push(Op::RmsNorm { x, gain, eps }, v, t))
    }

    /// Rotary position embedding over interleaved pairs within each head.
    /// Row `i` is treated as absolute position `offset + i`.
    pub fn rope(
        &mut self,
        x: NodeId,
        head_dim: usize,
        theta: f64,
        offset: usize,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        if head_dim == 0 || !head_dim.is_multiple_of(2) || !xv.cols().is_multiple_of(head_dim) {
            return Err(Error::Contract(format!(
                "rope: head_dim {head_dim} must be even and divide {} columns",
                xv.cols()
            )));
        }
        let mut v = xv.clone();
        rotate(&mut v, head_dim, theta, offset, 1.0);
        let t = self.tracks(x);
        Ok(self.push(
            Op::Rope {
                x,
                head_dim,
                theta,
                offset,
            },
            v,
            t,
        ))
    }

    pub fn col_slice(&mut self, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let v = self.value(x).col_slice(start, width)?;
        let t = self.tracks(x);
        Ok(self.push(Op::ColSlice { x, start }, v, t))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts
            .first()
            .map(|p| self.value(*p).rows())
            .ok_or_else(|| Error::Contract("concat_cols: no inputs".into()))?;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.rows() != rows {
                return Err(Error::Contract("concat_cols: row mismatch".into()));
            }
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        let t = parts.iter().any(|p| self.tracks(*p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v, t))
    }

    /// Row-wise softmax over a square score matrix with keys beyond the
    /// query position masked to exactly zero.
    pub fn causal_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rows() != xv.cols() {
            return Err(Error::Contract(format!(
                "causal_softmax expects a square score matrix, got {:?}",
                xv.shape()
            )));
        }
        let n = xv.rows();
        let mut v = Matrix::zeros(n, n);
        for i in 0..n {
            let mut row = xv.row(i)[..=i].to_vec();
            softmax_in_place(&mut row);
            v.row_mut(i)[..=i].copy_from_slice(&row);
        }
        let t = self.tracks(x);
        Ok(self.push(Op::CausalSoftmax(x), v, t))
    }

    /// Selects rows by index (embedding lookup, masked-position pooling).
    pub fn row_gather(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let mut v = Matrix::zeros(rows.len(), xv.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= xv.rows() {
                return Err(Error::Input(format!(
                    "row index {r} out of range for {} rows",
                    xv.rows()
                )));
            }
            v.row_mut(i).copy_from_slice(xv.row(r));
        }
        let t = self.tracks(x);
        Ok(self.push(
            Op::RowGather {
                x,
                rows: rows.to_vec(),
            },
            v,
            t,
        ))
    }

    /// Mean softmax cross-entropy over rows; yields a `1 x 1` node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() || targets.is_empty() {
            return Err(Error::Contract(format!(
                "cross_entropy: {} targets for {} rows",
                targets.len(),
                lv.rows()
            )));
        }
        let mut total = 0.0;
        for (r, &tgt) in targets.iter().enumerate() {
            let (loss, _) = super::loss::softmax_cross_entropy(lv.row(r), tgt)?;
            total += loss;
        }
        let v = Matrix::scalar(total / targets.len() as f64);
        let t = self.tracks(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            v,
            t,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(x).sum());
        let t = self.tracks(x);
        self.push(Op::Sum(x), v, t)
    }

    /// Identity in the forward pass; blocks adjoint flow in the reverse pass.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        let _ = x;
        self.push(Op::StopGradient, v, false)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss node, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Matrix>> = vec![None; n];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracks {
                adj[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut adj)?;
            adj[idx] = Some(g);
        }

        let mut params: BTreeMap<String, Matrix> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = adj[i]
                    .clone()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                match params.get_mut(name) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        params.insert(name.clone(), g);
                    }
                }
            }
        }
        for (name, g) in &params {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                });
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            adjoints: adj,
            shapes,
            params,
        })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
        if !self.tracks(id) {
            return Ok(());
        }
        match &mut adj[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Matrix,
        g: &Matrix,
        adj: &mut [Option<Matrix>],
    ) -> Result<()> {
        match op {
            Op::Constant | Op::Param(_) | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                if self.tracks(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(adj, *a, ga)?;
                }
                if self.tracks(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(adj, *b, gb)?;
                }
            }
            Op::MatMulT(a, b) => {
                // out = a b^T: da = g b, db = g^T a
                if self.tracks(*a) {
                    let ga = g.matmul(self.value(*b))?;
                    self.accumulate(adj, *a, ga)?;
                }
                if self.tracks(*b) {
                    let gb = g.t_matmul(self.value(*a))?;
                    self.accumulate(adj, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone())?;
                self.accumulate(adj, *b, g.clone())?;
            }
            Op::AddRow(a, row) => {
                self.accumulate(adj, *a, g.clone())?;
                if self.tracks(*row) {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(adj, *row, gr)?;
                }
            }
            Op::Mul(a, b) => {
                if self.tracks(*a) {
                    let ga = hadamard(g, self.value(*b));
                    self.accumulate(adj, *a, ga)?;
                }
                if self.tracks(*b) {
                    let gb = hadamard(g, self.value(*a));
                    self.accumulate(adj, *b, gb)?;
                }
            }
            Op::Scale(a, s) => self.accumulate(adj, *a, g.scaled(*s))?,
            Op::Silu(a) => {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    })
                    .collect();
                self.accumulate(adj, *a, Matrix::new(x.rows(), x.cols(), data)?)?;
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data();
                let d = xv.cols();
                let mut gx = Matrix::zeros(xv.rows(), d);
                let mut gg = Matrix::zeros(1, d);
                for r in 0..xv.rows() {
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    let ms = xr.iter().map(|a| a * a).sum::<f64>() / d as f64;
                    let inv = 1.0 / (ms + eps).sqrt();
                    let mut proj = 0.0;
                    for j in 0..d {
                        gg.data_mut()[j] += gr[j] * xr[j] * inv;
                        proj += gv[j] * gr[j] * xr[j];
                    }
                    let coef = inv * inv * inv * proj / d as f64;
                    let row = gx.row_mut(r);
                    for j in 0..d {
                        row[j] = inv * gv[j] * gr[j] - xr[j] * coef;
                    }
                }
                self.accumulate(adj, *x, gx)?;
                self.accumulate(adj, *gain, gg)?;
            }
            Op::Rope {
                x,
                head_dim,
                theta,
                offset,
            } => {
                let mut gx = g.clone();
                rotate(&mut gx, *head_dim, *theta, *offset, -1.0);
                self.accumulate(adj, *x, gx)?;
            }
            Op::ColSlice { x, start } => {
                if self.tracks(*x) {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    self.accumulate(adj, *x, gx)?;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.tracks(*p) {
                        self.accumulate(adj, *p, g.col_slice(off, w)?)?;
                    }
                    off += w;
                }
            }
            Op::CausalSoftmax(x) => {
                let n = out.rows();
                let mut gx = Matrix::zeros(n, n);
                for i in 0..n {
                    let p = &out.row(i)[..=i];
                    let gr = &g.row(i)[..=i];
                    let inner: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let row = gx.row_mut(i);
                    for j in 0..=i {
                        row[j] = p[j] * (gr[j] - inner);
                    }
                }
                self.accumulate(adj, *x, gx)?;
            }
            Op::RowGather { x, rows } => {
                let (nr, nc) = self.value(*x).shape();
                let mut gx = Matrix::zeros(nr, nc);
                for (i, &r) in rows.iter().enumerate() {
                    for (acc, v) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                self.accumulate(adj, *x, gx)?;
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let upstream = g.data()[0] / targets.len() as f64;
                let mut gl = Matrix::zeros(lv.rows(), lv.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let row = gl.row_mut(r);
                    row.copy_from_slice(lv.row(r));
                    softmax_in_place(row);
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= upstream;
                    }
                }
                self.accumulate(adj, *logits, gl)?;
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(adj, *x, Matrix::filled(r, c, g.data()[0]))?;
            }
        }
        Ok(())
    }
}

/// Runs the reverse sweep and returns the gradient of every registered parameter.
pub fn forward_backward(tape: &Tape, loss: NodeId) -> Result<BTreeMap<String, Matrix>> {
    Ok(tape.backward(loss)?.into_params())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::new(a.rows(), a.cols(), data).unwrap_or_else(|_| Matrix::zeros(a.rows(), a.cols()))
}

fn non_finite(op: &str) -> Error {
    Error::Input(format!("{op}: produced a non-finite value"))
}

/// In-place rotation; `sign = -1` applies the inverse (transpose) rotation.
fn rotate(m: &mut Matrix, head_dim: usize, theta: f64, offset: usize, sign: f64) {
    let half = head_dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|j| theta.powf(-2.0 * j as f64 / head_dim as f64))
        .collect();
    let heads = m.cols() / head_dim;
    for r in 0..m.rows() {
        let pos = (offset + r) as f64;
        let row = m.row_mut(r);
        for (j, f) in freqs.iter().enumerate() {
            let (s, c) = (pos * f).sin_cos();
            let s = s * sign;
            for h in 0..heads {
                let i0 = h * head_dim + 2 * j;
                let (a, b) = (row[i0], row[i0 + 1]);
                row[i0] = a * c - b * s;
                row[i0 + 1] = a * s + b * c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let p = Matrix::from_fn(2, 3, |r, c| r as f64 - c as f64);
        let pid = t.param("p", &p);
        let loss = t.sum(pid);
        let g = forward_backward(&t, loss).unwrap();
        assert_eq!(g["p"], Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn half_square_norm_gives_identity_gradient() {
        let mut t = Tape::new();
        let p = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pid = t.param("p", &p);
        let sq = t.mul(pid, pid).unwrap();
        let s = t.sum(sq);
        let loss = t.scale(s, 0.5);
        let g = forward_backward(&t, loss).unwrap();
        assert_eq!(g["p"], p);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let pid = t.param("p", &Matrix::zeros(2, 2));
        assert!(matches!(t.backward(pid), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_nodes_have_zero_adjoint() {
        let mut t = Tape::new();
        let a = t.param("a", &Matrix::filled(2, 2, 1.5));
        let b = t.param("b", &Matrix::filled(2, 2, -0.5));
        let unused = t.silu(b);
        let loss = t.sum(a);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(unused), Matrix::zeros(2, 2));
        assert_eq!(g.params()["b"], Matrix::zeros(2, 2));
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut t = Tape::new();
        let a = t.param("a", &Matrix::filled(1, 3, 2.0));
        let s = t.stop_gradient(a);
        let y = t.mul(s, a).unwrap();
        let loss = t.sum(y);
        let g = forward_backward(&t, loss).unwrap();
        // only the non-detached factor contributes
        assert_eq!(g["a"], Matrix::filled(1, 3, 2.0));
    }

    #[test]
    fn forward_values_unchanged_by_backward() {
        let mut t = Tape::new();
        let a = t.param("a", &Matrix::filled(2, 2, 0.3));
        let s = t.silu(a);
        let loss = t.sum(s);
        let before = t.value(s).clone();
        t.backward(loss).unwrap();
        assert_eq!(t.value(s), &before);
    }

    #[test]
    fn repeated_param_names_accumulate() {
        let mut t = Tape::new();
        let v = Matrix::filled(1, 2, 1.0);
        let a1 = t.param("w", &v);
        let a2 = t.param("w", &v);
        let s = t.add(a1, a2).unwrap();
        let loss = t.sum(s);
        let g = forward_backward(&t, loss).unwrap();
        assert_eq!(g["w"], Matrix::filled(1, 2, 2.0));
    }

    #[test]
    fn causal_softmax_rows_are_masked() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_fn(3, 3, |r, c| (r + 2 * c) as f64 * 0.1));
        let p = t.causal_softmax(x).unwrap();
        let pv = t.value(p);
        assert_eq!(pv.get(0, 0), 1.0);
        assert_eq!(pv.get(0, 1), 0.0);
        assert_eq!(pv.get(1, 2), 0.0);
        for r in 0..3 {
            assert!((pv.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

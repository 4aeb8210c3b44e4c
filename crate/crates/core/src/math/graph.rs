//! Reverse-mode differentiation over a fixed operator set. A `Graph` is a
//! per-forward-pass tape: nodes are appended in evaluation order, so node ids
//! are already a topological order and backward is a single reverse sweep.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::{MathError, Result};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Transpose { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// `[n,d] + [1,d]`, row broadcast.
    AddRow { x: NodeId, row: NodeId },
    Mul { a: NodeId, b: NodeId },
    ScaleConst { x: NodeId, c: f64 },
    /// Elementwise multiply by a `1x1` node.
    MulScalar { x: NodeId, s: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    SoftmaxRows { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    SliceRows { x: NodeId, from: usize },
    SliceCols { x: NodeId, from: usize },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    MeanRows { x: NodeId },
    SumAll { x: NodeId },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: Vec<(NodeId, ParamId)>,
}

pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                out_row[j] += av * b_row[j];
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id];
        Tensor::new(vec![n.rows, n.cols], n.data.clone()).expect("node shape")
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node { rows, cols, data, op, needs_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let (r, c) = t.shape();
        self.push(r, c, t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        let (r, c) = t.shape();
        self.push(r, c, t.data().to_vec(), Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter; its gradient is scattered back by
    /// [`Graph::scatter_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let node = self.leaf(store.get(id));
        self.param_leaves.push((node, id));
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(MathError::ShapeMismatch {
                op: "matmul",
                detail: format!("{m}x{ka} . {kb}x{n}"),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(&self.nodes[a].data, &self.nodes[b].data, m, ka, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, Op::MatMul { a, b }, ng))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let src = &self.nodes[x].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.needs(x);
        self.push(c, r, out, Op::Transpose { x }, ng)
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, op_name: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(MathError::ShapeMismatch {
                op: op_name,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Sub { a, b }, ng))
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(MathError::ShapeMismatch {
                op: "add_row",
                detail: format!("{r}x{c} + {rr}x{rc}"),
            });
        }
        let mut out = self.nodes[x].data.clone();
        let rowd = &self.nodes[row].data;
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += rowd[j];
            }
        }
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(r, c, out, Op::AddRow { x, row }, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul")?;
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (r, cc) = self.shape(x);
        let out: Vec<f64> = self.nodes[x].data.iter().map(|v| v * c).collect();
        let ng = self.needs(x);
        self.push(r, cc, out, Op::ScaleConst { x, c }, ng)
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.shape(s) != (1, 1) {
            return Err(MathError::ShapeMismatch {
                op: "mul_scalar",
                detail: format!("scalar operand has shape {:?}", self.shape(s)),
            });
        }
        let sv = self.nodes[s].data[0];
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x].data.iter().map(|v| v * sv).collect();
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(r, c, out, Op::MulScalar { x, s }, ng))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x].data.iter().map(|v| v.tanh()).collect();
        let ng = self.needs(x);
        self.push(r, c, out, Op::Tanh { x }, ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x]
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let ng = self.needs(x);
        self.push(r, c, out, Op::Sigmoid { x }, ng)
    }

    /// Max-subtracted softmax along each row.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[x].data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        let ng = self.needs(x);
        self.push(r, c, out, Op::SoftmaxRows { x }, ng)
    }

    /// Per-row normalization with biased variance, then affine.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, d) = self.shape(x);
        if d < 2 {
            return Err(MathError::DegenerateDim {
                op: "layer_norm",
                detail: format!("row width {d} < 2"),
            });
        }
        if eps <= 0.0 {
            return Err(MathError::Config(format!("layer_norm eps {eps} must be > 0")));
        }
        for (name, id) in [("gain", gain), ("bias", bias)] {
            if self.shape(id) != (1, d) {
                return Err(MathError::ShapeMismatch {
                    op: "layer_norm",
                    detail: format!("{name} shape {:?}, want 1x{d}", self.shape(id)),
                });
            }
        }
        let mut out = vec![0.0; r * d];
        let g = &self.nodes[gain].data;
        let b = &self.nodes[bias].data;
        for i in 0..r {
            let row = &self.nodes[x].data[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out[i * d + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(r, d, out, Op::LayerNorm { x, gain, bias, eps }, ng))
    }

    pub fn slice_rows(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if from >= to || to > r {
            return Err(MathError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {from}..{to} of {r}"),
            });
        }
        let out = self.nodes[x].data[from * c..to * c].to_vec();
        let ng = self.needs(x);
        Ok(self.push(to - from, c, out, Op::SliceRows { x, from }, ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if from >= to || to > c {
            return Err(MathError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {from}..{to} of {c}"),
            });
        }
        let w = to - from;
        let mut out = vec![0.0; r * w];
        for i in 0..r {
            out[i * w..(i + 1) * w].copy_from_slice(&self.nodes[x].data[i * c + from..i * c + to]);
        }
        let ng = self.needs(x);
        Ok(self.push(r, w, out, Op::SliceCols { x, from }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(MathError::Config("concat_rows of zero parts".into()));
        }
        let c = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut ng = false;
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(MathError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("col widths {c} vs {pc}"),
                });
            }
            rows += r;
            data.extend_from_slice(&self.nodes[p].data);
            ng |= self.needs(p);
        }
        Ok(self.push(rows, c, data, Op::ConcatRows { parts: parts.to_vec() }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(MathError::Config("concat_cols of zero parts".into()));
        }
        let r = self.shape(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        let mut ng = false;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(MathError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {r} vs {pr}"),
                });
            }
            widths.push(pc);
            total += pc;
            ng |= self.needs(p);
        }
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            for i in 0..r {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&self.nodes[p].data[i * w..(i + 1) * w]);
            }
            off += w;
        }
        Ok(self.push(r, total, data, Op::ConcatCols { parts: parts.to_vec() }, ng))
    }

    /// `[n,d] -> [1,d]` arithmetic mean over rows.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += self.nodes[x].data[i * c + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        let ng = self.needs(x);
        self.push(1, c, out, Op::MeanRows { x }, ng)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].data.iter().sum();
        let ng = self.needs(x);
        self.push(1, 1, vec![s], Op::SumAll { x }, ng)
    }

    /// Sum of squared entries, as a `1x1` node.
    pub fn sum_sq(&mut self, x: NodeId) -> Result<NodeId> {
        let sq = self.mul(x, x)?;
        Ok(self.sum_all(sq))
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.shape(id), (1, 1));
        self.nodes[id].data[0]
    }

    /// Reverse sweep from a `1x1` loss node. Returns per-node gradients for
    /// nodes on a differentiable path.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        if self.shape(loss) != (1, 1) {
            return Err(MathError::ShapeMismatch {
                op: "backward",
                detail: format!("loss node has shape {:?}", self.shape(loss)),
            });
        }
        if !self.nodes[loss].data[0].is_finite() {
            return Err(MathError::NonFinite("backward seed"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let gy = grads[id].take().unwrap();
            self.push_back(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, add: impl FnOnce(&mut [f64])) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].data.len()]);
        add(slot);
    }

    #[allow(clippy::too_many_lines)]
    fn push_back(&self, id: NodeId, gy: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let node = &self.nodes[id];
        let (r, c) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.nodes[*a].needs_grad {
                    // dA = dC . B^T
                    let bd = &self.nodes[*b].data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gy[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    self.accumulate(grads, *a, |g| {
                        g.iter_mut().zip(&da).for_each(|(x, y)| *x += y)
                    });
                }
                if self.nodes[*b].needs_grad {
                    // dB = A^T . dC
                    let ad = &self.nodes[*a].data;
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += av * gy[i * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, |g| {
                        g.iter_mut().zip(&db).for_each(|(x, y)| *x += y)
                    });
                }
            }
            Op::Transpose { x } => {
                let (xr, xc) = self.shape(*x);
                self.accumulate(grads, *x, |g| {
                    for i in 0..xr {
                        for j in 0..xc {
                            g[i * xc + j] += gy[j * xr + i];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |g| g.iter_mut().zip(gy).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |g| g.iter_mut().zip(gy).for_each(|(x, y)| *x += y));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |g| g.iter_mut().zip(gy).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |g| g.iter_mut().zip(gy).for_each(|(x, y)| *x -= y));
            }
            Op::AddRow { x, row } => {
                self.accumulate(grads, *x, |g| g.iter_mut().zip(gy).for_each(|(a, b)| *a += b));
                self.accumulate(grads, *row, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[j] += gy[i * c + j];
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let bd = &self.nodes[*b].data;
                self.accumulate(grads, *a, |g| {
                    g.iter_mut()
                        .zip(gy.iter().zip(bd))
                        .for_each(|(x, (dy, bv))| *x += dy * bv)
                });
                let ad = &self.nodes[*a].data;
                self.accumulate(grads, *b, |g| {
                    g.iter_mut()
                        .zip(gy.iter().zip(ad))
                        .for_each(|(x, (dy, av))| *x += dy * av)
                });
            }
            Op::ScaleConst { x, c: k } => {
                self.accumulate(grads, *x, |g| {
                    g.iter_mut().zip(gy).for_each(|(a, b)| *a += k * b)
                });
            }
            Op::MulScalar { x, s } => {
                let sv = self.nodes[*s].data[0];
                self.accumulate(grads, *x, |g| {
                    g.iter_mut().zip(gy).for_each(|(a, b)| *a += sv * b)
                });
                let xd = &self.nodes[*x].data;
                self.accumulate(grads, *s, |g| {
                    g[0] += gy.iter().zip(xd).map(|(dy, xv)| dy * xv).sum::<f64>()
                });
            }
            Op::Tanh { x } => {
                let y = &node.data;
                self.accumulate(grads, *x, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = &node.data;
                self.accumulate(grads, *x, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let y = &node.data;
                self.accumulate(grads, *x, |g| {
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &gy[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let d = c;
                let xd = &self.nodes[*x].data;
                let gd = &self.nodes[*gain].data;
                // Per-row recompute of mean / inv_std / normalized values.
                let mut xhat = vec![0.0; r * d];
                let mut inv_std = vec![0.0; r];
                for i in 0..r {
                    let row = &xd[i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    inv_std[i] = is;
                    for j in 0..d {
                        xhat[i * d + j] = (row[j] - mean) * is;
                    }
                }
                self.accumulate(grads, *gain, |g| {
                    for i in 0..r {
                        for j in 0..d {
                            g[j] += gy[i * d + j] * xhat[i * d + j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |g| {
                    for i in 0..r {
                        for j in 0..d {
                            g[j] += gy[i * d + j];
                        }
                    }
                });
                self.accumulate(grads, *x, |g| {
                    for i in 0..r {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let dxhat = gy[i * d + j] * gd[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat[i * d + j];
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_xhat /= d as f64;
                        for j in 0..d {
                            let dxhat = gy[i * d + j] * gd[j];
                            g[i * d + j] +=
                                inv_std[i] * (dxhat - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                        }
                    }
                });
            }
            Op::SliceRows { x, from } => {
                let xc = self.shape(*x).1;
                let from = *from;
                self.accumulate(grads, *x, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[(from + i) * xc + j] += gy[i * c + j];
                        }
                    }
                });
            }
            Op::SliceCols { x, from } => {
                let xc = self.shape(*x).1;
                let from = *from;
                self.accumulate(grads, *x, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * xc + from + j] += gy[i * c + j];
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let (pr, _) = self.shape(p);
                    let lo = off * c;
                    let hi = (off + pr) * c;
                    self.accumulate(grads, p, |g| {
                        g.iter_mut().zip(&gy[lo..hi]).for_each(|(a, b)| *a += b)
                    });
                    off += pr;
                }
            }
            Op::ConcatCols { parts } => {
                let mut off = 0;
                for &p in parts {
                    let (_, pw) = self.shape(p);
                    let start = off;
                    self.accumulate(grads, p, |g| {
                        for i in 0..r {
                            for j in 0..pw {
                                g[i * pw + j] += gy[i * c + start + j];
                            }
                        }
                    });
                    off += pw;
                }
            }
            Op::MeanRows { x } => {
                let (xr, _) = self.shape(*x);
                let inv = 1.0 / xr as f64;
                self.accumulate(grads, *x, |g| {
                    for i in 0..xr {
                        for j in 0..c {
                            g[i * c + j] += gy[j] * inv;
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                let dy = gy[0];
                self.accumulate(grads, *x, |g| g.iter_mut().for_each(|v| *v += dy));
            }
        }
    }

    /// Backward from `loss`, then add param-leaf gradients into the store.
    pub fn backward_into(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        self.scatter_grads(&grads, store);
        Ok(())
    }

    pub fn scatter_grads(&self, grads: &[Option<Vec<f64>>], store: &mut ParamStore) {
        for &(node, pid) in &self.param_leaves {
            if let Some(g) = &grads[node] {
                if let Some(slot) = store.get_mut(pid).grad.as_mut() {
                    slot.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

/// Softmax along rows (`axis = 1`) or columns (`axis = 0`).
pub fn softmax(g: &mut Graph, x: NodeId, axis: usize) -> Result<NodeId> {
    match axis {
        1 => Ok(g.softmax_rows(x)),
        0 => {
            let xt = g.transpose(x);
            let st = g.softmax_rows(xt);
            Ok(g.transpose(st))
        }
        _ => Err(MathError::Config(format!("softmax axis {axis} out of range"))),
    }
}

/// Scaled dot-product attention with learned projections, `1/sqrt(d/heads)`
/// scaling, and an output projection. `wq..wo` are `d x d` nodes.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph,
    q_in: NodeId,
    k_in: NodeId,
    v_in: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
    heads: usize,
) -> Result<NodeId> {
    let d = g.shape(q_in).1;
    if heads == 0 || d % heads != 0 {
        return Err(MathError::Config(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let q = g.matmul(q_in, wq)?;
    let k = g.matmul(k_in, wk)?;
    let v = g.matmul(v_in, wv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kht = g.transpose(kh);
        let logits = g.matmul(qh, kht)?;
        let scaled = g.scale(logits, scale);
        let weights = g.softmax_rows(scaled);
        head_outs.push(g.matmul(weights, vh)?);
    }
    let merged = g.concat_cols(&head_outs)?;
    g.matmul(merged, wo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_is_noop() {
        let mut g = Graph::new();
        let i = g.constant(&Tensor::identity(2));
        let b = g.constant(&t(&[&[1.5, -2.0, 3.0], &[0.5, 4.0, -1.0]]));
        let out = g.matmul(i, b).unwrap();
        assert_eq!(g.data(out), g.data(b));
    }

    #[test]
    fn matmul_hand_product() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(&t(&[&[1.0], &[1.0]]));
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.data(out), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut g = Graph::new();
        let z = g.constant(&Tensor::zeros(2, 3));
        let row: &[f64] = &[1.0, 2.0, 3.0, 4.0];
        let b = g.constant(&t(&[row, row, row]));
        let out = g.matmul(z, b).unwrap();
        assert_eq!(g.shape(out), (2, 4));
        assert!(g.data(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(2, 3));
        let b = g.constant(&Tensor::zeros(4, 2));
        assert!(g.matmul(a, b).is_err());
    }

    #[test]
    fn layer_norm_hand_case() {
        // row (2, 0): mean 1, biased var 1 -> (1, -1) as eps -> 0
        let mut g = Graph::new();
        let x = g.constant(&t(&[&[2.0, 0.0]]));
        let gain = g.constant(&Tensor::row(&[1.0, 1.0]));
        let bias = g.constant(&Tensor::row(&[0.0, 0.0]));
        let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
        assert!((g.data(y)[0] - 1.0).abs() < 1e-9);
        assert!((g.data(y)[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_constant_row_gives_bias() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[&[3.3, 3.3, 3.3, 3.3]]));
        let gain = g.constant(&Tensor::row(&[2.0, 2.0, 2.0, 2.0]));
        let bias = g.constant(&Tensor::row(&[0.1, -0.2, 0.3, 0.4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for (got, want) in g.data(y).iter().zip([0.1, -0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_zero_gain_gives_bias() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[&[1.0, -7.0, 2.5]]));
        let gain = g.constant(&Tensor::row(&[0.0, 0.0, 0.0]));
        let bias = g.constant(&Tensor::row(&[5.0, 6.0, 7.0]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.data(y), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn layer_norm_degenerate_width_rejected() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[&[1.0]]));
        let gain = g.constant(&Tensor::row(&[1.0]));
        let bias = g.constant(&Tensor::row(&[0.0]));
        assert!(matches!(
            g.layer_norm(x, gain, bias, 1e-5),
            Err(MathError::DegenerateDim { .. })
        ));
    }

    #[test]
    fn softmax_symmetry_and_hand_values() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[&[0.0, 0.0]]));
        let y = g.softmax_rows(x);
        assert_eq!(g.data(y), &[0.5, 0.5]);

        let single = g.constant(&t(&[&[123.0]]));
        let ys = g.softmax_rows(single);
        assert_eq!(g.data(ys), &[1.0]);

        let logs = g.constant(&t(&[&[0.0, 3.0f64.ln()]]));
        let yl = g.softmax_rows(logs);
        assert!((g.data(yl)[0] - 0.25).abs() < 1e-12);
        assert!((g.data(yl)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_column_axis_via_transpose() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[&[0.0, 1.0], &[0.0, 1.0]]));
        let y = softmax(&mut g, x, 0).unwrap();
        assert_eq!(g.data(y), &[0.5, 0.5, 0.5, 0.5]);
        assert!(softmax(&mut g, x, 2).is_err());
    }

    #[test]
    fn mha_single_key_copies_value() {
        let mut g = Graph::new();
        let d = 2;
        let ident = Tensor::identity(d);
        let (wq, wk, wv, wo) = (
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
        );
        let q = g.constant(&t(&[&[5.0, -1.0], &[0.0, 0.0], &[2.0, 2.0]]));
        let kv = g.constant(&t(&[&[3.0, 4.0]]));
        let out = multi_head_attention(&mut g, q, kv, kv, wq, wk, wv, wo, 1).unwrap();
        for i in 0..3 {
            assert_eq!(&g.data(out)[i * d..(i + 1) * d], &[3.0, 4.0]);
        }
    }

    #[test]
    fn mha_zero_values_give_zero() {
        let mut g = Graph::new();
        let ident = Tensor::identity(4);
        let (wq, wk, wv, wo) = (
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
        );
        let q = g.constant(&Tensor::full(2, 4, 1.0));
        let k = g.constant(&Tensor::full(3, 4, 0.5));
        let v = g.constant(&Tensor::zeros(3, 4));
        let out = multi_head_attention(&mut g, q, k, v, wq, wk, wv, wo, 2).unwrap();
        assert!(g.data(out).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mha_equal_logits_average_values() {
        // Q orthogonal to both keys -> logits equal -> weights 0.5/0.5.
        let mut g = Graph::new();
        let ident = Tensor::identity(2);
        let (wq, wk, wv, wo) = (
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
        );
        let q = g.constant(&t(&[&[0.0, 1.0]]));
        let k = g.constant(&t(&[&[1.0, 0.0], &[-1.0, 0.0]]));
        let v = g.constant(&t(&[&[2.0, 6.0], &[4.0, -2.0]]));
        let out = multi_head_attention(&mut g, q, k, v, wq, wk, wv, wo, 1).unwrap();
        assert!((g.data(out)[0] - 3.0).abs() < 1e-12);
        assert!((g.data(out)[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mha_rejects_bad_head_count() {
        let mut g = Graph::new();
        let ident = Tensor::identity(6);
        let (wq, wk, wv, wo) = (
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
            g.constant(&ident),
        );
        let q = g.constant(&Tensor::zeros(1, 6));
        assert!(multi_head_attention(&mut g, q, q, q, wq, wk, wv, wo, 4).is_err());
    }

    #[test]
    fn backward_through_simple_chain() {
        // loss = sum((a.b)^2) with a = [[1,2]], b = [[3],[4]] -> a.b = [[11]]
        // dL/d(ab) = 2*11 = 22; da = 22*b^T = [66, 88]; db = a^T*22 = [22, 44]
        let mut g = Graph::new();
        let mut at = t(&[&[1.0, 2.0]]);
        at.requires_grad = true;
        let mut bt = t(&[&[3.0], &[4.0]]);
        bt.requires_grad = true;
        let a = g.leaf(&at);
        let b = g.leaf(&bt);
        let prod = g.matmul(a, b).unwrap();
        let loss = g.sum_sq(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads[a].as_ref().unwrap(), &vec![66.0, 88.0]);
        assert_eq!(grads[b].as_ref().unwrap(), &vec![22.0, 44.0]);
    }

    #[test]
    fn grad_skips_non_trainable_inputs() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[&[1.0, 2.0]]));
        let mut bt = t(&[&[3.0], &[4.0]]);
        bt.requires_grad = true;
        let b = g.leaf(&bt);
        let prod = g.matmul(a, b).unwrap();
        let loss = g.sum_sq(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads[a].is_none());
        assert!(grads[b].is_some());
    }
}

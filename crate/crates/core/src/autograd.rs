//! A small reverse-mode tape covering exactly the operations used by the
//! transformer stacks, the feature transformer and the prompt adapter.
//!
//! Every forward evaluation builds a fresh [`Graph`]. Leaves are either
//! parameters (gradients wanted) or constants; an op node requires a
//! gradient iff any input does, and backward skips everything else.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, softmax_in_place, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: Real = 1e-5;
// sqrt(2/pi)
const GELU_C: Real = 0.797_884_560_802_865_4;
const GELU_A: Real = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, Real),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<Real>,
    },
    /// Masked entries have zero output, so the backward pass needs no mask.
    Softmax {
        x: Var,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    AddRowsAt {
        base: Var,
        src: Var,
        pairs: Vec<(usize, usize)>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `x[r x c] + bias[c]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.numel() != c {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// `x . w + b` for a row-major `x[r x in]`, `w[in x out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn scale(&mut self, a: Var, s: Real) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(Real::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Layer normalisation over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.numel() != c || bv.numel() != c {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let mut xhat = xv.clone();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<Real>() / c as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / c as Real;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for j in 0..c {
                xh[j] = (row[j] - mean) * is;
            }
            let o = out.row_mut(r);
            for j in 0..c {
                o[j] = xh[j] * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row softmax. `mask`, when given, is row-major over the same shape and
    /// marks the entries allowed to receive probability mass.
    pub fn softmax(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = &mask {
            if m.len() != xv.numel() {
                return Err(Error::Shape {
                    op: "softmax mask",
                    lhs: xv.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        if !xv.is_finite() {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let mut out = xv.clone();
        let c = out.cols();
        for r in 0..out.rows() {
            let mrow = mask.as_ref().map(|m| &m[r * c..(r + 1) * c]);
            softmax_in_place(out.row_mut(r), mrow);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x }, rg))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (n, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::Shape {
                    op: "embedding",
                    lhs: tv.shape().to_vec(),
                    rhs: vec![id],
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `out = base; out[dst] += src[src_row]` for every `(dst, src_row)` pair.
    pub fn add_rows_at(&mut self, base: Var, src: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (bv, sv) = (self.value(base), self.value(src));
        if bv.cols() != sv.cols() {
            return Err(shape_err("add_rows_at", bv, sv));
        }
        let mut out = bv.clone();
        for &(dst, s) in pairs {
            if dst >= bv.rows() || s >= sv.rows() {
                return Err(shape_err("add_rows_at", bv, sv));
            }
            let src_row = sv.row(s).to_vec();
            for (o, v) in out.row_mut(dst).iter_mut().zip(src_row) {
                *o += v;
            }
        }
        let rg = self.rg(&[base, src]);
        Ok(self.push(
            out,
            Op::AddRowsAt {
                base,
                src,
                pairs: pairs.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != c {
                return Err(shape_err("concat_rows", self.value(parts[0]), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(&[r, total]);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != r {
                return Err(shape_err("concat_cols", self.value(parts[0]), pv));
            }
            let c = pv.cols();
            for i in 0..r {
                out.row_mut(i)[off..off + c].copy_from_slice(pv.row(i));
            }
            off += c;
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let c = xv.cols();
        let out = Tensor::new(vec![len, c], xv.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let r = xv.rows();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Mean negative log-likelihood over the positions where `mask` is set.
    pub fn cross_entropy_masked(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let lv = self.value(logits);
        let (t, v) = (lv.rows(), lv.cols());
        if targets.len() != t || mask.len() != t {
            return Err(Error::Shape {
                op: "cross_entropy_masked",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let mut probs = Tensor::zeros(&[t, v]);
        let mut loss = 0.0;
        for r in 0..t {
            if !mask[r] {
                continue;
            }
            let row = lv.row(r);
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("logits row {r}")));
            }
            if targets[r] >= v {
                return Err(Error::Shape {
                    op: "cross_entropy target",
                    lhs: lv.shape().to_vec(),
                    rhs: vec![targets[r]],
                });
            }
            let max = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<Real>().ln();
            loss += lse - row[targets[r]];
            let p = probs.row_mut(r);
            for j in 0..v {
                p[j] = (row[j] - lse).exp();
            }
        }
        let out = Tensor::new(vec![1], vec![loss / count as Real])?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    pub fn scalar(&self, v: Var) -> Real {
        self.value(v).data()[0]
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    // dA = dC . B^T
                    let bt = bv.transpose();
                    let mut out = vec![0.0; n * k];
                    matmul_into(g.data(), bt.data(), &mut out, n, m, k);
                    acc(*a, Tensor::new(av.shape().to_vec(), out).expect("matmul grad"));
                }
                if self.wants(*b) {
                    // dB = A^T . dC
                    let at = av.transpose();
                    let mut out = vec![0.0; k * m];
                    matmul_into(at.data(), g.data(), &mut out, k, n, m);
                    acc(*b, Tensor::new(bv.shape().to_vec(), out).expect("matmul grad"));
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                acc(*a, gt.reshape(self.value(*a).shape()).expect("transpose grad"));
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    acc(*x, g.clone());
                }
                if self.wants(*b) {
                    let bv = self.value(*b);
                    let mut gb = Tensor::zeros(bv.shape());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                acc(*a, Tensor::new(y.shape().to_vec(), d).expect("tanh grad"));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                acc(*a, Tensor::new(x.shape().to_vec(), d).expect("relu grad"));
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, &xv)| {
                        let u = GELU_C * (xv + GELU_A * xv * xv * xv);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * xv * xv);
                        gv * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du)
                    })
                    .collect();
                acc(*a, Tensor::new(x.shape().to_vec(), d).expect("gelu grad"));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = xhat.cols();
                let gv = self.value(*gamma);
                if self.wants(*gamma) {
                    let mut gg = Tensor::zeros(gv.shape());
                    for r in 0..g.rows() {
                        for j in 0..c {
                            gg.data_mut()[j] += g.row(r)[j] * xhat.row(r)[j];
                        }
                    }
                    acc(*gamma, gg);
                }
                if self.wants(*beta) {
                    let mut gb = Tensor::zeros(self.value(*beta).shape());
                    for r in 0..g.rows() {
                        for j in 0..c {
                            gb.data_mut()[j] += g.row(r)[j];
                        }
                    }
                    acc(*beta, gb);
                }
                if self.wants(*x) {
                    let mut gx = Tensor::zeros(xhat.shape());
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let dxhat: Vec<Real> = (0..c).map(|j| gr[j] * gv.data()[j]).collect();
                        let mean_d = dxhat.iter().sum::<Real>() / c as Real;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<Real>() / c as Real;
                        let out = gx.row_mut(r);
                        for j in 0..c {
                            out[j] = inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    acc(*x, gx);
                }
            }
            Op::Softmax { x, .. } => {
                let p = &node.value;
                let c = p.cols();
                let mut gx = Tensor::zeros(p.shape());
                for r in 0..p.rows() {
                    let (pr, gr) = (p.row(r), g.row(r));
                    let dot: Real = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let out = gx.row_mut(r);
                    for j in 0..c {
                        out[j] = pr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let mut gt = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*table, gt);
            }
            Op::AddRowsAt { base, src, pairs } => {
                if self.wants(*base) {
                    acc(*base, g.clone());
                }
                if self.wants(*src) {
                    let mut gs = Tensor::zeros(self.value(*src).shape());
                    for &(dst, s) in pairs {
                        for (o, v) in gs.row_mut(s).iter_mut().zip(g.row(dst)) {
                            *o += v;
                        }
                    }
                    acc(*src, gs);
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.numel();
                    if self.wants(p) {
                        let d = g.data()[off * c..off * c + n].to_vec();
                        acc(p, Tensor::new(pv.shape().to_vec(), d).expect("concat grad"));
                    }
                    off += pv.rows();
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(pv.numel());
                        for r in 0..g.rows() {
                            d.extend_from_slice(&g.row(r)[off..off + c]);
                        }
                        acc(p, Tensor::new(pv.shape().to_vec(), d).expect("concat grad"));
                    }
                    off += c;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut gx = Tensor::zeros(xv.shape());
                gx.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                acc(*x, gx);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let len = g.cols();
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                acc(*x, gx);
            }
            Op::Reshape(x) => {
                acc(*x, g.reshape(self.value(*x).shape()).expect("reshape grad"));
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let scale = g.data()[0] / *count as Real;
                let mut gl = Tensor::zeros(probs.shape());
                for r in 0..probs.rows() {
                    if !mask[r] {
                        continue;
                    }
                    let out = gl.row_mut(r);
                    for (o, p) in out.iter_mut().zip(probs.row(r)) {
                        *o = p * scale;
                    }
                    out[targets[r]] -= scale;
                }
                acc(*logits, gl);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_v() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[3, 4]));
        let loss = g.cross_entropy_masked(l, &[0, 1, 2], &[true; 3]).unwrap();
        assert!((g.scalar(loss) - (4.0 as Real).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_near_zero_loss() {
        let mut g = Graph::new();
        let mut t = Tensor::zeros(&[2, 3]);
        t.data_mut()[1] = 60.0;
        t.data_mut()[3 + 2] = 60.0;
        let l = g.constant(t);
        let loss = g.cross_entropy_masked(l, &[1, 2], &[true, true]).unwrap();
        assert!(g.scalar(loss) < 1e-20);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.cross_entropy_masked(l, &[0, 0], &[false, false]).unwrap_err();
        assert_eq!(err.to_string(), "no supervised positions");
    }

    #[test]
    fn unmasked_targets_do_not_matter() {
        let logits = Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.0, 0.5, -0.5], vec![0.0, 0.1, 0.2]]).unwrap();
        let eval = |targets: &[usize]| {
            let mut g = Graph::new();
            let l = g.constant(logits.clone());
            let loss = g.cross_entropy_masked(l, targets, &[true, false, true]).unwrap();
            g.scalar(loss)
        };
        assert_eq!(eval(&[2, 0, 1]), eval(&[2, 2, 1]));
        assert_eq!(eval(&[2, 1, 1]), eval(&[2, 0, 1]));
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let p = g.softmax(x, Some(vec![true, false, true])).unwrap();
        let v = g.value(p).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::row_vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let y = g.matmul(a, b).unwrap();
        let grads = g.backward(y);
        assert!(grads.get(b).is_none());
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
    }
}

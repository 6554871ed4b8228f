//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation evaluates its forward value
//! immediately and records how to propagate gradients back to its inputs.
//! A fresh graph is built for every training step.

use crate::{Error, ParamId, ParamStore, Result, Tensor};

use super::kernels::{gemm, View};
use super::tensor::{row_moments, softmax_in_place};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    AddTiled(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    SegmentMean {
        x: Var,
        segment: usize,
    },
    SegmentFirst {
        x: Var,
        segment: usize,
    },
    PrependToken {
        x: Var,
        token: Var,
        seq: usize,
    },
    Attention {
        qkv: Var,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Injected {
        x: Var,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Reads a parameter onto the tape. Frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), !p.frozen)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_vector(self.value(bias))?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// Adds a `T x d` block to each consecutive group of `T` rows of `x`.
    pub fn add_tiled(&mut self, x: Var, tile: Var) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(tile));
        let (rows, d) = xv.dims2()?;
        let (t, d2) = tv.dims2()?;
        if d != d2 || rows % t != 0 {
            return Err(Error::Dimension {
                op: "add_tiled",
                lhs: xv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let mut value = xv.clone();
        for block in value.data_mut().chunks_exact_mut(t * d) {
            for (v, p) in block.iter_mut().zip(tv.data()) {
                *v += p;
            }
        }
        let rg = self.rg(&[x, tile]);
        Ok(self.push(value, Op::AddTiled(x, tile), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).exp();
        let rg = self.rg(&[x]);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).log();
        let rg = self.rg(&[x]);
        self.push(value, Op::Log(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = self.value(x).softmax_rows();
        let rg = self.rg(&[x]);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = xv.l2_normalize_rows()?;
        let n = xv.cols();
        let norms = xv
            .data()
            .chunks_exact(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::L2NormalizeRows { x, norms }, rg))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let value = xv.layer_norm_rows(self.value(gain), self.value(bias), eps)?;
        let n = xv.cols();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.len() / n);
        for row in xv.data().chunks_exact(n) {
            let (mean, inv) = row_moments(row, eps);
            inv_std.push(inv);
            xhat.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Averages each consecutive group of `segment` rows into one row.
    pub fn segment_mean(&mut self, x: Var, segment: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.dims2()?;
        if segment == 0 || rows % segment != 0 {
            return Err(Error::contract(format!(
                "segment_mean: {rows} rows do not split into segments of {segment}"
            )));
        }
        let groups = rows / segment;
        let mut out = vec![0.0; groups * d];
        for (g, block) in xv.data().chunks_exact(segment * d).enumerate() {
            let dst = &mut out[g * d..(g + 1) * d];
            for row in block.chunks_exact(d) {
                for (o, v) in dst.iter_mut().zip(row) {
                    *o += v;
                }
            }
            dst.iter_mut().for_each(|o| *o /= segment as f64);
        }
        let value = Tensor::new(&[groups, d], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SegmentMean { x, segment }, rg))
    }

    /// Takes the first row of each consecutive group of `segment` rows.
    pub fn segment_first(&mut self, x: Var, segment: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, d) = xv.dims2()?;
        if segment == 0 || rows % segment != 0 {
            return Err(Error::contract(format!(
                "segment_first: {rows} rows do not split into segments of {segment}"
            )));
        }
        let out: Vec<f64> = xv
            .data()
            .chunks_exact(segment * d)
            .flat_map(|block| block[..d].iter().copied())
            .collect();
        let value = Tensor::new(&[rows / segment, d], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SegmentFirst { x, segment }, rg))
    }

    /// Inserts `token` (one row) before each group of `seq` rows.
    pub fn prepend_token(&mut self, x: Var, token: Var, seq: usize) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(token));
        let (rows, d) = xv.dims2()?;
        if tv.len() != d || seq == 0 || rows % seq != 0 {
            return Err(Error::Dimension {
                op: "prepend_token",
                lhs: xv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let groups = rows / seq;
        let mut out = Vec::with_capacity((rows + groups) * d);
        for block in xv.data().chunks_exact(seq * d) {
            out.extend_from_slice(tv.data());
            out.extend_from_slice(block);
        }
        let value = Tensor::new(&[rows + groups, d], out)?;
        let rg = self.rg(&[x, token]);
        Ok(self.push(value, Op::PrependToken { x, token, seq }, rg))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` holds, per token row, the query, key and value projections
    /// side by side (`3 * d` columns). Rows are grouped into sequences of
    /// `seq` tokens; each head attends within its own sequence only. The
    /// output has `d` columns with heads concatenated.
    pub fn attention(&mut self, qkv: Var, seq: usize, heads: usize) -> Result<Var> {
        let qv = self.value(qkv);
        let (rows, w) = qv.dims2()?;
        if w % 3 != 0 || heads == 0 || (w / 3) % heads != 0 || seq == 0 || rows % seq != 0 {
            return Err(Error::contract(format!(
                "attention: qkv shape {:?} incompatible with seq {seq}, heads {heads}",
                qv.shape()
            )));
        }
        let d = w / 3;
        let dh = d / heads;
        let batch = rows / seq;
        let scale = 1.0 / (dh as f64).sqrt();
        let src = qv.data();
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * w + h * dh;
                let p_off = (b * heads + h) * seq * seq;
                // scores = scale * Q Kᵀ
                gemm(
                    seq,
                    dh,
                    seq,
                    scale,
                    src,
                    View::row_major(base, w),
                    src,
                    View::transposed(base + d, w),
                    0.0,
                    &mut probs,
                    View::row_major(p_off, seq),
                );
                for row in probs[p_off..p_off + seq * seq].chunks_exact_mut(seq) {
                    softmax_in_place(row);
                }
                gemm(
                    seq,
                    seq,
                    dh,
                    1.0,
                    &probs,
                    View::row_major(p_off, seq),
                    src,
                    View::row_major(base + 2 * d, w),
                    0.0,
                    &mut out,
                    View::row_major(b * seq * d + h * dh, d),
                );
            }
        }
        let value = Tensor::new(&[rows, d], out)?;
        let rg = self.rg(&[qkv]);
        Ok(self.push(value, Op::Attention { qkv, seq, heads, probs }, rg))
    }

    /// Attention weights recorded by an [`attention`](Self::attention) node,
    /// laid out as `[sequence][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Attaches a scalar whose gradient with respect to `x` was computed
    /// outside the tape (closed-form loss gradients).
    pub fn inject_scalar(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        self.value(x).same_shape(&grad, "inject_scalar")?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::Injected { x, grad }, rg))
    }

    /// Reverse sweep from a scalar node; returns per-node gradients.
    pub fn gradients(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Accumulates the gradient of `loss` into every reachable, unfrozen
    /// parameter of `store`. Unreached parameters are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                let p = store.get_mut(*id);
                for (acc, v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2()?;
                let n = bv.cols();
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        g.data(),
                        View::row_major(0, n),
                        bv.data(),
                        View::transposed(0, n),
                        0.0,
                        &mut da,
                        View::row_major(0, k),
                    );
                    self.accumulate(grads, *a, Tensor::new(av.shape(), da)?);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        av.data(),
                        View::transposed(0, k),
                        g.data(),
                        View::row_major(0, n),
                        0.0,
                        &mut db,
                        View::row_major(0, n),
                    );
                    self.accumulate(grads, *b, Tensor::new(bv.shape(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*bias) {
                    let bv = self.value(*bias);
                    let mut db = vec![0.0; bv.len()];
                    for row in g.data().chunks_exact(bv.len()) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(bv.shape(), db)?);
                }
            }
            Op::AddTiled(x, tile) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*tile) {
                    let tv = self.value(*tile);
                    let mut dt = vec![0.0; tv.len()];
                    for block in g.data().chunks_exact(tv.len()) {
                        for (d, v) in dt.iter_mut().zip(block) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *tile, Tensor::new(tv.shape(), dt)?);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::Exp(x) => self.accumulate(grads, *x, g.mul(&node.value)?),
            Op::Log(x) => {
                let xv = self.value(*x);
                let dx = g.data().iter().zip(xv.data()).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let n = y.cols();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx
                    .chunks_exact_mut(n)
                    .zip(y.data().chunks_exact(n))
                    .zip(g.data().chunks_exact(n))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, y), g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = y * (g - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape(), dx)?);
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = &node.value;
                let n = y.cols();
                let mut dx = vec![0.0; y.len()];
                for (r, norm) in norms.iter().enumerate() {
                    let yr = &y.data()[r * n..(r + 1) * n];
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape(), dx)?);
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let n = gv.len();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for (r, inv) in inv_std.iter().enumerate() {
                        let xh = &xhat[r * n..(r + 1) * n];
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..n {
                            let d = gr[j] * gv.data()[j];
                            sum_d += d;
                            sum_dx += d * xh[j];
                        }
                        for j in 0..n {
                            let d = gr[j] * gv.data()[j];
                            dx[r * n + j] = inv / n as f64 * (n as f64 * d - sum_d - xh[j] * sum_dx);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for (gr, xh) in g.data().chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * xh[j];
                            db[j] += gr[j];
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::new(gv.shape(), dg)?);
                    self.accumulate(grads, *bias, Tensor::new(self.value(*bias).shape(), db)?);
                }
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape();
                self.accumulate(grads, *x, Tensor::full(shape, g.data()[0]));
            }
            Op::SegmentMean { x, segment } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (block, gr) in dx.chunks_exact_mut(segment * d).zip(g.data().chunks_exact(d)) {
                    for row in block.chunks_exact_mut(d) {
                        for (o, v) in row.iter_mut().zip(gr) {
                            *o = v / *segment as f64;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::SegmentFirst { x, segment } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (block, gr) in dx.chunks_exact_mut(segment * d).zip(g.data().chunks_exact(d)) {
                    block[..d].copy_from_slice(gr);
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
            }
            Op::PrependToken { x, token, seq } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = Vec::with_capacity(xv.len());
                let mut dt = vec![0.0; d];
                for block in g.data().chunks_exact((seq + 1) * d) {
                    for (t, v) in dt.iter_mut().zip(&block[..d]) {
                        *t += v;
                    }
                    dx.extend_from_slice(&block[d..]);
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), dx)?);
                self.accumulate(grads, *token, Tensor::new(self.value(*token).shape(), dt)?);
            }
            Op::Attention { qkv, seq, heads, probs } => {
                let dqkv = attention_backward(self.value(*qkv), g, probs, *seq, *heads);
                self.accumulate(grads, *qkv, Tensor::new(self.value(*qkv).shape(), dqkv)?);
            }
            Op::Injected { x, grad } => {
                self.accumulate(grads, *x, grad.scale(g.data()[0]));
            }
        }
        Ok(())
    }
}

fn attention_backward(qkv: &Tensor, g: &Tensor, probs: &[f64], seq: usize, heads: usize) -> Vec<f64> {
    let w = qkv.cols();
    let d = w / 3;
    let dh = d / heads;
    let batch = qkv.rows() / seq;
    let scale = 1.0 / (dh as f64).sqrt();
    let src = qkv.data();
    let gd = g.data();
    let mut dqkv = vec![0.0; qkv.len()];
    let mut dp = vec![0.0; seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let base = b * seq * w + h * dh;
            let g_off = b * seq * d + h * dh;
            let p_off = (b * heads + h) * seq * seq;
            let p = &probs[p_off..p_off + seq * seq];
            // dV = Pᵀ dO
            gemm(
                seq,
                seq,
                dh,
                1.0,
                p,
                View::transposed(0, seq),
                gd,
                View::row_major(g_off, d),
                0.0,
                &mut dqkv,
                View::row_major(base + 2 * d, w),
            );
            // dP = dO Vᵀ
            gemm(
                seq,
                dh,
                seq,
                1.0,
                gd,
                View::row_major(g_off, d),
                src,
                View::transposed(base + 2 * d, w),
                0.0,
                &mut dp,
                View::row_major(0, seq),
            );
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the score scale
            for (dr, pr) in dp.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                for (x, p) in dr.iter_mut().zip(pr) {
                    *x = scale * p * (*x - dot);
                }
            }
            // dQ = dS K
            gemm(
                seq,
                seq,
                dh,
                1.0,
                &dp,
                View::row_major(0, seq),
                src,
                View::row_major(base + d, w),
                0.0,
                &mut dqkv,
                View::row_major(base, w),
            );
            // dK = dSᵀ Q
            gemm(
                seq,
                seq,
                dh,
                1.0,
                &dp,
                View::transposed(0, seq),
                src,
                View::row_major(base, w),
                0.0,
                &mut dqkv,
                View::row_major(base + d, w),
            );
        }
    }
    dqkv
}

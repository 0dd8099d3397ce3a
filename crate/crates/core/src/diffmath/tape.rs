//! Reverse-mode differentiation over a linear record of executed kernels.

use std::sync::Arc;

use super::activation::{standardize, standardize_backward, Activation};
use super::conv;
use super::spectral::{spectral_conv, spectral_conv_backward, SpectralCache, SpectralPlan};
use super::{DiffError, Tensor};
use crate::scalar::{gemm, MatRef, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Square(Var),
    Sum(Var),
    AddBias { x: Var, bias: Var, inner: usize },
    MulChannel { x: Var, scale: Var, inner: usize },
    Activate { x: Var, kind: Activation },
    Standardize { x: Var, group: usize, inv_std: Vec<T> },
    Conv2d { x: Var, w: Var, pad: usize },
    UpConv { x: Var, w: Var },
    MaxPool { x: Var, argmax: Vec<u32> },
    Concat { a: Var, b: Var, outer: usize, inner_a: usize, inner_b: usize },
    Reshape(Var),
    Spectral { x: Var, wr: Var, wi: Var, plan: Arc<SpectralPlan<T>>, cache: SpectralCache<T> },
    BranchTrunk { branch: Var, trunk: Var, queries: usize, width: usize, outputs: usize },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the leaf does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Node indices in the order the backward sweep processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

/// Single-owner record of operations. Not shared across threads while recording.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> DiffError {
    DiffError::Dimension { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded values.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.numel() * T::BYTES).sum()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(T::one(), MatRef::rm(self.value(a).data(), m, k), MatRef::rm(self.value(b).data(), k, n), T::zero(), &mut out);
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x).map(|e| e * factor);
        self.push(v, Op::Scale(x, factor), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        self.push(v, Op::Square(x), &[x])
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    fn channel_layout(&self, x: Var, c: usize, axis_inner: usize, name: &'static str, rhs: &[usize]) -> Result<(), DiffError> {
        let s = self.shape(x);
        if s.len() < 2 || s[1] != c || s[2..].iter().product::<usize>() != axis_inner {
            return Err(dim_err(name, s, rhs));
        }
        Ok(())
    }

    /// Adds `bias[c]` along axis 1 of `x` (`[N, C]` or `[B, C, ...]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let c = self.value(bias).numel();
        let inner: usize = self.shape(x).get(2..).map_or(1, |s| s.iter().product());
        self.channel_layout(x, c, inner, "add_bias", &[c])?;
        let bv = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += bv[(i / inner) % c];
        }
        Ok(self.push(v, Op::AddBias { x, bias, inner }, &[x, bias]))
    }

    /// Multiplies axis-1 channels of `x` by `scale[c]`.
    pub fn mul_channel(&mut self, x: Var, scale: Var) -> Result<Var, DiffError> {
        let c = self.value(scale).numel();
        let inner: usize = self.shape(x).get(2..).map_or(1, |s| s.iter().product());
        self.channel_layout(x, c, inner, "mul_channel", &[c])?;
        let sv = self.value(scale).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= sv[(i / inner) % c];
        }
        Ok(self.push(v, Op::MulChannel { x, scale, inner }, &[x, scale]))
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        let v = self.value(x).map(|e| kind.apply(e));
        self.push(v, Op::Activate { x, kind }, &[x])
    }

    /// Zero-mean, unit-variance standardization of each sample's features:
    /// the last axis for `[N, F]`, each channel plane for `[B, C, H, W]`.
    pub fn standardize(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.shape(x);
        let group = match s.len() {
            2 => s[1],
            4 => s[2] * s[3],
            _ => return Err(dim_err("standardize", s, &[])),
        };
        let src = self.value(x);
        let mut out = vec![T::zero(); src.numel()];
        let inv_std = standardize(src.data(), group, &mut out);
        let v = Tensor::new(src.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Standardize { x, group, inv_std }, &[x]))
    }

    /// Nonlinearity with optional pre-normalization of its input.
    pub fn activation(&mut self, x: Var, kind: Activation, pre_normalize: bool) -> Result<Var, DiffError> {
        let x = if pre_normalize { self.standardize(x)? } else { x };
        Ok(self.activate(x, kind))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var, DiffError> {
        let v = conv::conv2d(self.value(x), self.value(w), pad)?;
        Ok(self.push(v, Op::Conv2d { x, w, pad }, &[x, w]))
    }

    pub fn conv_transpose2x2(&mut self, x: Var, w: Var) -> Result<Var, DiffError> {
        let v = conv::conv_transpose2x2(self.value(x), self.value(w))?;
        Ok(self.push(v, Op::UpConv { x, w }, &[x, w]))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var, DiffError> {
        let (v, argmax) = conv::max_pool2(self.value(x))?;
        Ok(self.push(v, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(dim_err("concat", &sa, &sb));
        }
        let outer = sa[0];
        let inner_a: usize = sa[1..].iter().product();
        let inner_b: usize = sb[1..].iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            out.extend_from_slice(&da[o * inner_a..(o + 1) * inner_a]);
            out.extend_from_slice(&db[o * inner_b..(o + 1) * inner_b]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Concat { a, b, outer, inner_a, inner_b }, &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, DiffError> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Truncated spectral convolution with complex weights given as real/imaginary parts.
    pub fn spectral_conv(&mut self, x: Var, wr: Var, wi: Var, plan: Arc<SpectralPlan<T>>) -> Result<Var, DiffError> {
        let (v, cache) = spectral_conv(&plan, self.value(x), self.value(wr), self.value(wi))?;
        Ok(self.push(v, Op::Spectral { x, wr, wi, plan, cache }, &[x, wr, wi]))
    }

    /// Branch/trunk aggregation: `branch: [N, outputs * width]`,
    /// `trunk: [N * queries, width]` -> `[N * queries, outputs]`, where output
    /// channel `c` of query `q` of sample `n` is the dot product of
    /// `branch[n, c*width..(c+1)*width]` with `trunk[n*queries + q]`.
    pub fn branch_trunk(&mut self, branch: Var, trunk: Var, queries: usize, outputs: usize) -> Result<Var, DiffError> {
        let (sb, st) = (self.shape(branch).to_vec(), self.shape(trunk).to_vec());
        if sb.len() != 2 || st.len() != 2 || outputs == 0 || sb[1] != outputs * st[1] || st[0] != sb[0] * queries {
            return Err(dim_err("branch_trunk", &sb, &st));
        }
        let (n, width) = (sb[0], st[1]);
        let (bd, td) = (self.value(branch).data(), self.value(trunk).data());
        let mut out = vec![T::zero(); n * queries * outputs];
        for s in 0..n {
            let rows = MatRef::rm(&td[s * queries * width..(s + 1) * queries * width], queries, width);
            let coeffs = MatRef::rm(&bd[s * outputs * width..(s + 1) * outputs * width], outputs, width).t();
            gemm(T::one(), rows, coeffs, T::zero(), &mut out[s * queries * outputs..(s + 1) * queries * outputs]);
        }
        let v = Tensor::new([n * queries, outputs], out)?;
        Ok(self.push(v, Op::BranchTrunk { branch, trunk, queries, width, outputs }, &[branch, trunk]))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(DiffError::Contract("backward on an empty tape".into()));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(DiffError::Contract(format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            if let Op::Leaf = node.op {
                leaf_grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }
        Ok(Gradients { grads: leaf_grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<(), DiffError> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let gm = MatRef::rm(g.data(), m, n);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(T::one(), gm, MatRef::rm(vb.data(), k, n).t(), T::zero(), &mut da);
                    self.accumulate(grads, *a, Tensor::new([m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(T::one(), MatRef::rm(va.data(), m, k).t(), gm, T::zero(), &mut db);
                    self.accumulate(grads, *b, Tensor::new([k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|e| -e));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let vb = self.value(*b);
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d)?);
                }
                if self.wants(*b) {
                    let va = self.value(*a);
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|e| e * *f)),
            Op::Square(x) => {
                let vx = self.value(*x);
                let d = g.data().iter().zip(vx.data()).map(|(&e, &v)| T::lit(2.0) * e * v).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sum(x) => {
                let s = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::full(s, g.data()[0]));
            }
            Op::AddBias { x, bias, inner } => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*bias) {
                    let c = self.value(*bias).numel();
                    let mut db = vec![T::zero(); c];
                    for (i, &e) in g.data().iter().enumerate() {
                        db[(i / inner) % c] += e;
                    }
                    self.accumulate(grads, *bias, Tensor::new(self.shape(*bias).to_vec(), db)?);
                }
            }
            Op::MulChannel { x, scale, inner } => {
                let sv = self.value(*scale).data();
                let c = sv.len();
                if self.wants(*x) {
                    let d = g.data().iter().enumerate().map(|(i, &e)| e * sv[(i / inner) % c]).collect();
                    self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
                }
                if self.wants(*scale) {
                    let xv = self.value(*x).data();
                    let mut ds = vec![T::zero(); c];
                    for (i, (&e, &v)) in g.data().iter().zip(xv).enumerate() {
                        ds[(i / inner) % c] += e * v;
                    }
                    self.accumulate(grads, *scale, Tensor::new(self.shape(*scale).to_vec(), ds)?);
                }
            }
            Op::Activate { x, kind } => {
                let (vx, vy) = (self.value(*x), &node.value);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data().iter().zip(vy.data()))
                    .map(|(&e, (&a, &b))| e * kind.derivative(a, b))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Standardize { x, group, inv_std } => {
                let mut dx = vec![T::zero(); g.numel()];
                standardize_backward(node.value.data(), g.data(), *group, inv_std, &mut dx);
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::Conv2d { x, w, pad } => {
                let (dx, dw) = conv::conv2d_backward(self.value(*x), self.value(*w), *pad, g, self.wants(*x), self.wants(*w))?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::UpConv { x, w } => {
                let (dx, dw) = conv::conv_transpose2x2_backward(self.value(*x), self.value(*w), g, self.wants(*x), self.wants(*w))?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&a, &e) in argmax.iter().zip(g.data()) {
                    dx[a as usize] += e;
                }
                self.accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Concat { a, b, outer, inner_a, inner_b } => {
                let (ia, ib) = (*inner_a, *inner_b);
                if self.wants(*a) {
                    let mut da = Vec::with_capacity(outer * ia);
                    for o in 0..*outer {
                        da.extend_from_slice(&g.data()[o * (ia + ib)..o * (ia + ib) + ia]);
                    }
                    self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), da)?);
                }
                if self.wants(*b) {
                    let mut db = Vec::with_capacity(outer * ib);
                    for o in 0..*outer {
                        db.extend_from_slice(&g.data()[o * (ia + ib) + ia..(o + 1) * (ia + ib)]);
                    }
                    self.accumulate(grads, *b, Tensor::new(self.shape(*b).to_vec(), db)?);
                }
            }
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                self.accumulate(grads, *x, g.clone().reshape(s)?);
            }
            Op::Spectral { x, wr, wi, plan, cache } => {
                let need_w = self.wants(*wr) || self.wants(*wi);
                let (dx, dw) = spectral_conv_backward(plan, cache, self.shape(*x), self.value(*wr), self.value(*wi), g, self.wants(*x), need_w)?;
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some((dr, di)) = dw {
                    self.accumulate(grads, *wr, dr);
                    self.accumulate(grads, *wi, di);
                }
            }
            Op::BranchTrunk { branch, trunk, queries, width, outputs } => {
                let (q, p, c) = (*queries, *width, *outputs);
                let (bd, td) = (self.value(*branch).data(), self.value(*trunk).data());
                let n = self.shape(*branch)[0];
                let gd = g.data();
                if self.wants(*branch) {
                    let mut db = vec![T::zero(); n * c * p];
                    for s in 0..n {
                        let gs = MatRef::rm(&gd[s * q * c..(s + 1) * q * c], q, c).t();
                        let rows = MatRef::rm(&td[s * q * p..(s + 1) * q * p], q, p);
                        gemm(T::one(), gs, rows, T::zero(), &mut db[s * c * p..(s + 1) * c * p]);
                    }
                    self.accumulate(grads, *branch, Tensor::new(self.shape(*branch).to_vec(), db)?);
                }
                if self.wants(*trunk) {
                    let mut dt = vec![T::zero(); n * q * p];
                    for s in 0..n {
                        let gs = MatRef::rm(&gd[s * q * c..(s + 1) * q * c], q, c);
                        let coeffs = MatRef::rm(&bd[s * c * p..(s + 1) * c * p], c, p);
                        gemm(T::one(), gs, coeffs, T::zero(), &mut dt[s * q * p..(s + 1) * q * p]);
                    }
                    self.accumulate(grads, *trunk, Tensor::new(self.shape(*trunk).to_vec(), dt)?);
                }
            }
        }
        Ok(())
    }
}

//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order. Values are kept on
//! the tape; [`Graph::backward`] walks the tape in exact reverse and adds
//! `d loss / d leaf` into the gradient buffer of every tracked leaf. Leaf
//! gradients accumulate across `backward` calls until [`Graph::zero_grad`].

use super::gemm::gemm;
use super::Tensor;
use crate::error::{bail, Error, Result};

/// Floor applied to probabilities before taking logs in [`Graph::kl_div`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Conv { x: Var, w: Var, geom: ConvGeom, cols: Vec<f64> },
    Relu(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    Reshape(Var),
    Softmax { z: Var, temp: f64 },
    LogSoftmax { z: Var, temp: f64 },
    Log(Var),
    Sum(Var),
    Mean(Var),
    Gather { x: Var, index: Vec<usize> },
    KlDiv { student: Var, teacher: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
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

    /// Adds a tensor as a leaf; it is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad();
        self.nodes.push(Node { value: t, op: Op::Leaf, tracked });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false).without_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Removes the leaf tensor's value (with its gradient buffer) from the tape view.
    pub fn take_leaf(&mut self, v: Var) -> Result<Tensor> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            bail!(Usage, "node {} is not a leaf", v.0);
        }
        Ok(std::mem::replace(&mut node.value, Tensor::scalar(0.0)))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) {
                node.value.zero_grad();
            }
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, name: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            bail!(Dimension, "{name}: shapes {sa:?} and {sb:?} differ");
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            bail!(Dimension, "matmul: cannot multiply {sa:?} by {sb:?}");
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(name, Tensor::from_parts(shape, data), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|v| v * c).collect();
        let shape = t.shape().to_vec();
        self.push("scale", Tensor::from_parts(shape, data), Op::Scale(a, c), &[a])
    }

    /// Adds a per-channel bias `b[C]` along axis 1 of `x[N x C x ...]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            bail!(Dimension, "add_bias: bias {sb:?} does not match channels of {sx:?}");
        }
        let inner: usize = sx[2..].iter().product();
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bias[(i / inner) % sx[1]];
        }
        let shape = sx.to_vec();
        self.push("add_bias", Tensor::from_parts(shape, data), Op::AddBias(x, b), &[x, b])
    }

    /// 2-D cross-correlation of `x[N x C x H x W]` with `w[F x C x kh x kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            bail!(Dimension, "conv2d: input {sx:?} incompatible with kernel {sw:?}");
        }
        let geom = conv_geom("conv2d", [sx[0], sx[1], sx[2], sx[3]], [sw[0], sw[2], sw[3]], stride, padding, padding)?;
        self.conv(x, w, geom, vec![geom.n, geom.f, geom.oh, geom.ow])
    }

    /// 1-D cross-correlation of `x[N x C x L]` with `w[F x C x k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            bail!(Dimension, "conv1d: input {sx:?} incompatible with kernel {sw:?}");
        }
        let geom = conv_geom("conv1d", [sx[0], sx[1], 1, sx[2]], [sw[0], 1, sw[2]], stride, 0, padding)?;
        self.conv(x, w, geom, vec![geom.n, geom.f, geom.ow])
    }

    fn conv(&mut self, x: Var, w: Var, g: ConvGeom, shape: Vec<usize>) -> Result<Var> {
        let keep_cols = self.nodes[w.0].tracked;
        let (ckk, p) = (g.ckk(), g.positions());
        let img = g.c * g.h * g.w;
        let mut out = vec![0.0; g.n * g.f * p];
        let mut saved = if keep_cols { vec![0.0; g.n * ckk * p] } else { Vec::new() };
        let mut scratch = if keep_cols { Vec::new() } else { vec![0.0; ckk * p] };
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        for n in 0..g.n {
            let cols = if keep_cols { &mut saved[n * ckk * p..(n + 1) * ckk * p] } else { &mut scratch[..] };
            im2col(&xs[n * img..(n + 1) * img], &g, cols);
            gemm(g.f, ckk, p, ws, false, cols, false, 0.0, &mut out[n * g.f * p..(n + 1) * g.f * p]);
        }
        let name = if shape.len() == 3 { "conv1d" } else { "conv2d" };
        self.push(name, Tensor::from_parts(shape, out), Op::Conv { x, w, geom: g, cols: saved }, &[x, w])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push("relu", Tensor::from_parts(shape, data), Op::Relu(x), &[x])
    }

    /// Non-overlapping max pooling with window and stride `k` over the
    /// trailing spatial axes of `[N x C x H x W]` or `[N x C x L]`.
    pub fn max_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        let (h, w, kh) = match s.len() {
            4 => (s[2], s[3], k),
            3 => (1, s[2], 1),
            _ => bail!(Dimension, "max_pool: expected rank 3 or 4, got {s:?}"),
        };
        if k == 0 || kh > h || k > w {
            bail!(Dimension, "max_pool: window {k} larger than input {s:?}");
        }
        let (oh, ow) = (h / kh, w / k);
        let planes = s[0] * s[1];
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * kh * w + ox * k;
                    for i in 0..kh {
                        for j in 0..k {
                            let idx = base + (oy * kh + i) * w + ox * k + j;
                            if xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let shape = if s.len() == 4 { vec![s[0], s[1], oh, ow] } else { vec![s[0], s[1], ow] };
        self.push("max_pool", Tensor::from_parts(shape, out), Op::MaxPool { x, argmax }, &[x])
    }

    /// Mean over every axis after the channel axis: `[N x C x ...] -> [N x C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() < 3 {
            bail!(Dimension, "global_avg_pool: expected rank >= 3, got {s:?}");
        }
        let inner: usize = s[2..].iter().product();
        let shape = vec![s[0], s[1]];
        let data = self.value(x).data().chunks(inner).map(|c| c.iter().sum::<f64>() / inner as f64).collect();
        self.push("global_avg_pool", Tensor::from_parts(shape, data), Op::GlobalAvgPool(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().without_grad().with_requires_grad(false).reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// `[N x ...] -> [N x rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.is_empty() {
            bail!(Dimension, "flatten: scalar input");
        }
        let shape = vec![s[0], s[1..].iter().product()];
        self.reshape(x, shape)
    }

    fn check_temp(temp: f64) -> Result<()> {
        if !(temp > 0.0 && temp.is_finite()) {
            bail!(Parameter, "temperature must be positive, got {temp}");
        }
        Ok(())
    }

    fn rows(&self, name: &str, z: Var) -> Result<(usize, usize)> {
        let s = self.value(z).shape();
        if s.len() != 2 {
            bail!(Dimension, "{name}: expected [N x C], got {s:?}");
        }
        Ok((s[0], s[1]))
    }

    /// Row-wise `exp(z_i / temp) / sum_j exp(z_j / temp)`, evaluated after
    /// subtracting the row maximum.
    pub fn softmax_temp(&mut self, z: Var, temp: f64) -> Result<Var> {
        Self::check_temp(temp)?;
        let (n, c) = self.rows("softmax_temp", z)?;
        let mut data = Vec::with_capacity(n * c);
        for row in self.value(z).data().chunks(c) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let start = data.len();
            data.extend(row.iter().map(|&v| ((v - max) / temp).exp()));
            let s: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= s);
        }
        self.push("softmax_temp", Tensor::from_parts(vec![n, c], data), Op::Softmax { z, temp }, &[z])
    }

    pub fn log_softmax_temp(&mut self, z: Var, temp: f64) -> Result<Var> {
        Self::check_temp(temp)?;
        let (n, c) = self.rows("log_softmax_temp", z)?;
        let mut data = Vec::with_capacity(n * c);
        for row in self.value(z).data().chunks(c) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = row.iter().map(|&v| ((v - max) / temp).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&v| (v - max) / temp - lse));
        }
        self.push("log_softmax_temp", Tensor::from_parts(vec![n, c], data), Op::LogSoftmax { z, temp }, &[z])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.ln()).collect();
        let shape = t.shape().to_vec();
        self.push("log", Tensor::from_parts(shape, data), Op::Log(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Picks `x[i, index[i]]` from each row of `x[N x C]`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (n, c) = self.rows("gather", x)?;
        if index.len() != n {
            bail!(Dimension, "gather: {} indices for {n} rows", index.len());
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= c) {
            bail!(Data, "gather: index {bad} out of range for {c} columns");
        }
        let xs = self.value(x).data();
        let data = index.iter().enumerate().map(|(i, &j)| xs[i * c + j]).collect();
        self.push("gather", Tensor::from_parts(vec![n], data), Op::Gather { x, index: index.to_vec() }, &[x])
    }

    /// Mean over rows of `sum_j t_j (ln t_j - ln s_j)`, teacher `t` as the
    /// reference measure. Logs use a floor of [`PROB_FLOOR`]; the gradient
    /// flows to the student side only.
    pub fn kl_div(&mut self, student: Var, teacher: Var) -> Result<Var> {
        self.same_shape("kl_div", student, teacher)?;
        let (n, c) = self.rows("kl_div", student)?;
        for (who, v) in [("student", student), ("teacher", teacher)] {
            for (i, row) in self.value(v).data().chunks(c).enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
                    bail!(Data, "kl_div: {who} row {i} is not a distribution (sum {s})");
                }
            }
        }
        let (ps, pt) = (self.value(student).data(), self.value(teacher).data());
        let mut total = 0.0;
        for (&s, &t) in ps.iter().zip(pt) {
            if t > 0.0 {
                total += t * (t.max(PROB_FLOOR).ln() - s.max(PROB_FLOOR).ln());
            }
        }
        // Non-negative in exact arithmetic; clamp away rounding residue.
        let value = (total / n as f64).max(0.0);
        self.push("kl_div", Tensor::scalar(value), Op::KlDiv { student, teacher }, &[student])
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            bail!(Usage, "backward needs a scalar loss, got shape {:?}", self.value(loss).shape());
        }
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; end];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..end).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g)?;
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let tracked = |v: Var| nodes[v.0].tracked;
        let mut send = |v: Var, d: Vec<f64>| {
            if !nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&d).for_each(|(b, x)| *b += x),
                slot @ None => *slot = Some(d),
            }
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves handled by backward"),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if tracked(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, tb.data(), true, 0.0, &mut da);
                    send(*a, da);
                }
                if tracked(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g, false, 0.0, &mut db);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if tracked(*a) {
                    send(*a, g.iter().zip(vb).map(|(d, y)| d * y).collect());
                }
                if tracked(*b) {
                    send(*b, g.iter().zip(va).map(|(d, x)| d * x).collect());
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|d| d * c).collect()),
            Op::AddBias(x, b) => {
                send(*x, g.to_vec());
                if tracked(*b) {
                    let s = out.shape();
                    let inner: usize = s[2..].iter().product();
                    let mut db = vec![0.0; s[1]];
                    for (blk, chunk) in g.chunks(inner).enumerate() {
                        db[blk % s[1]] += chunk.iter().sum::<f64>();
                    }
                    send(*b, db);
                }
            }
            Op::Conv { x, w, geom, cols } => {
                let (ckk, p) = (geom.ckk(), geom.positions());
                let fp = geom.f * p;
                if tracked(*w) {
                    let mut dw = vec![0.0; geom.f * ckk];
                    for n in 0..geom.n {
                        gemm(geom.f, p, ckk, &g[n * fp..(n + 1) * fp], false, &cols[n * ckk * p..(n + 1) * ckk * p], true, 1.0, &mut dw);
                    }
                    send(*w, dw);
                }
                if tracked(*x) {
                    let ws = nodes[w.0].value.data();
                    let img = geom.c * geom.h * geom.w;
                    let mut dx = vec![0.0; geom.n * img];
                    let mut dcols = vec![0.0; ckk * p];
                    for n in 0..geom.n {
                        gemm(ckk, geom.f, p, ws, true, &g[n * fp..(n + 1) * fp], false, 0.0, &mut dcols);
                        col2im(&dcols, geom, &mut dx[n * img..(n + 1) * img]);
                    }
                    send(*x, dx);
                }
            }
            Op::Relu(x) => send(*x, g.iter().zip(out.data()).map(|(d, &y)| if y > 0.0 { *d } else { 0.0 }).collect()),
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; nodes[x.0].value.numel()];
                for (d, &src) in g.iter().zip(argmax) {
                    dx[src] += d;
                }
                send(*x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let n_in = nodes[x.0].value.numel();
                let inner = n_in / g.len();
                let mut dx = Vec::with_capacity(n_in);
                for d in g {
                    dx.extend(std::iter::repeat_n(d / inner as f64, inner));
                }
                send(*x, dx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Softmax { z, temp } => {
                let c = out.shape()[1];
                let mut dz = Vec::with_capacity(g.len());
                for (prow, grow) in out.data().chunks(c).zip(g.chunks(c)) {
                    let dot: f64 = prow.iter().zip(grow).map(|(p, d)| p * d).sum();
                    dz.extend(prow.iter().zip(grow).map(|(p, d)| p * (d - dot) / temp));
                }
                send(*z, dz);
            }
            Op::LogSoftmax { z, temp } => {
                let c = out.shape()[1];
                let mut dz = Vec::with_capacity(g.len());
                for (lrow, grow) in out.data().chunks(c).zip(g.chunks(c)) {
                    let total: f64 = grow.iter().sum();
                    dz.extend(lrow.iter().zip(grow).map(|(l, d)| (d - l.exp() * total) / temp));
                }
                send(*z, dz);
            }
            Op::Log(x) => send(*x, g.iter().zip(nodes[x.0].value.data()).map(|(d, v)| d / v).collect()),
            Op::Sum(x) => send(*x, vec![g[0]; nodes[x.0].value.numel()]),
            Op::Mean(x) => {
                let n = nodes[x.0].value.numel();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Gather { x, index } => {
                let c = nodes[x.0].value.shape()[1];
                let mut dx = vec![0.0; nodes[x.0].value.numel()];
                for (row, (&j, d)) in index.iter().zip(g).enumerate() {
                    dx[row * c + j] += d;
                }
                send(*x, dx);
            }
            Op::KlDiv { student, teacher } => {
                let ps = nodes[student.0].value.data();
                let pt = nodes[teacher.0].value.data();
                let rows = nodes[student.0].value.shape()[0] as f64;
                let ds = ps
                    .iter()
                    .zip(pt)
                    .map(|(&s, &t)| if t > 0.0 && s > PROB_FLOOR { -g[0] * t / (s * rows) } else { 0.0 })
                    .collect();
                send(*student, ds);
            }
        }
    }
}

fn conv_geom(name: &str, x: [usize; 4], k: [usize; 3], stride: usize, ph: usize, pw: usize) -> Result<ConvGeom> {
    let [n, c, h, w] = x;
    let [f, kh, kw] = k;
    if stride == 0 {
        bail!(Parameter, "{name}: stride must be positive");
    }
    if kh > h + 2 * ph || kw > w + 2 * pw {
        bail!(Dimension, "{name}: kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * ph, w + 2 * pw);
    }
    let oh = (h + 2 * ph - kh) / stride + 1;
    let ow = (w + 2 * pw - kw) / stride + 1;
    Ok(ConvGeom { n, c, h, w, f, kh, kw, stride, ph, pw, oh, ow })
}

fn im2col(img: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.ph as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &img[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pw as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &cols[((c * g.kh + i) * g.kw + j) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut img[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in row[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pw as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    fn without_grad(mut self) -> Self {
        self.zero_grad();
        self
    }
}

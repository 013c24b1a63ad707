//! Differentiable primitives. Every op computes its forward result eagerly
//! and records a backward rule when gradients are being tracked.

use super::{Backward, DiffTensor, Scalar, SegmentMap};
use crate::error::{Error, Result};

fn matrix_dims<T: Scalar>(op: &'static str, t: &DiffTensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

// ---------------------------------------------------------------- matmul

struct MatMul<T: Scalar> {
    a: DiffTensor<T>,
    b: DiffTensor<T>,
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Scalar> Backward<T> for MatMul<T> {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.a.requires_grad() {
            let b = self.b.data();
            self.a.with_grad_mut(|ga| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        let mut acc = T::zero();
                        for j in 0..n {
                            acc = acc + gi[j] * brow[j];
                        }
                        ga[i * k + p] = ga[i * k + p] + acc;
                    }
                }
            });
        }
        if self.b.requires_grad() {
            let a = self.a.data();
            self.b.with_grad_mut(|gb| {
                for i in 0..m {
                    let gi = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        let row = &mut gb[p * n..(p + 1) * n];
                        for j in 0..n {
                            row[j] = row[j] + aip * gi[j];
                        }
                    }
                }
            });
        }
    }
}

// ---------------------------------------------------------------- binary

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct Binary<T: Scalar> {
    kind: BinaryKind,
    a: DiffTensor<T>,
    b: DiffTensor<T>,
}

impl<T: Scalar> Backward<T> for Binary<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.a, &self.b]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let bl = self.b.len();
        match self.kind {
            BinaryKind::Add | BinaryKind::Sub => {
                self.a.accumulate_grad(g);
                let sign = if matches!(self.kind, BinaryKind::Sub) {
                    -T::one()
                } else {
                    T::one()
                };
                self.b.with_grad_mut(|gb| {
                    for chunk in g.chunks(bl) {
                        for (x, &v) in gb.iter_mut().zip(chunk) {
                            *x = *x + sign * v;
                        }
                    }
                });
            }
            BinaryKind::Mul => {
                if self.a.requires_grad() {
                    let b = self.b.data();
                    self.a.with_grad_mut(|ga| {
                        for (i, x) in ga.iter_mut().enumerate() {
                            *x = *x + g[i] * b[i % bl];
                        }
                    });
                }
                if self.b.requires_grad() {
                    let a = self.a.data();
                    self.b.with_grad_mut(|gb| {
                        for (i, (&gi, &ai)) in g.iter().zip(a.iter()).enumerate() {
                            gb[i % bl] = gb[i % bl] + gi * ai;
                        }
                    });
                }
            }
        }
    }
}

// ---------------------------------------------------------------- unary

#[derive(Clone, Copy, Debug)]
enum UnaryKind<T> {
    Gelu,
    Sigmoid,
    Relu,
    Scale(T),
}

struct Unary<T: Scalar> {
    kind: UnaryKind<T>,
    x: DiffTensor<T>,
}

const GELU_C: f64 = 0.044_715;
// sqrt(2 / pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Backward<T> for Unary<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Gelu => "gelu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Relu => "relu",
            UnaryKind::Scale(_) => "scale",
        }
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, out: &[T], g: &[T]) {
        let x = self.x.data();
        let kind = self.kind;
        self.x.with_grad_mut(|gx| {
            for i in 0..gx.len() {
                let d = match kind {
                    UnaryKind::Gelu => gelu_grad(x[i]),
                    UnaryKind::Sigmoid => out[i] * (T::one() - out[i]),
                    UnaryKind::Relu => {
                        if x[i] > T::zero() {
                            T::one()
                        } else {
                            T::zero()
                        }
                    }
                    UnaryKind::Scale(c) => c,
                };
                gx[i] = gx[i] + g[i] * d;
            }
        });
    }
}

// ---------------------------------------------------------------- softmax

struct SoftmaxRows<T: Scalar> {
    x: DiffTensor<T>,
    n: usize,
}

impl<T: Scalar> Backward<T> for SoftmaxRows<T> {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, y: &[T], g: &[T]) {
        let n = self.n;
        self.x.with_grad_mut(|gx| {
            for r in 0..y.len() / n {
                let yr = &y[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    gx[r * n + j] = gx[r * n + j] + yr[j] * (gr[j] - dot);
                }
            }
        });
    }
}

// ---------------------------------------------------------------- layer norm

struct LayerNorm<T: Scalar> {
    x: DiffTensor<T>,
    gain: DiffTensor<T>,
    bias: DiffTensor<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    d: usize,
}

impl<T: Scalar> Backward<T> for LayerNorm<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x, &self.gain, &self.bias]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let d = self.d;
        let rows = self.xhat.len() / d;
        if self.x.requires_grad() {
            let gain = self.gain.data();
            let dn = T::of(d as f64);
            self.x.with_grad_mut(|gx| {
                for r in 0..rows {
                    let xh = &self.xhat[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for j in 0..d {
                        let dxh = gr[j] * gain[j];
                        mean_dxh = mean_dxh + dxh;
                        mean_dxh_xh = mean_dxh_xh + dxh * xh[j];
                    }
                    mean_dxh = mean_dxh / dn;
                    mean_dxh_xh = mean_dxh_xh / dn;
                    let s = self.inv_std[r];
                    for j in 0..d {
                        let dxh = gr[j] * gain[j];
                        gx[r * d + j] = gx[r * d + j] + s * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            });
        }
        self.gain.with_grad_mut(|gg| {
            for r in 0..rows {
                for j in 0..d {
                    gg[j] = gg[j] + g[r * d + j] * self.xhat[r * d + j];
                }
            }
        });
        self.bias.with_grad_mut(|gb| {
            for r in 0..rows {
                for j in 0..d {
                    gb[j] = gb[j] + g[r * d + j];
                }
            }
        });
    }
}

// ---------------------------------------------------------------- segmented reduce

/// Reduction applied within each segment by [`DiffTensor::segmented_reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Mean,
    Sum,
    Max,
}

struct SegmentReduce<T: Scalar> {
    x: DiffTensor<T>,
    seg: SegmentMap,
    kind: ReduceKind,
    // Max only: winning row per (segment, column).
    argmax: Vec<usize>,
    d: usize,
}

impl<T: Scalar> Backward<T> for SegmentReduce<T> {
    fn name(&self) -> &'static str {
        "segmented_reduce"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let d = self.d;
        self.x.with_grad_mut(|gx| match self.kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for s in 0..self.seg.num_segments() {
                    let members = self.seg.members(s);
                    if members.is_empty() {
                        continue;
                    }
                    let scale = if self.kind == ReduceKind::Mean {
                        T::one() / T::of(members.len() as f64)
                    } else {
                        T::one()
                    };
                    let gs = &g[s * d..(s + 1) * d];
                    for &r in members {
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + gs[j] * scale;
                        }
                    }
                }
            }
            ReduceKind::Max => {
                for s in 0..self.seg.num_segments() {
                    if self.seg.count(s) == 0 {
                        continue;
                    }
                    for j in 0..d {
                        let r = self.argmax[s * d + j];
                        gx[r * d + j] = gx[r * d + j] + g[s * d + j];
                    }
                }
            }
        });
    }
}

// ---------------------------------------------------------------- gathers

struct WeightedGather<T: Scalar> {
    x: DiffTensor<T>,
    index: Vec<usize>,
    weights: Option<Vec<T>>,
    k: usize,
    d: usize,
}

impl<T: Scalar> Backward<T> for WeightedGather<T> {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let (k, d) = (self.k, self.d);
        self.x.with_grad_mut(|gx| {
            for (slot, &src) in self.index.iter().enumerate() {
                let w = self.weights.as_ref().map_or(T::one(), |w| w[slot]);
                let out_row = slot / k;
                for j in 0..d {
                    gx[src * d + j] = gx[src * d + j] + w * g[out_row * d + j];
                }
            }
        });
    }
}

// ---------------------------------------------------------------- column ops

struct ConcatCols<T: Scalar> {
    parts: Vec<DiffTensor<T>>,
}

impl<T: Scalar> Backward<T> for ConcatCols<T> {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        self.parts.iter().collect()
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let total: usize = self.parts.iter().map(|p| p.cols()).sum();
        let mut start = 0;
        for p in &self.parts {
            let w = p.cols();
            p.with_grad_mut(|gp| {
                for (r, row) in gp.chunks_mut(w).enumerate() {
                    for j in 0..w {
                        row[j] = row[j] + g[r * total + start + j];
                    }
                }
            });
            start += w;
        }
    }
}

struct SliceCols<T: Scalar> {
    x: DiffTensor<T>,
    start: usize,
    end: usize,
}

impl<T: Scalar> Backward<T> for SliceCols<T> {
    fn name(&self) -> &'static str {
        "slice_cols"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let c = self.x.cols();
        let w = self.end - self.start;
        self.x.with_grad_mut(|gx| {
            for (r, gr) in g.chunks(w).enumerate() {
                for j in 0..w {
                    gx[r * c + self.start + j] = gx[r * c + self.start + j] + gr[j];
                }
            }
        });
    }
}

struct RepeatCols<T: Scalar> {
    x: DiffTensor<T>,
    times: usize,
}

impl<T: Scalar> Backward<T> for RepeatCols<T> {
    fn name(&self) -> &'static str {
        "repeat_cols"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let t = self.times;
        self.x.with_grad_mut(|gx| {
            for (i, v) in gx.iter_mut().enumerate() {
                let s: T = g[i * t..(i + 1) * t].iter().copied().sum();
                *v = *v + s;
            }
        });
    }
}

// ---------------------------------------------------------------- reductions to scalar

struct SumAll<T: Scalar> {
    x: DiffTensor<T>,
    scale: T,
}

impl<T: Scalar> Backward<T> for SumAll<T> {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.x]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let v = g[0] * self.scale;
        self.x.with_grad_mut(|gx| gx.iter_mut().for_each(|x| *x = *x + v));
    }
}

struct CrossEntropy<T: Scalar> {
    logits: DiffTensor<T>,
    labels: Vec<usize>,
    probs: Vec<T>,
    k: usize,
}

impl<T: Scalar> Backward<T> for CrossEntropy<T> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        vec![&self.logits]
    }

    fn backward(&self, _out: &[T], g: &[T]) {
        let k = self.k;
        let scale = g[0] / T::of(self.labels.len() as f64);
        self.logits.with_grad_mut(|gl| {
            for (r, &y) in self.labels.iter().enumerate() {
                for j in 0..k {
                    let ind = if j == y { T::one() } else { T::zero() };
                    gl[r * k + j] = gl[r * k + j] + scale * (self.probs[r * k + j] - ind);
                }
            }
        });
    }
}

fn softmax_row_into<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

impl<T: Scalar> DiffTensor<T> {
    pub fn matmul(&self, b: &DiffTensor<T>) -> Result<Self> {
        let (m, k) = matrix_dims("matmul", self)?;
        let (k2, n) = matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(), b.shape()),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        {
            let a = self.data();
            let bd = b.data();
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    let brow = &bd[p * n..(p + 1) * n];
                    for j in 0..n {
                        row[j] = row[j] + aip * brow[j];
                    }
                }
            }
        }
        Ok(DiffTensor::from_op(
            vec![m, n],
            out,
            MatMul {
                a: self.clone(),
                b: b.clone(),
                m,
                k,
                n,
            },
        ))
    }

    fn binary(&self, b: &DiffTensor<T>, kind: BinaryKind, op: &'static str) -> Result<Self> {
        let (sa, sb) = (self.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(
                op,
                format!("{sb:?} does not align with trailing dims of {sa:?}"),
            ));
        }
        let out: Vec<T> = {
            let a = self.data();
            let bd = b.data();
            let bl = bd.len().max(1);
            a.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = bd[i % bl];
                    match kind {
                        BinaryKind::Add => x + y,
                        BinaryKind::Sub => x - y,
                        BinaryKind::Mul => x * y,
                    }
                })
                .collect()
        };
        Ok(DiffTensor::from_op(
            sa.to_vec(),
            out,
            Binary {
                kind,
                a: self.clone(),
                b: b.clone(),
            },
        ))
    }

    /// Elementwise sum; `b` broadcasts when its shape equals the trailing
    /// dimensions of `self`.
    pub fn add(&self, b: &DiffTensor<T>) -> Result<Self> {
        self.binary(b, BinaryKind::Add, "add")
    }

    pub fn sub(&self, b: &DiffTensor<T>) -> Result<Self> {
        self.binary(b, BinaryKind::Sub, "sub")
    }

    /// Elementwise product with the same trailing-dimension broadcast as [`Self::add`].
    pub fn mul(&self, b: &DiffTensor<T>) -> Result<Self> {
        self.binary(b, BinaryKind::Mul, "mul")
    }

    fn unary(&self, kind: UnaryKind<T>) -> Self {
        let out: Vec<T> = self
            .data()
            .iter()
            .map(|&x| match kind {
                UnaryKind::Gelu => gelu(x),
                UnaryKind::Sigmoid => sigmoid(x),
                UnaryKind::Relu => x.max(T::zero()),
                UnaryKind::Scale(c) => x * c,
            })
            .collect();
        DiffTensor::from_op(
            self.shape().to_vec(),
            out,
            Unary {
                kind,
                x: self.clone(),
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Self {
        self.unary(UnaryKind::Gelu)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn relu(&self) -> Self {
        self.unary(UnaryKind::Relu)
    }

    pub fn scale(&self, c: T) -> Self {
        self.unary(UnaryKind::Scale(c))
    }

    /// Row-wise softmax of a matrix, stabilized by subtracting the row max.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (m, n) = matrix_dims("softmax_rows", self)?;
        if n == 0 {
            return Err(Error::dim("softmax_rows", "rows must be nonempty"));
        }
        self.check_finite("softmax_rows input")?;
        let mut out = vec![T::zero(); m * n];
        {
            let x = self.data();
            for r in 0..m {
                softmax_row_into(&x[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
            }
        }
        Ok(DiffTensor::from_op(
            vec![m, n],
            out,
            SoftmaxRows { x: self.clone(), n },
        ))
    }

    /// Per-row normalization to zero mean and unit (population) variance,
    /// followed by `gain * x + bias`. With a single column the normalized
    /// value is zero and the result is `bias`.
    pub fn layer_norm(&self, gain: &DiffTensor<T>, bias: &DiffTensor<T>, eps: T) -> Result<Self> {
        let (m, d) = matrix_dims("layer_norm", self)?;
        if gain.len() != d || bias.len() != d {
            return Err(Error::dim(
                "layer_norm",
                format!("width {d}, gain {:?}, bias {:?}", gain.shape(), bias.shape()),
            ));
        }
        let mut xhat = vec![T::zero(); m * d];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * d];
        {
            let x = self.data();
            let g = gain.data();
            let b = bias.data();
            let dn = T::of(d as f64);
            for r in 0..m {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let s = T::one() / (var + eps).sqrt();
                inv_std[r] = s;
                for j in 0..d {
                    let h = (row[j] - mean) * s;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * g[j] + b[j];
                }
            }
        }
        Ok(DiffTensor::from_op(
            vec![m, d],
            out,
            LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                xhat,
                inv_std,
                d,
            },
        ))
    }

    /// Reduces the rows of each segment. Returns the `[num_segments, d]`
    /// result and a per-segment flag that is `true` for empty segments,
    /// whose rows are zero.
    pub fn segmented_reduce(&self, seg: &SegmentMap, kind: ReduceKind) -> Result<(Self, Vec<bool>)> {
        let (m, d) = matrix_dims("segmented_reduce", self)?;
        if seg.len() != m {
            return Err(Error::dim(
                "segmented_reduce",
                format!("segment map covers {} rows, tensor has {m}", seg.len()),
            ));
        }
        let ns = seg.num_segments();
        let mut out = vec![T::zero(); ns * d];
        let mut empty = vec![false; ns];
        let mut argmax = if kind == ReduceKind::Max {
            vec![0usize; ns * d]
        } else {
            Vec::new()
        };
        {
            let x = self.data();
            for s in 0..ns {
                let members = seg.members(s);
                if members.is_empty() {
                    empty[s] = true;
                    continue;
                }
                let o = &mut out[s * d..(s + 1) * d];
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        for &r in members {
                            for j in 0..d {
                                o[j] = o[j] + x[r * d + j];
                            }
                        }
                        if kind == ReduceKind::Mean {
                            let n = T::of(members.len() as f64);
                            o.iter_mut().for_each(|v| *v = *v / n);
                        }
                    }
                    ReduceKind::Max => {
                        let first = members[0];
                        o.copy_from_slice(&x[first * d..(first + 1) * d]);
                        argmax[s * d..(s + 1) * d].fill(first);
                        for &r in &members[1..] {
                            for j in 0..d {
                                if x[r * d + j] > o[j] {
                                    o[j] = x[r * d + j];
                                    argmax[s * d + j] = r;
                                }
                            }
                        }
                    }
                }
            }
        }
        let seg = if grad_recording(self) {
            seg.clone()
        } else {
            SegmentMap::from_ids(Vec::new(), 0).expect("empty map")
        };
        Ok((
            DiffTensor::from_op(
                vec![ns, d],
                out,
                SegmentReduce {
                    x: self.clone(),
                    seg,
                    kind,
                    argmax,
                    d,
                },
            ),
            empty,
        ))
    }

    /// Selects rows: `out[i] = self[index[i]]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Self> {
        self.gather_impl(index, None, 1)
    }

    /// `out[i] = sum_j weights[i*k + j] * self[index[i*k + j]]` for `k`
    /// neighbours per output row.
    pub fn weighted_gather(&self, index: &[usize], weights: &[T], k: usize) -> Result<Self> {
        if weights.len() != index.len() {
            return Err(Error::dim(
                "weighted_gather",
                format!("{} weights for {} indices", weights.len(), index.len()),
            ));
        }
        self.gather_impl(index, Some(weights.to_vec()), k)
    }

    fn gather_impl(&self, index: &[usize], weights: Option<Vec<T>>, k: usize) -> Result<Self> {
        let (m, d) = matrix_dims("gather_rows", self)?;
        if k == 0 || !index.len().is_multiple_of(k) {
            return Err(Error::dim(
                "gather_rows",
                format!("{} indices not divisible by k={k}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::Index {
                op: "gather_rows",
                index: bad,
                bound: m,
            });
        }
        let rows = index.len() / k;
        let mut out = vec![T::zero(); rows * d];
        {
            let x = self.data();
            for (slot, &src) in index.iter().enumerate() {
                let o = &mut out[(slot / k) * d..(slot / k + 1) * d];
                let xr = &x[src * d..(src + 1) * d];
                match &weights {
                    Some(w) => {
                        for j in 0..d {
                            o[j] = o[j] + w[slot] * xr[j];
                        }
                    }
                    None => {
                        for j in 0..d {
                            o[j] = o[j] + xr[j];
                        }
                    }
                }
            }
        }
        Ok(DiffTensor::from_op(
            vec![rows, d],
            out,
            WeightedGather {
                x: self.clone(),
                index: index.to_vec(),
                weights,
                k,
                d,
            },
        ))
    }

    /// Joins matrices with equal row counts along the last dimension.
    pub fn concat_cols(parts: &[&DiffTensor<T>]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::dim("concat_cols", "no operands"));
        };
        let m = matrix_dims("concat_cols", first)?.0;
        for p in parts {
            if matrix_dims("concat_cols", p)?.0 != m {
                return Err(Error::dim(
                    "concat_cols",
                    format!("row counts differ: {:?} vs {:?}", first.shape(), p.shape()),
                ));
            }
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = Vec::with_capacity(m * total);
        {
            let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for r in 0..m {
                for (p, d) in parts.iter().zip(&datas) {
                    let w = p.cols();
                    out.extend_from_slice(&d[r * w..(r + 1) * w]);
                }
            }
        }
        Ok(DiffTensor::from_op(
            vec![m, total],
            out,
            ConcatCols {
                parts: parts.iter().map(|p| (*p).clone()).collect(),
            },
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (m, c) = matrix_dims("slice_cols", self)?;
        if start > end || end > c {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {c} columns")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        {
            let x = self.data();
            for r in 0..m {
                out.extend_from_slice(&x[r * c + start..r * c + end]);
            }
        }
        Ok(DiffTensor::from_op(
            vec![m, w],
            out,
            SliceCols {
                x: self.clone(),
                start,
                end,
            },
        ))
    }

    /// Repeats every column `times` times in place: `[m, h] -> [m, h*times]`.
    /// Broadcasts a per-head scalar over that head's channels.
    pub fn repeat_cols(&self, times: usize) -> Result<Self> {
        let (m, h) = matrix_dims("repeat_cols", self)?;
        let mut out = Vec::with_capacity(m * h * times);
        for &v in self.data().iter() {
            out.extend(std::iter::repeat_n(v, times));
        }
        Ok(DiffTensor::from_op(
            vec![m, h * times],
            out,
            RepeatCols {
                x: self.clone(),
                times,
            },
        ))
    }

    pub fn sum(&self) -> Self {
        let s: T = self.data().iter().copied().sum();
        DiffTensor::from_op(
            Vec::new(),
            vec![s],
            SumAll {
                x: self.clone(),
                scale: T::one(),
            },
        )
    }

    pub fn mean(&self) -> Self {
        let n = T::of(self.len().max(1) as f64);
        let s: T = self.data().iter().copied().sum();
        DiffTensor::from_op(
            Vec::new(),
            vec![s / n],
            SumAll {
                x: self.clone(),
                scale: T::one() / n,
            },
        )
    }

    /// Mean softmax cross-entropy of `[n, k]` logits against class labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Self> {
        let (n, k) = matrix_dims("cross_entropy", self)?;
        if labels.len() != n || n == 0 {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Index {
                op: "cross_entropy",
                index: bad,
                bound: k,
            });
        }
        self.check_finite("cross_entropy logits")?;
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        {
            let x = self.data();
            for r in 0..n {
                softmax_row_into(&x[r * k..(r + 1) * k], &mut probs[r * k..(r + 1) * k]);
                let row = &x[r * k..(r + 1) * k];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                loss = loss + (lse - row[labels[r]]);
            }
        }
        loss = loss / T::of(n as f64);
        Ok(DiffTensor::from_op(
            Vec::new(),
            vec![loss],
            CrossEntropy {
                logits: self.clone(),
                labels: labels.to_vec(),
                probs,
                k,
            },
        ))
    }
}

fn grad_recording<T: Scalar>(t: &DiffTensor<T>) -> bool {
    super::grad_enabled() && t.requires_grad()
}

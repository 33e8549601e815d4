//! Forward and adjoint rules for the closed set of tape operations.

use super::kernels::{self, broadcast_strides, for_each_broadcast, gemm};
use super::tensor::split_axis;
use super::{NumericsError, Tensor};

/// Every operation the tape can record.
///
/// Elementwise binary kinds (`Add`, `Multiply`, `Divide`) broadcast between
/// operands of equal rank whose extents agree or are one on every axis.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[.., m, k]·[k, p]`, `[m, k]·[B, k, p]` or `[B, m, k]·[B, k, p]`.
    Matmul,
    Add,
    Multiply,
    Scale(f64),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Reshape { shape: Vec<usize> },
    SumAxis { axis: usize, keepdim: bool },
    Relu,
    /// Tanh-approximated GELU.
    Gelu,
    Softmax { axis: usize },
    /// Normalizes the last axis to zero mean and unit variance.
    LayerNorm { eps: f64 },
    Sqrt,
    /// `a / b`, with the result and both adjoints defined as zero wherever
    /// `|b| <= eps`.
    Divide { eps: f64 },
    /// Mean of `logsumexp(row) - row[target]` over rows with a target.
    CrossEntropy { targets: Vec<Option<usize>> },
    GatherRows { indices: Vec<usize> },
    /// Swaps the last two axes.
    Transpose,
    Exp,
    Sigmoid,
    /// Gaussian bumps `exp(-(x - c)^2 / (2 sigma^2))` for each center along a
    /// new trailing axis.
    Rbf { centers: Vec<f64>, sigma: f64 },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Multiply => "multiply",
            OpKind::Scale(_) => "scale",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape { .. } => "reshape",
            OpKind::SumAxis { .. } => "sum-over-axis",
            OpKind::Relu => "relu",
            OpKind::Gelu => "gelu",
            OpKind::Softmax { .. } => "softmax-over-axis",
            OpKind::LayerNorm { .. } => "layer-norm",
            OpKind::Sqrt => "sqrt",
            OpKind::Divide { .. } => "divide",
            OpKind::CrossEntropy { .. } => "cross-entropy-with-logits",
            OpKind::GatherRows { .. } => "gather-rows",
            OpKind::Transpose => "transpose",
            OpKind::Exp => "exp",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Rbf { .. } => "rbf",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Matmul | OpKind::Add | OpKind::Multiply | OpKind::Divide { .. } => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Adjoint buffers indexed by tape position; untracked inputs have no slot.
pub(crate) trait AdjointSink {
    fn slot(&mut self, input: usize) -> Option<&mut [f64]>;
}

fn invalid(op: &OpKind, shape: &[usize], reason: impl Into<String>) -> NumericsError {
    NumericsError::InvalidInput {
        op: op.name(),
        shape: shape.to_vec(),
        reason: reason.into(),
    }
}

fn mismatch(op: &OpKind, lhs: &[usize], rhs: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op: op.name(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn broadcast_shape(op: &OpKind, a: &[usize], b: &[usize]) -> Result<Vec<usize>, NumericsError> {
    if a.len() != b.len() {
        return Err(mismatch(op, a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch(op, a, b)),
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
enum MatmulPlan {
    Flat { rows: usize, k: usize, p: usize },
    SharedLeft { batch: usize, m: usize, k: usize, p: usize },
    Batched { batch: usize, m: usize, k: usize, p: usize },
}

fn matmul_plan(a: &[usize], b: &[usize]) -> Option<(MatmulPlan, Vec<usize>)> {
    match (a.len(), b.len()) {
        (ra, 2) if ra >= 2 => {
            let k = a[ra - 1];
            if k != b[0] {
                return None;
            }
            let rows = a[..ra - 1].iter().product();
            let mut out = a[..ra - 1].to_vec();
            out.push(b[1]);
            Some((MatmulPlan::Flat { rows, k, p: b[1] }, out))
        }
        (2, 3) => {
            if a[1] != b[1] {
                return None;
            }
            let plan = MatmulPlan::SharedLeft {
                batch: b[0],
                m: a[0],
                k: a[1],
                p: b[2],
            };
            Some((plan, vec![b[0], a[0], b[2]]))
        }
        (3, 3) => {
            if a[0] != b[0] || a[2] != b[1] {
                return None;
            }
            let plan = MatmulPlan::Batched {
                batch: a[0],
                m: a[1],
                k: a[2],
                p: b[2],
            };
            Some((plan, vec![a[0], a[1], b[2]]))
        }
        _ => None,
    }
}

/// Evaluates `kind` on concrete inputs.
pub(crate) fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor, NumericsError> {
    match kind.arity() {
        Some(n) if n != inputs.len() => {
            return Err(NumericsError::Arity {
                op: kind.name(),
                expected: n,
                got: inputs.len(),
            })
        }
        None if inputs.is_empty() => {
            return Err(NumericsError::Arity {
                op: kind.name(),
                expected: 1,
                got: 0,
            })
        }
        _ => {}
    }
    let a = inputs[0];
    match kind {
        OpKind::Matmul => {
            let b = inputs[1];
            let (plan, out_shape) = matmul_plan(a.shape(), b.shape())
                .ok_or_else(|| mismatch(kind, a.shape(), b.shape()))?;
            let mut out = vec![0.0; out_shape.iter().product()];
            let (ad, bd) = (a.data(), b.data());
            match plan {
                MatmulPlan::Flat { rows, k, p } => {
                    gemm(rows, k, p, ad, (k as isize, 1), bd, (p as isize, 1), &mut out, false)
                }
                MatmulPlan::SharedLeft { batch, m, k, p } => {
                    for bi in 0..batch {
                        gemm(
                            m,
                            k,
                            p,
                            ad,
                            (k as isize, 1),
                            &bd[bi * k * p..],
                            (p as isize, 1),
                            &mut out[bi * m * p..],
                            false,
                        );
                    }
                }
                MatmulPlan::Batched { batch, m, k, p } => {
                    for bi in 0..batch {
                        gemm(
                            m,
                            k,
                            p,
                            &ad[bi * m * k..],
                            (k as isize, 1),
                            &bd[bi * k * p..],
                            (p as isize, 1),
                            &mut out[bi * m * p..],
                            false,
                        );
                    }
                }
            }
            Ok(Tensor::from_parts(out_shape, out))
        }
        OpKind::Add | OpKind::Multiply | OpKind::Divide { .. } => {
            let b = inputs[1];
            let out_shape = broadcast_shape(kind, a.shape(), b.shape())?;
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            // The traversal visits output positions in order, so pushing fills
            // the buffer without zeroing it first.
            let mut out = Vec::with_capacity(out_shape.iter().product());
            let (ad, bd) = (a.data(), b.data());
            match kind {
                OpKind::Add => for_each_broadcast(&out_shape, &sa, &sb, |_, i, j| out.push(ad[i] + bd[j])),
                OpKind::Multiply => for_each_broadcast(&out_shape, &sa, &sb, |_, i, j| out.push(ad[i] * bd[j])),
                OpKind::Divide { eps } => for_each_broadcast(&out_shape, &sa, &sb, |_, i, j| {
                    out.push(if bd[j].abs() <= *eps { 0.0 } else { ad[i] / bd[j] })
                }),
                _ => unreachable!(),
            }
            Ok(Tensor::from_parts(out_shape, out))
        }
        OpKind::Scale(c) => Ok(map(a, |x| c * x)),
        OpKind::Concat { axis } => {
            let axis = *axis;
            let first = a.shape();
            if axis >= first.len() {
                return Err(invalid(kind, first, format!("axis {axis} out of range")));
            }
            let mut total = 0;
            for t in inputs {
                let s = t.shape();
                let compatible = s.len() == first.len()
                    && s.iter()
                        .zip(first)
                        .enumerate()
                        .all(|(ax, (x, y))| ax == axis || x == y);
                if !compatible {
                    return Err(mismatch(kind, first, s));
                }
                total += s[axis];
            }
            let mut out_shape = first.to_vec();
            out_shape[axis] = total;
            let (outer, _, inner) = split_axis(first, axis);
            let mut out = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for t in inputs {
                    let block = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Ok(Tensor::from_parts(out_shape, out))
        }
        OpKind::Slice { axis, start, end } => {
            let s = a.shape();
            if *axis >= s.len() || start >= end || *end > s[*axis] {
                return Err(invalid(
                    kind,
                    s,
                    format!("range {start}..{end} on axis {axis} is invalid"),
                ));
            }
            let (outer, len, inner) = split_axis(s, *axis);
            let width = end - start;
            let mut out = Vec::with_capacity(outer * width * inner);
            for o in 0..outer {
                let base = (o * len + start) * inner;
                out.extend_from_slice(&a.data()[base..base + width * inner]);
            }
            let mut out_shape = s.to_vec();
            out_shape[*axis] = width;
            Ok(Tensor::from_parts(out_shape, out))
        }
        OpKind::Reshape { shape } => {
            if shape.iter().product::<usize>() != a.len() {
                return Err(mismatch(kind, a.shape(), shape));
            }
            Ok(Tensor::from_parts(shape.clone(), a.data().to_vec()))
        }
        OpKind::SumAxis { axis, keepdim } => {
            let s = a.shape();
            if *axis >= s.len() {
                return Err(invalid(kind, s, format!("axis {axis} out of range")));
            }
            let (outer, len, inner) = split_axis(s, *axis);
            let mut out = vec![0.0; outer * inner];
            let ad = a.data();
            for o in 0..outer {
                for l in 0..len {
                    let src = &ad[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (dst, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *dst += v;
                    }
                }
            }
            let mut out_shape = s.to_vec();
            if *keepdim {
                out_shape[*axis] = 1;
            } else {
                out_shape.remove(*axis);
            }
            Ok(Tensor::from_parts(out_shape, out))
        }
        OpKind::Relu => Ok(map(a, |x| x.max(0.0))),
        OpKind::Gelu => Ok(map(a, kernels::gelu)),
        OpKind::Exp => Ok(map(a, f64::exp)),
        OpKind::Sigmoid => Ok(map(a, kernels::sigmoid)),
        OpKind::Rbf { centers, sigma } => {
            if centers.is_empty() || *sigma <= 0.0 {
                return Err(invalid(kind, a.shape(), "needs centers and a positive width"));
            }
            let c = -0.5 / (sigma * sigma);
            let mut out = Vec::with_capacity(a.len() * centers.len());
            for x in a.data() {
                out.extend(centers.iter().map(|mu| ((x - mu) * (x - mu) * c).exp()));
            }
            let mut out_shape = a.shape().to_vec();
            out_shape.push(centers.len());
            Ok(Tensor::from_parts(out_shape, out))
        }
        OpKind::Sqrt => {
            if let Some(bad) = a.data().iter().find(|v| **v < 0.0) {
                return Err(invalid(kind, a.shape(), format!("negative input {bad}")));
            }
            Ok(map(a, f64::sqrt))
        }
        OpKind::Softmax { axis } => {
            let s = a.shape();
            if *axis >= s.len() {
                return Err(invalid(kind, s, format!("axis {axis} out of range")));
            }
            let (outer, len, inner) = split_axis(s, *axis);
            let ad = a.data();
            let mut out = vec![0.0; a.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let max = (0..len).map(|l| ad[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for l in 0..len {
                        let e = (ad[idx(l)] - max).exp();
                        out[idx(l)] = e;
                        total += e;
                    }
                    for l in 0..len {
                        out[idx(l)] /= total;
                    }
                }
            }
            Ok(Tensor::from_parts(s.to_vec(), out))
        }
        OpKind::LayerNorm { eps } => {
            let s = a.shape();
            let width = *s
                .last()
                .filter(|w| **w > 0)
                .ok_or_else(|| invalid(kind, s, "needs a non-empty last axis"))?;
            let mut out = vec![0.0; a.len()];
            for (row, dst) in a.data().chunks(width).zip(out.chunks_mut(width)) {
                let (mean, inv) = row_moments(row, *eps);
                for (d, x) in dst.iter_mut().zip(row) {
                    *d = (x - mean) * inv;
                }
            }
            Ok(Tensor::from_parts(s.to_vec(), out))
        }
        OpKind::CrossEntropy { targets } => {
            let s = a.shape();
            if s.len() != 2 || s[0] != targets.len() {
                return Err(invalid(
                    kind,
                    s,
                    format!("expects [rows, classes] logits for {} targets", targets.len()),
                ));
            }
            let classes = s[1];
            let mut total = 0.0;
            let mut count = 0usize;
            for (row, target) in a.data().chunks(classes).zip(targets) {
                if let Some(t) = target {
                    if *t >= classes {
                        return Err(invalid(
                            kind,
                            s,
                            format!("target {t} outside [0, {classes})"),
                        ));
                    }
                    total += kernels::log_sum_exp(row) - row[*t];
                    count += 1;
                }
            }
            if count == 0 {
                return Err(invalid(kind, s, "no row carries a target"));
            }
            Ok(Tensor::scalar(total / count as f64))
        }
        OpKind::GatherRows { indices } => {
            let s = a.shape();
            if s.is_empty() {
                return Err(invalid(kind, s, "needs at least one axis"));
            }
            if let Some(bad) = indices.iter().find(|i| **i >= s[0]) {
                return Err(invalid(kind, s, format!("row index {bad} out of range")));
            }
            let row: usize = s[1..].iter().product();
            let mut out = Vec::with_capacity(indices.len() * row);
            for &i in indices {
                out.extend_from_slice(&a.data()[i * row..(i + 1) * row]);
            }
            let mut out_shape = s.to_vec();
            out_shape[0] = indices.len();
            Ok(Tensor::from_parts(out_shape, out))
        }
        OpKind::Transpose => {
            let s = a.shape();
            if s.len() < 2 {
                return Err(invalid(kind, s, "needs at least two axes"));
            }
            let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
            let batch = a.len() / (r * c).max(1);
            let mut out = vec![0.0; a.len()];
            let ad = a.data();
            for b in 0..batch {
                let base = b * r * c;
                for i in 0..r {
                    for j in 0..c {
                        out[base + j * r + i] = ad[base + i * c + j];
                    }
                }
            }
            let mut out_shape = s.to_vec();
            let n = out_shape.len();
            out_shape.swap(n - 2, n - 1);
            Ok(Tensor::from_parts(out_shape, out))
        }
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

/// Mean and inverse standard deviation (population variance) of a row.
fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Propagates `dout` (the adjoint of `out`) to the inputs that have slots.
pub(crate) fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    dout: &[f64],
    sink: &mut dyn AdjointSink,
) {
    let a = inputs[0];
    match kind {
        OpKind::Matmul => {
            let b = inputs[1];
            let (plan, _) = matmul_plan(a.shape(), b.shape()).expect("validated in forward");
            let (ad, bd) = (a.data(), b.data());
            match plan {
                MatmulPlan::Flat { rows, k, p } => {
                    if let Some(da) = sink.slot(0) {
                        gemm(rows, p, k, dout, (p as isize, 1), bd, (1, p as isize), da, true);
                    }
                    if let Some(db) = sink.slot(1) {
                        gemm(k, rows, p, ad, (1, k as isize), dout, (p as isize, 1), db, true);
                    }
                }
                MatmulPlan::SharedLeft { batch, m, k, p } => {
                    if let Some(da) = sink.slot(0) {
                        for bi in 0..batch {
                            gemm(
                                m,
                                p,
                                k,
                                &dout[bi * m * p..],
                                (p as isize, 1),
                                &bd[bi * k * p..],
                                (1, p as isize),
                                da,
                                true,
                            );
                        }
                    }
                    if let Some(db) = sink.slot(1) {
                        for bi in 0..batch {
                            gemm(
                                k,
                                m,
                                p,
                                ad,
                                (1, k as isize),
                                &dout[bi * m * p..],
                                (p as isize, 1),
                                &mut db[bi * k * p..],
                                true,
                            );
                        }
                    }
                }
                MatmulPlan::Batched { batch, m, k, p } => {
                    if let Some(da) = sink.slot(0) {
                        for bi in 0..batch {
                            gemm(
                                m,
                                p,
                                k,
                                &dout[bi * m * p..],
                                (p as isize, 1),
                                &bd[bi * k * p..],
                                (1, p as isize),
                                &mut da[bi * m * k..],
                                true,
                            );
                        }
                    }
                    if let Some(db) = sink.slot(1) {
                        for bi in 0..batch {
                            gemm(
                                k,
                                m,
                                p,
                                &ad[bi * m * k..],
                                (1, k as isize),
                                &dout[bi * m * p..],
                                (p as isize, 1),
                                &mut db[bi * k * p..],
                                true,
                            );
                        }
                    }
                }
            }
        }
        OpKind::Add | OpKind::Multiply | OpKind::Divide { .. } => {
            let b = inputs[1];
            let out_shape = out.shape();
            let sa = broadcast_strides(a.shape(), out_shape);
            let sb = broadcast_strides(b.shape(), out_shape);
            let (ad, bd) = (a.data(), b.data());
            if let Some(da) = sink.slot(0) {
                match kind {
                    OpKind::Add => for_each_broadcast(out_shape, &sa, &sb, |o, i, _| {
                        da[i] += dout[o]
                    }),
                    OpKind::Multiply => for_each_broadcast(out_shape, &sa, &sb, |o, i, j| {
                        da[i] += dout[o] * bd[j]
                    }),
                    OpKind::Divide { eps } => {
                        for_each_broadcast(out_shape, &sa, &sb, |o, i, j| {
                            if bd[j].abs() > *eps {
                                da[i] += dout[o] / bd[j]
                            }
                        })
                    }
                    _ => unreachable!(),
                }
            }
            if let Some(db) = sink.slot(1) {
                match kind {
                    OpKind::Add => for_each_broadcast(out_shape, &sa, &sb, |o, _, j| {
                        db[j] += dout[o]
                    }),
                    OpKind::Multiply => for_each_broadcast(out_shape, &sa, &sb, |o, i, j| {
                        db[j] += dout[o] * ad[i]
                    }),
                    OpKind::Divide { eps } => {
                        for_each_broadcast(out_shape, &sa, &sb, |o, i, j| {
                            if bd[j].abs() > *eps {
                                db[j] -= dout[o] * ad[i] / (bd[j] * bd[j])
                            }
                        })
                    }
                    _ => unreachable!(),
                }
            }
        }
        OpKind::Scale(c) => {
            if let Some(da) = sink.slot(0) {
                for (d, g) in da.iter_mut().zip(dout) {
                    *d += c * g;
                }
            }
        }
        OpKind::Concat { axis } => {
            let (outer, _, inner) = split_axis(a.shape(), *axis);
            let total = out.shape()[*axis];
            let mut offset = 0;
            for (pos, t) in inputs.iter().enumerate() {
                let width = t.shape()[*axis];
                if let Some(dt) = sink.slot(pos) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * width * inner;
                        for (d, g) in dt[dst..dst + width * inner]
                            .iter_mut()
                            .zip(&dout[src..src + width * inner])
                        {
                            *d += g;
                        }
                    }
                }
                offset += width;
            }
        }
        OpKind::Slice { axis, start, end } => {
            if let Some(da) = sink.slot(0) {
                let (outer, len, inner) = split_axis(a.shape(), *axis);
                let width = end - start;
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    let src = o * width * inner;
                    for (d, g) in da[dst..dst + width * inner]
                        .iter_mut()
                        .zip(&dout[src..src + width * inner])
                    {
                        *d += g;
                    }
                }
            }
        }
        OpKind::Reshape { .. } => {
            if let Some(da) = sink.slot(0) {
                for (d, g) in da.iter_mut().zip(dout) {
                    *d += g;
                }
            }
        }
        OpKind::SumAxis { axis, .. } => {
            if let Some(da) = sink.slot(0) {
                let (outer, len, inner) = split_axis(a.shape(), *axis);
                for o in 0..outer {
                    let g = &dout[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for (d, v) in da[base..base + inner].iter_mut().zip(g) {
                            *d += v;
                        }
                    }
                }
            }
        }
        OpKind::Relu => elementwise(sink, a, out, dout, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
        OpKind::Gelu => elementwise(sink, a, out, dout, |x, _| kernels::gelu_grad(x)),
        OpKind::Exp => elementwise(sink, a, out, dout, |_, y| y),
        OpKind::Sigmoid => elementwise(sink, a, out, dout, |_, y| y * (1.0 - y)),
        OpKind::Rbf { centers, sigma } => {
            if let Some(da) = sink.slot(0) {
                let c = -1.0 / (sigma * sigma);
                let m = centers.len();
                let rows = out.data().chunks(m).zip(dout.chunks(m));
                for ((d, x), (y, g)) in da.iter_mut().zip(a.data()).zip(rows) {
                    *d += centers
                        .iter()
                        .zip(y.iter().zip(g))
                        .map(|(mu, (y, g))| g * y * c * (x - mu))
                        .sum::<f64>();
                }
            }
        }
        // The derivative at zero is taken as zero so that zero-length vectors
        // do not poison the adjoints.
        OpKind::Sqrt => elementwise(sink, a, out, dout, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 }),
        OpKind::Softmax { axis } => {
            if let Some(da) = sink.slot(0) {
                let (outer, len, inner) = split_axis(a.shape(), *axis);
                let y = out.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| dout[idx(l)] * y[idx(l)]).sum();
                        for l in 0..len {
                            da[idx(l)] += y[idx(l)] * (dout[idx(l)] - dot);
                        }
                    }
                }
            }
        }
        OpKind::LayerNorm { eps } => {
            if let Some(da) = sink.slot(0) {
                let width = *a.shape().last().expect("validated in forward");
                let rows = a.data().chunks(width);
                let ys = out.data().chunks(width);
                let gs = dout.chunks(width);
                for (((row, y), g), d) in rows.zip(ys).zip(gs).zip(da.chunks_mut(width)) {
                    let (_, inv) = row_moments(row, *eps);
                    let n = width as f64;
                    let mean_g = g.iter().sum::<f64>() / n;
                    let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((dd, gg), yy) in d.iter_mut().zip(g).zip(y) {
                        *dd += inv * (gg - mean_g - yy * mean_gy);
                    }
                }
            }
        }
        OpKind::CrossEntropy { targets } => {
            if let Some(da) = sink.slot(0) {
                let classes = a.shape()[1];
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                let scale = dout[0] / count;
                for ((row, target), d) in a.data().chunks(classes).zip(targets).zip(da.chunks_mut(classes)) {
                    if let Some(t) = target {
                        let lse = kernels::log_sum_exp(row);
                        for (c, (dd, x)) in d.iter_mut().zip(row).enumerate() {
                            let p = (x - lse).exp();
                            let indicator = if c == *t { 1.0 } else { 0.0 };
                            *dd += scale * (p - indicator);
                        }
                    }
                }
            }
        }
        OpKind::GatherRows { indices } => {
            if let Some(da) = sink.slot(0) {
                let row: usize = a.shape()[1..].iter().product();
                for (k, &i) in indices.iter().enumerate() {
                    for (d, g) in da[i * row..(i + 1) * row]
                        .iter_mut()
                        .zip(&dout[k * row..(k + 1) * row])
                    {
                        *d += g;
                    }
                }
            }
        }
        OpKind::Transpose => {
            if let Some(da) = sink.slot(0) {
                let s = a.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = a.len() / (r * c).max(1);
                for b in 0..batch {
                    let base = b * r * c;
                    for i in 0..r {
                        for j in 0..c {
                            da[base + i * c + j] += dout[base + j * r + i];
                        }
                    }
                }
            }
        }
    }
}

/// Elementwise chain rule: `da += dout · f'(x, y)`.
fn elementwise(
    sink: &mut dyn AdjointSink,
    a: &Tensor,
    out: &Tensor,
    dout: &[f64],
    deriv: impl Fn(f64, f64) -> f64,
) {
    if let Some(da) = sink.slot(0) {
        for (((d, g), x), y) in da.iter_mut().zip(dout).zip(a.data()).zip(out.data()) {
            *d += g * deriv(*x, *y);
        }
    }
}

//! Raw loops behind the tape operations. Everything here works on flat
//! row-major slices; shape validation happens in the callers.

use super::tensor::strides;

/// Products with at most this many multiply-adds skip `matrixmultiply`.
const SMALL_GEMM: usize = 512;

/// `c = a·b (+ c when accumulate)` for arbitrarily strided operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let a_extent = extent(m, k, a_strides);
    let b_extent = extent(k, n, b_strides);
    assert!(a_extent <= a.len() && b_extent <= b.len() && m * n <= c.len());
    let non_negative = a_strides.0 >= 0 && a_strides.1 >= 0 && b_strides.0 >= 0 && b_strides.1 >= 0;
    if m * k * n <= SMALL_GEMM && non_negative {
        // packing overhead dominates at per-edge sizes
        let (ars, acs) = (a_strides.0 as usize, a_strides.1 as usize);
        let (brs, bcs) = (b_strides.0 as usize, b_strides.1 as usize);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += a[i * ars + l * acs] * b[l * brs + j * bcs];
                }
                let out = &mut c[i * n + j];
                *out = if accumulate { *out + acc } else { acc };
            }
        }
        return;
    }
    // SAFETY: the extents asserted above bound every offset dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn extent(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

/// Row-major strides of `shape` with zero stride on axes that are broadcast
/// to `out`.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let base = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(base)
        .map(|((&dim, &o), s)| if dim == o { s } else { 0 })
        .collect()
}

/// Visits every element of an `out`-shaped iteration space, passing the flat
/// output index and the matching offsets into operands with the given strides.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut index = vec![0usize; rank - 1];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    loop {
        let (mut xa, mut xb) = (ia, ib);
        for _ in 0..last {
            f(o, xa, xb);
            o += 1;
            xa += la;
            xb += lb;
        }
        // Advance the outer multi-index like an odometer.
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            index[axis] += 1;
            ia += sa[axis];
            ib += sb[axis];
            if index[axis] < out[axis] {
                break;
            }
            ia -= sa[axis] * out[axis];
            ib -= sb[axis] * out[axis];
            index[axis] = 0;
        }
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

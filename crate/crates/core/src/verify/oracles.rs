//! Straight-line reference implementations, written independently of the
//! tape so they can catch mistakes in it.

#![allow(clippy::needless_range_loop)]

use crate::geometry::{relative_transform, Point3, RigidTransform};
use crate::layer::mlp::LAYER_NORM_EPS;
use crate::layer::{COSINE_EPS, ZERO_VECTOR_EPS};
use crate::model::Activation;
use crate::numerics::{NumericsError, ParamStore, Tensor};

/// `h_k = Σ_l wa[k,l]·qi[l] + Σ_l wb[k,l]·kj[l]` as a double loop.
pub fn vector_field(qi: &Tensor, kj: &Tensor, wa: &Tensor, wb: &Tensor) -> Tensor {
    let d = wa.shape()[0];
    let mut out = Tensor::zeros(&[d, 3]);
    for k in 0..d {
        for x in 0..3 {
            let mut acc = 0.0;
            for l in 0..d {
                acc += wa.at(&[k, l]) * qi.at(&[l, x]);
            }
            for l in 0..d {
                acc += wb.at(&[k, l]) * kj.at(&[l, x]);
            }
            out.data_mut()[k * 3 + x] = acc;
        }
    }
    out
}

fn row(t: &Tensor, k: usize) -> [f64; 3] {
    [t.at(&[k, 0]), t.at(&[k, 1]), t.at(&[k, 2])]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// The vector perceptron, one step at a time.
pub fn v_mlp(q: &Tensor, qo: &Tensor, wc: &Tensor, wd: &Tensor, we: &Tensor, gate: &Tensor) -> Tensor {
    let d = wc.shape()[0];
    // step 1: mix the two atom sets
    let mut v = vec![[0.0; 3]; d];
    for (k, vk) in v.iter_mut().enumerate() {
        for l in 0..d {
            for x in 0..3 {
                vk[x] += wc.at(&[k, l]) * q.at(&[l, x]);
            }
        }
        for l in 0..d {
            for x in 0..3 {
                vk[x] += wd.at(&[k, l]) * qo.at(&[l, x]);
            }
        }
    }
    // step 2: scale each vector by its cosine with the learned direction
    let mut u = vec![[0.0; 3]; d];
    for k in 0..d {
        let w = row(gate, k);
        let (nv, nw) = (norm(v[k]), norm(w));
        let cos = if nv < COSINE_EPS || nw < COSINE_EPS {
            0.0
        } else {
            (w[0] * v[k][0] + w[1] * v[k][1] + w[2] * v[k][2]) / (nv * nw)
        };
        for x in 0..3 {
            u[k][x] = cos * v[k][x];
        }
    }
    // step 3: mix again
    let mut out = Tensor::zeros(&[d, 3]);
    for m in 0..d {
        for k in 0..d {
            for x in 0..3 {
                out.data_mut()[m * 3 + x] += we.at(&[m, k]) * u[k][x];
            }
        }
    }
    out
}

/// Coordinates of `atoms` (frame `tj`) seen from frame `ti`.
pub fn transform_atoms(atoms: &Tensor, ti: &RigidTransform, tj: &RigidTransform) -> Tensor {
    let rel = relative_transform(ti, tj);
    let rows = atoms.shape()[0];
    let mut out = Tensor::zeros(&[rows, 3]);
    for k in 0..rows {
        let p = rel.apply(&Point3::new(atoms.at(&[k, 0]), atoms.at(&[k, 1]), atoms.at(&[k, 2])));
        out.data_mut()[k * 3..k * 3 + 3].copy_from_slice(&[p.x, p.y, p.z]);
    }
    out
}

/// Unit direction and Gaussian-bank length per row of `h`.
pub fn featurize(h: &Tensor, centers: &[f64], sigma: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..h.shape()[0] {
        let v = row(h, k);
        let n = norm(v);
        if n <= ZERO_VECTOR_EPS {
            out.extend_from_slice(&[0.0; 3]);
        } else {
            out.extend(v.iter().map(|x| x / n));
        }
        out.extend(centers.iter().map(|mu| (-(n - mu) * (n - mu) / (2.0 * sigma * sigma)).exp()));
    }
    out
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Dense `x·W + b` for one input vector.
pub fn dense_linear(params: &ParamStore, prefix: &str, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let w = params.get(&format!("{prefix}.w"))?;
    let b = params.get(&format!("{prefix}.b"))?;
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), din, "{prefix}: input width");
    Ok((0..dout)
        .map(|o| b.data()[o] + (0..din).map(|i| x[i] * w.at(&[i, o])).sum::<f64>())
        .collect())
}

/// Layer norm, two linear layers and the activation, for one input vector.
pub fn dense_mlp(
    params: &ParamStore,
    prefix: &str,
    x: &[f64],
    activation: Activation,
) -> Result<Vec<f64>, NumericsError> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let normed: Vec<f64> = x.iter().map(|v| (v - mean) / (var + LAYER_NORM_EPS).sqrt()).collect();
    let hidden: Vec<f64> = dense_linear(params, &format!("{prefix}.fc1"), &normed)?
        .into_iter()
        .map(|h| match activation {
            Activation::Gelu => gelu(h),
            Activation::Relu => h.max(0.0),
        })
        .collect();
    dense_linear(params, &format!("{prefix}.fc2"), &hidden)
}

/// Per-node neighbor attention with explicit loops.
pub struct DenseNodeOutput {
    /// `[n][d_v]`.
    pub s: Vec<Vec<f64>>,
    /// `[n][slot][head]`.
    pub attention: Vec<Vec<Vec<f64>>>,
}

/// Reference node interaction. `features` and `e` hold one row per edge in
/// center-major order over `neighbors`.
#[allow(clippy::too_many_arguments)]
pub fn node_interaction(
    params: &ParamStore,
    prefix: &str,
    activation: Activation,
    heads: usize,
    neighbors: &[Vec<usize>],
    s: &[Vec<f64>],
    features: &[Vec<f64>],
    e: &[Vec<f64>],
) -> Result<DenseNodeOutput, NumericsError> {
    let d_v = s[0].len();
    let dh = d_v / heads;
    let mut out_s = Vec::new();
    let mut out_a = Vec::new();
    let mut edge = 0;
    for (i, list) in neighbors.iter().enumerate() {
        let mut scores = Vec::new();
        let mut values = Vec::new();
        for &j in list {
            let mut input = s[i].clone();
            input.extend_from_slice(&s[j]);
            input.extend_from_slice(&features[edge]);
            input.extend_from_slice(&e[edge]);
            scores.push(dense_mlp(params, &format!("{prefix}.attn"), &input, activation)?);
            let mut input = s[j].clone();
            input.extend_from_slice(&features[edge]);
            input.extend_from_slice(&e[edge]);
            values.push(dense_mlp(params, &format!("{prefix}.value"), &input, activation)?);
            edge += 1;
        }
        let mut attention = vec![vec![0.0; heads]; list.len()];
        for h in 0..heads {
            let max = scores.iter().map(|r| r[h]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|r| (r[h] - max).exp()).sum();
            for (t, r) in scores.iter().enumerate() {
                attention[t][h] = (r[h] - max).exp() / z;
            }
        }
        let mut pooled = vec![0.0; d_v];
        for (t, v) in values.iter().enumerate() {
            for (c, p) in pooled.iter_mut().enumerate() {
                *p += attention[t][c / dh] * v[c];
            }
        }
        let update = dense_mlp(params, &format!("{prefix}.out"), &pooled, activation)?;
        out_s.push(s[i].iter().zip(update).map(|(a, b)| a + b).collect());
        out_a.push(attention);
    }
    Ok(DenseNodeOutput { s: out_s, attention: out_a })
}

/// Reference edge interaction.
pub fn edge_interaction(
    params: &ParamStore,
    prefix: &str,
    activation: Activation,
    neighbors: &[Vec<usize>],
    s: &[Vec<f64>],
    features: &[Vec<f64>],
    e: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, NumericsError> {
    let mut out = Vec::new();
    let mut edge = 0;
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            let mut input = s[i].clone();
            input.extend_from_slice(&s[j]);
            input.extend_from_slice(&features[edge]);
            input.extend_from_slice(&e[edge]);
            let update = dense_mlp(params, prefix, &input, activation)?;
            out.push(e[edge].iter().zip(update).map(|(a, b)| a + b).collect());
            edge += 1;
        }
    }
    Ok(out)
}

/// `Σ_t mean_h(a[i][t]) · T_i⁻¹T_j q_j` for every node.
pub fn aggregate_atoms(
    frames: &[RigidTransform],
    neighbors: &[Vec<usize>],
    atoms: &[Tensor],
    attention: &[Vec<Vec<f64>>],
) -> Vec<Tensor> {
    neighbors
        .iter()
        .enumerate()
        .map(|(i, list)| {
            let d = atoms[i].shape()[0];
            let mut acc = Tensor::zeros(&[d, 3]);
            for (t, &j) in list.iter().enumerate() {
                let heads = &attention[i][t];
                let w = heads.iter().sum::<f64>() / heads.len() as f64;
                let k = transform_atoms(&atoms[j], &frames[i], &frames[j]);
                for (a, b) in acc.data_mut().iter_mut().zip(k.data()) {
                    *a += w * b;
                }
            }
            acc
        })
        .collect()
}

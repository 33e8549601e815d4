use crate::model::VectorMlpKind;
use crate::numerics::{Graph, NumericsError, Tensor, Var};

use super::mlp::{linear, mlp};
use super::LayerContext;

/// Gate norms below this give a cosine of exactly zero.
pub const COSINE_EPS: f64 = 1e-8;

/// Replaces every residue's virtual atoms with `reshape(linear(s), [d_q, 3])`.
pub fn update_atoms_linear(cx: &LayerContext, prefix: &str, s: &Var) -> Result<Var, NumericsError> {
    let flat = linear(cx.graph, cx.params, prefix, s)?;
    cx.graph.reshape(&flat, &[cx.topology.n_nodes, cx.config.d_q, 3])
}

/// Pools neighbor atoms `k` (`[edges, d_q, 3]`, already in the center's
/// frame) with head-averaged attention, then combines them with `q`.
pub fn update_atoms_aggregate(
    cx: &LayerContext,
    prefix: &str,
    q: &Var,
    k: &Var,
    attention: &Var,
) -> Result<Var, NumericsError> {
    let g = cx.graph;
    let pooled = aggregate_atoms(g, k, attention, cx.topology.n_nodes, cx.config.d_q)?;
    match cx.config.vector_mlp {
        VectorMlpKind::Vmlp => {
            let p = |name: &str| g.param(cx.params, &format!("{prefix}.{name}"));
            v_mlp(g, q, &pooled, &p("wc")?, &p("wd")?, &p("we")?, &p("gate")?)
        }
        VectorMlpKind::Mlp => {
            let (n, d_q) = (cx.topology.n_nodes, cx.config.d_q);
            let flat = g.concat(
                &[&g.reshape(q, &[n, 3 * d_q])?, &g.reshape(&pooled, &[n, 3 * d_q])?],
                1,
            )?;
            let out = mlp(g, cx.params, prefix, &flat, cx.config.activation)?;
            g.reshape(&out, &[n, d_q, 3])
        }
        VectorMlpKind::None => Ok(pooled),
    }
}

/// `Σ_j ā_ij K_j` with `ā` the mean of the attention heads.
pub fn aggregate_atoms(
    g: &Graph,
    k: &Var,
    attention: &Var,
    n: usize,
    d_q: usize,
) -> Result<Var, NumericsError> {
    let [_, slots, heads] = attention.shape() else {
        return Err(NumericsError::InvalidInput {
            op: "aggregate-atoms",
            shape: attention.shape().to_vec(),
            reason: "attention must be [n, slots, heads]".into(),
        });
    };
    let (slots, heads) = (*slots, *heads);
    let mean = g.scale(&g.sum_axis(attention, 2, true)?, 1.0 / heads as f64)?;
    let k = g.reshape(k, &[n, slots, d_q * 3])?;
    let pooled = g.sum_axis(&g.mul(&mean, &k)?, 1, false)?;
    g.reshape(&pooled, &[n, d_q, 3])
}

/// Cosine-gated vector perceptron over atom sets `[.., d_q, 3]`:
/// `v = wc·q + wd·qo`, `u_k = cos(gate_k, v_k)·v_k`, output `we·u`.
pub fn v_mlp(
    g: &Graph,
    q: &Var,
    qo: &Var,
    wc: &Var,
    wd: &Var,
    we: &Var,
    gate: &Var,
) -> Result<Var, NumericsError> {
    let v = g.add(&g.matmul(wc, q)?, &g.matmul(wd, qo)?)?;
    let rank = v.shape().len();
    let last = rank - 1;
    let gate = if rank == 3 {
        let d = gate.shape().to_vec();
        g.reshape(gate, &[1, d[0], d[1]])?
    } else {
        gate.clone()
    };
    let dot = g.sum_axis(&g.mul(&v, &gate)?, last, true)?;
    let v_norm = g.sqrt(&g.sum_axis(&g.mul(&v, &v)?, last, true)?)?;
    let gate_norm = g.sqrt(&g.sum_axis(&g.mul(&gate, &gate)?, last, true)?)?;
    let denom = g.mul(&v_norm, &gate_norm)?;
    // piecewise-constant, so it enters the tape as a constant
    let mask = {
        let out = broadcast_mask(v_norm.value(), gate_norm.value());
        g.constant(out)
    };
    let cosine = g.mul(&g.div(&dot, &denom, COSINE_EPS * COSINE_EPS * 0.5)?, &mask)?;
    let u = g.mul(&cosine, &v)?;
    g.matmul(we, &u)
}

fn broadcast_mask(v_norm: &Tensor, gate_norm: &Tensor) -> Tensor {
    let gate = gate_norm.data();
    let per = gate.len();
    let data = v_norm
        .data()
        .iter()
        .enumerate()
        .map(|(i, &vn)| f64::from(vn >= COSINE_EPS && gate[i % per] >= COSINE_EPS))
        .collect();
    Tensor::new(v_norm.shape().to_vec(), data).expect("same shape")
}

use crate::numerics::{NumericsError, Var};

use super::mlp::mlp;
use super::LayerContext;

/// Multi-head attention of each node over its neighbor list, followed by a
/// residual update of the node features.
///
/// Returns the new node features `[n, d_v]` and the attention weights
/// `[n, slots, heads]`, normalized over the slot axis.
pub fn node_interaction(
    cx: &LayerContext,
    prefix: &str,
    s: &Var,
    features: &Var,
    e: &Var,
) -> Result<(Var, Var), NumericsError> {
    let g = cx.graph;
    let (n, slots, heads) = (cx.topology.n_nodes, cx.topology.slots, cx.config.heads);
    let d_v = cx.config.d_v;
    let si = g.gather_rows(s, &cx.topology.centers)?;
    let sj = g.gather_rows(s, &cx.topology.neighbors)?;

    let scores = mlp(
        g,
        cx.params,
        &format!("{prefix}.attn"),
        &g.concat(&[&si, &sj, features, e], 1)?,
        cx.config.activation,
    )?;
    let attention = g.softmax(&g.reshape(&scores, &[n, slots, heads])?, 1)?;

    let values = mlp(
        g,
        cx.params,
        &format!("{prefix}.value"),
        &g.concat(&[&sj, features, e], 1)?,
        cx.config.activation,
    )?;
    let values = g.reshape(&values, &[n, slots, heads, d_v / heads])?;
    let weights = g.reshape(&attention, &[n, slots, heads, 1])?;
    let pooled = g.sum_axis(&g.mul(&weights, &values)?, 1, false)?;
    let pooled = g.reshape(&pooled, &[n, d_v])?;

    let update = mlp(g, cx.params, &format!("{prefix}.out"), &pooled, cx.config.activation)?;
    Ok((g.add(s, &update)?, attention))
}

/// Residual update of every directed edge from its endpoints' current node
/// features, its geometric features and itself.
pub fn edge_interaction(
    cx: &LayerContext,
    prefix: &str,
    s: &Var,
    features: &Var,
    e: &Var,
) -> Result<Var, NumericsError> {
    let g = cx.graph;
    let si = g.gather_rows(s, &cx.topology.centers)?;
    let sj = g.gather_rows(s, &cx.topology.neighbors)?;
    let update = mlp(
        g,
        cx.params,
        prefix,
        &g.concat(&[&si, &sj, features, e], 1)?,
        cx.config.activation,
    )?;
    g.add(e, &update)
}

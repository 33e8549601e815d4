//! The vector field layer: per-edge geometry from virtual atoms, node and
//! edge interactions, and virtual-atom updates.
//!
//! Shapes used throughout, with `E = n · slots` directed edges laid out
//! center-major (edge `i · slots + t` joins center `i` to its `t`-th
//! neighbor):
//!
//! | value            | shape                      |
//! |------------------|----------------------------|
//! | node features    | `[n, d_v]`                 |
//! | edge features    | `[E, d_e]`                 |
//! | virtual atoms    | `[n, d_q, 3]`, local frame |
//! | edge geometry    | `[E, d_q · (3 + n_rbf)]`   |
//! | attention        | `[n, slots, heads]`        |

mod atoms;
mod geometric;
mod interaction;
pub mod mlp;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::RigidTransform;
use crate::model::{AtomUpdateMode, ModelConfig, VectorMlpKind};
use crate::numerics::{Graph, NumericsError, ParamStore, Tensor, Var};

pub use atoms::{aggregate_atoms, update_atoms_aggregate, update_atoms_linear, v_mlp, COSINE_EPS};
pub use geometric::{featurize, transform_atoms, vector_field, RbfBank, ZERO_VECTOR_EPS};
pub use interaction::{edge_interaction, node_interaction};

/// Edge index lists plus the constant relative frames of every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTopology {
    pub n_nodes: usize,
    pub slots: usize,
    pub centers: Vec<usize>,
    pub neighbors: Vec<usize>,
    /// `[E, 3, 3]`: transpose of the rotation of `T_i⁻¹ ∘ T_j`.
    pub rotation_t: Tensor,
    /// `[E, 1, 3]`: translation of `T_i⁻¹ ∘ T_j`.
    pub translation: Tensor,
}

impl EdgeTopology {
    /// `neighbors[i]` lists the nodes center `i` attends to; every list must
    /// have the same non-zero length.
    pub fn new(frames: &[RigidTransform], neighbors: &[Vec<usize>]) -> Result<Self, NumericsError> {
        let n = frames.len();
        let slots = neighbors.first().map_or(0, Vec::len);
        let invalid = |reason: String| NumericsError::InvalidInput {
            op: "edge-topology",
            shape: vec![n, slots],
            reason,
        };
        if neighbors.len() != n || n == 0 {
            return Err(invalid(format!("{} neighbor lists for {n} frames", neighbors.len())));
        }
        if slots == 0 || neighbors.iter().any(|l| l.len() != slots) {
            return Err(invalid("neighbor lists must share one non-zero length".into()));
        }
        if let Some(bad) = neighbors.iter().flatten().find(|&&j| j >= n) {
            return Err(invalid(format!("neighbor index {bad} out of range")));
        }
        let edges = n * slots;
        let mut centers = Vec::with_capacity(edges);
        let mut flat = Vec::with_capacity(edges);
        let mut rotation_t = Vec::with_capacity(edges * 9);
        let mut translation = Vec::with_capacity(edges * 3);
        for (i, list) in neighbors.iter().enumerate() {
            let ti = &frames[i];
            for &j in list {
                let tj = &frames[j];
                centers.push(i);
                flat.push(j);
                let rel = ti.rotation.transpose() * tj.rotation;
                let shift = ti.rotation.transpose() * (tj.translation - ti.translation);
                for r in 0..3 {
                    for c in 0..3 {
                        rotation_t.push(rel[(c, r)]);
                    }
                }
                translation.extend_from_slice(&[shift.x, shift.y, shift.z]);
            }
        }
        Ok(Self {
            n_nodes: n,
            slots,
            centers,
            neighbors: flat,
            rotation_t: Tensor::new(vec![edges, 3, 3], rotation_t)?,
            translation: Tensor::new(vec![edges, 1, 3], translation)?,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.centers.len()
    }
}

/// Everything a layer reads besides its evolving state.
pub struct LayerContext<'a> {
    pub graph: &'a Graph,
    pub params: &'a ParamStore,
    pub config: &'a ModelConfig,
    pub topology: &'a EdgeTopology,
    pub rbf: RbfBank,
    rotation_t: Var,
    translation: Var,
}

impl<'a> LayerContext<'a> {
    pub fn new(
        graph: &'a Graph,
        params: &'a ParamStore,
        config: &'a ModelConfig,
        topology: &'a EdgeTopology,
    ) -> Self {
        Self {
            graph,
            params,
            config,
            topology,
            rbf: RbfBank::new(config.n_rbf, config.rbf_max),
            rotation_t: graph.constant(topology.rotation_t.clone()),
            translation: graph.constant(topology.translation.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerState {
    pub s: Var,
    pub e: Var,
    pub q: Var,
}

/// Layer outputs plus intermediates that tests and diagnostics inspect.
pub struct LayerOutput {
    pub state: LayerState,
    pub attention: Var,
    pub geometry: Var,
}

/// Runs one layer: edge geometry, node interaction, edge interaction, then
/// the configured atom update.
pub fn vfn_layer(cx: &LayerContext, prefix: &str, state: &LayerState) -> Result<LayerOutput, NumericsError> {
    let g = cx.graph;
    let p = |name: &str| g.param(cx.params, &format!("{prefix}.{name}"));
    let qi = g.gather_rows(&state.q, &cx.topology.centers)?;
    let qj = g.gather_rows(&state.q, &cx.topology.neighbors)?;
    let k = transform_atoms(g, &qj, &cx.rotation_t, &cx.translation)?;
    let h = vector_field(g, &qi, &k, &p("vf.wa")?, &p("vf.wb")?)?;
    let geometry = featurize(g, &h, &cx.rbf)?;

    let (s, attention) = node_interaction(cx, &format!("{prefix}.node"), &state.s, &geometry, &state.e)?;
    let e = edge_interaction(cx, &format!("{prefix}.edge"), &s, &geometry, &state.e)?;
    let q = match cx.config.atom_update_mode {
        AtomUpdateMode::Linear => update_atoms_linear(cx, &format!("{prefix}.atoms"), &s)?,
        AtomUpdateMode::Aggregate => {
            update_atoms_aggregate(cx, &format!("{prefix}.atoms"), &state.q, &k, &attention)?
        }
    };
    Ok(LayerOutput {
        state: LayerState { s, e, q },
        attention,
        geometry,
    })
}

/// Registers every parameter of one layer under `prefix`.
pub fn init_layer<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut R) {
    let (d_q, d_v, d_e) = (cfg.d_q, cfg.d_v, cfg.d_e);
    let d_g = cfg.d_g();
    let atom_std = (d_q as f64).powf(-0.5);
    for name in ["wa", "wb"] {
        store.insert(format!("{prefix}.vf.{name}"), Tensor::randn(&[d_q, d_q], atom_std, rng));
    }
    mlp::init_mlp(store, &format!("{prefix}.node.attn"), 2 * d_v + d_g + d_e, d_v, cfg.heads, rng);
    mlp::init_mlp(store, &format!("{prefix}.node.value"), d_v + d_g + d_e, d_v, d_v, rng);
    mlp::init_mlp(store, &format!("{prefix}.node.out"), d_v, d_v, d_v, rng);
    mlp::init_mlp(store, &format!("{prefix}.edge"), 2 * d_v + d_g + d_e, d_v, d_e, rng);
    let atoms = format!("{prefix}.atoms");
    match (cfg.atom_update_mode, cfg.vector_mlp) {
        (AtomUpdateMode::Linear, _) => {
            mlp::init_linear(store, &atoms, d_v, 3 * d_q, (d_v as f64).powf(-0.5), rng);
        }
        (AtomUpdateMode::Aggregate, VectorMlpKind::Vmlp) => init_v_mlp(store, &atoms, d_q, rng),
        (AtomUpdateMode::Aggregate, VectorMlpKind::Mlp) => {
            mlp::init_mlp(store, &atoms, 6 * d_q, d_v, 3 * d_q, rng);
        }
        (AtomUpdateMode::Aggregate, VectorMlpKind::None) => {}
    }
}

/// `{prefix}.wc`, `.wd`, `.we` (`[d_q, d_q]`) and unit-row `.gate` (`[d_q, 3]`).
pub fn init_v_mlp<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d_q: usize, rng: &mut R) {
    let std = (d_q as f64).powf(-0.5);
    for name in ["wc", "wd", "we"] {
        store.insert(format!("{prefix}.{name}"), Tensor::randn(&[d_q, d_q], std, rng));
    }
    let mut gate = Vec::with_capacity(3 * d_q);
    for _ in 0..d_q {
        let row: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        gate.extend(row.iter().map(|x| x / norm));
    }
    store.insert(format!("{prefix}.gate"), Tensor::new(vec![d_q, 3], gate).expect("d_q rows"));
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::alphabet::NUM_AMINO_ACIDS;
use crate::data::BackboneStructure;
use crate::layer::mlp::{init_linear, init_mlp, linear, mlp, LAYER_NORM_EPS};
use crate::layer::{init_layer, vfn_layer, LayerContext, LayerState};
use crate::numerics::{Graph, NumericsError, ParamStore, Tensor, Var};

use super::graph::{build_graph, ResidueGraph};
use super::metrics::{argmax_rows, SequencePrediction};
use super::{ModelConfig, ModelError};

/// Spread of the learned free virtual atoms around each CA at initialization (Å).
const FREE_ATOM_STD: f64 = 1.5;
/// Small head weights keep untrained predictions close to uniform.
const HEAD_STD: f64 = 0.01;

/// A configuration paired with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VfnModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

pub fn layer_prefix(l: usize) -> String {
    format!("layers.{l}")
}

impl VfnModel {
    /// Freshly initialized parameters, reproducible from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (d_q, d_v, d_e) = (config.d_q, config.d_v, config.d_e);
        params.insert("embed.node", Tensor::randn(&[1, d_v], 1.0, &mut rng));
        params.insert("embed.atoms", Tensor::randn(&[d_q - 4, 3], FREE_ATOM_STD, &mut rng));
        if config.use_edge_featurizer {
            let n_rbf = config.n_rbf;
            init_linear(&mut params, "embed.edge", n_rbf, d_e, (n_rbf as f64).powf(-0.5), &mut rng);
        }
        for l in 0..config.n_layers {
            init_layer(&mut params, &layer_prefix(l), &config, &mut rng);
            init_mlp(&mut params, &format!("gca.{l}"), d_v, d_v, d_v, &mut rng);
        }
        init_linear(&mut params, "head", d_v, NUM_AMINO_ACIDS, HEAD_STD, &mut rng);
        Ok(Self { config, params })
    }

    /// Adopts `params` after checking that names and shapes match what
    /// `config` builds.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let reference = Self::new(config.clone(), 0)?;
        let mut problems = Vec::new();
        for (name, tensor) in reference.params.iter() {
            match params.get(name) {
                Ok(found) if found.shape() == tensor.shape() => {}
                Ok(found) => problems.push(format!(
                    "  {name}: expected shape {:?}, found {:?}",
                    tensor.shape(),
                    found.shape()
                )),
                Err(_) => problems.push(format!("  {name}: missing (expected shape {:?})", tensor.shape())),
            }
        }
        for name in params.names() {
            if !reference.params.contains(name) {
                problems.push(format!("  {name}: not part of this config"));
            }
        }
        if !problems.is_empty() {
            return Err(ModelError::ParameterMismatch(problems.join("\n")));
        }
        Ok(Self { config, params })
    }

    pub fn graph(&self, structure: &BackboneStructure) -> Result<ResidueGraph, ModelError> {
        build_graph(structure, &self.config)
    }

    /// Logits `[n, 20]` for one residue graph.
    pub fn forward(&self, g: &Graph, graph: &ResidueGraph) -> Result<Var, NumericsError> {
        forward(g, &self.config, &self.params, graph)
    }

    /// One-shot prediction without recording a tape.
    pub fn predict(&self, structure: &BackboneStructure) -> Result<SequencePrediction, ModelError> {
        let graph = self.graph(structure)?;
        self.predict_graph(&graph)
    }

    pub fn predict_graph(&self, graph: &ResidueGraph) -> Result<SequencePrediction, ModelError> {
        let g = Graph::inference();
        let logits = self.forward(&g, graph)?.value().clone();
        Ok(SequencePrediction {
            predicted: argmax_rows(&logits),
            logits,
        })
    }
}

/// Logits `[n, 20]` for one residue graph under explicit parameters.
pub fn forward(
    g: &Graph,
    cfg: &ModelConfig,
    params: &ParamStore,
    graph: &ResidueGraph,
) -> Result<Var, NumericsError> {
    let n = graph.len();
    let cx = LayerContext::new(g, params, cfg, &graph.topology);

    let ones = |shape: &[usize]| g.constant(Tensor::full(shape, 1.0));
    let s = g.mul(&ones(&[n, 1]), &g.param(params, "embed.node")?)?;
    let free = g.reshape(&g.param(params, "embed.atoms")?, &[1, cfg.d_q - 4, 3])?;
    let free = g.mul(&ones(&[n, 1, 1]), &free)?;
    let q = g.concat(&[&g.constant(graph.backbone.clone()), &free], 1)?;
    let e = if cfg.use_edge_featurizer {
        linear(g, params, "embed.edge", &g.constant(graph.edge_distances.clone()))?
    } else {
        g.constant(Tensor::zeros(&[graph.topology.n_edges(), cfg.d_e]))
    };

    let mut state = LayerState { s, e, q };
    for l in 0..cfg.n_layers {
        let out = vfn_layer(&cx, &layer_prefix(l), &state)?;
        state = out.state;
        state.s = global_context_attention(g, params, &format!("gca.{l}"), &state.s, cfg)?;
    }
    let s = g.layer_norm(&state.s, LAYER_NORM_EPS)?;
    linear(g, params, "head", &s)
}

/// Gates every node by `sigmoid(MLP(mean node feature))`.
pub fn global_context_attention(
    g: &Graph,
    params: &ParamStore,
    prefix: &str,
    s: &Var,
    cfg: &ModelConfig,
) -> Result<Var, NumericsError> {
    let n = s.shape()[0];
    let context = g.scale(&g.sum_axis(s, 0, true)?, 1.0 / n as f64)?;
    let gate = g.sigmoid(&mlp(g, params, prefix, &context, cfg.activation)?)?;
    g.mul(s, &gate)
}

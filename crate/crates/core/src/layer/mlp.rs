//! Dense building blocks shared by the layer and the model.

use rand::Rng;

use crate::model::Activation;
use crate::numerics::{Graph, NumericsError, ParamStore, Tensor, Var};

/// Epsilon of every layer normalization in the network.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Registers `{prefix}.w` (`[din, dout]`, normal with the given std) and a
/// zero bias `{prefix}.b` (`[1, dout]`).
pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    din: usize,
    dout: usize,
    std: f64,
    rng: &mut R,
) {
    store.insert(format!("{prefix}.w"), Tensor::randn(&[din, dout], std, rng));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[1, dout]));
}

/// `x·W + b` over the last axis of a rank-2 input.
pub fn linear(g: &Graph, params: &ParamStore, prefix: &str, x: &Var) -> Result<Var, NumericsError> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    g.add(&g.matmul(x, &w)?, &b)
}

/// Two linear layers around an activation, with the input layer-normalized.
pub fn init_mlp<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    din: usize,
    hidden: usize,
    dout: usize,
    rng: &mut R,
) {
    init_linear(store, &format!("{prefix}.fc1"), din, hidden, (din as f64).powf(-0.5), rng);
    init_linear(store, &format!("{prefix}.fc2"), hidden, dout, (hidden as f64).powf(-0.5), rng);
}

pub fn mlp(
    g: &Graph,
    params: &ParamStore,
    prefix: &str,
    x: &Var,
    activation: Activation,
) -> Result<Var, NumericsError> {
    let x = g.layer_norm(x, LAYER_NORM_EPS)?;
    let h = linear(g, params, &format!("{prefix}.fc1"), &x)?;
    let h = activate(g, &h, activation)?;
    linear(g, params, &format!("{prefix}.fc2"), &h)
}

pub fn activate(g: &Graph, x: &Var, activation: Activation) -> Result<Var, NumericsError> {
    match activation {
        Activation::Gelu => g.gelu(x),
        Activation::Relu => g.relu(x),
    }
}

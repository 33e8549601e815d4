use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::ops::{self, AdjointSink, OpKind};
use super::{Gradients, NumericsError, ParamStore, Tensor};

/// A value produced on (or fed into) a [`Graph`].
///
/// Values are immutable once recorded. `Var`s that do not depend on any
/// tracked parameter carry no tape position and receive no adjoint.
#[derive(Clone)]
pub struct Var {
    id: Option<usize>,
    value: Rc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value)
            .finish()
    }
}

enum NodeKind {
    Param(String),
    Op(OpKind),
}

struct Node {
    kind: NodeKind,
    inputs: Vec<Var>,
    value: Rc<Tensor>,
}

/// Reverse-mode differentiation tape.
///
/// Operations are recorded in evaluation order, which is a topological order
/// of the computation. A graph built with [`Graph::inference`] records
/// nothing: parameters come back as constants and intermediates are freed
/// as soon as their `Var`s drop.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, Var>>,
    tracking: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            tracking: true,
        }
    }

    pub fn inference() -> Self {
        Self {
            tracking: false,
            ..Self::new()
        }
    }

    pub fn is_tracking(&self) -> bool {
        self.tracking
    }

    /// Number of recorded nodes, parameters included.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            id: None,
            value: Rc::new(value),
        }
    }

    /// Fetches a named parameter, registering it on first use. Repeated calls
    /// return the same leaf, so adjoints from every use accumulate into it.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var, NumericsError> {
        if let Some(var) = self.params.borrow().get(name) {
            return Ok(var.clone());
        }
        let value = Rc::new(store.get(name)?.clone());
        let id = self.tracking.then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                kind: NodeKind::Param(name.to_string()),
                inputs: Vec::new(),
                value: value.clone(),
            });
            nodes.len() - 1
        });
        let var = Var { id, value };
        self.params.borrow_mut().insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Evaluates `kind` and records it when any input is tracked.
    pub fn record(&self, kind: OpKind, inputs: &[&Var]) -> Result<Var, NumericsError> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| v.value()).collect();
        let value = ops::forward(&kind, &values)?;
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: kind.name() });
        }
        let value = Rc::new(value);
        let tracked = self.tracking && inputs.iter().any(|v| v.id.is_some());
        let id = tracked.then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                kind: NodeKind::Op(kind),
                inputs: inputs.iter().map(|v| (*v).clone()).collect(),
                value: value.clone(),
            });
            nodes.len() - 1
        });
        Ok(Var { id, value })
    }

    /// Computes the adjoint of every registered parameter with respect to
    /// the single-element `loss`.
    pub fn backward(&self, loss: &Var) -> Result<Gradients, NumericsError> {
        if loss.value.len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let nodes = self.nodes.borrow();
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if let Some(root) = loss.id {
            adjoints[root] = Some(vec![1.0]);
            for index in (0..=root).rev() {
                let Some(dout) = adjoints[index].take() else {
                    continue;
                };
                let node = &nodes[index];
                match &node.kind {
                    NodeKind::Param(_) => {
                        adjoints[index] = Some(dout);
                    }
                    NodeKind::Op(kind) => {
                        let values: Vec<&Tensor> = node.inputs.iter().map(|v| v.value()).collect();
                        let mut sink = TapeSink {
                            inputs: &node.inputs,
                            adjoints: &mut adjoints,
                        };
                        ops::backward(kind, &values, &node.value, &dout, &mut sink);
                    }
                }
            }
        }
        let mut grads = Gradients::new();
        for (index, node) in nodes.iter().enumerate() {
            if let NodeKind::Param(name) = &node.kind {
                let data = adjoints[index]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                grads.insert(
                    name.clone(),
                    Tensor::from_parts(node.value.shape().to_vec(), data),
                );
            }
        }
        Ok(grads)
    }
}

struct TapeSink<'a> {
    inputs: &'a [Var],
    adjoints: &'a mut [Option<Vec<f64>>],
}

impl AdjointSink for TapeSink<'_> {
    fn slot(&mut self, input: usize) -> Option<&mut [f64]> {
        let var = &self.inputs[input];
        let id = var.id?;
        let len = var.value.len();
        Some(
            self.adjoints[id]
                .get_or_insert_with(|| vec![0.0; len])
                .as_mut_slice(),
        )
    }
}

/// Convenience wrappers over [`Graph::record`].
impl Graph {
    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Matmul, &[a, b])
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        let neg = self.scale(b, -1.0)?;
        self.add(a, &neg)
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Multiply, &[a, b])
    }

    pub fn scale(&self, a: &Var, c: f64) -> Result<Var, NumericsError> {
        self.record(OpKind::Scale(c), &[a])
    }

    pub fn concat(&self, parts: &[&Var], axis: usize) -> Result<Var, NumericsError> {
        self.record(OpKind::Concat { axis }, parts)
    }

    pub fn slice(&self, a: &Var, axis: usize, start: usize, end: usize) -> Result<Var, NumericsError> {
        self.record(OpKind::Slice { axis, start, end }, &[a])
    }

    pub fn reshape(&self, a: &Var, shape: &[usize]) -> Result<Var, NumericsError> {
        self.record(OpKind::Reshape { shape: shape.to_vec() }, &[a])
    }

    pub fn sum_axis(&self, a: &Var, axis: usize, keepdim: bool) -> Result<Var, NumericsError> {
        self.record(OpKind::SumAxis { axis, keepdim }, &[a])
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&self, a: &Var) -> Result<Var, NumericsError> {
        let flat = self.reshape(a, &[a.value().len()])?;
        self.sum_axis(&flat, 0, false)
    }

    pub fn relu(&self, a: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Relu, &[a])
    }

    pub fn gelu(&self, a: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Gelu, &[a])
    }

    pub fn softmax(&self, a: &Var, axis: usize) -> Result<Var, NumericsError> {
        self.record(OpKind::Softmax { axis }, &[a])
    }

    pub fn layer_norm(&self, a: &Var, eps: f64) -> Result<Var, NumericsError> {
        self.record(OpKind::LayerNorm { eps }, &[a])
    }

    pub fn sqrt(&self, a: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Sqrt, &[a])
    }

    pub fn div(&self, a: &Var, b: &Var, eps: f64) -> Result<Var, NumericsError> {
        self.record(OpKind::Divide { eps }, &[a, b])
    }

    pub fn cross_entropy(&self, logits: &Var, targets: &[Option<usize>]) -> Result<Var, NumericsError> {
        self.record(
            OpKind::CrossEntropy {
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    pub fn gather_rows(&self, a: &Var, indices: &[usize]) -> Result<Var, NumericsError> {
        self.record(
            OpKind::GatherRows {
                indices: indices.to_vec(),
            },
            &[a],
        )
    }

    pub fn transpose(&self, a: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Transpose, &[a])
    }

    pub fn exp(&self, a: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Exp, &[a])
    }

    pub fn sigmoid(&self, a: &Var) -> Result<Var, NumericsError> {
        self.record(OpKind::Sigmoid, &[a])
    }

    pub fn rbf(&self, a: &Var, centers: &[f64], sigma: f64) -> Result<Var, NumericsError> {
        self.record(
            OpKind::Rbf {
                centers: centers.to_vec(),
                sigma,
            },
            &[a],
        )
    }
}

//! Dense `f64` tensors, a reverse-mode tape over a closed set of
//! operations, finite-difference checking, and AdamW.

mod gradcheck;
mod kernels;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    finite_difference_check, finite_difference_check_where, GradCheckReport, TensorGradError,
};
pub use ops::OpKind;
pub use optim::{adamw_step, AdamW, OptimizerState, Schedule};
pub use params::{Gradients, ParamStore};
pub use tape::{Graph, Var};
pub use kernels::log_sum_exp;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {reason} (input shape {shape:?})")]
    InvalidInput {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op} takes {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{len} values do not fill shape {shape:?}")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must hold a single element, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("function is not deterministic: evaluated {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    InvalidStep(f64),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shape_algebra() {
        let g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.constant(t(&[3, 1], &[1.0, 0.0, -1.0]));
        let c = g.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.value().data(), &[-2.0, -2.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let err = g.add(&a, &g.constant(Tensor::zeros(&[3, 2]))).unwrap_err();
        assert!(err.to_string().starts_with("add"));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let y = g.softmax(&x, 0).unwrap();
        for v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_cross_entropy_is_ln_20() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 20]));
        for label in [0, 7, 19] {
            let loss = g.cross_entropy(&x, &[Some(label)]).unwrap();
            assert!((loss.value().item().unwrap() - 20f64.ln()).abs() < 1e-12);
        }
        assert!(g.cross_entropy(&x, &[Some(20)]).is_err());
    }

    #[test]
    fn linear_gradient_is_input() {
        let mut store = ParamStore::new();
        store.insert("w", t(&[3], &[0.5, -1.0, 2.0]));
        let g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let x = g.constant(t(&[3], &[4.0, 5.0, 6.0]));
        let loss = g.sum_all(&g.mul(&w, &x).unwrap()).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("used", Tensor::scalar(2.0));
        store.insert("unused", t(&[2], &[1.0, 1.0]));
        let g = Graph::new();
        let used = g.param(&store, "used").unwrap();
        let _unused = g.param(&store, "unused").unwrap();
        let loss = g.mul(&used, &used).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get("used").unwrap().item(), Some(4.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[2]));
        let g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        assert!(matches!(
            g.backward(&w),
            Err(NumericsError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_probabilities_minus_one_hot() {
        let logits = [0.3, -1.2, 2.0, 0.0, 0.7];
        let label = 2;
        let mut store = ParamStore::new();
        store.insert("z", t(&[1, 5], &logits));
        let loss_of = |g: &Graph, p: &ParamStore| -> Result<Var, NumericsError> {
            let z = g.param(p, "z")?;
            g.cross_entropy(&z, &[Some(label)])
        };
        let g = Graph::new();
        let grads = g.backward(&loss_of(&g, &store).unwrap()).unwrap();
        let analytic = grads.get("z").unwrap().data().to_vec();

        // central differences, step 1e-5
        let h = 1e-5;
        for (i, expected) in analytic.iter().enumerate() {
            let mut plus = store.clone();
            plus.get_mut("z").unwrap().data_mut()[i] += h;
            let mut minus = store.clone();
            minus.get_mut("z").unwrap().data_mut()[i] -= h;
            let f = |p: &ParamStore| {
                let g = Graph::inference();
                loss_of(&g, p).unwrap().value().item().unwrap()
            };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((numeric - expected).abs() < 1e-8);
        }
        let max = logits.iter().copied().fold(f64::MIN, f64::max);
        let total: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        for (i, a) in analytic.iter().enumerate() {
            let p = (logits[i] - max).exp() / total;
            let one_hot = if i == label { 1.0 } else { 0.0 };
            assert!((a - (p - one_hot)).abs() < 1e-14);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum((w*x) + (w*x)) on one tape versus two independent copies
        let mut store = ParamStore::new();
        store.insert("w", t(&[2], &[1.5, -0.5]));
        let x = t(&[2], &[2.0, 3.0]);

        let g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let xv = g.constant(x.clone());
        let shared = g.mul(&w, &xv).unwrap();
        let loss = g.sum_all(&g.add(&shared, &shared).unwrap()).unwrap();
        let shared_grad = g.backward(&loss).unwrap();

        let g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let xv = g.constant(x);
        let first = g.mul(&w, &xv).unwrap();
        let second = g.mul(&w, &xv).unwrap();
        let loss = g.sum_all(&g.add(&first, &second).unwrap()).unwrap();
        let expanded_grad = g.backward(&loss).unwrap();

        assert_eq!(shared_grad, expanded_grad);
        assert_eq!(shared_grad.get("w").unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn guarded_divide_yields_zero_and_no_adjoint() {
        let mut store = ParamStore::new();
        store.insert("a", t(&[2], &[1.0, 2.0]));
        store.insert("b", t(&[2], &[0.0, 4.0]));
        let g = Graph::new();
        let a = g.param(&store, "a").unwrap();
        let b = g.param(&store, "b").unwrap();
        let q = g.div(&a, &b, 1e-8).unwrap();
        assert_eq!(q.value().data(), &[0.0, 0.5]);
        let grads = g.backward(&g.sum_all(&q).unwrap()).unwrap();
        assert_eq!(grads.get("a").unwrap().data(), &[0.0, 0.25]);
        assert_eq!(grads.get("b").unwrap().data(), &[0.0, -2.0 / 16.0]);
    }

    #[test]
    fn inference_graph_records_nothing() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(2.0));
        let g = Graph::inference();
        let w = g.param(&store, "w").unwrap();
        let y = g.mul(&w, &w).unwrap();
        assert!(!y.requires_grad());
        assert!(g.is_empty());
    }

    #[test]
    fn non_finite_results_are_errors() {
        let g = Graph::new();
        let x = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(&x), Err(NumericsError::NonFinite { op: "exp" })));
        let neg = g.constant(Tensor::scalar(-1.0));
        assert!(g.sqrt(&neg).is_err());
    }
}

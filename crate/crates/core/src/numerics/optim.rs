use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Gradients, NumericsError, ParamStore};

/// Learning-rate schedule over optimizer steps (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant { lr: f64 },
    /// Linear warmup from `peak / initial_div` to `peak` over the first
    /// `warmup_fraction` of `total_steps`, then cosine annealing down to
    /// `peak * final_fraction`.
    OneCycle {
        peak: f64,
        total_steps: u64,
        warmup_fraction: f64,
        initial_div: f64,
        final_fraction: f64,
    },
}

impl Schedule {
    pub fn one_cycle(peak: f64, total_steps: u64) -> Self {
        Schedule::OneCycle {
            peak,
            total_steps,
            warmup_fraction: 0.3,
            initial_div: 25.0,
            final_fraction: 1e-5,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::OneCycle {
                peak,
                total_steps,
                warmup_fraction,
                initial_div,
                final_fraction,
            } => {
                let total = total_steps.max(1) as f64;
                let warmup = (warmup_fraction * total).max(1.0);
                let t = step.max(1) as f64;
                let start = peak / initial_div;
                let end = peak * final_fraction;
                if t <= warmup {
                    start + (peak - start) * t / warmup
                } else {
                    let progress = ((t - warmup) / (total - warmup).max(1.0)).min(1.0);
                    end + 0.5 * (peak - end) * (1.0 + (PI * progress).cos())
                }
            }
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl AdamW {
    pub fn new(weight_decay: f64, schedule: Schedule) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            schedule,
        }
    }
}

/// Moment estimates and step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Applies one AdamW update to every parameter that has a gradient.
/// Returns the learning rate used. Nothing is modified when any gradient is
/// non-finite.
pub fn adamw_step(
    opt: &AdamW,
    state: &mut OptimizerState,
    params: &mut ParamStore,
    grads: &Gradients,
) -> Result<f64, NumericsError> {
    if let Some(name) = grads.first_non_finite() {
        return Err(NumericsError::NonFiniteGradient {
            name: name.to_string(),
        });
    }
    for (name, grad) in grads.iter() {
        let param = params.get(name)?;
        if param.shape() != grad.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adamw",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let lr = opt.schedule.lr_at(state.step);
    let t = state.step as i32;
    let bias1 = 1.0 - opt.beta1.powi(t);
    let bias2 = 1.0 - opt.beta2.powi(t);
    for (name, grad) in grads.iter() {
        let param = params.get_mut(name)?;
        let n = param.len();
        let m = state
            .first_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .second_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * (m_hat / (v_hat.sqrt() + opt.eps) + opt.weight_decay * *p);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};

    fn scalar_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(value));
        store
    }

    fn quadratic_grads(store: &ParamStore, target: f64) -> Gradients {
        let g = Graph::new();
        let w = g.param(store, "w").unwrap();
        let shift = g.constant(Tensor::scalar(-target));
        let d = g.add(&w, &shift).unwrap();
        let sq = g.mul(&d, &d).unwrap();
        g.backward(&sq).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut store = scalar_store(1.5);
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(0.0));
        let opt = AdamW::new(0.0, Schedule::Constant { lr: 1e-3 });
        let mut state = OptimizerState::new();
        for _ in 0..5 {
            adamw_step(&opt, &mut state, &mut store, &grads).unwrap();
        }
        assert_eq!(store.get("w").unwrap().item(), Some(1.5));
    }

    #[test]
    fn constant_gradient_strictly_decreases_parameter() {
        let mut store = scalar_store(0.0);
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(1.0));
        let opt = AdamW::new(0.1, Schedule::one_cycle(1e-3, 100));
        let mut state = OptimizerState::new();
        let mut last = 0.0;
        for _ in 0..100 {
            adamw_step(&opt, &mut state, &mut store, &grads).unwrap();
            let now = store.get("w").unwrap().item().unwrap();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut store = scalar_store(0.0);
        let opt = AdamW::new(0.0, Schedule::Constant { lr: 0.05 });
        let mut state = OptimizerState::new();
        for _ in 0..200 {
            let grads = quadratic_grads(&store, 2.0);
            adamw_step(&opt, &mut state, &mut store, &grads).unwrap();
        }
        let w = store.get("w").unwrap().item().unwrap();
        assert!((w - 2.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn nan_gradient_aborts_and_names_parameter() {
        let mut store = scalar_store(1.0);
        store.insert("b", Tensor::scalar(2.0));
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(1.0));
        grads.insert("b".into(), Tensor::scalar(f64::NAN));
        let opt = AdamW::new(0.1, Schedule::Constant { lr: 1e-3 });
        let mut state = OptimizerState::new();
        let err = adamw_step(&opt, &mut state, &mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("`b`"));
        assert_eq!(state.step, 0);
        assert_eq!(store.get("w").unwrap().item(), Some(1.0));
    }

    #[test]
    fn one_cycle_warms_up_then_anneals() {
        let s = Schedule::one_cycle(1e-3, 1000);
        assert!((s.lr_at(1) - (1e-3 / 25.0 + (1e-3 - 1e-3 / 25.0) / 300.0)).abs() < 1e-15);
        assert!((s.lr_at(300) - 1e-3).abs() < 1e-15);
        assert!(s.lr_at(299) < s.lr_at(300));
        assert!(s.lr_at(301) < s.lr_at(300));
        assert!((s.lr_at(1000) - 1e-8).abs() < 1e-15);
        assert!((s.lr_at(5000) - 1e-8).abs() < 1e-15);
        for step in 301..1000 {
            assert!(s.lr_at(step + 1) <= s.lr_at(step));
        }
    }
}

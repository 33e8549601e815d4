use super::{Graph, NumericsError, ParamStore, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / (|numeric| + 1e-8)` seen.
    pub max_rel_error: f64,
    /// Parameter name and flat element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// One entry per checked parameter tensor.
    pub tensors: Vec<TensorGradError>,
}

/// Agreement of one parameter tensor's gradient with its numeric estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGradError {
    pub name: String,
    /// `‖analytic - numeric‖ / (‖numeric‖ + 1e-8)` over the whole tensor.
    pub rel_error: f64,
    pub numeric_norm: f64,
    pub analytic_norm: f64,
    /// Rounding bound on `‖numeric‖`: `sqrt(len) · ε · max(|f|, 1) / eps`.
    /// Gradients below it cannot be told apart from zero by differencing.
    pub roundoff: f64,
}

impl TensorGradError {
    /// Both gradients vanish to within the differencing resolution.
    pub fn is_zero_within_roundoff(&self) -> bool {
        self.numeric_norm <= self.roundoff && self.analytic_norm <= self.roundoff
    }

    /// Relative agreement within `rtol`, or a gradient that is zero to
    /// within roundoff on both sides.
    pub fn passes(&self, rtol: f64) -> bool {
        self.rel_error < rtol || self.is_zero_within_roundoff()
    }
}

impl GradCheckReport {
    /// The parameter tensor with the largest relative gradient error.
    pub fn worst_tensor(&self) -> Option<&TensorGradError> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_tensor_rel_error(&self) -> f64 {
        self.worst_tensor().map_or(0.0, |t| t.rel_error)
    }

    /// The worst tensor among those whose gradient is resolvable above
    /// roundoff.
    pub fn worst_resolved_tensor(&self) -> Option<&TensorGradError> {
        self.tensors
            .iter()
            .filter(|t| !t.is_zero_within_roundoff())
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, rtol: f64) -> bool {
        self.tensors.iter().all(|t| t.passes(rtol))
    }
}

/// Checks every parameter entry of `params` for the scalar function `f`.
///
/// `f` builds its output on the graph it is handed; it is evaluated once on
/// a recording graph and twice per entry on inference graphs.
pub fn finite_difference_check<F, E>(
    params: &ParamStore,
    eps: f64,
    f: F,
) -> Result<GradCheckReport, E>
where
    F: Fn(&Graph, &ParamStore) -> Result<Var, E>,
    E: From<NumericsError>,
{
    finite_difference_check_where(params, eps, |_| true, f)
}

/// Like [`finite_difference_check`], restricted to parameters whose name
/// passes `select`.
pub fn finite_difference_check_where<F, E>(
    params: &ParamStore,
    eps: f64,
    select: impl Fn(&str) -> bool,
    f: F,
) -> Result<GradCheckReport, E>
where
    F: Fn(&Graph, &ParamStore) -> Result<Var, E>,
    E: From<NumericsError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::InvalidStep(eps).into());
    }
    let evaluate = |store: &ParamStore| -> Result<f64, E> {
        let g = Graph::inference();
        let out = f(&g, store)?;
        Ok(scalar_of(&out)?)
    };

    let first = evaluate(params)?;
    let second = evaluate(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::NonDeterministic { first, second }.into());
    }

    let g = Graph::new();
    let out = f(&g, params)?;
    let grads = g.backward(&out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        tensors: Vec::new(),
    };
    let mut probe = params.clone();
    let names: Vec<String> = params
        .names()
        .filter(|n| select(n))
        .map(str::to_string)
        .collect();
    for name in names {
        let len = params.get(&name)?.len();
        let (mut diff_sq, mut numeric_sq, mut analytic_sq) = (0.0, 0.0, 0.0);
        for index in 0..len {
            let original = params.get(&name)?.data()[index];
            probe.get_mut(&name)?.data_mut()[index] = original + eps;
            let plus = evaluate(&probe)?;
            probe.get_mut(&name)?.data_mut()[index] = original - eps;
            let minus = evaluate(&probe)?;
            probe.get_mut(&name)?.data_mut()[index] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(&name).map_or(0.0, |t| t.data()[index]);
            let rel = (analytic - numeric).abs() / (numeric.abs() + 1e-8);
            diff_sq += (analytic - numeric) * (analytic - numeric);
            numeric_sq += numeric * numeric;
            analytic_sq += analytic * analytic;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), index));
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
        report.tensors.push(TensorGradError {
            rel_error: diff_sq.sqrt() / (numeric_sq.sqrt() + 1e-8),
            numeric_norm: numeric_sq.sqrt(),
            analytic_norm: analytic_sq.sqrt(),
            roundoff: (len as f64).sqrt() * f64::EPSILON * first.abs().max(1.0) / eps,
            name,
        });
    }
    Ok(report)
}

fn scalar_of(v: &Var) -> Result<f64, NumericsError> {
    v.value().item().ok_or_else(|| NumericsError::NonScalarLoss {
        shape: v.shape().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(3.0));
        let report = finite_difference_check(&store, 1e-5, |g, p| {
            let w = g.param(p, "w")?;
            g.mul(&w, &w)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(report.max_tensor_rel_error() < 1e-6);
        assert_eq!(report.checked, 1);
        assert!((report.tensors[0].numeric_norm - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(3.0));
        let report = finite_difference_check(&store, 1e-5, |g, p| {
            let _ = g.param(p, "w")?;
            Ok::<_, NumericsError>(g.constant(Tensor::scalar(7.0)))
        })
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.numeric_at_worst, 0.0);
        assert_eq!(report.analytic_at_worst, 0.0);
        assert!(report.tensors[0].is_zero_within_roundoff());
        assert!(report.passes(1e-4));
    }

    #[test]
    fn wrong_gradient_fails_even_when_small() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1e-3));
        // d/dw of w^2 is 2e-3, far above roundoff; a doubled adjoint must fail
        let report = finite_difference_check(&store, 1e-5, |g, p| {
            let w = g.param(p, "w")?;
            let w2 = g.mul(&w, &w)?;
            let stopped = g.constant(w2.value().clone());
            g.add(&g.scale(&w2, 2.0)?, &g.scale(&stopped, -1.0)?)
        })
        .unwrap();
        assert!(!report.tensors[0].is_zero_within_roundoff());
        assert!(!report.passes(1e-4));
    }

    #[test]
    fn nondeterminism_is_detected() {
        use std::cell::Cell;
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let calls = Cell::new(0.0);
        let err = finite_difference_check(&store, 1e-5, |g, p| {
            calls.set(calls.get() + 1.0);
            let w = g.param(p, "w")?;
            let c = g.constant(Tensor::scalar(calls.get()));
            g.mul(&w, &c)
        })
        .unwrap_err();
        assert!(matches!(err, NumericsError::NonDeterministic { .. }));
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let store = ParamStore::new();
        let err = finite_difference_check(&store, 1e-2, |g, _| {
            Ok::<_, NumericsError>(g.constant(Tensor::scalar(0.0)))
        })
        .unwrap_err();
        assert!(matches!(err, NumericsError::InvalidStep(_)));
    }
}

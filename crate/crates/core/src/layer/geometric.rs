use crate::numerics::{Graph, NumericsError, Var};

/// Norms at or below this are treated as zero vectors: their direction is
/// emitted as (0, 0, 0) and carries no gradient.
pub const ZERO_VECTOR_EPS: f64 = 1e-8;

/// Gaussian bumps over distance with evenly spaced centers from 0 to `max`
/// and a shared width equal to the spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfBank {
    pub centers: Vec<f64>,
    pub sigma: f64,
}

impl RbfBank {
    pub fn new(count: usize, max: f64) -> Self {
        assert!(count >= 2, "an RBF bank needs at least two centers");
        let spacing = max / (count - 1) as f64;
        Self {
            centers: (0..count).map(|m| m as f64 * spacing).collect(),
            sigma: spacing,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn eval(&self, d: f64) -> Vec<f64> {
        let c = -0.5 / (self.sigma * self.sigma);
        self.centers.iter().map(|mu| (((d - mu) * (d - mu)) * c).exp()).collect()
    }

    /// Applies the bank elementwise along a new trailing axis.
    pub fn apply(&self, g: &Graph, d: &Var) -> Result<Var, NumericsError> {
        g.rbf(d, &self.centers, self.sigma)
    }
}

/// Re-expresses atoms `q` (`[.., d_q, 3]`, rows are points) in another frame
/// given the transposed relative rotation and the relative translation as a
/// row vector: `x ↦ x·Rᵀ + t`.
pub fn transform_atoms(
    g: &Graph,
    q: &Var,
    rotation_t: &Var,
    translation: &Var,
) -> Result<Var, NumericsError> {
    g.add(&g.matmul(q, rotation_t)?, translation)
}

/// `H = wa·Q_i + wb·K_j` over the atom axis.
pub fn vector_field(g: &Graph, qi: &Var, kj: &Var, wa: &Var, wb: &Var) -> Result<Var, NumericsError> {
    let d_q = qi.shape()[qi.shape().len().saturating_sub(2)];
    for (what, shape) in [("wa", wa.shape()), ("wb", wb.shape())] {
        if shape != [d_q, d_q] {
            return Err(NumericsError::ShapeMismatch {
                op: if what == "wa" { "vector-field wa" } else { "vector-field wb" },
                lhs: shape.to_vec(),
                rhs: qi.shape().to_vec(),
            });
        }
    }
    if qi.shape() != kj.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "vector-field",
            lhs: qi.shape().to_vec(),
            rhs: kj.shape().to_vec(),
        });
    }
    g.add(&g.matmul(wa, qi)?, &g.matmul(wb, kj)?)
}

/// Maps vectors `[.., d_q, 3]` to features `[.., d_q·(3 + n_rbf)]`: each
/// row's unit direction followed by the RBF encoding of its length.
pub fn featurize(g: &Graph, h: &Var, rbf: &RbfBank) -> Result<Var, NumericsError> {
    let rank = h.shape().len();
    if rank < 2 || h.shape()[rank - 1] != 3 {
        return Err(NumericsError::InvalidInput {
            op: "featurize",
            shape: h.shape().to_vec(),
            reason: "expected rows of 3-vectors".into(),
        });
    }
    let last = rank - 1;
    let norm = g.sqrt(&g.sum_axis(&g.mul(h, h)?, last, true)?)?;
    let direction = g.div(h, &norm, ZERO_VECTOR_EPS)?;
    let length = g.reshape(&norm, &h.shape()[..last])?;
    let encoded = rbf.apply(g, &length)?;
    let blocks = g.concat(&[&direction, &encoded], last)?;
    let mut shape = h.shape()[..rank - 2].to_vec();
    shape.push(h.shape()[rank - 2] * (3 + rbf.len()));
    g.reshape(&blocks, &shape)
}

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomUpdateMode {
    /// Virtual atoms regressed from node features by a linear layer.
    #[default]
    Linear,
    /// Attention-weighted neighbor atoms mixed in by the vector MLP.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

/// How aggregate mode combines a residue's atoms with the aggregated ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorMlpKind {
    /// Cosine-gated vector perceptron.
    #[default]
    Vmlp,
    /// Ordinary MLP over flattened local coordinates.
    Mlp,
    /// Take the aggregated atoms as they are.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_q: usize,
    pub d_v: usize,
    pub d_e: usize,
    pub knn_k: usize,
    pub n_rbf: usize,
    /// Upper end of the RBF centers (Å); the lowest center is 0.
    pub rbf_max: f64,
    pub heads: usize,
    pub atom_update_mode: AtomUpdateMode,
    pub vector_mlp: VectorMlpKind,
    pub use_edge_featurizer: bool,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 15,
            d_q: 32,
            d_v: 128,
            d_e: 128,
            knn_k: 30,
            n_rbf: 16,
            rbf_max: 50.0,
            heads: 4,
            atom_update_mode: AtomUpdateMode::Linear,
            vector_mlp: VectorMlpKind::Vmlp,
            use_edge_featurizer: false,
            activation: Activation::Gelu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("n_layers", self.n_layers),
            ("d_v", self.d_v),
            ("d_e", self.d_e),
            ("knn_k", self.knn_k),
            ("heads", self.heads),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.d_q < 5 {
            return Err(format!(
                "d_q = {} leaves no free virtual atom next to N/CA/C/O; need at least 5",
                self.d_q
            ));
        }
        if !self.d_v.is_multiple_of(self.heads) {
            return Err(format!("d_v = {} is not divisible by heads = {}", self.d_v, self.heads));
        }
        if self.n_rbf < 2 {
            return Err("n_rbf must be at least 2".into());
        }
        if !(self.rbf_max.is_finite() && self.rbf_max > 0.0) {
            return Err("rbf_max must be a positive distance".into());
        }
        Ok(())
    }

    /// Width of the per-edge geometric feature vector.
    pub fn d_g(&self) -> usize {
        self.d_q * (3 + self.n_rbf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.d_g(), 32 * 19);
    }

    #[test]
    fn partial_json_fills_defaults_and_rejects_typos() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"n_layers": 5, "atom_update_mode": "aggregate"}"#).unwrap();
        assert_eq!(cfg.n_layers, 5);
        assert_eq!(cfg.d_q, 32);
        assert_eq!(cfg.atom_update_mode, AtomUpdateMode::Aggregate);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"n_layer": 5}"#).is_err());
    }

    #[test]
    fn rejects_bad_widths() {
        let cfg = ModelConfig { d_q: 4, ..Default::default() };
        assert!(cfg.validate().unwrap_err().contains("d_q"));
        let cfg = ModelConfig { d_v: 130, ..Default::default() };
        assert!(cfg.validate().unwrap_err().contains("heads"));
    }
}

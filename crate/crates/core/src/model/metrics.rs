use crate::data::alphabet::NUM_AMINO_ACIDS;
use crate::numerics::{log_sum_exp, Tensor};

use super::ModelError;

/// Per-residue logits and their argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePrediction {
    /// `[n, 20]`.
    pub logits: Tensor,
    pub predicted: Vec<u8>,
}

impl SequencePrediction {
    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        (0..self.predicted.len())
            .map(|i| {
                let row = self.logits.row(i);
                let lse = log_sum_exp(row);
                row.iter().map(|x| (x - lse).exp()).collect()
            })
            .collect()
    }
}

/// First index of the largest entry in each row.
pub fn argmax_rows(logits: &Tensor) -> Vec<u8> {
    let rows = logits.shape()[0];
    (0..rows)
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    /// Summed cross-entropy over scored residues (nats).
    pub total_nll: f64,
    pub scored: usize,
    pub correct: usize,
}

impl Metrics {
    /// Scores logits against targets; `None` targets are skipped.
    pub fn score(pred: &SequencePrediction, truth: &[Option<usize>]) -> Result<Self, ModelError> {
        if truth.len() != pred.predicted.len() {
            return Err(ModelError::Config(format!(
                "{} targets for {} predicted residues",
                truth.len(),
                pred.predicted.len()
            )));
        }
        let mut m = Self::default();
        for (i, target) in truth.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= NUM_AMINO_ACIDS {
                return Err(ModelError::Config(format!("label {t} outside [0, 20)")));
            }
            let row = pred.logits.row(i);
            m.total_nll += log_sum_exp(row) - row[t];
            m.scored += 1;
            m.correct += usize::from(pred.predicted[i] as usize == t);
        }
        Ok(m)
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.total_nll += other.total_nll;
        self.scored += other.scored;
        self.correct += other.correct;
    }

    /// Mean cross-entropy per scored residue.
    pub fn loss(&self) -> f64 {
        self.total_nll / self.scored.max(1) as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.loss().exp()
    }

    /// Percentage of scored residues whose argmax matches.
    pub fn recovery(&self) -> f64 {
        100.0 * self.correct as f64 / self.scored.max(1) as f64
    }
}

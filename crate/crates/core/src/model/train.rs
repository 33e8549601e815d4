use std::io::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BackboneStructure;
use crate::numerics::{adamw_step, AdamW, Gradients, Graph, NumericsError, OptimizerState, Schedule};

use super::checkpoint::Checkpoint;
use super::graph::ResidueGraph;
use super::metrics::Metrics;
use super::{ModelError, VfnModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_steps: u64,
    pub peak_lr: f64,
    pub weight_decay: f64,
    /// Fraction of `max_steps` spent warming up the one-cycle schedule.
    pub warmup_fraction: f64,
    pub seed: u64,
    pub eval_interval: u64,
    /// Stop once evaluation recovery reaches this percentage.
    pub stop_at_recovery: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_steps: 1000,
            peak_lr: 1e-3,
            weight_decay: 0.1,
            warmup_fraction: 0.3,
            seed: 0,
            eval_interval: 100,
            stop_at_recovery: None,
        }
    }
}

impl TrainOptions {
    pub fn optimizer(&self) -> AdamW {
        let Schedule::OneCycle {
            initial_div,
            final_fraction,
            ..
        } = Schedule::one_cycle(self.peak_lr, self.max_steps)
        else {
            unreachable!("one_cycle builds a one-cycle schedule")
        };
        AdamW::new(
            self.weight_decay,
            Schedule::OneCycle {
                peak: self.peak_lr,
                total_steps: self.max_steps,
                warmup_fraction: self.warmup_fraction,
                initial_div,
                final_fraction,
            },
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if self.eval_interval == 0 {
            return Err("eval_interval must be positive".into());
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err("peak_lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err("warmup_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub loss: f64,
    pub perplexity: f64,
    pub recovery: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutput {
    pub records: Vec<MetricRecord>,
    /// Mean training cross-entropy of every optimizer step's batch.
    pub batch_losses: Vec<f64>,
    pub final_step: u64,
}

/// Builds graphs for every usable structure, skipping (with a warning) those
/// that are too short or have nothing to score.
pub fn prepare(model: &VfnModel, structures: &[BackboneStructure]) -> Result<Vec<ResidueGraph>, ModelError> {
    let mut out = Vec::with_capacity(structures.len());
    for s in structures {
        match model.graph(s) {
            Ok(g) if g.targets.iter().any(Option::is_some) => out.push(g),
            Ok(_) => log::warn!("skipping {}: no residue with a standard amino acid", s.name),
            Err(ModelError::TooFewResidues { name, found }) => {
                log::warn!("skipping {name}: only {found} complete residue(s)")
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Indices of the proteins in the batch for optimizer step `step` (0-based).
/// Each epoch visits the set in a seeded random order, so a resumed run sees
/// the same batches as an uninterrupted one.
pub fn batch_indices(step: u64, n: usize, batch_size: usize, seed: u64) -> Vec<usize> {
    let bs = batch_size.min(n);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..bs)
        .map(|b| {
            let position = step * bs as u64 + b as u64;
            let epoch = position / n as u64;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut order: Vec<usize> = (0..n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                order.shuffle(&mut rng);
                cached = Some((epoch, order));
            }
            cached.as_ref().expect("filled above").1[(position % n as u64) as usize]
        })
        .collect()
}

/// Cross-entropy and its gradient on one graph.
pub fn loss_and_gradients(model: &VfnModel, graph: &ResidueGraph) -> Result<(f64, Gradients), NumericsError> {
    let g = Graph::new();
    let logits = model.forward(&g, graph)?;
    let loss = g.cross_entropy(&logits, &graph.targets)?;
    let value = loss.value().data()[0];
    Ok((value, g.backward(&loss)?))
}

pub fn evaluate(model: &VfnModel, graphs: &[ResidueGraph]) -> Result<Vec<Metrics>, ModelError> {
    graphs
        .iter()
        .map(|graph| Metrics::score(&model.predict_graph(graph)?, &graph.targets))
        .collect()
}

fn total(per_protein: &[Metrics]) -> Metrics {
    let mut m = Metrics::default();
    per_protein.iter().for_each(|p| m.merge(p));
    m
}

/// Runs optimizer steps from `optimizer.step` up to `opts.max_steps`,
/// summing gradients over each batch. `on_eval` sees every metric record,
/// computed on `validation` when it is non-empty and on the training set
/// otherwise.
pub fn train<F>(
    model: &mut VfnModel,
    optimizer: &mut OptimizerState,
    train_set: &[BackboneStructure],
    validation: &[BackboneStructure],
    opts: &TrainOptions,
    mut on_eval: F,
) -> Result<TrainOutput, ModelError>
where
    F: FnMut(&MetricRecord, &VfnModel, &OptimizerState) -> Result<(), ModelError>,
{
    opts.validate().map_err(ModelError::Config)?;
    let graphs = prepare(model, train_set)?;
    if graphs.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let held_out = prepare(model, validation)?;
    let eval_graphs = if held_out.is_empty() { &graphs } else { &held_out };
    let adamw = opts.optimizer();
    let mut out = TrainOutput::default();

    while optimizer.step < opts.max_steps {
        let step = optimizer.step;
        let mut grads = Gradients::new();
        let mut batch_loss = 0.0;
        let batch = batch_indices(step, graphs.len(), opts.batch_size, opts.seed);
        for &i in &batch {
            let graph = &graphs[i];
            let non_finite = |detail: String| ModelError::NonFiniteLoss {
                protein: graph.name.clone(),
                step: step + 1,
                detail,
            };
            let (loss, g) = loss_and_gradients(model, graph).map_err(|e| match e {
                NumericsError::NonFinite { .. } => non_finite(e.to_string()),
                other => ModelError::Numerics(other),
            })?;
            if !loss.is_finite() {
                return Err(non_finite(format!("loss {loss}")));
            }
            if let Some(name) = g.first_non_finite() {
                return Err(non_finite(format!("gradient of `{name}`")));
            }
            batch_loss += loss;
            grads.accumulate(&g)?;
        }
        adamw_step(&adamw, optimizer, &mut model.params, &grads)?;
        out.batch_losses.push(batch_loss / batch.len() as f64);

        let done = optimizer.step;
        if done.is_multiple_of(opts.eval_interval) || done == opts.max_steps {
            let m = total(&evaluate(model, eval_graphs)?);
            let record = MetricRecord {
                step: done,
                loss: m.loss(),
                perplexity: m.perplexity(),
                recovery: m.recovery(),
            };
            log::info!(
                "step {done}: loss {:.4} perplexity {:.3} recovery {:.2}%",
                record.loss,
                record.perplexity,
                record.recovery
            );
            out.records.push(record);
            on_eval(&record, model, optimizer)?;
            if opts.stop_at_recovery.is_some_and(|target| record.recovery >= target) {
                break;
            }
        }
    }
    out.final_step = optimizer.step;
    Ok(out)
}

/// Appends metric records to a JSONL log and rewrites a checkpoint at every
/// evaluation.
pub struct TrainSinks {
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// Configuration echoed into each checkpoint header.
    pub config_echo: serde_json::Value,
}

impl TrainSinks {
    pub fn record(&self, record: &MetricRecord, model: &VfnModel, optimizer: &OptimizerState) -> Result<(), ModelError> {
        if let Some(path) = &self.log_path {
            let io = |source| ModelError::Io {
                path: path.clone(),
                source,
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io)?;
            }
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            let line = serde_json::to_string(record).expect("records serialize");
            writeln!(file, "{line}").map_err(io)?;
        }
        if let Some(path) = &self.checkpoint_path {
            Checkpoint {
                config: self.config_echo.clone(),
                step: optimizer.step,
                params: model.params.clone(),
                optimizer: Some(optimizer.clone()),
            }
            .save(path)?;
        }
        Ok(())
    }
}

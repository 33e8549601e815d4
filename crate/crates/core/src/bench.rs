//! Forward-pass timing over layer counts and structure sizes.

use std::time::Instant;

use crate::data::synthetic::random_backbone;
use crate::model::{ModelConfig, ModelError, VfnModel};

pub const CSV_HEADER: &str = "layers,residues,median_ms,p95_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub layers: usize,
    pub residues: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Nearest-rank percentile of an ascending slice, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "median of an empty sample");
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Times `reps` tape-free forward passes for every `(layers, residues)`
/// pair, after one untimed warm-up. Graph construction is excluded.
pub fn bench_forward(
    base: &ModelConfig,
    layer_counts: &[usize],
    sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>, ModelError> {
    let mut cases = Vec::new();
    for &layers in layer_counts {
        let config = ModelConfig {
            n_layers: layers,
            ..base.clone()
        };
        let model = VfnModel::new(config, seed)?;
        for &residues in sizes {
            let graph = model.graph(&random_backbone(residues, seed))?;
            model.predict_graph(&graph)?;
            cases.push((layers, residues, model.clone(), graph, Vec::with_capacity(reps)));
        }
    }
    // Repetitions are interleaved across cases so that drift in machine load
    // lands on every case alike.
    for _ in 0..reps.max(1) {
        for (_, _, model, graph, times) in &mut cases {
            let start = Instant::now();
            model.predict_graph(graph)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(cases
        .into_iter()
        .map(|(layers, residues, _, _, mut times)| {
            times.sort_by(f64::total_cmp);
            BenchRow {
                layers,
                residues,
                median_ms: median(&times),
                p95_ms: percentile(&times, 0.95),
            }
        })
        .collect())
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.3},{:.3}\n", r.layers, r.residues, r.median_ms, r.p95_ms));
    }
    out
}

/// Median time of the `numerator` layer count over the `denominator` one at
/// the given size.
pub fn layer_ratio(rows: &[BenchRow], residues: usize, numerator: usize, denominator: usize) -> Option<f64> {
    let find = |layers: usize| {
        rows.iter()
            .find(|r| r.layers == layers && r.residues == residues)
            .map(|r| r.median_ms)
    };
    Some(find(numerator)? / find(denominator)?)
}

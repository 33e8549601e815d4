//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vfn::bench::{bench_forward, layer_ratio};
use vfn::data::synthetic::{random_backbone, random_dataset};
use vfn::data::{parse_jsonl, to_jsonl};
use vfn::geometry::random_rigid_with;
use vfn::model::{evaluate, prepare, train, AtomUpdateMode, Metrics, ModelConfig, TrainOptions, VfnModel};
use vfn::numerics::OptimizerState;
use vfn::verify::{self, invariance_deviation, Kernels, Level};

const SEED: u64 = 2024;

const INVARIANCE_STRUCTURES: usize = 50;
const INVARIANCE_MOTIONS: usize = 20;
const INVARIANCE_TOL: f64 = 1e-6;
const INVARIANCE_BUDGET_S: f64 = 60.0;

const ORACLE_CASES: usize = 1000;

const GRADIENT_BUDGET_S: f64 = 180.0;

const MEMORIZE_PROTEINS: usize = 5;
const MEMORIZE_MAX_STEPS: u64 = 2000;
const UNTRAINED_PERPLEXITY: f64 = 20.0;
const UNTRAINED_PERPLEXITY_TOL: f64 = 0.5;

const ABLATION_LAYERS: [usize; 5] = [5, 8, 10, 12, 15];
const ABLATION_DQ: [usize; 3] = [16, 32, 64];

const VMLP_DQ: usize = 32;

const BENCH_RESIDUES: usize = 100;
const BENCH_REPS: usize = 20;
const BENCH_RATIO: (f64, f64) = (2.1, 3.9);

const ROUND_TRIP_CASES: u64 = 200;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn error(e: impl std::fmt::Display) -> Outcome {
    outcome(false, format!("error: {e}"))
}

/// Full depth at reduced width; the invariance argument does not depend on
/// width, and default widths are too slow for the time budget on one core.
fn invariance_config() -> ModelConfig {
    ModelConfig {
        d_q: 8,
        d_v: 16,
        d_e: 16,
        ..Default::default()
    }
}

fn se3_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for mode in [AtomUpdateMode::Linear, AtomUpdateMode::Aggregate] {
        let cfg = ModelConfig {
            atom_update_mode: mode,
            ..invariance_config()
        };
        let model = match VfnModel::new(cfg, rng.gen()) {
            Ok(m) => m,
            Err(e) => return error(e),
        };
        for _ in 0..INVARIANCE_STRUCTURES / 2 {
            let s = random_backbone(rng.gen_range(10..=60), rng.gen());
            let motions: Vec<_> = (0..INVARIANCE_MOTIONS).map(|_| random_rigid_with(&mut rng)).collect();
            match invariance_deviation(&model, &s, &motions) {
                Ok(d) => worst = worst.max(d),
                Err(e) => return error(e),
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    outcome(
        worst < INVARIANCE_TOL && seconds < INVARIANCE_BUDGET_S,
        format!(
            "{INVARIANCE_STRUCTURES} structures x {INVARIANCE_MOTIONS} motions, max relative logit deviation {worst:.2e} (< {INVARIANCE_TOL:e}), {seconds:.1} s (< {INVARIANCE_BUDGET_S} s)"
        ),
    )
}

fn operator_oracles() -> Outcome {
    let k = Kernels::default();
    let checks = [
        verify::check_vector_field(&k, ORACLE_CASES, SEED),
        verify::check_v_mlp(&k, ORACLE_CASES, SEED),
        verify::check_node_interaction(SEED),
    ];
    let detail: Vec<String> = checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
    outcome(checks.iter().all(|c| c.passed), detail.join("; "))
}

fn selector_semantics() -> Outcome {
    let c = verify::check_selectors(&Kernels::default(), SEED);
    outcome(c.passed, c.detail)
}

fn gradient_integrity() -> Outcome {
    let c = verify::check_gradients(SEED);
    outcome(
        c.passed && c.seconds < GRADIENT_BUDGET_S,
        format!("{} ({:.1} s, < {GRADIENT_BUDGET_S} s)", c.detail, c.seconds),
    )
}

fn total(metrics: &[Metrics]) -> Metrics {
    let mut m = Metrics::default();
    for x in metrics {
        m.merge(x);
    }
    m
}

fn learning_capacity() -> Outcome {
    let cfg = ModelConfig {
        n_layers: 2,
        ..Default::default()
    };
    let mut model = match VfnModel::new(cfg, SEED) {
        Ok(m) => m,
        Err(e) => return error(e),
    };
    let data = random_dataset(MEMORIZE_PROTEINS, 16..=24, SEED);
    let before = match prepare(&model, &data).and_then(|g| evaluate(&model, &g)) {
        Ok(m) => total(&m).perplexity(),
        Err(e) => return error(e),
    };
    let opts = TrainOptions {
        max_steps: MEMORIZE_MAX_STEPS,
        eval_interval: 10,
        seed: SEED,
        stop_at_recovery: Some(100.0),
        ..Default::default()
    };
    let out = match train(&mut model, &mut OptimizerState::new(), &data, &[], &opts, |_, _, _| Ok(())) {
        Ok(o) => o,
        Err(e) => return error(e),
    };
    let recovery = out.records.last().map_or(0.0, |r| r.recovery);
    let uniform_ok = (before - UNTRAINED_PERPLEXITY).abs() <= UNTRAINED_PERPLEXITY_TOL;
    outcome(
        uniform_ok && recovery == 100.0,
        format!(
            "untrained perplexity {before:.3} (20 +/- {UNTRAINED_PERPLEXITY_TOL}); training recovery {recovery:.1}% after {} steps (limit {MEMORIZE_MAX_STEPS})",
            out.final_step
        ),
    )
}

fn ablation_machinery() -> Outcome {
    let mut failures = Vec::new();
    let mut count = 0;
    for n_layers in ABLATION_LAYERS {
        for d_q in ABLATION_DQ {
            count += 1;
            let cfg = ModelConfig {
                n_layers,
                d_q,
                ..Default::default()
            };
            if let Err(e) = VfnModel::new(cfg.clone(), SEED) {
                failures.push(format!("layers {n_layers}, d_q {d_q}: {e}"));
                continue;
            }
            let report = verify::run(Level::Fast, &cfg, &Kernels::default(), SEED);
            for c in report.failures() {
                failures.push(format!("layers {n_layers}, d_q {d_q}: {}", c.name));
            }
        }
    }
    if failures.is_empty() {
        outcome(true, format!("{count} configs (layers {ABLATION_LAYERS:?} x d_q {ABLATION_DQ:?}) pass the fast verify level"))
    } else {
        outcome(false, failures.join("; "))
    }
}

fn vmlp_accounting() -> Outcome {
    let cfg = ModelConfig {
        d_q: VMLP_DQ,
        atom_update_mode: AtomUpdateMode::Aggregate,
        ..Default::default()
    };
    let model = match VfnModel::new(cfg, SEED) {
        Ok(m) => m,
        Err(e) => return error(e),
    };
    let counted = model.params.num_scalars_with_prefix("layers.0.atoms.");
    let expected = 3 * VMLP_DQ * VMLP_DQ + 3 * VMLP_DQ;
    outcome(
        counted == expected,
        format!("{counted} parameters per layer at d_q {VMLP_DQ} (3*d_q^2 + 3*d_q = {expected}; the published table lists 4.2K)"),
    )
}

fn throughput_shape() -> Outcome {
    let rows = match bench_forward(&ModelConfig::default(), &[5, 15], &[BENCH_RESIDUES], BENCH_REPS, SEED) {
        Ok(r) => r,
        Err(e) => return error(e),
    };
    let Some(ratio) = layer_ratio(&rows, BENCH_RESIDUES, 15, 5) else {
        return outcome(false, "missing bench rows");
    };
    let times: Vec<String> = rows.iter().map(|r| format!("{} layers {:.1} ms", r.layers, r.median_ms)).collect();
    outcome(
        (BENCH_RATIO.0..=BENCH_RATIO.1).contains(&ratio),
        format!(
            "median {} at n={BENCH_RESIDUES} over {BENCH_REPS} reps; ratio {ratio:.2} (in [{}, {}])",
            times.join(", "),
            BENCH_RATIO.0,
            BENCH_RATIO.1
        ),
    )
}

fn ingestion() -> Outcome {
    let mut failures: Vec<String> = common::FIXTURES
        .iter()
        .filter_map(|name| common::check(name).err().map(|e| format!("{name}: {e}")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..ROUND_TRIP_CASES {
        let mut s = random_backbone(rng.gen_range(2..=60), rng.gen());
        for r in &mut s.residues {
            if rng.gen_bool(0.1) {
                r.o = None;
                r.flags.missing_o = true;
            }
        }
        match parse_jsonl(&to_jsonl(std::slice::from_ref(&s))) {
            Ok(back) if back == [s.clone()] => {}
            Ok(_) => failures.push(format!("{}: JSONL round trip changed the structure", s.name)),
            Err(e) => failures.push(format!("{}: {e}", s.name)),
        }
    }
    if failures.is_empty() {
        outcome(
            true,
            format!(
                "{} fixtures parse as expected; {ROUND_TRIP_CASES} JSONL round trips are lossless",
                common::FIXTURES.len()
            ),
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("SE(3) invariance suite", se3_invariance),
        ("operator oracles", operator_oracles),
        ("selector semantics", selector_semantics),
        ("gradient integrity", gradient_integrity),
        ("learning capacity", learning_capacity),
        ("ablation machinery", ablation_machinery),
        ("V-MLP parameter accounting", vmlp_accounting),
        ("throughput shape", throughput_shape),
        ("ingestion", ingestion),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status} {name}: {} [{:.1} s]", o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Self-checks of the layer operators and the assembled model against
//! independent references, runnable from the command line.

pub mod oracles;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synthetic::random_backbone;
use crate::geometry::{random_rigid_with, RigidTransform};
use crate::layer::{self, EdgeTopology, LayerContext, RbfBank};
use crate::model::{self, AtomUpdateMode, ModelConfig, VfnModel};
use crate::numerics::{finite_difference_check, Graph, NumericsError, ParamStore, Tensor, Var};

pub type VectorFieldKernel = fn(&Graph, &Var, &Var, &Var, &Var) -> Result<Var, NumericsError>;
pub type VMlpKernel = fn(&Graph, &Var, &Var, &Var, &Var, &Var, &Var) -> Result<Var, NumericsError>;

/// The operator implementations under test. Swapping one out lets a test
/// confirm that the matching check notices.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub vector_field: VectorFieldKernel,
    pub v_mlp: VMlpKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            vector_field: layer::vector_field,
            v_mlp: layer::v_mlp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Operator oracles and invariance on small graphs.
    Fast,
    /// Adds finite-difference gradients of a tiny model and more oracle cases.
    Full,
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(format!("unknown level `{other}` (expected fast or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {} ({:.2} s)", self.name, self.detail, self.seconds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Runs every check of `level`; invariance uses `config`.
pub fn run(level: Level, config: &ModelConfig, kernels: &Kernels, seed: u64) -> Report {
    let cases = match level {
        Level::Fast => 200,
        Level::Full => 1000,
    };
    let mut checks = vec![
        check_vector_field(kernels, cases, seed),
        check_selectors(kernels, seed),
        check_v_mlp(kernels, cases, seed),
        check_featurize(seed),
        check_node_interaction(seed),
        check_edge_interaction(seed),
        check_aggregation(seed),
        check_invariance(config, 3, 3, seed),
    ];
    if level == Level::Full {
        checks.push(check_gradients(seed));
    }
    Report { checks }
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String), NumericsError>) -> Check {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
}

fn slice_edge(t: &Tensor, b: usize) -> Tensor {
    let rows = t.shape()[1];
    let cols = t.shape()[2];
    let per = rows * cols;
    Tensor::new(vec![rows, cols], t.data()[b * per..(b + 1) * per].to_vec()).expect("slice shape")
}

/// Random inputs, sometimes batched over edges, against the double loop.
pub fn check_vector_field(kernels: &Kernels, cases: usize, seed: u64) -> Check {
    timed("vector_field oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x01);
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let d = rng.gen_range(1..=8);
            let batch = rng.gen_range(1..=3);
            let qi = Tensor::randn(&[batch, d, 3], 3.0, &mut rng);
            let kj = Tensor::randn(&[batch, d, 3], 3.0, &mut rng);
            let wa = Tensor::randn(&[d, d], 1.0, &mut rng);
            let wb = Tensor::randn(&[d, d], 1.0, &mut rng);
            let g = Graph::inference();
            let (a, b) = if batch == 1 {
                (g.constant(qi.clone().reshaped(&[d, 3])?), g.constant(kj.clone().reshaped(&[d, 3])?))
            } else {
                (g.constant(qi.clone()), g.constant(kj.clone()))
            };
            let h = (kernels.vector_field)(&g, &a, &b, &g.constant(wa.clone()), &g.constant(wb.clone()))?;
            let h = h.value().clone().reshaped(&[batch, d, 3])?;
            for e in 0..batch {
                let expected = oracles::vector_field(&slice_edge(&qi, e), &slice_edge(&kj, e), &wa, &wb);
                worst = worst.max(slice_edge(&h, e).max_abs_diff(&expected));
            }
        }
        Ok((worst <= 1e-12, format!("max |Δ| {worst:.2e} over {cases} cases (tolerance 1e-12)")))
    })
}

/// One-hot `wa` rows against negated one-hot `wb` rows pick out displacements
/// between individual atoms, exactly.
pub fn check_selectors(kernels: &Kernels, seed: u64) -> Check {
    timed("vector_field selectors", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x02);
        let mut mismatches = 0;
        let mut compared = 0;
        for _ in 0..50 {
            let d = rng.gen_range(2..=10);
            let qi = Tensor::randn(&[d, 3], 5.0, &mut rng);
            let kj = Tensor::randn(&[d, 3], 5.0, &mut rng);
            let picks: Vec<(usize, usize)> = (0..d).map(|_| (rng.gen_range(0..d), rng.gen_range(0..d))).collect();
            let mut wa = Tensor::zeros(&[d, d]);
            let mut wb = Tensor::zeros(&[d, d]);
            for (k, &(l, m)) in picks.iter().enumerate() {
                wa.data_mut()[k * d + l] = 1.0;
                wb.data_mut()[k * d + m] = -1.0;
            }
            let g = Graph::inference();
            let h = (kernels.vector_field)(
                &g,
                &g.constant(qi.clone()),
                &g.constant(kj.clone()),
                &g.constant(wa),
                &g.constant(wb),
            )?;
            for (k, &(l, m)) in picks.iter().enumerate() {
                for x in 0..3 {
                    compared += 1;
                    if h.value().at(&[k, x]) != qi.at(&[l, x]) - kj.at(&[m, x]) {
                        mismatches += 1;
                    }
                }
            }
        }
        Ok((mismatches == 0, format!("{mismatches} of {compared} components differ from the atom displacement")))
    })
}

/// Random instances, including zero-length mixed vectors, against the
/// step-by-step transcription.
pub fn check_v_mlp(kernels: &Kernels, cases: usize, seed: u64) -> Check {
    timed("v_mlp oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x03);
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let d = rng.gen_range(1..=8);
            let q = Tensor::randn(&[d, 3], 3.0, &mut rng);
            let qo = Tensor::randn(&[d, 3], 3.0, &mut rng);
            let mut wc = Tensor::randn(&[d, d], 1.0, &mut rng);
            let mut wd = Tensor::randn(&[d, d], 1.0, &mut rng);
            let we = Tensor::randn(&[d, d], 1.0, &mut rng);
            let mut gate = Tensor::randn(&[d, 3], 1.0, &mut rng);
            if rng.gen_bool(0.1) {
                let k = rng.gen_range(0..d);
                wc.data_mut()[k * d..(k + 1) * d].fill(0.0);
                wd.data_mut()[k * d..(k + 1) * d].fill(0.0);
            }
            if rng.gen_bool(0.1) {
                let k = rng.gen_range(0..d);
                gate.data_mut()[k * 3..k * 3 + 3].fill(0.0);
            }
            let expected = oracles::v_mlp(&q, &qo, &wc, &wd, &we, &gate);
            let g = Graph::inference();
            let c = |t: &Tensor| g.constant(t.clone());
            let out = (kernels.v_mlp)(&g, &c(&q), &c(&qo), &c(&wc), &c(&wd), &c(&we), &c(&gate))?;
            worst = worst.max(out.value().max_abs_diff(&expected));
        }
        Ok((worst <= 1e-12, format!("max |Δ| {worst:.2e} over {cases} cases (tolerance 1e-12)")))
    })
}

pub fn check_featurize(seed: u64) -> Check {
    timed("featurize oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x04);
        let bank = RbfBank::new(16, 50.0);
        let mut worst: f64 = 0.0;
        let mut unit_error: f64 = 0.0;
        for case in 0..50 {
            let mut h = Tensor::randn(&[6, 3], 10.0, &mut rng);
            if case % 5 == 0 {
                h.data_mut()[..3].fill(0.0);
            }
            let g = Graph::inference();
            let f = layer::featurize(&g, &g.constant(h.clone()), &bank)?;
            let expected = oracles::featurize(&h, &bank.centers, bank.sigma);
            worst = worst.max(max_abs(f.value().data().iter().zip(&expected).map(|(a, b)| a - b)));
            for (k, block) in f.value().data().chunks(19).enumerate() {
                let n = block[..3].iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(case % 5 == 0 && k == 0) {
                    unit_error = unit_error.max((n - 1.0).abs());
                }
            }
        }
        let passed = worst <= 1e-12 && unit_error <= 1e-6;
        Ok((passed, format!("max |Δ| {worst:.2e}, direction norm error {unit_error:.2e}")))
    })
}

struct Fixture {
    cfg: ModelConfig,
    params: ParamStore,
    frames: Vec<RigidTransform>,
    neighbors: Vec<Vec<usize>>,
    topology: EdgeTopology,
    s: Tensor,
    e: Tensor,
    features: Tensor,
    q: Tensor,
}

/// A 3-node complete graph with random features and layer parameters.
fn fixture(seed: u64, width: usize) -> Result<Fixture, NumericsError> {
    let cfg = ModelConfig {
        n_layers: 1,
        d_q: 5,
        d_v: width,
        d_e: width,
        n_rbf: 4,
        heads: 2,
        atom_update_mode: AtomUpdateMode::Aggregate,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    layer::init_layer(&mut params, "l", &cfg, &mut rng);
    let frames: Vec<RigidTransform> = (0..3).map(|_| random_rigid_with(&mut rng)).collect();
    let neighbors = vec![vec![0, 1, 2], vec![1, 0, 2], vec![2, 0, 1]];
    let topology = EdgeTopology::new(&frames, &neighbors)?;
    Ok(Fixture {
        s: Tensor::randn(&[3, width], 1.0, &mut rng),
        e: Tensor::randn(&[9, width], 1.0, &mut rng),
        features: Tensor::randn(&[9, cfg.d_g()], 1.0, &mut rng),
        q: Tensor::randn(&[3, 5, 3], 2.0, &mut rng),
        cfg,
        params,
        frames,
        neighbors,
        topology,
    })
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

pub fn check_node_interaction(seed: u64) -> Check {
    timed("node_interaction dense reference", || {
        let fx = fixture(seed ^ 0x05, 8)?;
        let g = Graph::inference();
        let cx = LayerContext::new(&g, &fx.params, &fx.cfg, &fx.topology);
        let (s, attention) = layer::node_interaction(
            &cx,
            "l.node",
            &g.constant(fx.s.clone()),
            &g.constant(fx.features.clone()),
            &g.constant(fx.e.clone()),
        )?;
        let dense = oracles::node_interaction(
            &fx.params,
            "l.node",
            fx.cfg.activation,
            fx.cfg.heads,
            &fx.neighbors,
            &rows(&fx.s),
            &rows(&fx.features),
            &rows(&fx.e),
        )?;
        let ds = max_abs(s.value().data().iter().zip(dense.s.iter().flatten()).map(|(a, b)| a - b));
        let da = max_abs(
            attention
                .value()
                .data()
                .iter()
                .zip(dense.attention.iter().flatten().flatten())
                .map(|(a, b)| a - b),
        );
        let mut sum_error: f64 = 0.0;
        for node in &dense.attention {
            for h in 0..fx.cfg.heads {
                sum_error = sum_error.max((node.iter().map(|t| t[h]).sum::<f64>() - 1.0).abs());
            }
        }
        let a = attention.value();
        for i in 0..3 {
            for h in 0..fx.cfg.heads {
                let total: f64 = (0..3).map(|t| a.at(&[i, t, h])).sum();
                sum_error = sum_error.max((total - 1.0).abs());
            }
        }
        let passed = ds <= 1e-10 && da <= 1e-10 && sum_error <= 1e-9;
        Ok((
            passed,
            format!("features |Δ| {ds:.2e}, attention |Δ| {da:.2e}, row-sum error {sum_error:.2e}"),
        ))
    })
}

pub fn check_edge_interaction(seed: u64) -> Check {
    timed("edge_interaction dense reference", || {
        let fx = fixture(seed ^ 0x06, 6)?;
        let g = Graph::inference();
        let cx = LayerContext::new(&g, &fx.params, &fx.cfg, &fx.topology);
        let e = layer::edge_interaction(
            &cx,
            "l.edge",
            &g.constant(fx.s.clone()),
            &g.constant(fx.features.clone()),
            &g.constant(fx.e.clone()),
        )?;
        let dense = oracles::edge_interaction(
            &fx.params,
            "l.edge",
            fx.cfg.activation,
            &fx.neighbors,
            &rows(&fx.s),
            &rows(&fx.features),
            &rows(&fx.e),
        )?;
        let worst = max_abs(e.value().data().iter().zip(dense.iter().flatten()).map(|(a, b)| a - b));
        Ok((worst <= 1e-10, format!("max |Δ| {worst:.2e} (tolerance 1e-10)")))
    })
}

pub fn check_aggregation(seed: u64) -> Check {
    timed("atom aggregation reference", || {
        let fx = fixture(seed ^ 0x07, 8)?;
        let g = Graph::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x17);
        let logits = Tensor::randn(&[3, 3, 2], 2.0, &mut rng);
        let attention = g.softmax(&g.constant(logits), 1)?;
        let q = g.constant(fx.q.clone());
        let qj = g.gather_rows(&q, &fx.topology.neighbors)?;
        let k = layer::transform_atoms(
            &g,
            &qj,
            &g.constant(fx.topology.rotation_t.clone()),
            &g.constant(fx.topology.translation.clone()),
        )?;
        let pooled = layer::aggregate_atoms(&g, &k, &attention, 3, 5)?;
        let a = attention.value();
        let dense_attention: Vec<Vec<Vec<f64>>> =
            (0..3).map(|i| (0..3).map(|t| (0..2).map(|h| a.at(&[i, t, h])).collect()).collect()).collect();
        let atoms: Vec<Tensor> = (0..3).map(|i| slice_edge(&fx.q, i)).collect();
        let expected = oracles::aggregate_atoms(&fx.frames, &fx.neighbors, &atoms, &dense_attention);
        let worst = max_abs(
            pooled
                .value()
                .data()
                .iter()
                .zip(expected.iter().flat_map(|t| t.data().iter()))
                .map(|(a, b)| a - b),
        );
        Ok((worst <= 1e-10, format!("max |Δ| {worst:.2e} (tolerance 1e-10)")))
    })
}

/// Largest logit change over several global rigid motions, relative to the
/// largest logit of the unmoved structure.
pub fn invariance_deviation(
    model: &VfnModel,
    structure: &crate::data::BackboneStructure,
    motions: &[RigidTransform],
) -> Result<f64, model::ModelError> {
    let a = model.predict(structure)?.logits;
    let scale = max_abs(a.data().iter().copied()).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for motion in motions {
        let b = model.predict(&structure.transformed(motion))?.logits;
        worst = worst.max(a.max_abs_diff(&b) / scale);
    }
    Ok(worst)
}

/// End-to-end logits under random rigid motions of small random chains.
pub fn check_invariance(config: &ModelConfig, structures: usize, motions: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x08);
    let result = (|| -> Result<f64, model::ModelError> {
        let model = VfnModel::new(config.clone(), rng.gen())?;
        let mut worst: f64 = 0.0;
        for _ in 0..structures {
            let s = random_backbone(rng.gen_range(6..=12), rng.gen());
            let moves: Vec<_> = (0..motions).map(|_| random_rigid_with(&mut rng)).collect();
            worst = worst.max(invariance_deviation(&model, &s, &moves)?);
        }
        Ok(worst)
    })();
    let (passed, detail) = match result {
        Ok(worst) => (
            worst < 1e-6,
            format!("max relative logit deviation {worst:.2e} over {structures}×{motions} motions (tolerance 1e-6)"),
        ),
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name: "SE(3) invariance",
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Tiny two-layer models used for gradient checks, one per atom update mode.
pub fn gradient_check_configs() -> Vec<ModelConfig> {
    let base = ModelConfig {
        n_layers: 2,
        d_q: 5,
        d_v: 8,
        d_e: 8,
        n_rbf: 4,
        heads: 2,
        ..Default::default()
    };
    vec![
        ModelConfig {
            use_edge_featurizer: true,
            ..base.clone()
        },
        ModelConfig {
            atom_update_mode: AtomUpdateMode::Aggregate,
            ..base
        },
    ]
}

/// Relative gradient error of summed cross-entropy on a 4-residue chain.
pub fn gradient_error(config: &ModelConfig, seed: u64) -> Result<crate::numerics::GradCheckReport, model::ModelError> {
    let model = VfnModel::new(config.clone(), seed)?;
    let graph = model.graph(&random_backbone(4, seed ^ 0x09))?;
    let scored = graph.targets.iter().filter(|t| t.is_some()).count() as f64;
    finite_difference_check(&model.params, 1e-5, |g, params| {
        let logits = model::forward(g, config, params, &graph)?;
        let mean = g.cross_entropy(&logits, &graph.targets)?;
        Ok::<_, model::ModelError>(g.scale(&mean, scored)?)
    })
}

pub fn check_gradients(seed: u64) -> Check {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut passed = true;
    for cfg in gradient_check_configs() {
        match gradient_error(&cfg, seed) {
            Ok(r) => {
                passed &= r.passes(1e-4);
                let worst = r.worst_resolved_tensor();
                let zero: Vec<&str> = r
                    .tensors
                    .iter()
                    .filter(|t| t.is_zero_within_roundoff())
                    .map(|t| t.name.as_str())
                    .collect();
                let (name, index) = r.worst.clone().unwrap_or_default();
                details.push(format!(
                    "{:?}: max relative error {:.2e} over {} tensors (worst {}); {} with zero gradient within roundoff{}; largest single-entry error {:.2e} at {name}[{index}] (analytic {:.3e}, numeric {:.3e})",
                    cfg.atom_update_mode,
                    worst.map_or(0.0, |t| t.rel_error),
                    r.tensors.len() - zero.len(),
                    worst.map_or("none", |t| t.name.as_str()),
                    zero.len(),
                    if zero.is_empty() { String::new() } else { format!(" ({})", zero.join(", ")) },
                    r.max_rel_error,
                    r.analytic_at_worst,
                    r.numeric_at_worst
                ));
            }
            Err(e) => {
                passed = false;
                details.push(format!("{:?}: error: {e}", cfg.atom_update_mode));
            }
        }
    }
    Check {
        name: "finite-difference gradients",
        passed,
        detail: details.join("; "),
        seconds: start.elapsed().as_secs_f64(),
    }
}

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfn::geometry::{compose, random_rigid, random_rigid_with, RigidTransform};
use vfn::layer::{init_layer, vector_field, vfn_layer, EdgeTopology, LayerContext, LayerState};
use vfn::model::{AtomUpdateMode, ModelConfig, VectorMlpKind};
use vfn::numerics::{Graph, ParamStore, Tensor};
use vfn::verify::oracles;

fn config(mode: AtomUpdateMode, vector_mlp: VectorMlpKind) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        d_q: 6,
        d_v: 8,
        d_e: 6,
        n_rbf: 4,
        heads: 2,
        atom_update_mode: mode,
        vector_mlp,
        ..Default::default()
    }
}

fn mode() -> impl Strategy<Value = (AtomUpdateMode, VectorMlpKind)> {
    prop_oneof![
        Just((AtomUpdateMode::Linear, VectorMlpKind::Vmlp)),
        Just((AtomUpdateMode::Aggregate, VectorMlpKind::Vmlp)),
        Just((AtomUpdateMode::Aggregate, VectorMlpKind::Mlp)),
        Just((AtomUpdateMode::Aggregate, VectorMlpKind::None)),
    ]
}

/// Self first, then every other node.
fn complete(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| std::iter::once(i).chain((0..n).filter(|&j| j != i)).collect()).collect()
}

struct Case {
    cfg: ModelConfig,
    params: ParamStore,
    frames: Vec<RigidTransform>,
    s: Tensor,
    e: Tensor,
    q: Tensor,
}

fn case(cfg: ModelConfig, n: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    init_layer(&mut params, "l", &cfg, &mut rng);
    let frames = (0..n)
        .map(|_| {
            let mut t = random_rigid_with(&mut rng);
            t.translation /= 5.0;
            t
        })
        .collect();
    Case {
        s: Tensor::randn(&[n, cfg.d_v], 1.0, &mut rng),
        e: Tensor::randn(&[n * n, cfg.d_e], 1.0, &mut rng),
        q: Tensor::randn(&[n, cfg.d_q, 3], 2.0, &mut rng),
        cfg,
        params,
        frames,
    }
}

fn run(c: &Case, frames: &[RigidTransform]) -> [Tensor; 4] {
    let topology = EdgeTopology::new(frames, &complete(frames.len())).unwrap();
    let g = Graph::inference();
    let cx = LayerContext::new(&g, &c.params, &c.cfg, &topology);
    let state = LayerState {
        s: g.constant(c.s.clone()),
        e: g.constant(c.e.clone()),
        q: g.constant(c.q.clone()),
    };
    let out = vfn_layer(&cx, "l", &state).unwrap();
    [
        out.state.s.value().clone(),
        out.state.e.value().clone(),
        out.state.q.value().clone(),
        out.attention.value().clone(),
    ]
}

fn rel_dev(a: &Tensor, b: &Tensor) -> f64 {
    let scale = a.data().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.max_abs_diff(b) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn layer_outputs_ignore_global_motion(n in 1usize..7, (m, v) in mode(), seed in any::<u64>(), g in any::<u64>()) {
        let c = case(config(m, v), n, seed);
        let g = random_rigid(g);
        let moved: Vec<RigidTransform> = c.frames.iter().map(|t| compose(&g, t)).collect();
        let before = run(&c, &c.frames);
        let after = run(&c, &moved);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!(rel_dev(a, b) < 1e-6, "deviation {:.3e}", rel_dev(a, b));
        }
    }

    #[test]
    fn attention_rows_are_distributions(n in 1usize..7, (m, v) in mode(), seed in any::<u64>()) {
        let c = case(config(m, v), n, seed);
        let attention = &run(&c, &c.frames)[3];
        let (slots, heads) = (attention.shape()[1], attention.shape()[2]);
        for i in 0..n {
            for h in 0..heads {
                let row: Vec<f64> = (0..slots).map(|t| attention.at(&[i, t, h])).collect();
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn vector_field_matches_the_double_loop(d in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qi = Tensor::randn(&[d, 3], 3.0, &mut rng);
        let kj = Tensor::randn(&[d, 3], 3.0, &mut rng);
        let wa = Tensor::randn(&[d, d], 1.0, &mut rng);
        let wb = Tensor::randn(&[d, d], 1.0, &mut rng);
        let g = Graph::inference();
        let c = |t: &Tensor| g.constant(t.clone());
        let h = vector_field(&g, &c(&qi), &c(&kj), &c(&wa), &c(&wb)).unwrap();
        let expected = oracles::vector_field(&qi, &kj, &wa, &wb);
        prop_assert!(h.value().max_abs_diff(&expected) <= 1e-12);
    }
}

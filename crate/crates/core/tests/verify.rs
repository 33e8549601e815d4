use vfn::layer;
use vfn::model::{AtomUpdateMode, ModelConfig};
use vfn::numerics::{Graph, NumericsError, Var};
use vfn::verify::{self, check_gradients, Kernels, Level};

fn small() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_q: 8,
        d_v: 32,
        d_e: 32,
        ..Default::default()
    }
}

#[test]
fn fast_level_passes_on_a_correct_build() {
    for mode in [AtomUpdateMode::Linear, AtomUpdateMode::Aggregate] {
        let cfg = ModelConfig { atom_update_mode: mode, ..small() };
        let report = verify::run(Level::Fast, &cfg, &Kernels::default(), 1);
        assert!(report.passed(), "{report}");
    }
}

fn transposed_wb(g: &Graph, qi: &Var, kj: &Var, wa: &Var, wb: &Var) -> Result<Var, NumericsError> {
    let wb = g.transpose(wb)?;
    layer::vector_field(g, qi, kj, wa, &wb)
}

#[test]
fn transposed_wb_is_caught_by_name() {
    let kernels = Kernels {
        vector_field: transposed_wb,
        ..Kernels::default()
    };
    let report = verify::run(Level::Fast, &small(), &kernels, 2);
    let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
    assert!(failed.contains(&"vector_field oracle"), "{report}");
    assert!(!failed.contains(&"v_mlp oracle"));
}

#[test]
fn gradients_match_finite_differences() {
    let check = check_gradients(3);
    println!("{check}");
    assert!(check.passed, "{check}");
}

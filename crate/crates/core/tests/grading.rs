use eit_core::forward::{ForwardConfig, ForwardModel};
use eit_core::model::AnomalyParams;
use eit_core::solver::{SolverMethod, SolverOptions};

fn relative_gap(graded: bool) -> f64 {
    let config = ForwardConfig {
        electrode_grading: graded,
        solver: SolverOptions {
            method: SolverMethod::Direct,
            ..SolverOptions::default()
        },
        ..ForwardConfig::default()
    };
    let p = AnomalyParams::new(0.3, 0.2, -0.1, 1.4, 0.7);
    let fine = ForwardModel::build(0.05, &config).unwrap().simulate(&p).unwrap();
    let coarse = ForwardModel::build(0.06, &config).unwrap().simulate(&p).unwrap();
    let diff: f64 = fine.iter().zip(&coarse).map(|(a, b)| (a - b).powi(2)).sum();
    (diff / fine.iter().map(|a| a * a).sum::<f64>()).sqrt()
}

#[test]
fn grading_narrows_the_gap_between_data_and_inversion_meshes() {
    let plain = relative_gap(false);
    let graded = relative_gap(true);
    assert!(graded < plain / 5.0, "{plain:e} -> {graded:e}");
}

#[test]
fn direct_and_cg_backends_agree_on_a_graded_mesh() {
    let base = ForwardConfig {
        electrode_grading: true,
        ..ForwardConfig::default()
    };
    let direct = ForwardConfig {
        solver: SolverOptions {
            method: SolverMethod::Direct,
            ..SolverOptions::default()
        },
        ..base.clone()
    };
    let p = AnomalyParams::new(0.25, -0.3, 0.4, 1.2, 0.8);
    let a = ForwardModel::build(0.1, &base).unwrap().simulate(&p).unwrap();
    let b = ForwardModel::build(0.1, &direct).unwrap().simulate(&p).unwrap();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-8 * scale);
    }
}

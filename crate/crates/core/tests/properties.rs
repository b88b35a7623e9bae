use proptest::prelude::*;

use stokes_homog::cell::{solve_cell_problems, SolveOptions};
use stokes_homog::config::ExperimentConfig;
use stokes_homog::effective::compute_effective;
use stokes_homog::grid::Grid;
use stokes_homog::tensor::{CoefficientField, Tensor4};

/// A constant tensor `c·I + small perturbation`, elliptic for `c ≥ 1`.
fn elliptic_tensor() -> impl Strategy<Value = Tensor4> {
    (1.0f64..4.0, prop::collection::vec(-0.2f64..0.2, 16)).prop_map(|(c, noise)| {
        let mut t = Tensor4::scalar(2, c);
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let k = ((i * 2 + j) * 2 + a) * 2 + b;
                        t.set(i, j, a, b, t.get(i, j, a, b) + noise[k]);
                    }
                }
            }
        }
        t
    })
}

fn sweep_config(eps: Vec<f64>, n: usize) -> ExperimentConfig {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/two_scale.json")).unwrap();
    let mut cfg = ExperimentConfig::from_json(&text).unwrap();
    cfg.eps = eps;
    cfg.grid.boxes = vec![n];
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adjoint_is_an_involution(t in elliptic_tensor()) {
        let back = t.adjoint().adjoint();
        prop_assert_eq!(back.max_abs_diff(&t), 0.0);
        let a = t.adjoint();
        for i in 0..2 { for j in 0..2 { for al in 0..2 { for be in 0..2 {
            prop_assert_eq!(a.get(i, j, al, be), t.get(j, i, be, al));
        }}}}
    }

    #[test]
    fn ijab_layout_round_trips(t in elliptic_tensor()) {
        let again = Tensor4::from_ijab(2, &t.to_ijab()).unwrap();
        prop_assert_eq!(again.max_abs_diff(&t), 0.0);
    }

    #[test]
    fn constant_coefficients_need_no_correction(t in elliptic_tensor()) {
        let field = CoefficientField::constant(&t).unwrap();
        let set = solve_cell_problems(&field, Grid::periodic(2, 8).unwrap(), &SolveOptions::default()).unwrap();
        for chi in &set.chi {
            prop_assert!(chi.values.iter().all(|v| v.abs() <= 1e-12));
        }
        let eff = compute_effective(&field, &set).unwrap();
        prop_assert!(eff.tensor.max_abs_diff(&t) <= 1e-12);
    }

    #[test]
    fn dyadic_eps_are_accepted(levels in prop::collection::btree_set(2u32..7, 1..4)) {
        // descending powers of two divide the 256 grid into at least 4 cells per period
        let eps: Vec<f64> = levels.iter().map(|&k| 0.5f64.powi(k as i32)).collect();
        let cfg = sweep_config(eps, 256);
        prop_assert!(cfg.validate(None).is_empty(), "{:?}", cfg.validate(None));
    }

    #[test]
    fn non_multiples_of_h_are_rejected(den in 3u32..40) {
        prop_assume!(!den.is_power_of_two());
        let cfg = sweep_config(vec![0.25, 1.0 / den as f64], 256);
        let diags = cfg.validate(None);
        prop_assert!(diags.iter().any(|d| d.path == "eps[1]" && d.message.contains("divisibility")), "{:?}", diags);
    }

    #[test]
    fn config_json_round_trips(seed in any::<u64>(), levels in prop::collection::btree_set(2u32..6, 1..4)) {
        let mut cfg = sweep_config(levels.iter().map(|&k| 0.5f64.powi(k as i32)).collect(), 128);
        cfg.seed = seed;
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}

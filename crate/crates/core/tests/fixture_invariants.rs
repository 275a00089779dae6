//! Invariants exercised on the bundled synthetic fixtures: default-config
//! convergence for the scalar parameters of the fast models, initialization
//! behavior, and permutation invariance of the reference interpolation.

use mortdef_core::data::{load_reference_csv, AgeYearGrid, ReferenceTable};
use mortdef_core::mcmc::{initialize_chain, posterior_summary, run_mcmc, McmcConfig};
use mortdef_core::models::{ModelId, ModelSpec};
use mortdef_core::reference_prep::{fit_interpolation_hyperparams, interpolate_reference_gp};
use mortdef_core::seed::seeded_rng;
use mortdef_core::synthetic::{bundled_fund1, ind_like_surface};

#[test]
fn scalar_rhat_below_1_05_on_bundled_fixture() {
    let (data, reference) = bundled_fund1().unwrap();
    let train = data.restrict_years(2013, 2018).unwrap();
    for (id, seed) in [(ModelId::Fd1, 1u64), (ModelId::AdAr, 2), (ModelId::TdAr, 3)] {
        let spec =
            ModelSpec::new(id, train.grid().clone(), Some("BRA".into()), None).unwrap();
        let config = McmcConfig {
            seed,
            ..Default::default()
        };
        let draws = run_mcmc(&spec, &train, Some(&reference), &config).unwrap();
        for (name, diag) in &draws.diagnostics {
            if name.starts_with("theta[") {
                continue; // the gate is on the scalar parameters
            }
            let rhat = diag.rhat.unwrap_or(f64::INFINITY);
            assert!(
                rhat <= 1.05,
                "{id} {name}: split R-hat {rhat} above 1.05"
            );
        }
    }
}

#[test]
fn adgp_initialization_is_finite_on_fixture() {
    let (data, reference) = bundled_fund1().unwrap();
    let train = data.restrict_years(2013, 2018).unwrap();
    let spec =
        ModelSpec::new(ModelId::AdGp, train.grid().clone(), Some("BRA".into()), None).unwrap();
    for seed in 0..20u64 {
        let mut rng = seeded_rng(seed);
        let params = initialize_chain(&spec, &train, Some(&reference), &mut rng).unwrap();
        params.validate_for(&spec).unwrap();
    }
}

#[test]
fn interpolation_invariant_to_input_row_order() {
    // the loader canonicalizes rows into grid order, so any permutation of
    // the same file interpolates identically
    let dir = tempfile::tempdir().unwrap();
    let grid =
        AgeYearGrid::with_sparse_years((60..=75).collect(), vec![2010, 2015, 2021]).unwrap();
    let table: ReferenceTable = ind_like_surface().table(&grid, "IND").unwrap();
    let mut rows: Vec<String> = grid
        .cells()
        .map(|(a, y)| format!("{a},{y},{}", table.rate_at(a, y).unwrap()))
        .collect();

    let forward = dir.path().join("forward.csv");
    std::fs::write(&forward, format!("age,year,mx\n{}\n", rows.join("\n"))).unwrap();
    rows.reverse();
    rows.swap(3, 17);
    let permuted = dir.path().join("permuted.csv");
    std::fs::write(&permuted, format!("age,year,mx\n{}\n", rows.join("\n"))).unwrap();

    let target: Vec<i32> = (2013..=2019).collect();
    let a = load_reference_csv(&forward, "IND").unwrap();
    let b = load_reference_csv(&permuted, "IND").unwrap();
    let (out_a, _, _) = interpolate_reference_gp(&a, &target, 5).unwrap();
    let (out_b, _, _) = interpolate_reference_gp(&b, &target, 5).unwrap();
    for (age, year) in out_a.grid().cells() {
        let va = out_a.rate_at(age, year).unwrap();
        let vb = out_b.rate_at(age, year).unwrap();
        assert!(
            (va - vb).abs() <= 1e-6 * va.abs(),
            "({age}, {year}): {va} vs {vb}"
        );
    }
}

#[test]
fn interpolation_mle_succeeds_on_noisy_table() {
    // a table the linear mean cannot explain: the optimizer must still find
    // hyperparameters whose marginal likelihood beats every restart start
    // (violations are a hard error inside the fitter)
    let grid =
        AgeYearGrid::with_sparse_years((60..=80).collect(), vec![2010, 2015, 2021]).unwrap();
    let rates = nalgebra::DMatrix::from_fn(grid.n_ages(), grid.n_years(), |i, j| {
        let wiggle = 0.15 * ((i as f64 * 0.9).sin() + (j as f64 * 1.7).cos());
        (-4.8 + 0.09 * i as f64 - 0.01 * j as f64 + wiggle).exp()
    });
    let table = ReferenceTable::new(grid, rates, "IND").unwrap();
    let (params, _mean, ll) = fit_interpolation_hyperparams(&table, 11).unwrap();
    assert!(ll.is_finite());
    assert!(params.process_variance > 0.0);
    assert!(params.noise_variance >= mortdef_core::reference_prep::NOISE_FLOOR);
}

#[test]
fn unknown_parameter_selector_errors() {
    let (data, reference) = bundled_fund1().unwrap();
    let train = data.restrict_years(2013, 2018).unwrap();
    let spec =
        ModelSpec::new(ModelId::Fd1, train.grid().clone(), Some("BRA".into()), None).unwrap();
    let config = McmcConfig {
        chains: 2,
        iterations: 300,
        burn_in: 100,
        thin: 4,
        seed: 5,
        target_acceptance: 0.3,
    };
    let draws = run_mcmc(&spec, &train, Some(&reference), &config).unwrap();
    assert!(matches!(
        posterior_summary(&draws, "no_such_parameter"),
        Err(mortdef_core::Error::UnknownParameter(_))
    ));
}

//! Shared setup for the criterion benchmarks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use mortdef_core::data::{AgeYearGrid, FundDataset, ReferenceTable};
use mortdef_core::models::{simulate_fund, ModelId, ModelSpec, ParameterVector};

/// A paper-sized FD-1 problem: 30 ages by 6 years.
pub fn fd1_problem() -> (ModelSpec, FundDataset, ReferenceTable, ParameterVector) {
    let grid = AgeYearGrid::from_ranges(60, 89, 2013, 2018).unwrap();
    let spec = ModelSpec::new(ModelId::Fd1, grid.clone(), Some("BRA".into()), None).unwrap();
    let rates = DMatrix::from_fn(grid.n_ages(), grid.n_years(), |i, _| {
        (-4.5f64 + 0.1 * i as f64).exp()
    });
    let reference = ReferenceTable::new(grid.clone(), rates, "BRA").unwrap();
    let params = ParameterVector {
        scalar_theta: Some(-0.5),
        omega: Some(0.2),
        ..Default::default()
    };
    let exposures = DMatrix::from_element(grid.n_ages(), grid.n_years(), 150.0);
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let data = simulate_fund(&spec, &params, &exposures, Some(&reference), &mut rng).unwrap();
    (spec, data, reference, params)
}

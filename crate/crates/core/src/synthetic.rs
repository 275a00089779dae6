//! Synthetic exposure profiles and reference surfaces.
//!
//! The real fund and table data are proprietary, so the repository ships
//! synthetic stand-ins with the same shapes: Gompertz reference surfaces
//! with mild year trends, and funds with a triangular age pyramid peaking
//! near age 70 and tapering to single digits by 89.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::{AgeYearGrid, FundDataset, ReferenceTable};
use crate::error::Result;
use crate::seed::{derive_seed, DOMAIN_SIMULATE};
use crate::stats::{negbin_sample, NegBinParams};

/// Peak exposure of the default age pyramid (near age 70).
pub const PROFILE_PEAK: f64 = 250.0;
/// Floor exposure of the default age pyramid (at age 89).
pub const PROFILE_FLOOR: f64 = 5.0;
const PROFILE_PEAK_AGE: i32 = 70;
const PROFILE_FLOOR_AGE: i32 = 89;
const PROFILE_START: f64 = 80.0;

/// Triangular age pyramid: linear rise to the peak at age 70, then
/// log-linear taper to the floor at age 89. Constant across years.
pub fn default_exposure_profile(grid: &AgeYearGrid) -> DMatrix<f64> {
    let rise = (PROFILE_PEAK - PROFILE_START) / (PROFILE_PEAK_AGE - 60) as f64;
    let decay =
        (PROFILE_FLOOR / PROFILE_PEAK).ln() / (PROFILE_FLOOR_AGE - PROFILE_PEAK_AGE) as f64;
    let value = |age: i32| -> f64 {
        if age <= PROFILE_PEAK_AGE {
            (PROFILE_START + rise * (age - 60) as f64).max(PROFILE_FLOOR)
        } else {
            PROFILE_PEAK * (decay * (age - PROFILE_PEAK_AGE) as f64).exp()
        }
    };
    DMatrix::from_fn(grid.n_ages(), grid.n_years(), |i, _| value(grid.ages()[i]))
}

/// Exposures decaying exponentially in age with a mild multiplicative year
/// growth; used for the paper-scale bundled funds.
pub fn exponential_exposures(
    grid: &AgeYearGrid,
    level: f64,
    age_decay: f64,
    year_growth: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(grid.n_ages(), grid.n_years(), |i, j| {
        let k = (grid.ages()[i] - grid.ages()[0]) as f64;
        let t = j as f64;
        let raw = level * (-age_decay * k).exp() * (1.0 + year_growth).powf(t);
        (raw * 10.0).round() / 10.0
    })
}

/// Log-linear ("Gompertz in age") mortality surface with a year trend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GompertzSurface {
    /// log rate at age 60 in the pivot year
    pub intercept: f64,
    pub age_slope: f64,
    pub year_slope: f64,
    pub pivot_year: i32,
}

impl GompertzSurface {
    pub fn log_rate(&self, age: i32, year: i32) -> f64 {
        self.intercept
            + self.age_slope * (age - 60) as f64
            + self.year_slope * (year - self.pivot_year) as f64
    }

    pub fn table(&self, grid: &AgeYearGrid, label: &str) -> Result<ReferenceTable> {
        let rates = DMatrix::from_fn(grid.n_ages(), grid.n_years(), |i, j| {
            self.log_rate(grid.ages()[i], grid.years()[j]).exp()
        });
        ReferenceTable::new(grid.clone(), rates, label)
    }
}

/// National-table stand-in: heavier mortality, steady annual improvement.
pub fn bra_like_surface() -> GompertzSurface {
    GompertzSurface {
        intercept: -5.2,
        age_slope: 0.095,
        year_slope: -0.015,
        pivot_year: 2013,
    }
}

/// Industry-table stand-in: lighter than the national table.
pub fn ind_like_surface() -> GompertzSurface {
    GompertzSurface {
        intercept: -5.45,
        age_slope: 0.105,
        year_slope: -0.012,
        pivot_year: 2010,
    }
}

/// Deaths drawn cell by cell from NB(e^theta(x) * m(x,t) * E(x,t), omega).
pub fn simulate_deflated_fund(
    grid: &AgeYearGrid,
    exposures: &DMatrix<f64>,
    reference: &ReferenceTable,
    theta_by_age: &dyn Fn(i32) -> f64,
    omega: f64,
    seed: u64,
) -> Result<FundDataset> {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, DOMAIN_SIMULATE, 0));
    let mut deaths = DMatrix::from_element(grid.n_ages(), grid.n_years(), 0u64);
    for (i, &age) in grid.ages().iter().enumerate() {
        for (j, &year) in grid.years().iter().enumerate() {
            let e = exposures[(i, j)];
            if e <= 0.0 {
                continue;
            }
            let m = reference.rate_at(age, year).expect("reference covers grid");
            let mu = theta_by_age(age).exp() * m * e;
            deaths[(i, j)] = negbin_sample(
                NegBinParams {
                    mean: mu,
                    overdispersion: omega,
                },
                &mut rng,
            );
        }
    }
    FundDataset::new(grid.clone(), exposures.clone(), deaths)
}

/// Bundled fund 1: about 14,000 exposure-years and 100 deaths per year,
/// with a smooth age-varying deflator around -0.5.
pub fn bundled_fund1() -> Result<(FundDataset, ReferenceTable)> {
    let grid = AgeYearGrid::from_ranges(60, 89, 2013, 2019)?;
    let reference = bra_like_surface().table(&grid, "BRA")?;
    // a lighter private population than the BRA-like stand-in
    let light = GompertzSurface {
        intercept: -6.05,
        age_slope: 0.105,
        year_slope: -0.02,
        pivot_year: 2013,
    }
    .table(&grid, "FUND1")?;
    let exposures = exponential_exposures(&grid, 1640.0, 0.12, 0.005);
    // deflator implied by the light surface against BRA in the pivot year
    let theta = move |age: i32| -> f64 {
        light.rate_at(age, 2013).unwrap().ln() - reference.rate_at(age, 2013).unwrap().ln()
    };
    let reference = bra_like_surface().table(&grid, "BRA")?;
    let data = simulate_deflated_fund(&grid, &exposures, &reference, &theta, 0.2, 101)?;
    Ok((data, reference))
}

/// Bundled fund 2: about half the size with a flatter deflator near -0.29.
pub fn bundled_fund2() -> Result<(FundDataset, ReferenceTable)> {
    let grid = AgeYearGrid::from_ranges(60, 89, 2013, 2019)?;
    let reference = bra_like_surface().table(&grid, "BRA")?;
    let exposures = exponential_exposures(&grid, 1440.0, 0.23, 0.0);
    let theta = |_: i32| -0.29;
    let data = simulate_deflated_fund(&grid, &exposures, &reference, &theta, 0.15, 202)?;
    Ok((data, reference))
}

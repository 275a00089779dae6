//! Reference-table preparation: Gompertz extrapolation to old ages, GP
//! interpolation of sparse-year tables, and the prior-mean calibration
//! regression for the single-population models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AgeYearGrid, ReferenceTable};
use crate::error::{Error, Result};
use crate::gp::{gp_log_marginal_likelihood, GpInput, KernelSpec};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::seed::{derive_seed, DOMAIN_RESTART};

/// Log-linear mortality law in age: `log rate = intercept + slope * (age - pivot)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GompertzCoeffs {
    pub intercept: f64,
    pub slope: f64,
    pub pivot_age: i32,
}

/// OLS fit of log rates against age for a single calendar year.
pub fn gompertz_fit(
    table: &ReferenceTable,
    year: i32,
    age_lo: i32,
    age_hi: i32,
) -> Result<GompertzCoeffs> {
    if age_hi - age_lo + 1 < 3 {
        return Err(Error::InsufficientData(format!(
            "gompertz fit needs at least 3 ages, got {}..={}",
            age_lo, age_hi
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for age in age_lo..=age_hi {
        let rate = table.rate_at(age, year).ok_or_else(|| {
            Error::GridMismatch(format!("no rate for age {age}, year {year}"))
        })?;
        let log_rate = rate.ln();
        if !log_rate.is_finite() {
            return Err(Error::Data(format!(
                "non-finite log rate at age {age}, year {year}"
            )));
        }
        xs.push((age - age_lo) as f64);
        ys.push(log_rate);
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok(GompertzCoeffs {
        intercept,
        slope,
        pivot_age: age_lo,
    })
}

/// Evaluate the fitted law at the requested ages (all at or above the pivot).
pub fn gompertz_extrapolate(coeffs: &GompertzCoeffs, ages: &[i32]) -> Result<Vec<f64>> {
    for &age in ages {
        if age < coeffs.pivot_age {
            return Err(Error::Data(format!(
                "age {} below pivot {}",
                age, coeffs.pivot_age
            )));
        }
    }
    Ok(ages
        .iter()
        .map(|&age| (coeffs.intercept + coeffs.slope * (age - coeffs.pivot_age) as f64).exp())
        .collect())
}

/// Extend every year of a table to `target_age_hi` via one Gompertz fit per
/// calendar year over the table's own age span. Returns the extended table
/// plus the per-year coefficients.
pub fn gompertz_extrapolate_table(
    table: &ReferenceTable,
    target_age_hi: i32,
) -> Result<(ReferenceTable, Vec<(i32, GompertzCoeffs)>)> {
    let age_lo = table.grid().ages()[0];
    let age_hi = *table.grid().ages().last().unwrap();
    if target_age_hi <= age_hi {
        return Err(Error::Data(format!(
            "target age {target_age_hi} does not extend the table (max age {age_hi})"
        )));
    }
    let new_ages: Vec<i32> = (age_lo..=target_age_hi).collect();
    let years = table.grid().years().to_vec();
    let grid = AgeYearGrid::with_sparse_years(new_ages.clone(), years.clone())?;
    let mut rates = DMatrix::zeros(grid.n_ages(), grid.n_years());
    let mut coeffs_by_year = Vec::with_capacity(years.len());
    for (j, &year) in years.iter().enumerate() {
        let coeffs = gompertz_fit(table, year, age_lo, age_hi)?;
        let extra_ages: Vec<i32> = (age_hi + 1..=target_age_hi).collect();
        let extrapolated = gompertz_extrapolate(&coeffs, &extra_ages)?;
        for (i, &age) in new_ages.iter().enumerate() {
            rates[(i, j)] = if age <= age_hi {
                table.rate_at(age, year).unwrap()
            } else {
                extrapolated[(age - age_hi - 1) as usize]
            };
        }
        coeffs_by_year.push((year, coeffs));
    }
    let out = ReferenceTable::new(grid, rates, table.label())?;
    Ok((out, coeffs_by_year))
}

/// Hyperparameters of the interpolation GP over log rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationHyperParams {
    pub process_variance: f64,
    pub lengthscale_age: f64,
    pub lengthscale_year: f64,
    pub noise_variance: f64,
}

/// Noise variance is floored here to keep the factorization stable even for
/// tables the GP can reproduce exactly.
pub const NOISE_FLOOR: f64 = 1e-10;

const N_RESTARTS: usize = 8;

/// Linear mean in age and year, fitted by OLS on log rates before the kernel
/// hyperparameters are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearMean {
    pub intercept: f64,
    pub age_slope: f64,
    pub year_slope: f64,
    pub age_pivot: f64,
    pub year_pivot: f64,
}

impl LinearMean {
    fn eval(&self, age: f64, year: f64) -> f64 {
        self.intercept
            + self.age_slope * (age - self.age_pivot)
            + self.year_slope * (year - self.year_pivot)
    }
}

fn table_points_and_logs(table: &ReferenceTable) -> (Vec<GpInput>, DVector<f64>) {
    let n = table.grid().n_cells();
    let mut points = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    for (i, &age) in table.grid().ages().iter().enumerate() {
        for (j, &year) in table.grid().years().iter().enumerate() {
            points.push(GpInput::AgeYear(age as f64, year as f64));
            logs.push(table.rates()[(i, j)].ln());
        }
    }
    (points, DVector::from_vec(logs))
}

fn fit_linear_mean(table: &ReferenceTable) -> LinearMean {
    let age_pivot = table.grid().ages()[0] as f64;
    let year_pivot = table.grid().years()[0] as f64;
    let n = table.grid().n_cells();
    let mut design = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    let mut row = 0;
    for (i, &age) in table.grid().ages().iter().enumerate() {
        for (j, &year) in table.grid().years().iter().enumerate() {
            design[(row, 0)] = 1.0;
            design[(row, 1)] = age as f64 - age_pivot;
            design[(row, 2)] = year as f64 - year_pivot;
            y[row] = table.rates()[(i, j)].ln();
            row += 1;
        }
    }
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * y;
    // single year or single age: drop the degenerate regressor
    let beta = xtx
        .clone()
        .cholesky()
        .map(|c| c.solve(&xty))
        .unwrap_or_else(|| {
            let pinv = xtx.pseudo_inverse(1e-10).expect("pseudo inverse");
            pinv * xty
        });
    LinearMean {
        intercept: beta[0],
        age_slope: beta[1],
        year_slope: beta[2],
        age_pivot,
        year_pivot,
    }
}

fn marginal_likelihood_for(
    params: &InterpolationHyperParams,
    mean: &LinearMean,
    points: &[GpInput],
    values: &DVector<f64>,
) -> Result<f64> {
    let kernel = KernelSpec::sq_exp_2d(
        params.process_variance,
        params.lengthscale_age,
        params.lengthscale_year,
    )?;
    gp_log_marginal_likelihood(
        &kernel,
        params.noise_variance,
        |p| match p {
            GpInput::AgeYear(a, t) => mean.eval(a, t),
            _ => unreachable!("interpolation uses 2d inputs"),
        },
        points,
        values,
    )
}

/// Maximize the log marginal likelihood over log-parameterized
/// hyperparameters with multi-start Nelder-Mead. Deterministic under `seed`;
/// ties between restarts resolve to the lowest restart index.
pub fn fit_interpolation_hyperparams(
    table: &ReferenceTable,
    seed: u64,
) -> Result<(InterpolationHyperParams, LinearMean, f64)> {
    if table.grid().n_years() < 2 {
        return Err(Error::InsufficientData(
            "interpolation needs at least 2 distinct years".into(),
        ));
    }
    let mean = fit_linear_mean(table);
    let (points, logs) = table_points_and_logs(table);
    let residual_var = {
        let m = DVector::from_fn(points.len(), |i, _| match points[i] {
            GpInput::AgeYear(a, t) => mean.eval(a, t),
            _ => unreachable!(),
        });
        let r = &logs - m;
        (r.dot(&r) / r.len() as f64).max(1e-6)
    };
    let year_span = (*table.grid().years().last().unwrap() - table.grid().years()[0]) as f64;
    let age_span = (*table.grid().ages().last().unwrap() - table.grid().ages()[0]).max(1) as f64;

    let unpack = |x: &[f64]| InterpolationHyperParams {
        process_variance: x[0].exp(),
        lengthscale_age: x[1].exp(),
        lengthscale_year: x[2].exp(),
        noise_variance: x[3].exp() + NOISE_FLOOR,
    };
    let objective = |x: &[f64]| -> f64 {
        // keep the search inside a sane box in log space
        if x.iter().any(|v| !v.is_finite() || v.abs() > 25.0) {
            return f64::INFINITY;
        }
        let p = unpack(x);
        match marginal_likelihood_for(&p, &mean, &points, &logs) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };

    let base = [
        residual_var.ln(),
        (age_span / 2.0).max(1.0).ln(),
        (year_span / 2.0).max(1.0).ln(),
        (residual_var * 1e-3).max(1e-9).ln(),
    ];
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, DOMAIN_RESTART, 0));
    let mut best: Option<(f64, InterpolationHyperParams)> = None;
    let mut initial_values = Vec::new();
    for restart in 0..N_RESTARTS {
        let x0: Vec<f64> = if restart == 0 {
            base.to_vec()
        } else {
            base.iter()
                .map(|b| b + rng.random_range(-2.0..2.0))
                .collect()
        };
        initial_values.push(-objective(&x0));
        let res = nelder_mead(
            objective,
            &x0,
            &NelderMeadOptions {
                max_iters: 400,
                f_tol: 1e-9,
                initial_step: 0.4,
            },
        );
        if !res.f_min.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((f, _)) => res.f_min < *f,
        };
        if better {
            best = Some((res.f_min, unpack(&res.x_min)));
        }
    }
    let (neg_ll, params) =
        best.ok_or_else(|| Error::Optimizer("all restarts failed to produce a finite value".into()))?;
    let ll = -neg_ll;
    if initial_values.iter().any(|&v| v.is_finite() && v > ll + 1e-6) {
        return Err(Error::Optimizer(
            "optimum below a multistart initial point".into(),
        ));
    }
    Ok((params, mean, ll))
}

/// Posterior-mean interpolation at pinned hyperparameters.
pub fn interpolate_with(
    table: &ReferenceTable,
    target_years: &[i32],
    params: &InterpolationHyperParams,
    mean: &LinearMean,
) -> Result<ReferenceTable> {
    let mut years = target_years.to_vec();
    years.sort_unstable();
    years.dedup();
    let grid = AgeYearGrid::with_sparse_years(table.grid().ages().to_vec(), years.clone())?;
    let (points, logs) = table_points_and_logs(table);
    let kernel = KernelSpec::sq_exp_2d(
        params.process_variance.max(1e-12),
        params.lengthscale_age,
        params.lengthscale_year,
    )?;
    // fold observation noise into the training covariance by conditioning on
    // noisy observations: add it via jitter-free explicit diagonal
    let mean_fn = |p: GpInput| match p {
        GpInput::AgeYear(a, t) => mean.eval(a, t),
        _ => unreachable!(),
    };
    let test_points: Vec<GpInput> = grid
        .cells()
        .map(|(a, y)| GpInput::AgeYear(a as f64, y as f64))
        .collect();
    let post_mean = condition_with_noise(
        &kernel,
        params.noise_variance,
        mean_fn,
        &points,
        &logs,
        &test_points,
    )?;
    let mut rates = DMatrix::zeros(grid.n_ages(), grid.n_years());
    let n_years = grid.n_years();
    for (idx, v) in post_mean.iter().enumerate() {
        let i = idx / n_years;
        let j = idx % n_years;
        rates[(i, j)] = v.exp();
    }
    ReferenceTable::new(grid, rates, table.label())
}

/// Posterior mean of a GP with observation noise on the training values.
fn condition_with_noise<F: Fn(GpInput) -> f64>(
    kernel: &KernelSpec,
    noise_variance: f64,
    mean_fn: F,
    train_points: &[GpInput],
    train_values: &DVector<f64>,
    test_points: &[GpInput],
) -> Result<DVector<f64>> {
    let n = train_points.len();
    let mut cov = crate::gp::build_covariance(kernel, train_points);
    for i in 0..n {
        cov[(i, i)] += noise_variance;
    }
    let chol = crate::gp::cholesky_with_jitter(&cov)?;
    let train_mean = DVector::from_fn(n, |i, _| mean_fn(train_points[i]));
    let alpha = chol.solve(&(train_values - train_mean));
    let cross = DMatrix::from_fn(test_points.len(), n, |i, j| {
        crate::gp::kernel_eval(kernel, test_points[i], train_points[j])
    });
    let prior = DVector::from_fn(test_points.len(), |i, _| mean_fn(test_points[i]));
    Ok(prior + cross * alpha)
}

/// Fit hyperparameters by maximum likelihood and return the interpolated
/// table on the full (ages x target_years) grid, with rates exponentiated
/// back from the log scale.
pub fn interpolate_reference_gp(
    sparse: &ReferenceTable,
    target_years: &[i32],
    seed: u64,
) -> Result<(ReferenceTable, InterpolationHyperParams, LinearMean)> {
    let y_min = sparse.grid().years()[0];
    let y_max = *sparse.grid().years().last().unwrap();
    for &y in target_years {
        if y < y_min - 5 || y > y_max + 5 {
            return Err(Error::Data(format!(
                "target year {y} outside observed span {y_min}..={y_max} by more than 5"
            )));
        }
    }
    let (params, mean, _ll) = fit_interpolation_hyperparams(sparse, seed)?;
    let table = interpolate_with(sparse, target_years, &params, &mean)?;
    Ok((table, params, mean))
}

/// Prior centers for the single-population mean function, from an OLS
/// regression of log reference rates on age (and optionally year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorMeanCalibration {
    pub beta0_mean: f64,
    pub beta_ag_mean: f64,
    pub beta_yr_mean: Option<f64>,
    pub reference_label: String,
}

/// Age is centered at 60 (the first pension age) and year at the table's
/// first year. The offset shifts the intercept; the deflator-consistency
/// default is -0.5.
pub const CALIBRATION_AGE_PIVOT: i32 = 60;
pub const DEFAULT_CALIBRATION_OFFSET: f64 = -0.5;

pub fn calibrate_prior_means(
    table: &ReferenceTable,
    include_year_trend: bool,
    offset: f64,
) -> Result<PriorMeanCalibration> {
    if table.grid().n_ages() < 2 {
        return Err(Error::InsufficientData(
            "calibration regression needs at least 2 ages".into(),
        ));
    }
    if include_year_trend && table.grid().n_years() < 2 {
        return Err(Error::InsufficientData(
            "year-trend calibration needs at least 2 years".into(),
        ));
    }
    let first_year = table.grid().years()[0];
    let k = if include_year_trend { 3 } else { 2 };
    let n = table.grid().n_cells();
    let mut design = DMatrix::zeros(n, k);
    let mut y = DVector::zeros(n);
    let mut row = 0;
    for (i, &age) in table.grid().ages().iter().enumerate() {
        for (j, &year) in table.grid().years().iter().enumerate() {
            design[(row, 0)] = 1.0;
            design[(row, 1)] = (age - CALIBRATION_AGE_PIVOT) as f64;
            if include_year_trend {
                design[(row, 2)] = (year - first_year) as f64;
            }
            y[row] = table.rates()[(i, j)].ln();
            row += 1;
        }
    }
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * y;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Data("rank-deficient calibration design".into()))?;
    let beta = chol.solve(&xty);
    Ok(PriorMeanCalibration {
        beta0_mean: beta[0] + offset,
        beta_ag_mean: beta[1],
        beta_yr_mean: include_year_trend.then(|| beta[2]),
        reference_label: table.label().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gompertz_table(intercept: f64, slope: f64, year_trend: f64) -> ReferenceTable {
        let grid = AgeYearGrid::from_ranges(60, 80, 2013, 2015).unwrap();
        let rates = DMatrix::from_fn(grid.n_ages(), grid.n_years(), |i, j| {
            (intercept + slope * i as f64 + year_trend * j as f64).exp()
        });
        ReferenceTable::new(grid, rates, "BRA").unwrap()
    }

    #[test]
    fn exact_gompertz_input_recovers_coefficients() {
        let table = gompertz_table(-5.0, 0.1, 0.0);
        let coeffs = gompertz_fit(&table, 2014, 60, 80).unwrap();
        assert!((coeffs.intercept - (-5.0)).abs() < 1e-12);
        assert!((coeffs.slope - 0.1).abs() < 1e-13);
        assert_eq!(coeffs.pivot_age, 60);
    }

    #[test]
    fn constant_rates_give_zero_slope() {
        let table = gompertz_table(-4.0, 0.0, 0.0);
        let coeffs = gompertz_fit(&table, 2013, 60, 80).unwrap();
        assert!(coeffs.slope.abs() < 1e-14);
        assert!((coeffs.intercept - (-4.0)).abs() < 1e-12);
    }

    #[test]
    fn noisy_fit_matches_normal_equations_oracle() {
        let grid = AgeYearGrid::from_ranges(60, 80, 2013, 2013).unwrap();
        // deterministic wiggle standing in for log-noise
        let noise = |i: usize| 0.05 * ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.025;
        let rates = DMatrix::from_fn(grid.n_ages(), 1, |i, _| {
            (-5.0 + 0.1 * i as f64 + noise(i)).exp()
        });
        let table = ReferenceTable::new(grid, rates, "BRA").unwrap();
        let coeffs = gompertz_fit(&table, 2013, 60, 80).unwrap();

        // 2x2 normal equations by hand
        let n = 21.0;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..21 {
            let x = i as f64;
            let y = -5.0 + 0.1 * x + noise(i);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        assert!((coeffs.slope - slope).abs() < 1e-10);
        assert!((coeffs.intercept - intercept).abs() < 1e-10);
    }

    #[test]
    fn extrapolation_formula_values() {
        let coeffs = GompertzCoeffs {
            intercept: -5.0,
            slope: 0.1,
            pivot_age: 60,
        };
        let rates = gompertz_extrapolate(&coeffs, &[60, 89]).unwrap();
        assert!((rates[0] - (-5.0f64).exp()).abs() < 1e-15);
        assert!((rates[1] - (-2.1f64).exp()).abs() < 1e-15);
        assert!((rates[1] - 0.12246).abs() < 1e-5);
    }

    #[test]
    fn zero_slope_extrapolates_constant() {
        let coeffs = GompertzCoeffs {
            intercept: -3.0,
            slope: 0.0,
            pivot_age: 60,
        };
        let rates = gompertz_extrapolate(&coeffs, &[70, 85]).unwrap();
        assert_eq!(rates[0], rates[1]);
    }

    #[test]
    fn fit_then_extrapolate_reproduces_noiseless_input() {
        let table = gompertz_table(-5.0, 0.08, 0.0);
        let coeffs = gompertz_fit(&table, 2013, 60, 80).unwrap();
        let ages: Vec<i32> = (60..=80).collect();
        let rates = gompertz_extrapolate(&coeffs, &ages).unwrap();
        for (i, &age) in ages.iter().enumerate() {
            let truth = table.rate_at(age, 2013).unwrap();
            assert!((rates[i] - truth).abs() < 1e-12 * truth);
        }
    }

    #[test]
    fn table_extrapolation_extends_to_target_age() {
        let table = gompertz_table(-5.0, 0.1, -0.02);
        let (ext, coeffs) = gompertz_extrapolate_table(&table, 89).unwrap();
        assert_eq!(ext.grid().ages().len(), 30);
        assert_eq!(coeffs.len(), 3);
        // exact continuation on noiseless input
        let expect = (-5.0f64 + 0.1 * 29.0 - 0.02).exp();
        let got = ext.rate_at(89, 2014).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn calibration_matches_constructed_surface() {
        let table = gompertz_table(-4.5, 0.1, 0.0);
        let calib = calibrate_prior_means(&table, false, -0.5).unwrap();
        assert!((calib.beta0_mean - (-5.0)).abs() < 1e-10);
        assert!((calib.beta_ag_mean - 0.1).abs() < 1e-12);
        assert!(calib.beta_yr_mean.is_none());
    }

    #[test]
    fn calibration_with_year_trend() {
        let table = gompertz_table(-4.5, 0.1, -0.02);
        let calib = calibrate_prior_means(&table, true, -0.5).unwrap();
        assert!((calib.beta0_mean - (-5.0)).abs() < 1e-10);
        assert!((calib.beta_ag_mean - 0.1).abs() < 1e-12);
        assert!((calib.beta_yr_mean.unwrap() - (-0.02)).abs() < 1e-12);
    }

    #[test]
    fn calibration_year_trend_zero_on_constant_table() {
        let table = gompertz_table(-4.5, 0.1, 0.0);
        let calib = calibrate_prior_means(&table, true, -0.5).unwrap();
        assert!(calib.beta_yr_mean.unwrap().abs() < 1e-12);
    }

    #[test]
    fn calibration_offset_zero_recovers_generator() {
        let table = gompertz_table(-4.2, 0.09, -0.015);
        let calib = calibrate_prior_means(&table, true, 0.0).unwrap();
        assert!((calib.beta0_mean - (-4.2)).abs() < 1e-10);
        assert!((calib.beta_ag_mean - 0.09).abs() < 1e-10);
        assert!((calib.beta_yr_mean.unwrap() - (-0.015)).abs() < 1e-10);
    }

    fn sparse_table(years: &[i32]) -> ReferenceTable {
        let grid =
            AgeYearGrid::with_sparse_years((60..=75).collect(), years.to_vec()).unwrap();
        let rates = DMatrix::from_fn(grid.n_ages(), grid.n_years(), |i, j| {
            (-4.8 + 0.095 * i as f64 - 0.01 * (grid.years()[j] - years[0]) as f64).exp()
        });
        ReferenceTable::new(grid, rates, "IND").unwrap()
    }

    #[test]
    fn interpolation_reproduces_training_years() {
        let table = sparse_table(&[2010, 2015, 2021]);
        let (out, params, _) =
            interpolate_reference_gp(&table, &[2010, 2015, 2021], 7).unwrap();
        assert!(params.noise_variance >= NOISE_FLOOR);
        for &year in table.grid().years() {
            for &age in table.grid().ages() {
                let truth = table.rate_at(age, year).unwrap();
                let got = out.rate_at(age, year).unwrap();
                assert!(
                    ((got - truth) / truth).abs() < 1e-4,
                    "age {age} year {year}: {got} vs {truth}"
                );
            }
        }
    }

    #[test]
    fn interpolation_recovers_linear_surface_at_interior_years() {
        let table = sparse_table(&[2010, 2015, 2021]);
        let targets: Vec<i32> = (2010..=2021).collect();
        let (out, _, _) = interpolate_reference_gp(&table, &targets, 7).unwrap();
        for &year in &targets {
            for &age in table.grid().ages() {
                let truth = (-4.8
                    + 0.095 * (age - 60) as f64
                    - 0.01 * (year - 2010) as f64)
                    .exp();
                let got = out.rate_at(age, year).unwrap();
                assert!(
                    ((got - truth) / truth).abs() < 1e-3,
                    "age {age} year {year}: {got} vs {truth}"
                );
            }
        }
    }

    #[test]
    fn interpolation_constant_in_time_input() {
        let grid = AgeYearGrid::with_sparse_years((60..=75).collect(), vec![2010, 2020]).unwrap();
        let rates = DMatrix::from_fn(grid.n_ages(), 2, |i, _| (-4.5 + 0.1 * i as f64).exp());
        let table = ReferenceTable::new(grid, rates, "IND").unwrap();
        let (out, _, _) = interpolate_reference_gp(&table, &[2015], 3).unwrap();
        for &age in table.grid().ages() {
            let truth = table.rate_at(age, 2010).unwrap();
            let got = out.rate_at(age, 2015).unwrap();
            assert!(((got - truth) / truth).abs() < 1e-3, "age {age}");
        }
    }

    #[test]
    fn interpolation_rejects_far_target_years() {
        let table = sparse_table(&[2010, 2015, 2021]);
        assert!(interpolate_reference_gp(&table, &[2030], 1).is_err());
    }

    #[test]
    fn interpolation_needs_two_years() {
        let grid = AgeYearGrid::with_sparse_years((60..=70).collect(), vec![2015]).unwrap();
        let rates = DMatrix::from_element(11, 1, 0.01);
        let table = ReferenceTable::new(grid, rates, "IND").unwrap();
        assert!(matches!(
            interpolate_reference_gp(&table, &[2015], 1),
            Err(Error::InsufficientData(_))
        ));
    }
}

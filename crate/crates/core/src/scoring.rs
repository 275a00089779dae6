//! Posterior predictive distributions, proper scoring rules,
//! leave-one-year-out cross-validation and the chi-square consistency test.
//!
//! Predictive pmfs are Rao-Blackwellized: the negative binomial pmf is
//! averaged over posterior draws, which is exact per draw and lower-variance
//! than binning simulated counts. The simulation path survives in tests as
//! an oracle.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{FundDataset, ReferenceTable};
use crate::error::{Error, Result};
use crate::mcmc::{run_mcmc_with_threads, McmcConfig, PosteriorDraws};
use crate::models::{materialize_effect, GpCholCache, ModelSpec, ParameterVector};
use crate::parallel::run_indexed;
use crate::seed::{derive_seed, DOMAIN_FOLD};
use crate::stats::{negbin_logpmf, NegBinParams};

/// Truncated tail mass allowed when choosing the pmf support.
pub const PMF_TAIL_TOLERANCE: f64 = 1e-6;

/// Floor applied inside the log score so unsupported observations stay
/// finite; floored cells are counted in the report.
pub const LOG_SCORE_FLOOR: f64 = 1e-12;

/// Default rank-probability-score truncation.
pub const DEFAULT_D_BAR: u64 = 10;

/// Posterior predictive mass function for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictivePmf {
    pub age: i32,
    pub year: i32,
    /// mass[k] = P(d = k) for k = 0..=k_max
    pub mass: Vec<f64>,
    /// cdf[k] = P(d <= k), nondecreasing, cdf[k_max] = sum of mass
    pub cdf: Vec<f64>,
}

impl PredictivePmf {
    /// Mixture over per-draw negative binomial parameters. The support is
    /// extended until the truncated tail mass falls below the tolerance.
    pub fn from_mixture(age: i32, year: i32, components: &[NegBinParams]) -> Self {
        assert!(!components.is_empty(), "mixture needs at least one draw");
        let n = components.len() as f64;
        let mut k_max = 10usize;
        loop {
            let mut mass = vec![0.0; k_max + 1];
            for p in components {
                for (k, m) in mass.iter_mut().enumerate() {
                    *m += negbin_logpmf(k as u64, *p).exp() / n;
                }
            }
            let total: f64 = mass.iter().sum();
            if 1.0 - total <= PMF_TAIL_TOLERANCE || k_max > 100_000 {
                let mut cdf = Vec::with_capacity(mass.len());
                let mut acc = 0.0;
                for &m in &mass {
                    acc += m;
                    cdf.push(acc);
                }
                return Self {
                    age,
                    year,
                    mass,
                    cdf,
                };
            }
            k_max *= 2;
        }
    }

    /// Build directly from a mass vector (tests and degenerate forecasts).
    pub fn from_mass(age: i32, year: i32, mass: Vec<f64>) -> Self {
        let mut cdf = Vec::with_capacity(mass.len());
        let mut acc = 0.0;
        for &m in &mass {
            acc += m;
            cdf.push(acc);
        }
        Self {
            age,
            year,
            mass,
            cdf,
        }
    }

    pub fn k_max(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn mass_at(&self, k: u64) -> f64 {
        self.mass.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn cdf_at(&self, k: u64) -> f64 {
        let idx = (k as usize).min(self.cdf.len() - 1);
        self.cdf[idx]
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(k, &m)| k as f64 * m)
            .sum()
    }

    pub fn median(&self) -> f64 {
        match self.cdf.iter().position(|&c| c >= 0.5) {
            Some(k) => k as f64,
            None => self.k_max() as f64,
        }
    }
}

/// Per-draw (mu, omega) components for a batch of cells, computed from one
/// materialization pass per draw.
pub fn predictive_components(
    spec: &ModelSpec,
    draws: &[ParameterVector],
    cells: &[(i32, i32, f64)],
    reference: Option<&ReferenceTable>,
) -> Result<Vec<Vec<NegBinParams>>> {
    if draws.is_empty() {
        return Err(Error::InsufficientData("no posterior draws".into()));
    }
    let need_ref = spec.id.uses_reference();
    if need_ref && reference.is_none() {
        return Err(Error::ModelSpec(format!(
            "{} prediction requires a reference table",
            spec.id
        )));
    }
    let mut indexed = Vec::with_capacity(cells.len());
    for &(age, year, exposure) in cells {
        if exposure <= 0.0 {
            return Err(Error::Data(format!(
                "predictive pmf needs positive exposure at ({age}, {year})"
            )));
        }
        let i = spec.grid.age_index(age).ok_or_else(|| {
            Error::GridMismatch(format!("age {age} outside model grid"))
        })?;
        let j = spec.grid.year_index(year).ok_or_else(|| {
            Error::GridMismatch(format!("year {year} outside model grid"))
        })?;
        let log_offset = if need_ref {
            let r = reference.unwrap().rate_at(age, year).ok_or_else(|| {
                Error::GridMismatch(format!("reference missing ({age}, {year})"))
            })?;
            r.ln() + exposure.ln()
        } else {
            exposure.ln()
        };
        indexed.push((i, j, log_offset));
    }
    let mut out = vec![Vec::with_capacity(draws.len()); cells.len()];
    let mut cache = GpCholCache::default();
    for params in draws {
        params.validate_for(spec)?;
        let effect = materialize_effect(spec, params, &mut cache)?;
        let omega = params.omega.unwrap_or(0.0);
        for (slot, &(i, j, log_offset)) in out.iter_mut().zip(&indexed) {
            slot.push(NegBinParams {
                mean: (effect[(i, j)] + log_offset).exp().max(1e-300),
                overdispersion: omega,
            });
        }
    }
    Ok(out)
}

/// Rao-Blackwellized predictive pmf for a single cell.
pub fn predictive_pmf(
    spec: &ModelSpec,
    draws: &[ParameterVector],
    age: i32,
    year: i32,
    exposure: f64,
    reference: Option<&ReferenceTable>,
) -> Result<PredictivePmf> {
    let comps = predictive_components(spec, draws, &[(age, year, exposure)], reference)?;
    Ok(PredictivePmf::from_mixture(age, year, &comps[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScoreResult {
    pub score: f64,
    /// Cells whose observed count fell below the mass floor.
    pub floored: usize,
}

/// Mean negative log predictive mass; lower is better.
pub fn log_score(pmfs: &[PredictivePmf], observed: &[u64]) -> LogScoreResult {
    assert_eq!(pmfs.len(), observed.len(), "pmf/observation length mismatch");
    let mut total = 0.0;
    let mut floored = 0;
    for (pmf, &d) in pmfs.iter().zip(observed) {
        let p = pmf.mass_at(d);
        let p = if p < LOG_SCORE_FLOOR {
            floored += 1;
            LOG_SCORE_FLOOR
        } else {
            p
        };
        total -= p.ln();
    }
    LogScoreResult {
        score: total / pmfs.len() as f64,
        floored,
    }
}

/// Ranked probability score truncated at `d_bar`. The summation starts at
/// k = 1; `include_k0` switches on the conventional k = 0 term.
pub fn rps(pmfs: &[PredictivePmf], observed: &[u64], d_bar: u64, include_k0: bool) -> f64 {
    assert_eq!(pmfs.len(), observed.len(), "pmf/observation length mismatch");
    assert!(d_bar >= 1, "d_bar must be at least 1");
    let k_start = if include_k0 { 0 } else { 1 };
    let mut total = 0.0;
    for (pmf, &d) in pmfs.iter().zip(observed) {
        for k in k_start..=d_bar {
            let indicator = if d <= k { 1.0 } else { 0.0 };
            let diff = pmf.cdf_at(k) - indicator;
            total += diff * diff;
        }
    }
    total / pmfs.len() as f64
}

/// Point forecast entering the MAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaePointForecast {
    Mean,
    Median,
}

/// Mean absolute error of the predictive point forecast.
pub fn mae(pmfs: &[PredictivePmf], observed: &[u64], point: MaePointForecast) -> f64 {
    assert_eq!(pmfs.len(), observed.len(), "pmf/observation length mismatch");
    let total: f64 = pmfs
        .iter()
        .zip(observed)
        .map(|(pmf, &d)| {
            let f = match point {
                MaePointForecast::Mean => pmf.mean(),
                MaePointForecast::Median => pmf.median(),
            };
            (f - d as f64).abs()
        })
        .sum();
    total / pmfs.len() as f64
}

/// Scoring configuration shared by the CV harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub d_bar: u64,
    pub rps_include_k0: bool,
    pub mae_point: MaePointForecast,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            d_bar: DEFAULT_D_BAR,
            rps_include_k0: false,
            mae_point: MaePointForecast::Mean,
        }
    }
}

/// Scores for one data split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub n: usize,
    pub log_score: f64,
    pub rps: f64,
    pub mae: f64,
    pub floored: usize,
}

fn score_cells(pmfs: &[PredictivePmf], observed: &[u64], cfg: &ScoreConfig) -> SplitScores {
    let ls = log_score(pmfs, observed);
    SplitScores {
        n: pmfs.len(),
        log_score: ls.score,
        rps: rps(pmfs, observed, cfg.d_bar, cfg.rps_include_k0),
        mae: mae(pmfs, observed, cfg.mae_point),
        floored: ls.floored,
    }
}

/// One cross-validation fold: the held-out year scored out-of-sample, the
/// training cells in-sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub fold_year: i32,
    pub out_of_sample: SplitScores,
    pub in_sample: SplitScores,
}

/// Full cross-validation report: per-fold scores plus across-year means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: String,
    pub d_bar: u64,
    pub folds: Vec<FoldScores>,
    pub mean_out: SplitScores,
    pub mean_in: SplitScores,
}

fn mean_splits(splits: &[SplitScores]) -> SplitScores {
    let n = splits.len() as f64;
    SplitScores {
        n: splits.iter().map(|s| s.n).sum::<usize>() / splits.len(),
        log_score: splits.iter().map(|s| s.log_score).sum::<f64>() / n,
        rps: splits.iter().map(|s| s.rps).sum::<f64>() / n,
        mae: splits.iter().map(|s| s.mae).sum::<f64>() / n,
        floored: splits.iter().map(|s| s.floored).sum(),
    }
}

/// Leave-one-year-out cross-validation.
///
/// Each fold refits with the held-out year's cells removed from the
/// likelihood (exposures masked to zero on the training copy, which the
/// likelihood skips), then scores the held-out cells out-of-sample and the
/// remaining cells in-sample against their true exposures. Fold seeds derive
/// from `(config.seed, fold index)`, so folds are order-independent.
pub fn loo_cv_by_year(
    spec: &ModelSpec,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
    config: &McmcConfig,
    score_cfg: &ScoreConfig,
    threads: usize,
) -> Result<CvReport> {
    let years = spec.grid.years().to_vec();
    if years.len() < 4 {
        return Err(Error::InsufficientData(
            "cross-validation needs at least 4 years".into(),
        ));
    }
    let fold_results: Vec<Result<FoldScores>> =
        run_indexed(years.len(), threads, |fold_idx| {
            let fold_year = years[fold_idx];
            let masked = data.mask_year(fold_year)?;
            if masked.exposures().iter().all(|&e| e == 0.0) {
                return Err(Error::Data(format!(
                    "fold {fold_year}: no exposure left in training data"
                )));
            }
            let fold_config = McmcConfig {
                seed: derive_seed(config.seed, DOMAIN_FOLD, fold_idx as u64),
                ..*config
            };
            // chains within a fold run serially; folds are the parallel unit
            let draws = run_mcmc_with_threads(spec, &masked, reference, &fold_config, 1)?;
            let params = draws.params();

            let mut out_cells = Vec::new();
            let mut out_obs = Vec::new();
            let mut in_cells = Vec::new();
            let mut in_obs = Vec::new();
            for (i, &age) in spec.grid.ages().iter().enumerate() {
                for (j, &year) in spec.grid.years().iter().enumerate() {
                    let e = data.exposures()[(i, j)];
                    if e <= 0.0 {
                        continue;
                    }
                    if year == fold_year {
                        out_cells.push((age, year, e));
                        out_obs.push(data.deaths()[(i, j)]);
                    } else {
                        in_cells.push((age, year, e));
                        in_obs.push(data.deaths()[(i, j)]);
                    }
                }
            }
            let out_comps = predictive_components(spec, &params, &out_cells, reference)?;
            let in_comps = predictive_components(spec, &params, &in_cells, reference)?;
            let out_pmfs: Vec<PredictivePmf> = out_cells
                .iter()
                .zip(&out_comps)
                .map(|(&(a, y, _), c)| PredictivePmf::from_mixture(a, y, c))
                .collect();
            let in_pmfs: Vec<PredictivePmf> = in_cells
                .iter()
                .zip(&in_comps)
                .map(|(&(a, y, _), c)| PredictivePmf::from_mixture(a, y, c))
                .collect();
            Ok(FoldScores {
                fold_year,
                out_of_sample: score_cells(&out_pmfs, &out_obs, score_cfg),
                in_sample: score_cells(&in_pmfs, &in_obs, score_cfg),
            })
        });
    let mut folds = Vec::with_capacity(years.len());
    for fold in fold_results {
        folds.push(fold?);
    }
    let mean_out = mean_splits(&folds.iter().map(|f| f.out_of_sample).collect::<Vec<_>>());
    let mean_in = mean_splits(&folds.iter().map(|f| f.in_sample).collect::<Vec<_>>());
    Ok(CvReport {
        model: spec.id.to_string(),
        d_bar: score_cfg.d_bar,
        folds,
        mean_out,
        mean_in,
    })
}

/// Result of the regulatory chi-square goodness-of-fit test, with the
/// age-pooling that was applied to keep expected counts at or above 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Contiguous index ranges of the input cells pooled together.
    pub pooling: Vec<(usize, usize)>,
}

/// Expected counts below this are pooled with neighbors.
pub const POOLING_THRESHOLD: f64 = 5.0;

/// Chi-square consistency test of observed versus expected deaths by age.
pub fn chi_square_consistency(
    observed_by_age: &[u64],
    expected_by_age: &[f64],
) -> Result<ChiSquareResult> {
    if observed_by_age.len() != expected_by_age.len() {
        return Err(Error::Data("observed/expected length mismatch".into()));
    }
    if expected_by_age.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
        return Err(Error::Data("expected counts must be positive".into()));
    }
    // pool adjacent cells left to right until each group reaches the
    // threshold; a trailing light group merges backward
    let mut groups: Vec<(usize, usize, f64, f64)> = Vec::new(); // (lo, hi, obs, exp)
    let mut lo = 0usize;
    let mut obs_acc = 0.0;
    let mut exp_acc = 0.0;
    for i in 0..expected_by_age.len() {
        obs_acc += observed_by_age[i] as f64;
        exp_acc += expected_by_age[i];
        if exp_acc >= POOLING_THRESHOLD {
            groups.push((lo, i, obs_acc, exp_acc));
            lo = i + 1;
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
    }
    if exp_acc > 0.0 || lo < expected_by_age.len() {
        match groups.last_mut() {
            Some(last) => {
                last.1 = expected_by_age.len() - 1;
                last.2 += obs_acc;
                last.3 += exp_acc;
            }
            None => groups.push((0, expected_by_age.len() - 1, obs_acc, exp_acc)),
        }
    }
    if groups.len() < 2 {
        return Err(Error::InsufficientData(
            "fewer than 2 pooled cells; expected counts too small".into(),
        ));
    }
    let statistic: f64 = groups
        .iter()
        .map(|&(_, _, o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = groups.len() - 1;
    let chi = ChiSquared::new(dof as f64).expect("positive dof");
    let p_value = 1.0 - chi.cdf(statistic);
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value,
        pooling: groups.iter().map(|&(a, b, _, _)| (a, b)).collect(),
    })
}

/// Observed and expected deaths aggregated by age over all years: observed
/// from the fund, expected from reference rates times exposure.
pub fn observed_expected_by_age(
    data: &FundDataset,
    reference: &ReferenceTable,
) -> Result<(Vec<u64>, Vec<f64>)> {
    reference.covers(data.grid())?;
    let mut observed = Vec::with_capacity(data.grid().n_ages());
    let mut expected = Vec::with_capacity(data.grid().n_ages());
    for (i, &age) in data.grid().ages().iter().enumerate() {
        let mut o = 0u64;
        let mut e = 0.0;
        for (j, &year) in data.grid().years().iter().enumerate() {
            o += data.deaths()[(i, j)];
            e += reference.rate_at(age, year).unwrap() * data.exposures()[(i, j)];
        }
        observed.push(o);
        expected.push(e);
    }
    Ok((observed, expected))
}

/// Expected deaths by age from a model's posterior-mean intensities.
pub fn expected_by_age_from_draws(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
) -> Result<Vec<f64>> {
    let params = draws.params();
    let mut cells = Vec::new();
    for (i, &age) in spec.grid.ages().iter().enumerate() {
        for (j, &year) in spec.grid.years().iter().enumerate() {
            let e = data.exposures()[(i, j)];
            if e > 0.0 {
                cells.push((age, year, e, i));
            }
        }
    }
    let comps = predictive_components(
        spec,
        &params,
        &cells.iter().map(|&(a, y, e, _)| (a, y, e)).collect::<Vec<_>>(),
        reference,
    )?;
    let mut by_age = vec![0.0; spec.grid.n_ages()];
    for (cell, comp) in cells.iter().zip(&comps) {
        let (_, _, _, i) = *cell;
        let mean: f64 = comp.iter().map(|p| p.mean).sum::<f64>() / comp.len() as f64;
        by_age[i] += mean;
    }
    Ok(by_age)
}

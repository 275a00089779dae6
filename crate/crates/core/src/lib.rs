//! Bayesian sub-population mortality modeling.
//!
//! A small pension fund's mortality is expressed as a deflated version of a
//! reference population's table: `log m_fund = theta + log m_ref`, with the
//! deflator `theta` constant, age-dependent, time-dependent, or driven by a
//! Gaussian process; two further models capture the fund's log-mortality
//! surface directly with a GP around a parametric Gompertz mean. Death
//! counts follow a negative binomial likelihood with a shared overdispersion
//! factor.
//!
//! The crate provides the nine model variants, a self-contained adaptive
//! random-walk Metropolis sampler with convergence diagnostics, reference
//! table preparation (Gompertz extrapolation to old ages and GP
//! interpolation of sparse-year tables), posterior predictive scoring (log
//! score, ranked probability score, MAE), leave-one-year-out
//! cross-validation and the regulatory chi-square consistency test.

pub mod data;
pub mod error;
pub mod gp;
pub mod mcmc;
pub mod models;
pub mod optim;
pub mod parallel;
pub mod reference_prep;
pub mod scoring;
pub mod seed;
pub mod stats;
pub mod synthetic;

pub use data::{
    aggregate_totals, load_fund_csv, load_reference_csv, save_fund_csv, save_reference_csv,
    AgeYearGrid, FundDataset, ReferenceTable, YearTotals,
};
pub use error::{Error, Result};
pub use gp::{
    build_covariance, cholesky_with_jitter, gp_condition, gp_log_marginal_likelihood,
    kernel_eval, whiten_transform, CholeskyFactor, GpInput, KernelSpec,
};
pub use mcmc::{
    compute_diagnostics, grid_posterior_fd1, initialize_chain, posterior_summary, run_mcmc,
    run_mcmc_with_threads, Draw, Fd1GridPosterior, Fd1GridSpec, McmcConfig, ParamDiagnostics,
    ParamSummary, PosteriorDraws,
};
pub use models::{
    deflator_surface, log_intensity, log_likelihood, log_posterior, log_prior,
    predict_mortality, simulate_fund, ModelId, ModelSpec, MortalitySurface, ParameterVector,
};
pub use reference_prep::{
    calibrate_prior_means, gompertz_extrapolate, gompertz_extrapolate_table, gompertz_fit,
    interpolate_reference_gp, GompertzCoeffs, InterpolationHyperParams, PriorMeanCalibration,
};
pub use scoring::{
    chi_square_consistency, log_score, loo_cv_by_year, mae, predictive_pmf, rps, ChiSquareResult,
    CvReport, FoldScores, MaePointForecast, PredictivePmf, ScoreConfig, SplitScores,
};
pub use stats::{
    ar1_logdensity, ar1_stationary_moments, negbin_logpmf, negbin_sample, truncnormal_logpdf,
    truncnormal_sample, Ar1DeflatorProcess, NegBinParams, TruncNormalPrior,
};

//! The six subcommands. Each resolves its configuration, runs the
//! corresponding library operations, and writes a versioned artifact layout
//! (`run.json` plus command-specific CSV/JSON files) into `--out`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mortdef_core::data::{
    load_fund_csv, load_reference_csv, save_fund_csv, save_reference_csv, AgeYearGrid,
    FundDataset, ReferenceTable,
};
use mortdef_core::mcmc::{run_mcmc_with_threads, PosteriorDraws};
use mortdef_core::models::{
    predict_mortality, simulate_fund, ModelId, ModelSpec, ParameterVector,
};
use mortdef_core::reference_prep::{
    calibrate_prior_means, fit_interpolation_hyperparams, gompertz_extrapolate_table,
    interpolate_with, InterpolationHyperParams, LinearMean, PriorMeanCalibration,
    DEFAULT_CALIBRATION_OFFSET,
};
use mortdef_core::scoring::loo_cv_by_year;
use mortdef_core::seed::{derive_seed, DOMAIN_PREDICT, DOMAIN_SIMULATE};
use mortdef_core::synthetic::default_exposure_profile;
use mortdef_core::{Error, Result};

use crate::config::{
    parse_model_id, parse_year_range, require_file, thread_budget, FileConfig, McmcSettings,
    RunConfig, ScoreSettings,
};
use crate::output;
use crate::{ConsistencyArgs, PredictArgs, PrepareArgs, RunArgs, SimulateArgs};

fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => FileConfig::load(&require_file(path, "config")?)?,
        None => FileConfig::default(),
    };
    let model = args
        .model
        .clone()
        .or(file.model)
        .ok_or_else(|| Error::Data("--model is required".into()))?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .ok_or_else(|| Error::Data("--out is required".into()))?;
    let train_years = match args.train_years.clone().or(file.train_years) {
        Some(s) => Some(parse_year_range(&s)?),
        None => None,
    };
    let test_year = args.test_year.or(file.test_year);
    if let (Some((lo, hi)), Some(t)) = (train_years, test_year) {
        if (lo..=hi).contains(&t) {
            return Err(Error::Data(format!(
                "test year {t} must lie outside the training years {lo}:{hi}"
            )));
        }
    }
    let defaults_mcmc = McmcSettings::default();
    let mcmc = McmcSettings {
        chains: args.chains.or(file.mcmc.chains).unwrap_or(defaults_mcmc.chains),
        iters: args.iters.or(file.mcmc.iters).unwrap_or(defaults_mcmc.iters),
        burnin: args
            .burnin
            .or(file.mcmc.burnin)
            .unwrap_or(defaults_mcmc.burnin),
        thin: args.thin.or(file.mcmc.thin).unwrap_or(defaults_mcmc.thin),
        target_acceptance: file
            .mcmc
            .target_acceptance
            .unwrap_or(defaults_mcmc.target_acceptance),
    };
    let defaults_score = ScoreSettings::default();
    let score = ScoreSettings {
        dbar: args.dbar.or(file.score.dbar).unwrap_or(defaults_score.dbar),
        rps_include_k0: args.rps_include_k0
            || file.score.rps_include_k0.unwrap_or(defaults_score.rps_include_k0),
    };
    let fund = args.fund.clone().or(file.fund);
    let reference = args.reference.clone().or(file.reference);
    if let Some(f) = &fund {
        require_file(f, "fund")?;
    }
    if let Some(r) = &reference {
        require_file(r, "reference")?;
    }
    let calibration = resolve_calibration(
        args.calibration.clone().or(file.calibration).as_deref(),
        args.prior_table.clone().or(file.prior_table).as_deref(),
        args.prior_offset.or(file.prior_offset),
        &model,
    )?;
    Ok(RunConfig {
        model,
        fund,
        reference,
        reference_label: args
            .reference_label
            .clone()
            .or(file.reference_label)
            .unwrap_or_else(|| "REF".to_string()),
        train_years,
        test_year,
        out,
        seed: args.seed.or(file.seed).unwrap_or(0),
        mcmc,
        score,
        calibration,
        threads: thread_budget(),
    })
}

/// GP-S prior centers come either from a saved calibration JSON or from a
/// one-off regression on a `--prior-table` reference CSV.
fn resolve_calibration(
    calibration_path: Option<&str>,
    prior_table: Option<&str>,
    prior_offset: Option<f64>,
    model_list: &str,
) -> Result<Option<PriorMeanCalibration>> {
    let any_gp_s = model_list
        .split(',')
        .map(|m| m.trim().to_ascii_uppercase())
        .any(|m| m == "GP-S1" || m == "GPS1" || m == "GP-S2" || m == "GPS2");
    if let Some(path) = calibration_path {
        let text = std::fs::read_to_string(require_file(path, "calibration")?)
            .map_err(|e| Error::Io {
                path: path.to_string(),
                source: e,
            })?;
        let calib: PriorMeanCalibration = serde_json::from_str(&text).map_err(|e| {
            Error::Parse {
                path: path.to_string(),
                line: 1,
                message: format!("calibration parse error: {e}"),
            }
        })?;
        return Ok(Some(calib));
    }
    if let Some(path) = prior_table {
        let table = load_reference_csv(require_file(path, "prior table")?, "PRIOR")?;
        let offset = prior_offset.unwrap_or(DEFAULT_CALIBRATION_OFFSET);
        let calib = calibrate_prior_means(&table, table.grid().n_years() > 1, offset)?;
        return Ok(Some(calib));
    }
    if any_gp_s {
        return Err(Error::ModelSpec(
            "GP-S models need prior-mean calibration: pass --calibration or --prior-table"
                .into(),
        ));
    }
    Ok(None)
}

struct LoadedRun {
    config: RunConfig,
    spec: ModelSpec,
    train: FundDataset,
    reference: Option<ReferenceTable>,
}

fn load_run(config: RunConfig, model: ModelId) -> Result<LoadedRun> {
    let fund_path = config
        .fund
        .as_ref()
        .ok_or_else(|| Error::Data("--fund is required".into()))?;
    let data = load_fund_csv(fund_path)?;
    let train = match config.train_years {
        Some((lo, hi)) => data.restrict_years(lo, hi)?,
        None => data,
    };
    let reference = match &config.reference {
        Some(path) => {
            if !model.uses_reference() {
                return Err(Error::ModelSpec(format!(
                    "{model} models the fund directly; --reference is forbidden"
                )));
            }
            let table = load_reference_csv(path, config.reference_label.clone())?;
            if table.needs_interpolation() {
                return Err(Error::Data(format!(
                    "reference {path} has gap years; run prepare-reference --mode interpolate first"
                )));
            }
            Some(table)
        }
        None => {
            if model.uses_reference() {
                return Err(Error::ModelSpec(format!(
                    "{model} requires --reference"
                )));
            }
            None
        }
    };
    let spec = ModelSpec::new(
        model,
        train.grid().clone(),
        reference.as_ref().map(|_| config.reference_label.clone()),
        if model.uses_reference() {
            None
        } else {
            config.calibration.clone()
        },
    )?;
    Ok(LoadedRun {
        config,
        spec,
        train,
        reference,
    })
}

fn write_run_json(dir: &Path, config: &RunConfig, command: &str) -> Result<()> {
    let mut value = serde_json::to_value(config).expect("config serializes");
    value["command"] = json!(command);
    output::write_json(&dir.join("run.json"), &value)
}

pub fn cmd_fit(args: &RunArgs) -> Result<()> {
    let config = resolve_run_config(args)?;
    let model = parse_model_id(&config.model)?;
    let run = load_run(config, model)?;
    let dir = PathBuf::from(&run.config.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_run_json(&dir, &run.config, "fit")?;

    let core_config = run.config.mcmc.to_core(run.config.seed);
    let draws = run_mcmc_with_threads(
        &run.spec,
        &run.train,
        run.reference.as_ref(),
        &core_config,
        run.config.threads,
    )?;

    output::write_text(&dir.join("draws.csv"), &draws.to_long_csv())?;
    let years = run.spec.grid.years();
    let summary = output::summary_json(&draws, (years[0], *years.last().unwrap()))?;
    output::write_json(&dir.join("summary.json"), &summary)?;
    output::write_text(
        &dir.join("surface.csv"),
        &output::surface_csv(&draws, run.reference.as_ref())?,
    )?;
    output::write_json(
        &dir.join("diagnostics.json"),
        &output::diagnostics_json(&draws, &run.train.zero_exposure_cells()),
    )?;
    Ok(())
}

/// Rebuild the fitted model and draws from a fit directory.
fn load_fit_dir(fit_dir: &str) -> Result<(RunConfigEcho, ModelSpec, PosteriorDraws)> {
    let dir = PathBuf::from(fit_dir);
    let run_path = dir.join("run.json");
    if !run_path.is_file() {
        return Err(Error::Data(format!(
            "{fit_dir} does not look like a fit directory (missing run.json)"
        )));
    }
    let text = std::fs::read_to_string(&run_path).map_err(|e| Error::Io {
        path: run_path.display().to_string(),
        source: e,
    })?;
    let echo: RunConfigEcho = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: run_path.display().to_string(),
        line: 1,
        message: format!("run.json parse error: {e}"),
    })?;
    let model: ModelId = echo.model.parse()?;
    let fund = echo
        .fund
        .clone()
        .ok_or_else(|| Error::Data("run.json lacks a fund path".into()))?;
    let data = load_fund_csv(&fund)?;
    let train = match echo.train_years {
        Some((lo, hi)) => data.restrict_years(lo, hi)?,
        None => data,
    };
    let spec = ModelSpec::new(
        model,
        train.grid().clone(),
        model.uses_reference().then(|| echo.reference_label.clone()),
        (!model.uses_reference())
            .then(|| echo.calibration.clone())
            .flatten(),
    )?;
    let draws_text = std::fs::read_to_string(dir.join("draws.csv")).map_err(|e| Error::Io {
        path: dir.join("draws.csv").display().to_string(),
        source: e,
    })?;
    let draws = PosteriorDraws::from_long_csv(&spec, &draws_text)?;
    Ok((echo, spec, draws))
}

/// The subset of run.json that prediction and the consistency test need.
#[derive(serde::Deserialize)]
struct RunConfigEcho {
    model: String,
    fund: Option<String>,
    reference_label: String,
    train_years: Option<(i32, i32)>,
    seed: u64,
    calibration: Option<PriorMeanCalibration>,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (echo, spec, draws) = load_fit_dir(&args.fit)?;
    if let Some(m) = &args.model {
        let requested: ModelId = m.parse()?;
        if requested != spec.id {
            return Err(Error::ModelSpec(format!(
                "fitted draws are {} but --model says {requested}",
                spec.id
            )));
        }
    }
    let reference = match &args.reference {
        Some(path) => Some(load_reference_csv(
            require_file(path, "reference")?,
            echo.reference_label.clone(),
        )?),
        None => None,
    };
    if spec.id.uses_reference() && reference.is_none() {
        return Err(Error::ModelSpec(format!(
            "{} prediction needs --reference covering year {}",
            spec.id, args.test_year
        )));
    }
    let seed = args
        .seed
        .unwrap_or_else(|| derive_seed(echo.seed, DOMAIN_PREDICT, 0));
    let params = draws.params();
    let curves = predict_mortality(&spec, &params, args.test_year, reference.as_ref(), seed)?;

    let dir = PathBuf::from(&args.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let run = json!({
        "command": "predict",
        "model": spec.id.to_string(),
        "fit": args.fit,
        "test_year": args.test_year,
        "reference": args.reference,
        "seed": seed,
    });
    output::write_json(&dir.join("run.json"), &run)?;
    output::write_text(
        &dir.join("curves.csv"),
        &output::curves_csv(&spec.grid, &curves),
    )?;
    Ok(())
}

pub fn cmd_cv(args: &RunArgs) -> Result<()> {
    let config = resolve_run_config(args)?;
    let dir = PathBuf::from(&config.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_run_json(&dir, &config, "cv")?;

    let models: Vec<ModelId> = config
        .model
        .split(',')
        .map(|m| m.trim().parse::<ModelId>())
        .collect::<Result<_>>()?;
    let mut reports = Vec::with_capacity(models.len());
    for &model in &models {
        let run = load_run(config.clone_for_model(model), model)?;
        let core_config = run.config.mcmc.to_core(run.config.seed);
        let report = match loo_cv_by_year(
            &run.spec,
            &run.train,
            run.reference.as_ref(),
            &core_config,
            &run.config.score.to_core(),
            run.config.threads,
        ) {
            Ok(r) => r,
            Err(e) => {
                // flag the partial results instead of leaving a valid-looking file
                output::write_text(
                    &dir.join("scores.partial.csv"),
                    &output::scores_csv(&reports),
                )?;
                return Err(Error::Data(format!(
                    "fold failure for {model}: {e}; partial results in scores.partial.csv"
                )));
            }
        };
        reports.push(report);
    }
    output::write_text(&dir.join("scores.csv"), &output::scores_csv(&reports))?;
    output::write_text(&dir.join("cv_table.csv"), &output::cv_table_csv(&reports))?;
    output::write_json(&dir.join("scores.json"), &output::cv_json(&reports))?;
    Ok(())
}

impl RunConfig {
    fn clone_for_model(&self, model: ModelId) -> RunConfig {
        let mut c = self.clone();
        c.model = model.to_string();
        if !model.uses_reference() {
            c.reference = None;
        }
        c
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let model: ModelId = args.model.parse()?;
    let ages = match &args.ages {
        Some(s) => parse_year_range(s)?,
        None => (60, 89),
    };
    let years = match &args.years {
        Some(s) => parse_year_range(s)?,
        None => (2013, 2019),
    };
    let grid = AgeYearGrid::from_ranges(ages.0, ages.1, years.0, years.1)?;
    let reference = match &args.reference {
        Some(path) => Some(load_reference_csv(
            require_file(path, "reference")?,
            args.reference_label.clone().unwrap_or_else(|| "REF".into()),
        )?),
        None => None,
    };
    let calibration = match &args.calibration {
        Some(path) => {
            let text = std::fs::read_to_string(require_file(path, "calibration")?)
                .map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                line: 1,
                message: format!("calibration parse error: {e}"),
            })?)
        }
        None => None,
    };
    let spec = ModelSpec::new(
        model,
        grid.clone(),
        reference.as_ref().map(|r: &ReferenceTable| r.label().to_string()),
        calibration,
    )?;

    let text = std::fs::read_to_string(require_file(&args.params, "parameter")?)
        .map_err(|e| Error::Io {
            path: args.params.clone(),
            source: e,
        })?;
    let named: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: args.params.clone(),
        line: 1,
        message: format!("parameter file parse error: {e}"),
    })?;
    let params = ParameterVector::from_named(&spec, &named)?;

    let exposures = match &args.exposures {
        Some(path) => {
            let donor = load_fund_csv(require_file(path, "exposure")?)?;
            if donor.grid() != &grid {
                return Err(Error::GridMismatch(
                    "exposure donor grid differs from the simulation grid".into(),
                ));
            }
            donor.exposures().clone()
        }
        None => default_exposure_profile(&grid),
    };
    let mut rng = mortdef_core::seed::seeded_rng(derive_seed(args.seed, DOMAIN_SIMULATE, 0));
    let sim = simulate_fund(&spec, &params, &exposures, reference.as_ref(), &mut rng)?;

    let dir = PathBuf::from(&args.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let run = json!({
        "command": "simulate",
        "model": spec.id.to_string(),
        "params": named,
        "ages": [ages.0, ages.1],
        "years": [years.0, years.1],
        "seed": args.seed,
        "reference": args.reference,
    });
    output::write_json(&dir.join("run.json"), &run)?;
    save_fund_csv(&sim, dir.join("fund.csv"))?;
    Ok(())
}

pub fn cmd_prepare_reference(args: &PrepareArgs) -> Result<()> {
    let label = args
        .reference_label
        .clone()
        .unwrap_or_else(|| "REF".to_string());
    let table = load_reference_csv(require_file(&args.input, "reference")?, label)?;
    let dir = PathBuf::from(&args.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    match args.mode.as_str() {
        "extrapolate" => {
            let to_age = args.to_age.unwrap_or(89);
            let (extended, coeffs) = gompertz_extrapolate_table(&table, to_age)?;
            for (year, c) in &coeffs {
                if c.slope < 0.0 {
                    eprintln!(
                        "warning: negative age slope {:.4} for year {year}; rates fall with age",
                        c.slope
                    );
                }
            }
            save_reference_csv(&extended, dir.join("reference.csv"))?;
            let provenance = json!({
                "command": "prepare-reference",
                "mode": "extrapolate",
                "input": args.input,
                "to_age": to_age,
                "coefficients": coeffs
                    .iter()
                    .map(|(year, c)| json!({
                        "year": year,
                        "intercept": c.intercept,
                        "slope": c.slope,
                        "pivot_age": c.pivot_age,
                    }))
                    .collect::<Vec<_>>(),
            });
            output::write_json(&dir.join("provenance.json"), &provenance)?;
        }
        "interpolate" => {
            let years = match &args.years {
                Some(s) => {
                    let (lo, hi) = parse_year_range(s)?;
                    (lo..=hi).collect::<Vec<_>>()
                }
                None => {
                    let lo = table.grid().years()[0];
                    let hi = *table.grid().years().last().unwrap();
                    (lo..=hi).collect()
                }
            };
            let (params, mean): (InterpolationHyperParams, LinearMean) =
                match &args.hyperparams {
                    Some(path) => {
                        let text = std::fs::read_to_string(require_file(path, "hyperparams")?)
                            .map_err(|e| Error::Io {
                                path: path.clone(),
                                source: e,
                            })?;
                        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
                            path: path.clone(),
                            line: 1,
                            message: format!("hyperparams parse error: {e}"),
                        })?;
                        let params = serde_json::from_value(v["hyperparams"].clone())
                            .map_err(|e| Error::Data(format!("bad hyperparams: {e}")))?;
                        let mean = serde_json::from_value(v["mean"].clone())
                            .map_err(|e| Error::Data(format!("bad mean: {e}")))?;
                        (params, mean)
                    }
                    None => {
                        let (params, mean, _ll) =
                            fit_interpolation_hyperparams(&table, args.seed)?;
                        (params, mean)
                    }
                };
            let interpolated = interpolate_with(&table, &years, &params, &mean)?;
            save_reference_csv(&interpolated, dir.join("reference.csv"))?;
            let provenance = json!({
                "command": "prepare-reference",
                "mode": "interpolate",
                "input": args.input,
                "years": [years[0], *years.last().unwrap()],
                "seed": args.seed,
                "hyperparams": params,
                "mean": mean,
            });
            output::write_json(&dir.join("provenance.json"), &provenance)?;
        }
        other => {
            return Err(Error::Data(format!(
                "unknown mode `{other}`; use extrapolate or interpolate"
            )))
        }
    }
    Ok(())
}

pub fn cmd_consistency_test(args: &ConsistencyArgs) -> Result<()> {
    let data = load_fund_csv(require_file(&args.fund, "fund")?)?;
    let dir = PathBuf::from(&args.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;

    let (observed, expected, source) = match (&args.reference, &args.fit) {
        (Some(path), None) => {
            let table = load_reference_csv(require_file(path, "reference")?, "REF")?;
            let (o, e) = mortdef_core::scoring::observed_expected_by_age(&data, &table)?;
            (o, e, json!({"kind": "table", "path": path}))
        }
        (None, Some(fit_dir)) => {
            let (echo, spec, draws) = load_fit_dir(fit_dir)?;
            let reference = if spec.id.uses_reference() {
                let run_ref: Value = serde_json::from_str(
                    &std::fs::read_to_string(Path::new(fit_dir).join("run.json")).map_err(
                        |e| Error::Io {
                            path: fit_dir.clone(),
                            source: e,
                        },
                    )?,
                )
                .expect("run.json already parsed once");
                let path = run_ref["reference"].as_str().ok_or_else(|| {
                    Error::Data("fitted run.json lacks a reference path".into())
                })?;
                Some(load_reference_csv(path, echo.reference_label.clone())?)
            } else {
                None
            };
            let fit_data = {
                let full = load_fund_csv(echo.fund.as_ref().unwrap())?;
                match echo.train_years {
                    Some((lo, hi)) => full.restrict_years(lo, hi)?,
                    None => full,
                }
            };
            let expected = mortdef_core::scoring::expected_by_age_from_draws(
                &spec,
                &draws,
                &fit_data,
                reference.as_ref(),
            )?;
            let observed: Vec<u64> = (0..fit_data.grid().n_ages())
                .map(|i| {
                    (0..fit_data.grid().n_years())
                        .map(|j| fit_data.deaths()[(i, j)])
                        .sum()
                })
                .collect();
            (observed, expected, json!({"kind": "model", "fit": fit_dir}))
        }
        _ => {
            return Err(Error::Data(
                "pass exactly one of --reference (table-based) or --fit (model-based)".into(),
            ))
        }
    };
    let result = mortdef_core::scoring::chi_square_consistency(&observed, &expected)?;
    let report = json!({
        "command": "consistency-test",
        "fund": args.fund,
        "expected_source": source,
        "statistic": output::json_num(result.statistic),
        "dof": result.dof,
        "p_value": output::json_num(result.p_value),
        "pooling": result.pooling,
    });
    output::write_json(&dir.join("consistency.json"), &report)?;
    Ok(())
}

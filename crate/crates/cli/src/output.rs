//! Artifact writers. All numeric formatting uses the shortest
//! representation that round-trips, so identical runs produce identical
//! bytes. No artifact carries a timestamp.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use mortdef_core::data::AgeYearGrid;
use mortdef_core::mcmc::{posterior_summary, PosteriorDraws};
use mortdef_core::models::{materialize_effect, GpCholCache, ModelSpec};
use mortdef_core::scoring::CvReport;
use mortdef_core::{Error, ReferenceTable, Result};

pub fn error_json(err: &Error) -> String {
    let kind = match err {
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
        Error::Data(_) => "data",
        Error::GridMismatch(_) => "grid_mismatch",
        Error::NotPositiveDefinite { .. } => "not_positive_definite",
        Error::Optimizer(_) => "optimizer",
        Error::ModelSpec(_) => "model_spec",
        Error::InsufficientData(_) => "insufficient_data",
        Error::Mcmc(_) => "mcmc",
        Error::UnknownParameter(_) => "unknown_parameter",
    };
    serde_json::to_string(&json!({
        "error": kind,
        "message": format!("{err}"),
    }))
    .expect("error payload serializes")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Finite floats pass through; NaN and infinities become JSON strings so the
/// document stays valid.
pub fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format!("{v}"))
    }
}

/// Per-parameter posterior summary table with diagnostics.
pub fn summary_json(draws: &PosteriorDraws, train_years: (i32, i32)) -> Result<Value> {
    let mut params = serde_json::Map::new();
    for name in draws.param_names() {
        let s = posterior_summary(draws, &name)?;
        let diag = draws.diagnostics.get(&name);
        params.insert(
            name.clone(),
            json!({
                "mean": json_num(s.mean),
                "lo50": json_num(s.lo50),
                "hi50": json_num(s.hi50),
                "lo90": json_num(s.lo90),
                "hi90": json_num(s.hi90),
                "rhat": diag.and_then(|d| d.rhat).map(json_num).unwrap_or(Value::Null),
                "ess": diag.map(|d| json_num(d.ess)).unwrap_or(Value::Null),
            }),
        );
    }
    Ok(json!({
        "model": draws.spec.id.to_string(),
        "reference_label": draws.spec.reference_label,
        "train_years": [train_years.0, train_years.1],
        "draws": draws.draws.len(),
        "parameters": Value::Object(params),
    }))
}

pub fn diagnostics_json(
    draws: &PosteriorDraws,
    zero_exposure_cells: &[(i32, i32)],
) -> Value {
    let mut per_param = serde_json::Map::new();
    for (name, d) in &draws.diagnostics {
        per_param.insert(
            name.clone(),
            json!({
                "rhat": d.rhat.map(json_num).unwrap_or(Value::Null),
                "ess": json_num(d.ess),
            }),
        );
    }
    json!({
        "parameters": Value::Object(per_param),
        "diagnostics_error": draws.diagnostics_error,
        "acceptance_by_chain": draws.acceptance_by_chain,
        "zero_exposure_cells": zero_exposure_cells,
    })
}

/// Posterior-mean deflator/log-rate surface as `age,year,log_rate,deflator`.
/// The deflator column is empty for models without a reference.
pub fn surface_csv(draws: &PosteriorDraws, reference: Option<&ReferenceTable>) -> Result<String> {
    let spec: &ModelSpec = &draws.spec;
    let grid = &spec.grid;
    let mut cache = GpCholCache::default();
    let mut mean_effect =
        nalgebra::DMatrix::<f64>::zeros(grid.n_ages(), grid.n_years());
    for d in &draws.draws {
        mean_effect += materialize_effect(spec, &d.params, &mut cache)?;
    }
    mean_effect /= draws.draws.len() as f64;

    let mut out = String::from("age,year,log_rate,deflator\n");
    for (i, &age) in grid.ages().iter().enumerate() {
        for (j, &year) in grid.years().iter().enumerate() {
            let effect = mean_effect[(i, j)];
            let (log_rate, deflator) = if spec.id.uses_reference() {
                let m = reference
                    .and_then(|r| r.rate_at(age, year))
                    .ok_or_else(|| {
                        Error::GridMismatch(format!("reference missing ({age}, {year})"))
                    })?;
                (effect + m.ln(), Some(effect))
            } else {
                (effect, None)
            };
            match deflator {
                Some(d) => {
                    let _ = writeln!(out, "{age},{year},{log_rate},{d}");
                }
                None => {
                    let _ = writeln!(out, "{age},{year},{log_rate},");
                }
            }
        }
    }
    Ok(out)
}

/// Plot-ready per-age prediction curves.
pub fn curves_csv(
    grid: &AgeYearGrid,
    curves: &[nalgebra::DVector<f64>],
) -> String {
    let mut out = String::from("age,mean,lo50,hi50,lo90,hi90\n");
    for (i, &age) in grid.ages().iter().enumerate() {
        let mut values: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| mortdef_core::mcmc::quantile(&values, p);
        let _ = writeln!(
            out,
            "{age},{mean},{},{},{},{}",
            q(0.25),
            q(0.75),
            q(0.05),
            q(0.95)
        );
    }
    out
}

/// Long per-fold score rows: `model,fold_year,split,metric,value,N`.
pub fn scores_csv(reports: &[CvReport]) -> String {
    let mut out = String::from("model,fold_year,split,metric,value,N\n");
    for report in reports {
        for fold in &report.folds {
            for (split, s) in [("out", fold.out_of_sample), ("in", fold.in_sample)] {
                for (metric, value) in [
                    ("log_score", s.log_score),
                    ("rps", s.rps),
                    ("mae", s.mae),
                ] {
                    let _ = writeln!(
                        out,
                        "{},{},{split},{metric},{value},{}",
                        report.model, fold.fold_year, s.n
                    );
                }
            }
        }
    }
    out
}

/// Pooled table in the layout of the published score comparison: one row
/// per model x metric x split, value = mean of the yearly scores.
pub fn cv_table_csv(reports: &[CvReport]) -> String {
    let mut out = String::from("model,metric,split,value\n");
    for report in reports {
        for (metric, out_v, in_v) in [
            ("rps", report.mean_out.rps, report.mean_in.rps),
            (
                "log_score",
                report.mean_out.log_score,
                report.mean_in.log_score,
            ),
        ] {
            let _ = writeln!(out, "{},{metric},out,{out_v}", report.model);
            let _ = writeln!(out, "{},{metric},in,{in_v}", report.model);
        }
    }
    out
}

pub fn cv_json(reports: &[CvReport]) -> Value {
    let mut models = serde_json::Map::new();
    for r in reports {
        models.insert(
            r.model.clone(),
            json!({
                "rps": {"out": json_num(r.mean_out.rps), "in": json_num(r.mean_in.rps)},
                "log_score": {"out": json_num(r.mean_out.log_score), "in": json_num(r.mean_in.log_score)},
                "mae": {"out": json_num(r.mean_out.mae), "in": json_num(r.mean_in.mae)},
                "n_out": r.mean_out.n,
                "n_in": r.mean_in.n,
                "floored_out": r.mean_out.floored,
                "floored_in": r.mean_in.floored,
            }),
        );
    }
    json!({
        "d_bar": reports.first().map(|r| r.d_bar).unwrap_or(10),
        "models": Value::Object(models),
    })
}

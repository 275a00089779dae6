//! End-to-end command tests on the bundled fixtures: artifact layout,
//! schema conformance, determinism (including across worker-thread caps),
//! and the documented failure modes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mortdef")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn schemas() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/artifacts.json")
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    match threads {
        Some(t) => {
            cmd.env("MORTDEF_THREADS", t);
        }
        None => {
            cmd.env_remove("MORTDEF_THREADS");
        }
    }
    cmd.output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Validate every artifact in `dir` that has a schema entry.
fn validate_artifacts(dir: &Path) {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(schemas()).unwrap()).unwrap();
    let artifacts = schema["artifacts"].as_object().unwrap();
    let mut checked = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let Some(contract) = artifacts.get(&name) else {
            panic!("artifact {name} has no schema entry");
        };
        let text = std::fs::read_to_string(&path).unwrap();
        match contract["type"].as_str().unwrap() {
            "csv" => {
                let header = text.lines().next().unwrap_or("");
                assert_eq!(
                    header,
                    contract["header"].as_str().unwrap(),
                    "{name}: header mismatch"
                );
            }
            "json" => {
                let value: serde_json::Value = serde_json::from_str(&text)
                    .unwrap_or_else(|e| panic!("{name}: invalid json: {e}"));
                for key in contract["required_keys"].as_array().unwrap() {
                    assert!(
                        value.get(key.as_str().unwrap()).is_some(),
                        "{name}: missing key {key}"
                    );
                }
            }
            other => panic!("unknown schema type {other}"),
        }
        checked += 1;
    }
    assert!(checked > 0, "no artifacts found in {}", dir.display());
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        out.insert(name, std::fs::read(&path).unwrap());
    }
    out
}

fn quick_fit_args<'a>(
    model: &'a str,
    out_dir: &'a str,
    fund: &'a str,
    reference: &'a str,
) -> Vec<&'a str> {
    vec![
        "fit",
        "--model",
        model,
        "--fund",
        fund,
        "--reference",
        reference,
        "--reference-label",
        "BRA",
        "--train-years",
        "2013:2018",
        "--test-year",
        "2019",
        "--chains",
        "2",
        "--iters",
        "600",
        "--burnin",
        "200",
        "--thin",
        "4",
        "--seed",
        "7",
        "--out",
        out_dir,
    ]
}

#[test]
fn fit_writes_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("fd1");
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    let out = run(
        &quick_fit_args(
            "FD-1",
            out_dir.to_str().unwrap(),
            fund.to_str().unwrap(),
            reference.to_str().unwrap(),
        ),
        Some("2"),
    );
    assert_ok(&out);
    for name in ["run.json", "draws.csv", "summary.json", "surface.csv", "diagnostics.json"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    validate_artifacts(&out_dir);

    // FD-1 summary carries exactly theta and omega
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    let params: Vec<&String> = summary["parameters"].as_object().unwrap().keys().collect();
    assert_eq!(params, vec!["omega", "theta"]);
    assert_eq!(summary["draws"], 200); // 2 chains x (600-200)/4
}

#[test]
fn fit_rerun_is_byte_identical_across_thread_caps() {
    let tmp = tempfile::tempdir().unwrap();
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    let mut snapshots = Vec::new();
    for (dir_name, threads) in [("a", "1"), ("b", "3"), ("c", "1")] {
        let out_dir = tmp.path().join(dir_name);
        let out = run(
            &quick_fit_args(
                "AD-AR",
                out_dir.to_str().unwrap(),
                fund.to_str().unwrap(),
                reference.to_str().unwrap(),
            ),
            Some(threads),
        );
        assert_ok(&out);
        let mut bytes = read_dir_bytes(&out_dir);
        // run.json echoes the thread budget; numeric artifacts must agree
        bytes.remove("run.json");
        snapshots.push(bytes);
    }
    assert_eq!(snapshots[0], snapshots[1], "thread cap changed artifacts");
    assert_eq!(snapshots[0], snapshots[2], "rerun changed artifacts");
}

#[test]
fn predict_from_fit_produces_nested_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let fit_dir = tmp.path().join("fit");
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    assert_ok(&run(
        &quick_fit_args(
            "AD-GP",
            fit_dir.to_str().unwrap(),
            fund.to_str().unwrap(),
            reference.to_str().unwrap(),
        ),
        Some("2"),
    ));
    let pred_dir = tmp.path().join("pred");
    let out = run(
        &[
            "predict",
            "--fit",
            fit_dir.to_str().unwrap(),
            "--reference",
            reference.to_str().unwrap(),
            "--test-year",
            "2019",
            "--out",
            pred_dir.to_str().unwrap(),
        ],
        Some("2"),
    );
    assert_ok(&out);
    validate_artifacts(&pred_dir);
    let curves = std::fs::read_to_string(pred_dir.join("curves.csv")).unwrap();
    let mut rows = 0;
    for line in curves.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        let (mean, lo50, hi50, lo90, hi90) = (f[0], f[1], f[2], f[3], f[4]);
        assert!(lo90 <= lo50 && lo50 <= hi50 && hi50 <= hi90, "{line}");
        assert!(mean.is_finite());
        rows += 1;
    }
    assert_eq!(rows, 30);
}

#[test]
fn predict_model_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let fit_dir = tmp.path().join("fit");
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    assert_ok(&run(
        &quick_fit_args(
            "FD-1",
            fit_dir.to_str().unwrap(),
            fund.to_str().unwrap(),
            reference.to_str().unwrap(),
        ),
        Some("2"),
    ));
    let out = run(
        &[
            "predict",
            "--fit",
            fit_dir.to_str().unwrap(),
            "--model",
            "AD-GP",
            "--reference",
            reference.to_str().unwrap(),
            "--test-year",
            "2019",
            "--out",
            tmp.path().join("pred").to_str().unwrap(),
        ],
        Some("2"),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "model_spec");
}

#[test]
fn gp_s_reference_flag_is_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    let out = run(
        &[
            "fit",
            "--model",
            "GP-S1",
            "--fund",
            fund.to_str().unwrap(),
            "--reference",
            reference.to_str().unwrap(),
            "--prior-table",
            reference.to_str().unwrap(),
            "--train-years",
            "2013:2018",
            "--chains",
            "2",
            "--iters",
            "300",
            "--burnin",
            "100",
            "--thin",
            "4",
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ],
        Some("2"),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"], "model_spec");
    assert!(err["message"].as_str().unwrap().contains("forbidden"));
}

#[test]
fn cv_reports_30_out_180_in_and_row_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("cv");
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    let out = run(
        &[
            "cv",
            "--model",
            "FD-1,FD-0",
            "--fund",
            fund.to_str().unwrap(),
            "--reference",
            reference.to_str().unwrap(),
            "--reference-label",
            "BRA",
            "--chains",
            "2",
            "--iters",
            "400",
            "--burnin",
            "150",
            "--thin",
            "5",
            "--seed",
            "3",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        Some("4"),
    );
    assert_ok(&out);
    validate_artifacts(&out_dir);

    // pooled table: 2 models x 2 metrics x 2 splits = 8 rows
    let table = std::fs::read_to_string(out_dir.join("cv_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 9); // header + 8

    // per-fold N columns: 30 out, 180 in on the 30x7 fixture
    let scores = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    let mut seen_folds = 0;
    for line in scores.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let (split, n) = (fields[2], fields[5].parse::<usize>().unwrap());
        match split {
            "out" => assert_eq!(n, 30, "{line}"),
            "in" => assert_eq!(n, 180, "{line}"),
            other => panic!("unknown split {other}"),
        }
        seen_folds += 1;
    }
    // 2 models x 7 folds x 2 splits x 3 metrics
    assert_eq!(seen_folds, 84);
}

#[test]
fn simulate_is_reproducible_and_respects_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let params = tmp.path().join("truth.json");
    std::fs::write(&params, r#"{"theta": -0.5, "omega": 0.2}"#).unwrap();
    let reference = fixtures().join("reference_bra.csv");
    let run_once = |dir: &Path| {
        let out = run(
            &[
                "simulate",
                "--model",
                "FD-1",
                "--params",
                params.to_str().unwrap(),
                "--reference",
                reference.to_str().unwrap(),
                "--years",
                "2013:2019",
                "--seed",
                "11",
                "--out",
                dir.to_str().unwrap(),
            ],
            Some("2"),
        );
        assert_ok(&out);
        std::fs::read_to_string(dir.join("fund.csv")).unwrap()
    };
    let a = run_once(&tmp.path().join("a"));
    let b = run_once(&tmp.path().join("b"));
    assert_eq!(a, b);

    // default age pyramid: peak 250 at age 70, floor 5 at 89
    let mut exposure_at = BTreeMap::new();
    for line in a.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[1] == "2013" {
            exposure_at.insert(
                fields[0].parse::<i32>().unwrap(),
                fields[2].parse::<f64>().unwrap(),
            );
        }
    }
    assert_eq!(exposure_at[&70], 250.0);
    assert!((exposure_at[&89] - 5.0).abs() < 1e-9);

    // simulated totals sit near e^-0.5 * sum(m E)
    let ref_text = std::fs::read_to_string(&reference).unwrap();
    let mut rates = BTreeMap::new();
    for line in ref_text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        rates.insert(
            (fields[0].parse::<i32>().unwrap(), fields[1].parse::<i32>().unwrap()),
            fields[2].parse::<f64>().unwrap(),
        );
    }
    let mut expected = 0.0;
    let mut total = 0.0f64;
    for line in a.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let age: i32 = fields[0].parse().unwrap();
        let year: i32 = fields[1].parse().unwrap();
        let e: f64 = fields[2].parse().unwrap();
        let d: f64 = fields[3].parse().unwrap();
        expected += (-0.5f64).exp() * rates[&(age, year)] * e;
        total += d;
    }
    // variance of the NB total is sum mu (1 + omega)
    let sd = (expected * 1.2).sqrt();
    assert!(
        (total - expected).abs() < 4.0 * sd,
        "total {total}, expected {expected}"
    );
}

#[test]
fn prepare_reference_extrapolates_gompertz_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("prep");
    let input = fixtures().join("reference_bra_ages60_80.csv");
    let out = run(
        &[
            "prepare-reference",
            "--mode",
            "extrapolate",
            "--input",
            input.to_str().unwrap(),
            "--to-age",
            "89",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        Some("2"),
    );
    assert_ok(&out);
    validate_artifacts(&out_dir);
    let text = std::fs::read_to_string(out_dir.join("reference.csv")).unwrap();
    let mut max_age = 0;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let age: i32 = fields[0].parse().unwrap();
        max_age = max_age.max(age);
        if age == 89 && fields[1] == "2013" {
            // fixture surface is exactly Gompertz: continuation is exact
            let expect = (-5.2f64 + 0.095 * 29.0).exp();
            let got: f64 = fields[2].parse().unwrap();
            assert!(((got - expect) / expect).abs() < 1e-10, "{got} vs {expect}");
        }
    }
    assert_eq!(max_age, 89);
}

#[test]
fn prepare_reference_interpolation_round_trips_via_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let input = fixtures().join("reference_ind_sparse.csv");
    let first = tmp.path().join("first");
    let out = run(
        &[
            "prepare-reference",
            "--mode",
            "interpolate",
            "--input",
            input.to_str().unwrap(),
            "--years",
            "2013:2019",
            "--seed",
            "5",
            "--out",
            first.to_str().unwrap(),
        ],
        Some("2"),
    );
    assert_ok(&out);
    validate_artifacts(&first);

    // re-running with the recorded hyperparameters reproduces the table
    let second = tmp.path().join("second");
    let out = run(
        &[
            "prepare-reference",
            "--mode",
            "interpolate",
            "--input",
            input.to_str().unwrap(),
            "--years",
            "2013:2019",
            "--hyperparams",
            first.join("provenance.json").to_str().unwrap(),
            "--out",
            second.to_str().unwrap(),
        ],
        Some("2"),
    );
    assert_ok(&out);
    let a = std::fs::read(first.join("reference.csv")).unwrap();
    let b = std::fs::read(second.join("reference.csv")).unwrap();
    assert_eq!(a, b, "pinned hyperparameters must reproduce bytes");
}

#[test]
fn consistency_test_schema_is_stable_across_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");

    let table_dir = tmp.path().join("table");
    assert_ok(&run(
        &[
            "consistency-test",
            "--fund",
            fund.to_str().unwrap(),
            "--reference",
            reference.to_str().unwrap(),
            "--out",
            table_dir.to_str().unwrap(),
        ],
        Some("2"),
    ));
    validate_artifacts(&table_dir);

    let fit_dir = tmp.path().join("fit");
    assert_ok(&run(
        &quick_fit_args(
            "AD-GP",
            fit_dir.to_str().unwrap(),
            fund.to_str().unwrap(),
            reference.to_str().unwrap(),
        ),
        Some("2"),
    ));
    let model_dir = tmp.path().join("model");
    assert_ok(&run(
        &[
            "consistency-test",
            "--fund",
            fund.to_str().unwrap(),
            "--fit",
            fit_dir.to_str().unwrap(),
            "--out",
            model_dir.to_str().unwrap(),
        ],
        Some("2"),
    ));
    validate_artifacts(&model_dir);

    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(table_dir.join("consistency.json")).unwrap())
            .unwrap();
    let b: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(model_dir.join("consistency.json")).unwrap(),
    )
    .unwrap();
    let keys = |v: &serde_json::Value| -> Vec<String> {
        v.as_object().unwrap().keys().cloned().collect()
    };
    assert_eq!(keys(&a), keys(&b));
    // the deflated fund is far from the raw reference table
    assert!(a["p_value"].as_f64().unwrap() < 0.05);
    // the fitted model should be consistent with its own data
    assert!(b["p_value"].as_f64().unwrap() > 0.05);
}

#[test]
fn fixtures_match_their_generators() {
    use mortdef_core::data::{save_fund_csv, save_reference_csv, AgeYearGrid};
    use mortdef_core::synthetic::*;
    let tmp = tempfile::tempdir().unwrap();
    let (fund1, reference) = bundled_fund1().unwrap();
    let (fund2, _) = bundled_fund2().unwrap();
    save_fund_csv(&fund1, tmp.path().join("fund1.csv")).unwrap();
    save_fund_csv(&fund2, tmp.path().join("fund2.csv")).unwrap();
    save_reference_csv(&reference, tmp.path().join("reference_bra.csv")).unwrap();
    let sparse_grid =
        AgeYearGrid::with_sparse_years((60..=89).collect(), vec![2010, 2015, 2021]).unwrap();
    let ind = ind_like_surface().table(&sparse_grid, "IND").unwrap();
    save_reference_csv(&ind, tmp.path().join("reference_ind_sparse.csv")).unwrap();
    let short_grid = AgeYearGrid::from_ranges(60, 80, 2013, 2019).unwrap();
    let bra80 = bra_like_surface().table(&short_grid, "BRA").unwrap();
    save_reference_csv(&bra80, tmp.path().join("reference_bra_ages60_80.csv")).unwrap();
    for name in [
        "fund1.csv",
        "fund2.csv",
        "reference_bra.csv",
        "reference_ind_sparse.csv",
        "reference_bra_ages60_80.csv",
    ] {
        let bundled = std::fs::read(fixtures().join(name)).unwrap();
        let regenerated = std::fs::read(tmp.path().join(name)).unwrap();
        assert_eq!(bundled, regenerated, "{name} drifted from its generator");
    }
}

#[test]
fn config_file_resolves_with_cli_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "model = \"FD-1\"\nfund = \"{}\"\nreference = \"{}\"\nreference_label = \"BRA\"\ntrain_years = \"2013:2018\"\nseed = 9\n\n[mcmc]\nchains = 2\niters = 400\nburnin = 100\nthin = 5\n",
            fund.display(),
            reference.display()
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    // CLI overrides the seed from the file
    let out = run(
        &[
            "fit",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "10",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        Some("2"),
    );
    assert_ok(&out);
    let run_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_json["seed"], 10);
    assert_eq!(run_json["mcmc"]["iters"], 400);
    assert_eq!(run_json["model"], "FD-1");
}

#[test]
fn test_year_inside_train_years_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let fund = fixtures().join("fund1.csv");
    let reference = fixtures().join("reference_bra.csv");
    let out = run(
        &[
            "fit",
            "--model",
            "FD-1",
            "--fund",
            fund.to_str().unwrap(),
            "--reference",
            reference.to_str().unwrap(),
            "--train-years",
            "2013:2018",
            "--test-year",
            "2015",
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ],
        Some("2"),
    );
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("outside the training years"));
}

#[test]
fn sparse_reference_must_be_interpolated_before_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let fund = fixtures().join("fund1.csv");
    let sparse = fixtures().join("reference_ind_sparse.csv");
    let out = run(
        &quick_fit_args(
            "FD-1",
            tmp.path().join("out").to_str().unwrap(),
            fund.to_str().unwrap(),
            sparse.to_str().unwrap(),
        ),
        Some("2"),
    );
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["message"].as_str().unwrap().contains("gap years"));
}

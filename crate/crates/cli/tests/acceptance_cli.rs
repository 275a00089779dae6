//! End-to-end determinism gate: the full fixture pipeline
//! (prepare-reference -> simulate -> fit -> predict -> cv ->
//! consistency-test) is run twice with identical configuration and seeds but
//! different worker-thread caps; every numeric artifact must be
//! byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mortdef")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run_checked(args: &[&str], threads: &str) {
    let out = Command::new(bin())
        .args(args)
        .env("MORTDEF_THREADS", threads)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Bytes of every artifact under `root`, keyed by relative path. Two
/// non-numeric echoes are masked before comparison: the worker-thread budget
/// recorded in run.json, and the run root inside echoed input paths.
fn artifact_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let root_str = root.display().to_string();
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            let mut bytes = std::fs::read(&path).unwrap();
            if path.file_name().unwrap() == "run.json" {
                let mut v: serde_json::Value =
                    serde_json::from_slice(&bytes).expect("run.json parses");
                if let Some(obj) = v.as_object_mut() {
                    obj.remove("threads");
                }
                bytes = serde_json::to_vec_pretty(&v).unwrap();
            }
            let text = String::from_utf8(bytes).expect("artifacts are utf-8");
            out.insert(rel, text.replace(&root_str, "<ROOT>").into_bytes());
        }
    }
    out
}

fn pipeline(root: &Path, threads: &str) {
    let fixture = |name: &str| fixtures().join(name).display().to_string();
    let sub = |name: &str| root.join(name).display().to_string();

    // 1. prepare-reference: interpolate the sparse industry-style table
    run_checked(
        &[
            "prepare-reference",
            "--mode",
            "interpolate",
            "--input",
            &fixture("reference_ind_sparse.csv"),
            "--reference-label",
            "IND",
            "--years",
            "2013:2019",
            "--seed",
            "21",
            "--out",
            &sub("prep_interp"),
        ],
        threads,
    );
    // ... and extrapolate the age-truncated national-style table
    run_checked(
        &[
            "prepare-reference",
            "--mode",
            "extrapolate",
            "--input",
            &fixture("reference_bra_ages60_80.csv"),
            "--reference-label",
            "BRA",
            "--to-age",
            "89",
            "--out",
            &sub("prep_extrap"),
        ],
        threads,
    );

    // 2. simulate a synthetic fund against the extrapolated table
    let params = root.join("truth.json");
    std::fs::write(&params, "{\"theta\": -0.5, \"omega\": 0.2}\n").unwrap();
    run_checked(
        &[
            "simulate",
            "--model",
            "FD-1",
            "--params",
            params.to_str().unwrap(),
            "--reference",
            &sub("prep_extrap/reference.csv"),
            "--years",
            "2013:2019",
            "--seed",
            "22",
            "--out",
            &sub("sim"),
        ],
        threads,
    );

    // 3. fit two models on the simulated fund
    for (model, dir) in [("FD-1", "fit_fd1"), ("AD-GP", "fit_adgp")] {
        run_checked(
            &[
                "fit",
                "--model",
                model,
                "--fund",
                &sub("sim/fund.csv"),
                "--reference",
                &sub("prep_extrap/reference.csv"),
                "--reference-label",
                "BRA",
                "--train-years",
                "2013:2018",
                "--test-year",
                "2019",
                "--chains",
                "2",
                "--iters",
                "800",
                "--burnin",
                "200",
                "--thin",
                "6",
                "--seed",
                "23",
                "--out",
                &sub(dir),
            ],
            threads,
        );
    }

    // 4. predict the held-out year from the AD-GP fit
    run_checked(
        &[
            "predict",
            "--fit",
            &sub("fit_adgp"),
            "--reference",
            &sub("prep_extrap/reference.csv"),
            "--test-year",
            "2019",
            "--out",
            &sub("pred"),
        ],
        threads,
    );

    // 5. cross-validate both models
    run_checked(
        &[
            "cv",
            "--model",
            "FD-1,AD-GP",
            "--fund",
            &sub("sim/fund.csv"),
            "--reference",
            &sub("prep_extrap/reference.csv"),
            "--reference-label",
            "BRA",
            "--chains",
            "2",
            "--iters",
            "500",
            "--burnin",
            "150",
            "--thin",
            "5",
            "--seed",
            "24",
            "--out",
            &sub("cv"),
        ],
        threads,
    );

    // 6. regulatory consistency test against the fitted model
    run_checked(
        &[
            "consistency-test",
            "--fund",
            &sub("sim/fund.csv"),
            "--fit",
            &sub("fit_fd1"),
            "--out",
            &sub("consistency"),
        ],
        threads,
    );
}

#[test]
fn criterion_11_pipeline_determinism_across_thread_caps() {
    let started = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    std::fs::create_dir_all(&run_a).unwrap();
    std::fs::create_dir_all(&run_b).unwrap();

    pipeline(&run_a, "1");
    pipeline(&run_b, "4");

    let a = artifact_bytes(&run_a);
    let b = artifact_bytes(&run_b);
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "artifact sets differ"
    );
    for (name, bytes_a) in &a {
        let bytes_b = &b[name];
        assert_eq!(
            bytes_a, bytes_b,
            "artifact {name} differs between thread caps"
        );
    }
    assert!(
        started.elapsed() < std::time::Duration::from_secs(45 * 60),
        "pipeline exceeded the 45-minute budget"
    );
    println!(
        "[acceptance] criterion 11 (CLI determinism across thread caps): PASS \
         ({} artifacts, {:?})",
        a.len(),
        started.elapsed()
    );
}

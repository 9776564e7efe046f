//! End-to-end runs of the `tenreg` binary: simulate -> fit -> tune ->
//! benchmark -> optimize, plus the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn tenreg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tenreg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(json).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).unwrap();
    format!("{:x}", Sha256::digest(&bytes))
}

fn case1_config(i: usize, n: usize, delta: f64, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "seed": seed,
        "simulate": {
            "case": { "case1": {
                "i1": i, "i2": i, "n": n,
                "b1": [[4.0,1.0,0.0],[1.0,0.1,0.0],[1.0,0.0,1.0]],
                "b2": [[1.0,2.0,0.0],[1.0,3.0,0.0],[1.0,0.0,0.2]],
                "delta": delta, "noise": "iid", "seed": seed
            }},
            "n_test": n
        }
    })
}

#[test]
fn simulate_produces_expected_dims_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.json", &case1_config(12, 9, 0.5, 7));

    let out1 = tmp.path().join("a");
    let st = tenreg(&["simulate", "--config", &cfg, "--out", out1.to_str().unwrap()], tmp.path());
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let y = tenreg_core::io::read_t3f(out1.join("y.t3f")).unwrap();
    assert_eq!(y.dims(), (12, 12, 9));

    // Same seed, second run: byte-identical files.
    let out2 = tmp.path().join("b");
    tenreg(&["simulate", "--config", &cfg, "--out", out2.to_str().unwrap()], tmp.path());
    for f in ["y.t3f", "x.csv", "truth.t3f"] {
        assert_eq!(sha256_file(&out1.join(f)), sha256_file(&out2.join(f)), "{f} differs");
    }

    // Different delta changes the config hash in the manifest.
    let cfg2 = write_config(tmp.path(), "sim2.json", &case1_config(12, 9, 0.9, 7));
    let out3 = tmp.path().join("c");
    tenreg(&["simulate", "--config", &cfg2, "--out", out3.to_str().unwrap()], tmp.path());
    let m1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("manifest.json")).unwrap()).unwrap();
    let m3: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out3.join("manifest.json")).unwrap()).unwrap();
    assert_ne!(m1["config_hash"], m3["config_hash"]);
}

#[test]
fn fit_otdr_on_noiseless_data_interpolates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.json", &case1_config(16, 12, 0.0, 3));
    let data = tmp.path().join("data");
    tenreg(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()], tmp.path());

    let fit_cfg = write_config(
        tmp.path(),
        "fit.json",
        &serde_json::json!({
            "fit": {
                "y": data.join("y.t3f"),
                "x": data.join("x.csv"),
                "estimator": { "name": "otdr", "p1": 3, "p2": 3 },
                "cov": "iid"
            }
        }),
    );
    let fit_out = tmp.path().join("fit");
    let st = tenreg(&["fit", "--config", &fit_cfg, "--out", fit_out.to_str().unwrap()], tmp.path());
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let stdout = String::from_utf8_lossy(&st.stdout);
    let resid: f64 = stdout
        .split("training_relative_residual=")
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(resid < 1e-6, "training residual {resid}");

    // lr equals gls on the same data.
    for name in ["lr", "gls"] {
        let out = tmp.path().join(name);
        let st = tenreg(
            &[
                "fit",
                "--config",
                &fit_cfg,
                "--estimator",
                name,
                "--out",
                out.to_str().unwrap(),
            ],
            tmp.path(),
        );
        assert!(st.status.success());
    }
    assert_eq!(
        sha256_file(&tmp.path().join("lr").join("coef.t3f")),
        sha256_file(&tmp.path().join("gls").join("coef.t3f")),
        "lr and gls must take the identical identity-covariance path"
    );
}

#[test]
fn fit_rejects_mismatched_design() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.json", &case1_config(10, 8, 0.1, 5));
    let data = tmp.path().join("data");
    tenreg(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()], tmp.path());
    // Use the test design (different row count) against the training tensor.
    let fit_cfg = write_config(
        tmp.path(),
        "fit.json",
        &serde_json::json!({
            "fit": {
                "y": data.join("y.t3f"),
                "x": data.join("x.csv"),
                "estimator": { "name": "lr" }
            }
        }),
    );
    std::fs::write(
        data.join("x.csv"),
        "1.0,0.5,0.2\n1.0,-0.3,0.9\n", // two rows only
    )
    .unwrap();
    let st = tenreg(&["fit", "--config", &fit_cfg, "--out", tmp.path().join("f").to_str().unwrap()], tmp.path());
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).contains("dimension mismatch"));
}

#[test]
fn hetero_fit_reports_small_slopes_on_homoscedastic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.json", &case1_config(10, 40, 0.5, 11));
    let data = tmp.path().join("data");
    tenreg(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()], tmp.path());
    let fit_cfg = write_config(
        tmp.path(),
        "fit.json",
        &serde_json::json!({
            "fit": {
                "y": data.join("y.t3f"),
                "x": data.join("x.csv"),
                "estimator": { "name": "gls" },
                "hetero": true
            }
        }),
    );
    let out = tmp.path().join("fit");
    let st = tenreg(&["fit", "--config", &fit_cfg, "--hetero", "--out", out.to_str().unwrap()], tmp.path());
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    let gammas = meta["variance"]["gamma"].as_array().unwrap();
    let ses = meta["variance"]["std_errors"].as_array().unwrap();
    for (g, se) in gammas.iter().zip(ses.iter().skip(1)) {
        let (g, se) = (g.as_f64().unwrap(), se.as_f64().unwrap());
        assert!(g.abs() < 3.0 * se, "slope {g} exceeds 3 SE {se}");
    }
    assert!(out.join("mean.t3f").exists());
}

#[test]
fn tune_emits_scores_and_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sim.json", &case1_config(16, 30, 0.5, 13));
    let data = tmp.path().join("data");
    tenreg(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()], tmp.path());
    let tune_cfg = write_config(
        tmp.path(),
        "tune.json",
        &serde_json::json!({
            "tune": {
                "y": data.join("y.t3f"),
                "x": data.join("x.csv"),
                "target": { "otdr": {} },
                "grid": {
                    "lambdas": [0.1, 1.0],
                    "thetas": [10.0],
                    "sigmas": [0.5],
                    "ranks": [[2,2],[3,3]]
                }
            }
        }),
    );
    let out = tmp.path().join("tune");
    let st = tenreg(&["tune", "--config", &tune_cfg, "--out", out.to_str().unwrap()], tmp.path());
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 3, "header plus one row per grid point");
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    assert!(sel["p1"].is_number());
}

#[test]
fn benchmark_csv_has_one_row_per_estimator_setting() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bench.json",
        &serde_json::json!({
            "seed": 1,
            "benchmark": {
                "case": { "case1": { "i1": 12, "i2": 12, "n": 14,
                    "b1": [[4.0,1.0,0.0],[1.0,0.1,0.0],[1.0,0.0,1.0]],
                    "b2": [[1.0,2.0,0.0],[1.0,3.0,0.0],[1.0,0.0,0.2]],
                    "delta": 0.1, "noise": "iid", "seed": 0 }},
                "estimators": [
                    { "name": "lr" },
                    { "name": "otdr", "p1": 3, "p2": 3 }
                ],
                "settings": [
                    { "noise": "iid", "delta": 0.1 },
                    { "noise": { "kron": { "theta": 10.0 } }, "delta": 0.5 }
                ],
                "n_reps": 2
            }
        }),
    );
    let out = tmp.path().join("bench");
    let st = tenreg(&["benchmark", "--config", &cfg, "--out", out.to_str().unwrap()], tmp.path());
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let csv = std::fs::read_to_string(out.join("benchmark.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.lines().next().unwrap().starts_with("case,noise,delta,estimator"));
}

#[test]
fn optimize_exit_codes_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    // Build a small heteroscedastic fit first.
    let cfg = write_config(tmp.path(), "sim.json", &case1_config(10, 60, 0.5, 17));
    let data = tmp.path().join("data");
    tenreg(&["simulate", "--config", &cfg, "--out", data.to_str().unwrap()], tmp.path());
    let fit_cfg = write_config(
        tmp.path(),
        "fit.json",
        &serde_json::json!({
            "fit": {
                "y": data.join("y.t3f"),
                "x": data.join("x.csv"),
                "estimator": { "name": "gls" },
                "hetero": true
            }
        }),
    );
    let fit_out = tmp.path().join("fit");
    let st = tenreg(&["fit", "--config", &fit_cfg, "--out", fit_out.to_str().unwrap()], tmp.path());
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));

    let opt_cfg = write_config(
        tmp.path(),
        "opt.json",
        &serde_json::json!({
            "optimize": {
                "fit": fit_out,
                "target": 0.0,
                "sigma0": 10.0,
                "bounds": { "lower": [-1.0, -1.0], "upper": [1.0, 1.0] }
            }
        }),
    );
    let out = tmp.path().join("opt");
    let st = tenreg(&["optimize", "--config", &opt_cfg, "--out", out.to_str().unwrap()], tmp.path());
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["x"].as_array().unwrap().len(), 2);

    // Absurdly small cap: infeasible, exit 3.
    let st = tenreg(
        &["optimize", "--config", &opt_cfg, "--sigma0", "1e-30", "--out",
          tmp.path().join("opt2").to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(st.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&st.stderr).contains("infeasible"));

    // Sweep: one CSV row per grid point.
    let out3 = tmp.path().join("opt3");
    let st = tenreg(
        &["optimize", "--config", &opt_cfg, "--sigma0", "sweep:0.01:10.0:6", "--out",
          out3.to_str().unwrap()],
        tmp.path(),
    );
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let csv = std::fs::read_to_string(out3.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        &serde_json::json!({ "simulate": { "case": { "case1": { "i1": 4 } }, "bogus": 1 } }),
    );
    let st = tenreg(&["simulate", "--config", &cfg], tmp.path());
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).contains("bogus"));
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use splinenet_simlab::datagen::gen_data;
use splinenet_simlab::io::write_dataset;
use splinenet_simlab::SimConfig;

fn splinenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splinenet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_data(dir: &Path, n: usize, seed: u64) -> String {
    let cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    let path = dir.join("data.csv");
    write_dataset(&path, &gen_data(&cfg, n, 0).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn certify_linear_splines_is_exact() {
    let out = splinenet(&["certify", "--k", "2", "--d", "1", "--M", "4", "--m", "6"]);
    let cert = stdout_json(&out);
    assert_eq!(cert["pass"], true);
    assert!(cert["scan_max_error"].as_f64().unwrap() < 1e-12);
    for key in [
        "target",
        "m",
        "k",
        "d",
        "M",
        "analytic_bound",
        "grid_points",
        "depth",
        "max_width",
    ] {
        assert!(cert.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let out = splinenet(&["certify", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(splinenet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(splinenet(&["--help"]).status.code(), Some(0));
}

#[test]
fn rates_csv_has_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rates.json");
    std::fs::write(
        &cfg,
        r#"{"n":[100,200],"reps":3,"bandwidth":{"rule":"fixed","M":4}}"#,
    )
    .unwrap();
    let out = splinenet(&[
        "rates",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,rep,loss_pilot,loss_net"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn test_subcommand_reports_statistic() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 400, 4);
    let out = splinenet(&[
        "test",
        "--data",
        &data,
        "--alpha",
        "0.05",
        "--tau-known",
        "1.0",
    ]);
    let r = stdout_json(&out);
    for key in ["T_n", "Z_n", "q", "n", "p_value", "reject", "tau2_used"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["tau2_used"], 1.0);
    assert_eq!(r["n"], 400);
    // The default target is far from zero at this sample size.
    assert_eq!(r["reject"], true);
}

#[test]
fn fitted_network_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 300, 5);
    let net = dir.path().join("net.json");
    let fit_out = splinenet(&[
        "fit",
        "--data",
        &data,
        "--M",
        "6",
        "--m",
        "9",
        "--emit-net",
        net.to_str().unwrap(),
    ]);
    let fit_json = dir.path().join("fit.json");
    std::fs::write(&fit_json, &fit_out.stdout).unwrap();
    assert!(fit_out.status.success());

    let xs = ["--x", "0.1", "--x", "0.5", "--x", "0.93"];
    let mut args = vec!["predict", "--fit", fit_json.to_str().unwrap()];
    args.extend(xs);
    let pilot = stdout_json(&splinenet(&args));
    let mut args = vec!["predict", "--load-net", net.to_str().unwrap()];
    args.extend(xs);
    let network = stdout_json(&splinenet(&args));
    for (a, b) in pilot
        .as_array()
        .unwrap()
        .iter()
        .zip(network.as_array().unwrap())
    {
        let gap = (a["value"].as_f64().unwrap() - b["value"].as_f64().unwrap()).abs();
        assert!(gap < 1e-2, "gap {gap}");
    }
}

#[test]
fn ci_intervals_are_centred_on_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 500, 6);
    let out = splinenet(&[
        "ci", "--data", &data, "--x", "0.25", "--x", "0.5", "--alpha", "0.1",
    ]);
    let r = stdout_json(&out);
    for iv in r.as_array().unwrap() {
        let (lo, hi, est) = (
            iv["lower"].as_f64().unwrap(),
            iv["upper"].as_f64().unwrap(),
            iv["estimate"].as_f64().unwrap(),
        );
        assert!(lo < est && est < hi);
        assert!(((lo + hi) / 2.0 - est).abs() < 1e-12);
    }
}

#[test]
fn out_directory_gets_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diag.json");
    std::fs::write(&cfg, r#"{"k":2,"diag_draws":20}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = splinenet(&[
        "diagnose",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "42",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["command"], "diagnose");
    assert_eq!(manifest["inputs"][0], cfg.to_str().unwrap());
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(out_dir.join(f.as_str().unwrap()).exists());
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("diagnose.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["seed"], 42);
}

#[test]
fn emit_net_writes_loadable_basis_network() {
    let out = splinenet(&["emit-net", "--k", "2", "--M", "3", "--m", "4"]);
    assert!(out.status.success());
    let net = splinenet::ReluNetwork::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(net.output_dim(), 4);
    let v = net.evaluate(&[0.5]).unwrap();
    assert!((v[1] - 0.5).abs() < 1e-12 && (v[2] - 0.5).abs() < 1e-12);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn twomv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twomv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn double_well(sigma: f64) -> Value {
    json!({
        "v1": [0.0, 0.0, -0.5, 0.0, 0.25],
        "v2": [0.0, 0.0, -0.5, 0.0, 0.25],
        "interaction": {"quadratic": [[0.1, 0.1], [0.1, 0.1]]},
        "a": 0.5,
        "sigma": sigma
    })
}

fn write_spec(dir: &Path, name: &str, spec: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    p.display().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn small_poc(n_points: usize) -> Value {
    let schedule: Vec<Value> = [8, 16, 32, 64]
        .iter()
        .take(n_points)
        .map(|n| json!({"n": n, "m": n}))
        .collect();
    json!({
        "kind": "poc",
        "model": double_well(0.5),
        "seed": 7,
        "threads": 2,
        "params": {
            "schedule": schedule,
            "replicas": 4,
            "horizon": 0.1,
            "dt": 0.01,
            "init_x": {"kind": "gaussian", "mean": 0.5, "var": 0.25},
            "init_y": {"kind": "gaussian", "mean": -0.3, "var": 0.25},
            "picard": {"n_particles": 2000}
        }
    })
}

#[test]
fn invariant_run_reports_three_roots() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "kind": "invariant",
        "model": double_well(0.3),
        "seed": 1,
        "params": {}
    });
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let out = tmp.path().join("out");
    let o = twomv(&[&cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    assert!(summary["root_count"].as_u64().unwrap() >= 3);
    let roots = fs::read_to_string(out.join("roots.csv")).unwrap();
    assert!(roots.starts_with("sigma,m1,m2,residual,classification\n"));
    let dens = fs::read_to_string(out.join("density_root0.csv")).unwrap();
    assert!(dens.starts_with("x,mu,nu\n"));

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["spec"]["kind"], "invariant");
    assert_eq!(manifest["spec"]["params"]["start_grid"], 7);
    let files = manifest["files"].as_array().unwrap();
    let mut listed: Vec<&str> = files.iter().map(|f| f["name"].as_str().unwrap()).collect();
    for f in files {
        let bytes = fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"], hex::encode(Sha256::digest(&bytes)));
    }
    listed.push("manifest.json");
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    listed.sort();
    assert_eq!(on_disk, listed);
}

#[test]
fn out_of_range_weight_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut model = double_well(0.3);
    model["a"] = json!(1.5);
    let spec = json!({"kind": "laplace", "model": model, "seed": 1, "params": {"m_star": 1.0}});
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let o = twomv(&[&cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("\"a\""), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn single_point_schedule_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_spec(tmp.path(), "spec.json", &small_poc(1));
    let o = twomv(&[&cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.schedule"));
}

#[test]
fn unknown_field_reports_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "kind": "fpde",
        "model": double_well(0.5),
        "seed": 1,
        "params": {"x_min": -3.0, "x_max": 3.0, "n_cells": 64, "horizon": 0.1, "dt": 1e-3,
                   "init": {"kind": "gaussian", "mean": [0.0, 0.0], "var": [0.1, 0.1], "bogus": 1}}
    });
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let o = twomv(&[&cfg, "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("params.init"), "{err}");
}

#[test]
fn dry_run_plans_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "kind": "poc",
        "model": double_well(0.5),
        "seed": 3,
        "params": {
            "schedule": [{"n": 50, "m": 50}, {"n": 100, "m": 100}, {"n": 200, "m": 200}, {"n": 400, "m": 400}],
            "replicas": 50,
            "horizon": 2.0,
            "dt": 0.001
        }
    });
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let out = tmp.path().join("never");
    let a = twomv(&[&cfg, "--dry-run", "--out", out.to_str().unwrap()]);
    let b = twomv(&[&cfg, "--dry-run", "--out", out.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    let plan = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(plan.contains("4 x 50 coupled runs"), "{plan}");
    assert!(plan.contains("estimated memory"));
    assert!(plan.contains("rate_fit.csv"));
    assert_eq!(a.stdout, b.stdout);
    assert!(!out.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
}

#[test]
fn identical_specs_give_identical_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_spec(tmp.path(), "spec.json", &small_poc(4));
    let (o1, o2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    for o in [&o1, &o2] {
        let r = twomv(&[&cfg, "--out", o.to_str().unwrap()]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["poc_results.csv", "rate_fit.csv", "summary.json"] {
        assert_eq!(fs::read(o1.join(f)).unwrap(), fs::read(o2.join(f)).unwrap(), "{f}");
    }
    let sim = json!({
        "kind": "simulate",
        "model": double_well(0.5),
        "seed": 11,
        "params": {"n": 20, "m": 30, "dt": 0.01, "n_steps": 50, "record_stride": 10}
    });
    let cfg = write_spec(tmp.path(), "sim.json", &sim);
    let (s1, s2) = (tmp.path().join("s1"), tmp.path().join("s2"));
    for o in [&s1, &s2] {
        assert_eq!(twomv(&[&cfg, "--out", o.to_str().unwrap()]).status.code(), Some(0));
    }
    for f in ["moments.csv", "positions.csv"] {
        assert_eq!(fs::read(s1.join(f)).unwrap(), fs::read(s2.join(f)).unwrap());
    }
    let moments = fs::read_to_string(s1.join("moments.csv")).unwrap();
    assert!(moments.starts_with("t,species,m0,m1,m2,m3,m4\n"));
    // 17 significant digits in C-locale scientific notation
    let first = moments.lines().nth(1).unwrap();
    assert!(first.starts_with("0.0000000000000000e0,x,1.0000000000000000e0,"), "{first}");
}

#[test]
fn laplace_writes_expansion_report() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({"kind": "laplace", "model": double_well(0.3), "seed": 1, "params": {"m_star": 1.0}});
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let out = tmp.path().join("o");
    assert_eq!(twomv(&[&cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let e = read_json(&out.join("expansion.json"));
    for key in ["m_star", "k1", "k2", "rho_threshold", "tau1", "tau2"] {
        assert!(e.get(key).is_some(), "{key}");
    }
    assert!((e["k1"].as_f64().unwrap() - 0.340_136).abs() < 1e-6);
}

#[test]
fn fpde_from_stationary_writes_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "kind": "fpde",
        "model": double_well(0.5),
        "seed": 1,
        "out": tmp.path().join("o"),
        "params": {"x_min": -3.0, "x_max": 3.0, "n_cells": 128, "horizon": 0.05, "dt": 5e-4,
                   "record_stride": 50, "init": {"kind": "stationary", "m1": 0.0, "m2": 0.0}}
    });
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let o = twomv(&[&cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let res = fs::read_to_string(tmp.path().join("o/residual.csv")).unwrap();
    assert!(res.starts_with("grid_h,res_mu,res_nu\n"));
    let snaps = fs::read_to_string(tmp.path().join("o/fp_snapshots.csv")).unwrap();
    assert!(snaps.starts_with("t,x,mu,nu\n"));
}

#[test]
fn cfl_violation_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "kind": "fpde",
        "model": double_well(0.5),
        "seed": 1,
        "params": {"x_min": -3.0, "x_max": 3.0, "n_cells": 256, "horizon": 0.1, "dt": 0.01,
                   "init": {"kind": "gaussian", "mean": [0.0, 0.0], "var": [0.1, 0.1]}}
    });
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let o = twomv(&[&cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CFL"));
}

#[test]
fn missing_output_directory_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({"kind": "laplace", "model": double_well(0.3), "seed": 1, "params": {"m_star": 1.0}});
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    assert_eq!(twomv(&[&cfg]).status.code(), Some(2));
}

#[test]
fn picard_with_cubic_self_interaction_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "kind": "picard",
        "model": {
            "v1": [0.0, 0.0, -0.5, 0.0, 0.25],
            "v2": [0.0, 0.0, 0.5],
            "interaction": {"grad_f11": [0.0, 1.0, 0.0, 1.0], "grad_f12": [0.0, 0.2],
                            "grad_f21": [0.0, 0.2], "grad_f22": [0.0, 0.5]},
            "a": 0.5,
            "sigma": 0.8
        },
        "seed": 42,
        "params": {"horizon": 0.5, "dt": 0.01, "n_particles": 2000, "tol": 1e-8}
    });
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let out = tmp.path().join("o");
    let o = twomv(&[&cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["converged"], true);
    let log = fs::read_to_string(out.join("picard_log.csv")).unwrap();
    assert!(log.starts_with("iter,norm_diff,contraction_ratio,wall_time_ms\n"));
    let drift = read_json(&out.join("drift.json"));
    assert_eq!(drift["components"].as_array().unwrap().len(), 4);
}

#[test]
fn picard_budget_exhaustion_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "kind": "picard",
        "model": double_well(0.5),
        "seed": 42,
        "params": {"horizon": 0.5, "dt": 0.01, "n_particles": 500, "tol": 1e-14, "max_iter": 2}
    });
    let cfg = write_spec(tmp.path(), "spec.json", &spec);
    let out = tmp.path().join("o");
    let o = twomv(&[&cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join("picard_log.csv").exists());
}

//! End-to-end checks of the `trps-lab` binary: exit codes, artifact
//! formats, and run-to-run determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trps_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trps-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const FAST_DECOHERE: &str = "\
run.seed = 31
qdynamics.trajectories = 500
qdynamics.n_times = 6
";

#[test]
fn missing_arguments_are_usage_errors() {
    let out = trps_lab(&[]);
    assert_eq!(out.status.code(), Some(1));

    let out = trps_lab(&["decohere"]);
    assert_eq!(out.status.code(), Some(1));

    let out = trps_lab(&["decohere", "--config", "/nonexistent/x.conf"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.conf", FAST_DECOHERE);
    let out = trps_lab(&["warp", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown scenario"));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.conf", "run.seed = 1\nnot a key value line\n");
    let out = trps_lab(&["decohere", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_lists_violations_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "invalid.conf",
        "run.seed = 1\ntheta.nu = 0\nqdynamics.sigma = -2\n",
    );
    let out = trps_lab(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "violations are report content");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("theta.nu"));
    assert!(stdout.contains("qdynamics.sigma"));

    let ok = write_config(dir.path(), "ok.conf", FAST_DECOHERE);
    let out = trps_lab(&["validate", "--config", &ok]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn decohere_run_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.conf", FAST_DECOHERE);
    let out_dir = dir.path().join("out");
    let out = trps_lab(&["decohere", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // Emitted decay curve: MC and analytic columns agree within the run's
    // recorded tolerance.
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("record.json")).unwrap()).unwrap();
    let tol = record["metrics"]["mc_tolerance"].as_f64().unwrap();
    let decay = fs::read_to_string(out_dir.join("decay.csv")).unwrap();
    let mut lines = decay.lines();
    assert_eq!(lines.next().unwrap(), "t,abs_rho01,analytic");
    let mut rows = 0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((cols[1] - cols[2]).abs() <= tol, "row {line} beyond {tol}");
        rows += 1;
    }
    assert_eq!(rows, 6);
    assert!(out_dir.join("density.csv").exists());

    let artifacts = record["artifacts"].as_array().unwrap();
    assert!(artifacts.iter().any(|a| a == "decay.csv"));
    assert!(artifacts.iter().any(|a| a == "record.json"));
}

#[test]
fn sigma_zero_decay_curve_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.conf",
        "run.seed = 5\nqdynamics.sigma = 0\nqdynamics.trajectories = 500\nqdynamics.n_times = 5\n",
    );
    let out_dir = dir.path().join("out");
    let out = trps_lab(&["decohere", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let decay = fs::read_to_string(out_dir.join("decay.csv")).unwrap();
    for line in decay.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols[2], 0.5, "analytic modulus constant at 0.5");
    }
}

#[test]
fn two_body_relax_run_has_tiny_energy_drift() {
    let dir = tempfile::tempdir().unwrap();
    // A bound pair: the virial rescaling binds it; generous softening and a
    // fine explicit step keep the eccentric orbit clean.
    let cfg = write_config(
        dir.path(),
        "pair.conf",
        "run.seed = 12\ntheta.nu = 2\ntheta.n_dyn_times = 5\ntheta.bins = 4\n\
         theta.relax_steps = 30\ntheta.box_x = 0.5\ntheta.softening = 0.3\ntheta.dt = 2e-4\n",
    );
    let out_dir = dir.path().join("out");
    let out = trps_lab(&["relax", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("record.json")).unwrap()).unwrap();
    let drift = record["metrics"]["max_energy_drift"].as_f64().unwrap();
    assert!(drift < 1e-6, "two-body drift {drift}");
}

/// Strips the wall-clock fields so records can be compared bytewise.
fn normalized_record(path: &Path) -> String {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["started_at_unix"] = 0.into();
    v["finished_at_unix"] = 0.into();
    serde_json::to_string_pretty(&v).unwrap()
}

#[test]
fn same_config_and_seed_reproduce_records_bytewise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.conf", FAST_DECOHERE);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = trps_lab(&["decohere", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(
        normalized_record(&out_a.join("record.json")),
        normalized_record(&out_b.join("record.json"))
    );
    // The numeric artifacts must be byte-identical outright.
    assert_eq!(
        fs::read(out_a.join("decay.csv")).unwrap(),
        fs::read(out_b.join("decay.csv")).unwrap()
    );

    // A different seed changes the Monte-Carlo columns.
    let out_c = dir.path().join("c");
    let out = trps_lab(&[
        "decohere",
        "--config",
        &cfg,
        "--seed",
        "99",
        "--out",
        out_c.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(
        fs::read(out_a.join("decay.csv")).unwrap(),
        fs::read(out_c.join("decay.csv")).unwrap()
    );
}

#[test]
fn worker_thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.conf", FAST_DECOHERE);
    let out_a = dir.path().join("one");
    let out_b = dir.path().join("four");
    let run = |threads: &str, out_dir: &Path| {
        let out = Command::new(env!("CARGO_BIN_EXE_trps-lab"))
            .args(["decohere", "--config", &cfg, "--out", out_dir.to_str().unwrap()])
            .env("TRPS_LAB_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    };
    run("1", &out_a);
    run("4", &out_b);
    assert_eq!(
        normalized_record(&out_a.join("record.json")),
        normalized_record(&out_b.join("record.json"))
    );
    assert_eq!(
        fs::read(out_a.join("decay.csv")).unwrap(),
        fs::read(out_b.join("decay.csv")).unwrap()
    );
}

#[test]
fn relax_histogram_rows_sum_to_particle_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "r.conf",
        "run.seed = 21\ntheta.nu = 256\ntheta.n_dyn_times = 8\ntheta.bins = 16\n\
         theta.relax_steps = 40\n",
    );
    let out_dir = dir.path().join("out");
    let out = trps_lab(&["relax", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(out_dir.join("histogram.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "eps_lo,eps_hi,f");
    let total: f64 = lines
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 256.0).abs() < 0.01 * 256.0, "rows sum to {total}");
    assert!(out_dir.join("snapshot.csv").exists());
    assert!(out_dir.join("lb_fit.csv").exists());
}

#[test]
fn invariant_violation_exits_2_and_still_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    // A deliberately huge timestep wrecks energy conservation: the run
    // completes, verdicts fail, and the record is still written.
    let cfg = write_config(
        dir.path(),
        "bad_dt.conf",
        "run.seed = 17\ntheta.nu = 64\ntheta.n_dyn_times = 5\ntheta.bins = 8\n\
         theta.relax_steps = 30\ntheta.dt = 0.05\n",
    );
    let out_dir = dir.path().join("out");
    let out = trps_lab(&["relax", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["verdicts"]["energy_drift"], serde_json::Value::Bool(false));
}

#[test]
fn trps_run_emits_field_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.conf",
        "run.seed = 8\ntrps.grid_n = 6\ntrps.lapse_samples = 5000\n",
    );
    let out_dir = dir.path().join("out");
    let out = trps_lab(&["trps", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    for name in ["rho1.csv", "rho2.csv", "lapse.csv"] {
        let text = fs::read_to_string(out_dir.join(name)).unwrap();
        assert!(text.starts_with("x1,x2,x3,value\n"), "{name} header");
        assert_eq!(text.lines().count(), 1 + 6 * 6 * 6);
    }
}

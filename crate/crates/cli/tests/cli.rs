use std::path::Path;
use std::process::{Command, Output};

use dvarint_cli::{OrderReport, ResidualReport, RunDocument};

fn dvarint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvarint"))
        .args(args)
        .env_remove("DVARINT_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = dvarint(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|c| c == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn harmonic_midpoint_csv_layout() {
    let csv = stdout(&[
        "run", "--model", "harmonic", "--scheme", "midpoint", "--steps", "10",
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,time,p0,q0,energy,omega_01");
    assert_eq!(lines.len(), 12);
    assert!(csv.ends_with('\n') && !csv.contains('\r'));
    assert!(lines[1].starts_with("0,0.0000000000000000e0,"));
    // 17 significant digits, so values round-trip
    let q = column(&csv, "q0");
    assert_eq!(q[1], 0.9950124688279302);
    for e in column(&csv, "energy") {
        assert!((e - 0.5).abs() <= 1e-15);
    }
}

#[test]
fn fixed_seed_reproduces_bytes() {
    for cmd in ["run", "residuals"] {
        for format in ["csv", "json"] {
            let args = [
                cmd,
                "--model",
                "pendulum",
                "--scheme",
                "midpoint",
                "--steps",
                "50",
                "--tangents",
                "3",
                "--seed",
                "17",
                "--format",
                format,
            ];
            let a = dvarint(&args);
            let b = dvarint(&args);
            assert!(a.status.success());
            assert_eq!(a.stdout, b.stdout, "{cmd} {format}");
        }
    }
    let seeded = |seed: &str| stdout(&["run", "--steps", "3", "--seed", seed]);
    assert_ne!(seeded("1"), seeded("2"));
}

#[test]
fn json_round_trips_into_documented_schema() {
    let doc: RunDocument = serde_json::from_str(&stdout(&[
        "run",
        "--model",
        "quartic",
        "--scheme",
        "canonical",
        "--steps",
        "5",
        "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(doc.records.len(), 6);
    assert_eq!(doc.state_columns, ["p0", "q0"]);
    assert_eq!(doc.residual_columns, ["omega_01"]);
    assert!(doc.error.is_none());
    let csv = stdout(&[
        "run",
        "--model",
        "quartic",
        "--scheme",
        "canonical",
        "--steps",
        "5",
    ]);
    assert_eq!(column(&csv, "q0")[5], doc.records[5].state[1]);

    let report: ResidualReport = serde_json::from_str(&stdout(&[
        "residuals",
        "--model",
        "pendulum",
        "--scheme",
        "midpoint",
        "--steps",
        "200",
        "--tau",
        "0.05",
        "--format",
        "json",
    ]))
    .unwrap();
    assert!(report.max_symplectic_residual.unwrap() <= 1e-10);
    assert!(report.identity_residual.unwrap() <= 5e-6);

    let order: OrderReport = serde_json::from_str(&stdout(&[
        "order",
        "--scheme",
        "midpoint",
        "--taus",
        "0.2,0.1,0.05",
        "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(order.rows.len(), 3);
}

#[test]
fn explicit_euler_growth_factor() {
    let tau: f64 = 0.1;
    let report: ResidualReport = serde_json::from_str(&stdout(&[
        "residuals",
        "--scheme",
        "explicit_euler",
        "--tau",
        "0.1",
        "--steps",
        "100",
        "--format",
        "json",
    ]))
    .unwrap();
    let g = report.growth_factor.unwrap();
    assert!((g - (1.0 + tau * tau)).abs() <= 1e-8 * (1.0 + tau * tau));
    assert!(report.energy_slope > 0.0);
}

#[test]
fn order_study_recovers_scheme_orders() {
    let (coarse, fine) = ("0.2,0.1,0.05,0.025", "0.02,0.01,0.005");
    for (scheme, taus, lo, hi) in [
        ("midpoint", coarse, 1.9, 2.1),
        ("order4", coarse, 3.7, 4.3),
        ("canonical", fine, 0.9, 1.1),
        ("explicit_euler", fine, 0.9, 1.1),
    ] {
        let csv = stdout(&["order", "--scheme", scheme, "--taus", taus]);
        let orders = column(&csv.replace(",\n", ",nan\n"), "order");
        let last = *orders.last().unwrap();
        assert!((lo..=hi).contains(&last), "{scheme}: {last}");
    }
}

#[test]
fn lagrangian_run_matches_canonical_run() {
    let del = stdout(&[
        "run", "--model", "pendulum", "--scheme", "del", "--steps", "200", "--tau", "0.05",
    ]);
    let can = stdout(&[
        "run",
        "--model",
        "pendulum",
        "--scheme",
        "canonical",
        "--steps",
        "200",
        "--tau",
        "0.05",
    ]);
    for (name, tol) in [("p0", 1e-11), ("q0", 1e-11), ("omega_01", 1e-11)] {
        for (a, b) in column(&del, name).iter().zip(column(&can, name)) {
            assert!((a - b).abs() <= tol, "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn field_runs_preserve_their_structure() {
    let report = |args: &[&str]| -> ResidualReport {
        let mut all = vec!["residuals", "--format", "json"];
        all.extend_from_slice(args);
        serde_json::from_str(&stdout(&all)).unwrap()
    };
    let r = report(&[
        "--model",
        "sine_gordon_bridges",
        "--scheme",
        "box",
        "--extent",
        "32",
        "--h",
        "0.5",
        "--tau",
        "0.25",
        "--steps",
        "20",
        "--windows",
        "20",
    ]);
    assert!(r.max_multisymplectic_residual.unwrap() <= 1e-10);
    assert!(r.max_structure_drift <= 1e-10);
    assert!(r.identity_residual.unwrap() <= 5e-6);
    for scheme in ["leapfrog_field", "canonical_field"] {
        let r = report(&[
            "--model",
            "nonlinear_wave",
            "--scheme",
            scheme,
            "--extent",
            "32",
            "--h",
            "0.1",
            "--tau",
            "0.05",
            "--steps",
            "50",
        ]);
        assert!(r.max_symplectic_residual.unwrap() <= 1e-9, "{scheme}");
        assert!(r.identity_residual.is_none());
    }
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# harmonic oscillator\nmodel = harmonic\nparam.omega = 2\nscheme = midpoint\ntau = 0.1\nsteps = 4\ninitial = 0, 1\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let csv = stdout(&["run", "--config", cfg, "--steps", "6"]);
    assert_eq!(csv.lines().count(), 8);
    // H = ½p² + ½ω²q² with ω = 2
    assert!((column(&csv, "energy")[0] - 2.0).abs() <= 1e-15);
    let flagged = stdout(&[
        "run", "--model", "harmonic", "--param", "omega=2", "--tau", "0.1", "--steps", "6",
    ]);
    assert_eq!(csv, flagged);
}

#[test]
fn output_file_is_written_whole() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let out = dvarint(&["run", "--steps", "5", "--output", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 7);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn exit_codes() {
    // configuration errors
    for args in [
        &["run", "--model", "harmonic", "--scheme", "box"][..],
        &["run", "--scheme", "rk4"],
        &["run", "--tau", "-0.1"],
        &["run", "--steps", "0"],
        &["run", "--model", "nope"],
        &["run", "--bogus"],
        &["run", "--config", "/nonexistent/run.cfg"],
        &["residuals", "--tangents", "1"],
        &["order", "--taus", "0.1,0.05"],
        &["order", "--model", "pendulum", "--taus", "0.1,0.05,0.025"],
    ] {
        let out = dvarint(args);
        assert_eq!(code(&out), 1, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = Command::new(env!("CARGO_BIN_EXE_dvarint"))
        .args(["run", "--steps", "2"])
        .env("DVARINT_LOG", "verbose")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);

    // solver failure with partial output
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.csv");
    let out = dvarint(&[
        "run",
        "--model",
        "pendulum",
        "--scheme",
        "midpoint",
        "--tau",
        "1e6",
        "--steps",
        "20",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("residual norm"), "{stderr}");
    let partial = std::fs::read_to_string(&path).unwrap();
    assert!(partial.lines().count() >= 2 && partial.lines().count() < 22);

    // I/O failure
    let out = dvarint(&[
        "run",
        "--steps",
        "2",
        "--output",
        "/nonexistent/dir/out.csv",
    ]);
    assert_eq!(code(&out), 3);
    assert!(!Path::new("/nonexistent/dir/out.csv").exists());

    // help is not an error
    assert_eq!(code(&dvarint(&["--help"])), 0);
}

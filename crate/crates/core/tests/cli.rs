use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use atomlaser::integrator::Sample;
use atomlaser::io::{write_timeseries, TIMESERIES_HEADER};

fn atomlaser(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atomlaser"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synthetic(growth: f64) -> Vec<Sample> {
    // two tones at 40 and 110 Hz, both scaled by exp(growth t)
    (0..4000)
        .map(|i| {
            let t = i as f64 * 1e-3;
            let s = (growth * t).exp();
            let v = 1.0 + s * (0.1 * (2.0 * std::f64::consts::PI * 40.0 * t).sin() + 0.05 * (2.0 * std::f64::consts::PI * 110.0 * t).cos());
            Sample {
                t,
                n_t: 1e4,
                n_u: 0.0,
                central_density: v,
                mean_x: 0.0,
                mean_x2: 0.0,
                pointiness: 0.0,
                energy_per_particle: 0.0,
                a1: 0.0,
                a2: 0.0,
                b: 0.0,
            }
        })
        .collect()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&atomlaser(&["--help"], dir.path())), 0);
    assert_eq!(code(&atomlaser(&["--version"], dir.path())), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&atomlaser(&["simulate", "--bogus"], dir.path())), 1);
    assert_eq!(code(&atomlaser(&["simulate", "--feedback", "maybe"], dir.path())), 1);
    assert_eq!(code(&atomlaser(&["frobnicate"], dir.path())), 1);
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "omega = 50\nwarp_factor = 9\n").unwrap();
    let o = atomlaser(&["simulate", "--config", "bad.cfg"], dir.path());
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("warp_factor"), "{err}");
    assert!(err.contains('2'), "line number missing: {err}");

    fs::write(dir.path().join("neg.cfg"), "dt = -1e-6\n").unwrap();
    assert_eq!(code(&atomlaser(&["simulate", "--config", "neg.cfg"], dir.path())), 1);
    assert_eq!(code(&atomlaser(&["simulate", "--grid-points", "0"], dir.path())), 1);
}

#[test]
fn missing_files_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&atomlaser(&["simulate", "--config", "nope.cfg"], dir.path())), 3);
    assert_eq!(code(&atomlaser(&["analyze", "nope.csv"], dir.path())), 3);
}

#[test]
fn short_simulation_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = atomlaser(&["simulate", "--duration", "0.01", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run/timeseries.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TIMESERIES_HEADER));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r.len() == 11 && r.iter().all(|v| v.is_finite())));
    assert!((rows[100][0] - 0.01).abs() < 1e-12);
    // pump on, feedback off
    assert!(rows[100][1] > rows[0][1]);
    assert!(rows.iter().all(|r| r[8] == 0.0 && r[9] == 0.0 && r[10] == 0.0));
    assert!(dir.path().join("run/final.bin").exists());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("not analysed"), "{stdout}");
}

#[test]
fn analyze_reports_growth_and_decay() {
    let dir = tempfile::tempdir().unwrap();
    write_timeseries(&synthetic(3.0), &dir.path().join("grow.csv")).unwrap();
    write_timeseries(&synthetic(-3.0), &dir.path().join("decay.csv")).unwrap();

    let o = atomlaser(&["analyze", "grow.csv", "--out", "a"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("AbsolutelyUnstable"));
    let report = fs::read_to_string(dir.path().join("a/stability.txt")).unwrap();
    assert!(report.contains("AbsolutelyUnstable"));

    let o = atomlaser(&["analyze", "decay.csv", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("AbsolutelyStable"));
}

#[test]
fn analyze_rejects_short_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = synthetic(0.0);
    s.truncate(100);
    write_timeseries(&s, &dir.path().join("short.csv")).unwrap();
    assert_eq!(code(&atomlaser(&["analyze", "short.csv"], dir.path())), 1);
}

#[test]
fn groundstate_writes_record() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gs.cfg"), "scattering_length = 0\ngrid_points = 128\nlength = 6e-5\nabsorber_width = 1e-5\n").unwrap();
    let o = atomlaser(&["groundstate", "--config", "gs.cfg", "--out", "gs"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("gs/groundstate.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let e_hw: f64 = row[3].parse().unwrap();
    assert!((e_hw - 0.5).abs() < 1e-6, "{e_hw}");
    assert!(dir.path().join("gs/groundstate.bin").exists());
}

#[test]
fn shipped_feedback_config_switches_on_at_start_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/feedback_laser.cfg");
    let o = atomlaser(
        &["simulate", "--config", cfg.to_str().unwrap(), "--duration", "0.31", "--out", "fb"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let samples = atomlaser::io::read_timeseries(&dir.path().join("fb/timeseries.csv")).unwrap();
    let mut active = 0;
    for s in &samples {
        let on = s.a1 != 0.0 || s.a2 != 0.0 || s.b != 0.0;
        if s.t < 0.3 - 1e-9 {
            assert!(!on, "control before start at t = {}", s.t);
        } else if s.t > 0.3 + 2.5e-4 {
            assert!(on, "no control at t = {}", s.t);
            active += 1;
        }
    }
    assert!(active > 50);
}

use std::path::Path;
use std::process::{Command, Output};

fn qdfarm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdfarm"))
        .args(args)
        .current_dir(dir)
        .env_remove("QDFARM_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = qdfarm(d, &["simulate", "--farm", "default", "--seed", "7", "--out", "farm", "--limit", "48"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(std::fs::read_dir(d.join("farm/maps")).unwrap().count(), 48);

    let o = Command::new(env!("CARGO_BIN_EXE_qdfarm"))
        .args(["analyze", "farm/maps", "--out", "analysis"])
        .current_dir(d)
        .env("QDFARM_WORKERS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("with 2 workers"), "{}", stdout(&o));

    let o = qdfarm(
        d,
        &["report", "--analysis", "analysis", "--truth", "farm/truth.csv", "--out", "report.txt"],
    );
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("agreement"), "{text}");
    let agreement: f64 = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("agreement = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(agreement >= 0.88, "{text}");
    // The layout written by `simulate` carries set ids into the records.
    let records = std::fs::read_to_string(d.join("analysis/records.csv")).unwrap();
    assert!(records.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse::<u32>().is_ok());
    assert_eq!(std::fs::read_to_string(d.join("report.txt")).unwrap(), text);
}

#[test]
fn classify_single_maps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(qdfarm(d, &["simulate", "--seed", "3", "--limit", "4", "--noise-free"]).status.success());
    let maps: Vec<String> = std::fs::read_dir(d.join("farm/maps"))
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    let mut args = vec!["classify"];
    args.extend(maps.iter().map(String::as_str));
    let o = qdfarm(d, &args);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn fit_correlation_recovers_generators() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = qdfarm::stats::synth_correlation(200, 1.01, 0.21, 0.016, qdfarm::sim::Normal::new(0.173, 0.015), 5).unwrap();
    qdfarm::io::save_pairs(d.join("pairs.csv"), ("v_th", "v_1e"), &data).unwrap();
    let o = qdfarm(d, &["fit-correlation", "pairs.csv", "--chains", "2", "--dump", "samples.csv", "--at", "0.173"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let row = |name: &str| -> Vec<f64> {
        text.lines()
            .find(|l| l.starts_with(name))
            .unwrap()
            .split_whitespace()
            .skip(1)
            .map(|x| x.parse().unwrap())
            .collect()
    };
    for (name, truth) in [("alpha", 1.01), ("beta", 0.21), ("sigma", 0.016)] {
        let r = row(name);
        assert!(r[2] <= truth && truth <= r[3], "{name}: {r:?}");
    }
    let dump = std::fs::read_to_string(d.join("samples.csv")).unwrap();
    assert_eq!(dump.lines().count(), 1 + 2 * 2000);
}

#[test]
fn rf_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = qdfarm(d, &["rf", "resonator", "--sweep", "sweep.csv", "--points", "101"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("f_r = 4.077"), "{}", stdout(&o));
    assert_eq!(std::fs::read_to_string(d.join("sweep.csv")).unwrap().lines().count(), 102);

    std::fs::write(d.join("t.csv"), "tau,snr\n1e-6,100\n4e-6,200\n").unwrap();
    let o = qdfarm(d, &["rf", "tmin", "t.csv"]);
    assert!(stdout(&o).contains("t_min = 1.000000e-10"), "{o:?}");

    let rows = qdfarm::rfchain::lorentzian(407e6, 6.4e6, 50.0, (0..401).map(|k| 387e6 + k as f64 * 0.1e6));
    qdfarm::io::save_pairs(d.join("f.csv"), ("f", "snr2"), &rows).unwrap();
    let o = qdfarm(d, &["rf", "bandwidth", "f.csv"]);
    let w: f64 = stdout(&o).trim().strip_prefix("fwhm = ").unwrap().trim_end_matches(" Hz").parse().unwrap();
    assert!((w - 6.4e6).abs() <= 0.1e6);
}

#[test]
fn scan_budget() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = qdfarm(d, &["scan"]);
    assert!(stdout(&o).contains("total = 300000000000 ns"), "{o:?}");
    assert!(qdfarm(d, &["scan", "--write-default", "plan.csv"]).status.success());
    let o = qdfarm(d, &["scan", "--plan", "plan.csv", "--budget", "299"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("OVER BUDGET"));

    let plan = std::fs::read_to_string(d.join("plan.csv")).unwrap();
    let mut lines: Vec<&str> = plan.lines().collect();
    lines.pop();
    std::fs::write(d.join("short.csv"), lines.join("\n")).unwrap();
    assert_eq!(qdfarm(d, &["scan", "--plan", "short.csv"]).status.code(), Some(2));
}

#[test]
fn place_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdfarm(dir.path(), &["place", "--seed", "1", "--check", "--out", "layout.csv"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("centroid check passed"));
    assert_eq!(std::fs::read_to_string(dir.path().join("layout.csv")).unwrap().lines().count(), 1025);
    let odd = qdfarm(dir.path(), &["place", "--sizes", "511,513"]);
    assert_eq!(odd.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(qdfarm(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(qdfarm(d, &["scan", "--budget", "soon"]).status.code(), Some(1));
    assert_eq!(qdfarm(d, &["--help"]).status.code(), Some(0));
    std::fs::create_dir(d.join("empty")).unwrap();
    let o = qdfarm(d, &["analyze", "empty"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.join("analysis").exists());

    std::fs::create_dir(d.join("broken")).unwrap();
    std::fs::write(d.join("broken/x.csm"), "# format=CSM1\nnot a map\n").unwrap();
    let o = qdfarm(d, &["analyze", "broken", "--out", "a2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("x.csm"));

    let o = Command::new(env!("CARGO_BIN_EXE_qdfarm"))
        .args(["analyze", "broken"])
        .current_dir(d)
        .env("QDFARM_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

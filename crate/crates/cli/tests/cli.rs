use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ofo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofo"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn ofo")
}

fn run_args<'a>(mode: &'a str, out: &'a str, steps: &'a str) -> Vec<&'a str> {
    vec![
        "run", "--case", "builtin:mini-blocaux", "--scenario", "builtin:ramp", "--mode", mode, "--out", out,
        "--steps", steps,
    ]
}

#[test]
fn records_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = ofo(&run_args("ofo-approx", out, "200"), dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(dir.path().join("a/records.csv")).unwrap();
    let b = fs::read(dir.path().join("b/records.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# mode=ofo-approximate"));
    assert_eq!(text.lines().count(), 2 + 200);
    assert!(dir.path().join("a/summary.txt").exists());
}

#[test]
fn every_mode_runs_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    for (mode, out) in [("ofo-perfect", "p"), ("fixed:0.6", "f"), ("oracle", "o")] {
        let mut args = run_args(mode, out, "20");
        args.push("--plot");
        let o = ofo(&args, dir.path());
        assert!(o.status.success(), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let svg = fs::read_to_string(dir.path().join(out).join("run.svg")).unwrap();
        assert!(svg.starts_with("<svg"));
    }
    let summary = fs::read_to_string(dir.path().join("f/summary.txt")).unwrap();
    assert!(summary.contains("injected_fraction: 0.600000"), "{summary}");
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["fixed:1.5", "sideways"] {
        let o = ofo(&run_args(mode, "x", "10"), dir.path());
        assert_eq!(o.status.code(), Some(2), "{mode}");
    }
    let o = ofo(&["run", "--case", "missing.case", "--scenario", "builtin:ramp", "--mode", "oracle", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("bad.cfg"), "g_q = -1\n").unwrap();
    let o = ofo(
        &["run", "--case", "builtin:two-bus", "--scenario", "builtin:ramp", "--mode", "ofo-approx", "--config", "bad.cfg", "--out", "x"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_with_generated_wind() {
    let dir = tempfile::tempdir().unwrap();
    let o = ofo(&["gen-wind", "--case", "builtin:mini-blocaux", "--out", "wind.csv", "--steps", "1100", "--seed", "3"], dir.path());
    assert!(o.status.success());
    let wind = fs::read_to_string(dir.path().join("wind.csv")).unwrap();
    assert!(wind.starts_with("step,farm_id,p_max_pu\n"));
    fs::write(dir.path().join("sc.txt"), "name = gen\nwind = wind.csv\nsteps = 30\n").unwrap();
    let o = ofo(
        &["run", "--case", "builtin:mini-blocaux", "--scenario", "sc.txt", "--mode", "ofo-approx", "--out", "r", "--gtap", "3000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("r/records.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("scenario=gen"));
    assert_eq!(csv.lines().count(), 32);

    let o = ofo(&["plot", "--records", "r/records.csv", "--out", "r.svg"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("r.svg").exists());
}

#[test]
fn validate_and_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let o = ofo(&["validate", "--case", "builtin:three-bus"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    fs::write(dir.path().join("broken.case"), "[CASE]\nname b\nbase_mva 1\n[BUS]\n1 pq 0.9 1.1 90 1.0 0 0 0\n").unwrap();
    let o = ofo(&["validate", "--case", "broken.case"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("slack"), "{}", String::from_utf8_lossy(&o.stdout));

    let o = ofo(&["sensitivity", "--case", "builtin:mini-blocaux", "--out", "s.csv"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(s.starts_with("output,q_1"));
    assert_eq!(s.lines().count(), 1 + 8 + 10);
}

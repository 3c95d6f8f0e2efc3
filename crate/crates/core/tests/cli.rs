use std::path::Path;
use std::process::{Command, Output};

use qbeb::newton::NewtonState;

fn qbeb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbeb")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn accidents() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/accidents.csv").display().to_string()
}

#[test]
fn simulated_fit_is_deterministic() {
    let args = [
        "fit", "--prior", "weibull:5,3", "--n", "200", "--eta", "0.1", "--dcap", "2000", "--gamma", "0.99", "--alpha",
        "1", "--seed", "7", "--replications", "2", "--methods", "qbeb,robbins,peb", "--no-timing", "--no-meta",
    ];
    let a = stdout(&qbeb(&args));
    assert_eq!(a, stdout(&qbeb(&args)));
    let mut lines = a.lines();
    assert_eq!(lines.next(), Some("method,prior,n,d,eta,gamma,seed,rmse,mad,cpu_per_update_ms"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "QB-EB");
    assert_eq!(first.last(), Some(&"NaN"));
    assert_eq!(a.lines().count(), 1 + 2 * 3);

    // the provenance line is the only difference when --no-meta is dropped
    let with_meta = stdout(&qbeb(&args[..args.len() - 1]));
    let (meta, rest) = with_meta.split_once('\n').unwrap();
    assert!(meta.starts_with("# qbeb "));
    assert_eq!(rest, a);
}

#[test]
fn resume_matches_single_pass() {
    let dir = tempfile::tempdir().unwrap();
    let ys: Vec<String> = (0..1000u64).map(|i| ((i * 7919) % 13 / 2).to_string()).collect();
    let write = |name: &str, lines: &[String]| {
        let p = dir.path().join(name);
        std::fs::write(&p, lines.join("\n")).unwrap();
        p.display().to_string()
    };
    let all = write("all.txt", &ys);
    let first = write("first.txt", &ys[..500]);
    let second = write("second.txt", &ys[500..]);
    let full_state = dir.path().join("full.bin").display().to_string();
    let half_state = dir.path().join("half.bin").display().to_string();
    let grid = "0.05:20:400";

    stdout(&qbeb(&["fit", "--input", &all, "--grid", grid, "--state", &full_state, "--no-meta"]));
    stdout(&qbeb(&["fit", "--input", &first, "--grid", grid, "--state", &half_state, "--no-meta"]));
    stdout(&qbeb(&["fit", "--input", &second, "--state", &half_state, "--resume", "--no-meta"]));

    let full = NewtonState::load(Path::new(&full_state)).unwrap();
    let resumed = NewtonState::load(Path::new(&half_state)).unwrap();
    assert_eq!(full.n(), 1000);
    assert_eq!(resumed.n(), 1000);
    let gap = full.weights().iter().zip(resumed.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap <= 1e-12, "max weight gap {gap}");

    let est = stdout(&qbeb(&["estimate", "--state", &full_state, "--y", "0..3", "--level", "0.95", "--no-meta"]));
    let lines: Vec<&str> = est.lines().collect();
    assert_eq!(lines[0], "y,theta_hat,variance,b_n,ci_low,ci_high,level");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("3,"));
}

#[test]
fn accident_robbins_row() {
    let out = stdout(&qbeb(&["baseline", "--method", "robbins", "--input", &accidents(), "--markdown"]));
    assert!(out.contains("| NP-EB | 0.17 | 0.36 | 0.53 | 1.33 | 1.43 | 6.00 | 1.75 | 0.00 |"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // bad flags and unreadable inputs are validation failures
    assert_eq!(qbeb(&["fit"]).status.code(), Some(2));
    assert_eq!(qbeb(&["estimate", "--state", "/nonexistent/state.bin", "--y", "0"]).status.code(), Some(2));
    let garbage = dir.path().join("garbage.bin");
    std::fs::write(&garbage, b"not a state file at all, clearly not one").unwrap();
    let out = qbeb(&["estimate", "--state", garbage.to_str().unwrap(), "--y", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "1\n2\nthree\n").unwrap();
    let out = qbeb(&["fit", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    // a count the grid cannot explain is a numerical failure
    let far = dir.path().join("far.txt");
    std::fs::write(&far, "1\n2000\n").unwrap();
    let out = qbeb(&["fit", "--input", far.to_str().unwrap(), "--grid", "0.01:1:50"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn event_window_input() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("events.tsv");
    std::fs::write(&tsv, "entity_id\torigin_epoch_s\tevent_epoch_s\na\t0\t3\na\t0\t12\nb\t5\t-\nc\t9\t40\n").unwrap();
    let out = stdout(&qbeb(&[
        "baseline", "--method", "robbins", "--input", tsv.to_str().unwrap(), "--format", "event-window:30",
        "--no-meta",
    ]));
    // counts a = 2, b = 0, c = 0
    assert_eq!(out, "y,method,estimate\n0,NP-EB,0.0\n2,NP-EB,0.0\n");
}

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use fairdyn::metrics::Audit;
use fairdyn::policy::Policy;
use fairdyn::scenarios::load_scenario;

fn fairdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairdyn"))
        .args(args)
        .output()
        .unwrap()
}

fn model_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("models/admissions.toml")
        .to_string_lossy()
        .into_owned()
}

#[test]
fn zero_step_simulation_has_one_row_per_group() {
    let out = fairdyn(&["simulate", "--scenario", "lending_liu", "--steps", "0"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].starts_with("step,group,mean_score,acceptance_rate,delta_mu,regime"));
    assert!(lines[1].starts_with("0,A,") && lines[2].starts_with("0,B,"));
}

#[test]
fn missing_scenario_exits_one_and_names_it() {
    let out = fairdyn(&["metrics", "--scenario", "nonexistent.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent.cfg"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fairdyn(&["simulate"]).status.code(), Some(1));
    assert_eq!(
        fairdyn(&[
            "optimize",
            "--scenario",
            "lending_liu",
            "--constraint",
            "xx"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn optimized_dp_policy_has_no_gap() {
    let out = fairdyn(&[
        "optimize",
        "--scenario",
        "lending_liu",
        "--constraint",
        "dp",
        "--resolution",
        "0.01",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let (policy_csv, summary) = text.split_once("\n\n").unwrap();

    let mut acceptance: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for line in policy_csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        acceptance
            .entry(cells[0].to_string())
            .or_default()
            .push(cells[3].parse().unwrap());
    }
    let policy = Policy::new(acceptance).unwrap();
    let cfg = load_scenario("lending_liu").unwrap();
    let gap = Audit::new(&cfg.population, &cfg.outcome, &policy)
        .demographic_parity_gap("A", "B")
        .unwrap();
    assert!(gap <= 1e-9, "{gap}");
    assert!(summary.starts_with("group_a,group_b,dp_gap"));
}

#[test]
fn infeasible_runs_exit_two_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("policy.csv");
    let out = fairdyn(&[
        "optimize",
        "--scenario",
        "lending_liu",
        "--constraint",
        "outcome",
        "--utility-floor",
        "5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists());
    assert_eq!(
        std::fs::read_dir(dir.path()).unwrap().count(),
        0,
        "temporary file left behind"
    );
}

#[test]
fn causal_checks_on_the_sample_model() {
    let model = model_path();
    let run = |args: &[&str]| {
        let mut full = vec!["causal", "--model", model.as_str()];
        full.extend_from_slice(args);
        let out = fairdyn(&full);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    assert_eq!(
        run(&["--check", "dsep", "--given", "D"]),
        "check,result\nd_separated,true\n"
    );
    assert_eq!(
        run(&["--check", "dsep"]),
        "check,result\nd_separated,false\n"
    );
    assert_eq!(
        run(&["--check", "unresolved"]),
        "check,result\nunresolved_discrimination,true\n"
    );
    assert_eq!(
        run(&["--check", "unresolved", "--resolving", "D"]),
        "check,result\nunresolved_discrimination,false\n"
    );
    // p(admit | do(A)) = 0.7·0.22 + 0.3·0.5 = 0.304 for f and 0.416 for m.
    let cf: f64 = run(&["--check", "cf"])
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((cf - 0.112).abs() < 1e-12, "{cf}");
    let proxy: f64 = run(&["--check", "proxy", "--proxy", "D"])
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((proxy - 0.28).abs() < 1e-12, "{proxy}");

    let out = fairdyn(&["causal", "--model", &model, "--check", "proxy"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_and_sweep_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cmp = dir.path().join("cmp.csv");
    let out = fairdyn(&[
        "compare",
        "--scenario",
        "boards_quota",
        "--variants",
        "quota,quota+pipeline",
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&cmp).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].split(',').nth(3), Some("false"));
    assert_eq!(rows[2].split(',').nth(3), Some("true"));

    let sweep = dir.path().join("sweep.csv");
    let out = fairdyn(&[
        "sweep",
        "--scenario",
        "lending_liu",
        "--eps",
        "0.01",
        "--draws",
        "4",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("draw,final_goal_value\n0,"));
}

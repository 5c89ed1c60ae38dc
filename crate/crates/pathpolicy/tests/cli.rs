//! End-to-end runs of the installed binary: every subcommand, the exit-code
//! contract (0 ok, 2 bad input, 3 numeric failure), and file outputs.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pathpolicy::dataset::Dataset;
use pathpolicy::layout::Layout;
use pathpolicy::studies;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pathpolicy"));
    cmd.env_remove("PATHPOLICY_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_status(out: &Output, want: i32) {
    let code = out.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        want,
        "exit {code}, wanted {want}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_toy1_spec(dir: &Path) -> PathBuf {
    let path = dir.join("toy1.json");
    let text = serde_json::to_string_pretty(&studies::toy1_spec()).unwrap();
    std::fs::write(&path, text).unwrap();
    path
}

fn simulate_toy1(dir: &Path, n: usize) -> PathBuf {
    let spec = write_toy1_spec(dir);
    let data = dir.join("data.csv");
    let out = run(&[
        "simulate",
        "--spec",
        spec.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--seed",
        "7",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_status(&out, 0);
    data
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_toy1_spec(dir.path());
    let make = |name: &str, seed: &str| {
        let path = dir.path().join(name);
        let out = run(&[
            "simulate",
            "--spec",
            spec.to_str().unwrap(),
            "--n",
            "500",
            "--seed",
            seed,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_status(&out, 0);
        std::fs::read(&path).unwrap()
    };
    let a = make("a.csv", "3");
    let b = make("b.csv", "3");
    let c = make("c.csv", "4");
    assert_eq!(a, b, "same seed must give identical bytes");
    assert_ne!(a, c, "different seeds must give different draws");
    assert!(a.starts_with(b"W0,A1,M1_1,W1\n"));
}

#[test]
fn fit_writes_a_parseable_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_toy1(dir.path(), 6000);
    let fit = dir.path().join("fit.json");
    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--learner",
        "qlearn",
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert_status(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("learner: qlearn"), "stdout: {text}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    let value = report["value_estimate"].as_f64().unwrap();
    assert!((value - 3.375).abs() < 0.2, "value {value}");
    assert!(report["policy"]["rules"].is_array());

    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--learner",
        "gestimate",
        "--mode",
        "path",
        "--reference",
        "0",
    ]);
    assert_status(&out, 0);
    assert!(stdout(&out).contains("stage 1 blip:"));
}

#[test]
fn oracle_reports_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_toy1_spec(dir.path());
    let report_path = dir.path().join("oracle.json");

    let out = run(&[
        "oracle",
        "--spec",
        spec.to_str().unwrap(),
        "--optimal",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_status(&out, 0);
    assert!(stdout(&out).contains("optimal value: 3.3750000000"), "{}", stdout(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["value"].as_f64().unwrap(), 3.375);

    let out = run(&["oracle", "--spec", spec.to_str().unwrap(), "--fixed", "1"]);
    assert_status(&out, 0);
    assert!(stdout(&out).contains("exact value: 3.3750000000"));

    let out = run(&[
        "oracle",
        "--spec",
        spec.to_str().unwrap(),
        "--fixed",
        "1",
        "--mode",
        "path",
        "--reference",
        "0",
    ]);
    assert_status(&out, 0);
    assert!(stdout(&out).contains("exact value: 2.6250000000"), "{}", stdout(&out));
}

#[test]
fn evaluate_and_search_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_toy1(dir.path(), 6000);
    let policy = dir.path().join("policy.json");
    std::fs::write(&policy, r#"{"rules":[{"table":{"actions":[0,1]}}]}"#).unwrap();

    let out = run(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--mode",
        "path",
        "--reference",
        "0",
    ]);
    assert_status(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("estimator: robust"), "{text}");
    let value: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("value estimate: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 2.175).abs() < 0.2, "value {value}");

    let out = run(&[
        "search",
        "--data",
        data.to_str().unwrap(),
        "--thresholds",
        "--estimator",
        "ipw",
    ]);
    assert_status(&out, 0);
    assert!(stdout(&out).contains("best value estimate:"));

    let candidates = dir.path().join("candidates.json");
    std::fs::write(
        &candidates,
        r#"[{"rules":[{"table":{"actions":[0,0]}}]},{"rules":[{"table":{"actions":[1,1]}}]}]"#,
    )
    .unwrap();
    let out = run(&[
        "search",
        "--data",
        data.to_str().unwrap(),
        "--candidates",
        candidates.to_str().unwrap(),
    ]);
    assert_status(&out, 0);
    assert!(stdout(&out).contains("<- best"));
}

#[test]
fn study_runs_into_a_fresh_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("toy1");
    let out = run(&[
        "study",
        "--name",
        "toy1",
        "--out",
        out_dir.to_str().unwrap(),
        "--n",
        "600",
        "--replicates",
        "8",
        "--seed",
        "99",
    ]);
    assert_status(&out, 0);
    for file in [
        "data.csv",
        "table.txt",
        "table.csv",
        "fits/qlearn_overall.json",
        "fits/gestimate_path.json",
        "fits/search_path.json",
    ] {
        assert!(out_dir.join(file).is_file(), "missing {file}");
    }
    assert!(stdout(&out).contains("wrote"));
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_toy1(dir.path(), 200);

    let out = run(&["fit", "--data", data.to_str().unwrap(), "--learner", "boosting"]);
    assert_status(&out, 2);

    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--learner",
        "qlearn",
        "--reference",
        "0",
    ]);
    assert_status(&out, 2);

    let out = run(&["fit", "--data", "/nonexistent/data.csv", "--learner", "qlearn"]);
    assert_status(&out, 2);

    let out = bin()
        .args(["oracle", "--spec", dir.path().join("toy1.json").to_str().unwrap(), "--fixed", "1"])
        .env("PATHPOLICY_THREADS", "zero")
        .output()
        .unwrap();
    assert_status(&out, 2);
}

#[test]
fn single_threaded_runs_match_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_toy1_spec(dir.path());
    let out = bin()
        .args(["oracle", "--spec", spec.to_str().unwrap(), "--optimal"])
        .env("PATHPOLICY_THREADS", "1")
        .output()
        .unwrap();
    assert_status(&out, 0);
    assert!(stdout(&out).contains("optimal value: 3.3750000000"));
}

#[test]
fn path_blip_on_two_stage_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("toy2.json");
    std::fs::write(&spec, serde_json::to_string(&studies::toy2_spec()).unwrap()).unwrap();
    let data = dir.path().join("toy2.csv");
    let out = run(&[
        "simulate",
        "--spec",
        spec.to_str().unwrap(),
        "--n",
        "400",
        "--seed",
        "5",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_status(&out, 0);

    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--learner",
        "gestimate",
        "--mode",
        "path",
        "--reference",
        "0,0",
    ]);
    assert_status(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("single decision stage"));
}

#[test]
fn example_files_stay_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let text = std::fs::read_to_string(root.join("toy1.json")).unwrap();
    let spec: pathpolicy::scm::ScmSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, studies::toy1_spec());

    let text = std::fs::read_to_string(root.join("treat_high_baseline.json")).unwrap();
    let policy: pathpolicy::policy::Policy = serde_json::from_str(&text).unwrap();
    policy.validate(&spec.layout().unwrap()).unwrap();

    let text = std::fs::read_to_string(root.join("flat_propensity.json")).unwrap();
    let config: pathpolicy::policylearn::ModelConfig = serde_json::from_str(&text).unwrap();
    assert!(config.propensity_features.is_some());

    let dir = tempfile::tempdir().unwrap();
    let data = simulate_toy1(dir.path(), 4000);
    let out = run(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--policy",
        root.join("treat_high_baseline.json").to_str().unwrap(),
        "--estimator",
        "ipw",
        "--config",
        root.join("flat_propensity.json").to_str().unwrap(),
    ]);
    assert_status(&out, 0);
}

#[test]
fn numeric_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(1, 2, vec![1]).unwrap();
    let n = 60;
    let mut gen = common::rng(15);
    let cols = vec![
        (0..n).map(|_| common::bit(&mut gen)).collect::<Vec<u8>>(),
        vec![1; n],
        (0..n).map(|_| common::bit(&mut gen)).collect(),
    ];
    let y = (0..n).map(|i| i as f64 * 0.01).collect();
    let one_armed = Dataset::new(layout, cols, y).unwrap();
    let path = dir.path().join("one_armed.csv");
    one_armed.write_csv(&path).unwrap();

    let out = run(&["fit", "--data", path.to_str().unwrap(), "--learner", "gestimate"]);
    assert_status(&out, 3);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

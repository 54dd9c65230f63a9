use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tlearn");

fn tlearn(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("TLEARN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TRIAL_HEADER: &str =
    "experiment_id,algorithm,env,n_actions,trial,seed,steps_to_policy_convergence,\
episodes_to_policy_convergence,episodes_to_t_convergence,converged";

#[test]
fn headline_run_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.csv");
    let o = tlearn(&[
        "run",
        "--env",
        "beam",
        "--n",
        "50",
        "--algo",
        "t_learning",
        "--trials",
        "50",
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), TRIAL_HEADER);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50);
    assert!(rows[0].starts_with("beam-t_learning-n50-seed7,t_learning,beam,101,0,"));
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn output_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("r{jobs}.csv"));
        let o = tlearn(&[
            "run",
            "--env",
            "beam",
            "--n",
            "8",
            "--algo",
            "q-learning",
            "--trials",
            "6",
            "--seed",
            "3",
            "--jobs",
            jobs,
            "--out",
            path_str(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn precision_without_the_skill_action_fails() {
    let o = tlearn(&["check-precision", "--env", "small", "--no-skill-action"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("holds: false"), "{text}");
    assert!(text.contains("state 1:"));
    let o = tlearn(&[
        "check-precision",
        "--env",
        "small",
        "--n",
        "5",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["holds"], true);
}

#[test]
fn sweep_writes_one_row_per_size_and_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = tlearn(&[
        "sweep",
        "--env",
        "beam",
        "--n-list",
        "2,4,8,16,32,64",
        "--trials",
        "3",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("n,n_actions,algorithm,"));
    assert!(lines[0].ends_with(",fitted_exponent"));
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("2,5,t_learning,"));
    assert!(lines[2].starts_with("2,5,q_learning,"));
}

#[test]
fn non_convergence_exits_2_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("capped.csv");
    let o = tlearn(&[
        "run",
        "--n",
        "50",
        "--trials",
        "2",
        "--max-steps",
        "50",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("did not converge"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",false")));
}

#[test]
fn misuse_exits_1_without_partial_files() {
    let o = tlearn(&["run", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.csv");
    let o = tlearn(&[
        "run",
        "--n",
        "2",
        "--trials",
        "1",
        "--alpha",
        "1.5",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let missing = dir.path().join("no-such-dir").join("x.csv");
    let o = tlearn(&[
        "run",
        "--env",
        "small",
        "--n",
        "1",
        "--trials",
        "1",
        "--out",
        path_str(&missing),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no-such-dir"), "{}", stderr(&o));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn export_then_validate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("beam.mdp");
    let o = tlearn(&[
        "export-env",
        "--env",
        "beam",
        "--n",
        "50",
        "--out",
        path_str(&file),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = tlearn(&["validate", path_str(&file)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("valid: 16 states, 101 actions"));

    let o = tlearn(&["oracle", "--mdp", path_str(&file), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["states"][0]["tau"], 3);

    let bad = dir.path().join("bad.mdp");
    fs::write(&bad, "[meta]\nnum_states = 2\nnum_actions = 3\nstart = 1\nterminals = 2\n[kernel]\n1 * : 2 1\n1 3 : 2 0.9\n").unwrap();
    let o = tlearn(&["validate", path_str(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stdout(&o).contains("row (s=1,a=3) sums to 0.9"),
        "{}",
        stdout(&o)
    );

    fs::write(
        &bad,
        "[meta]\nnum_states = 2\nnum_actions = 1\n[kernel]\n1 1 : 2 1\n",
    )
    .unwrap();
    let o = tlearn(&["validate", path_str(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("start"), "{}", stderr(&o));
}

#[test]
fn env_class_report() {
    let o = tlearn(&["check-env-class", "--env", "beam", "--n", "50"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("holds: true"));
    let o = tlearn(&[
        "check-env-class",
        "--env",
        "small",
        "--n",
        "5",
        "--no-skill-action",
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["holds"], false);
}

#[test]
fn json_output_and_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args([
            "run", "--env", "small", "--n", "1", "--trials", "2", "--seed", "4", "--format", "json",
        ])
        .env("TLEARN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let file = dir.path().join("small-t_learning-n1-seed4.json");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    assert_eq!(v["trials"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["learner"]["alpha"], 0.5);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "[experiment]\nalgorithm = q_learning\ntrials = 3\nseed = 9\n[env]\nkind = small\nn = 2\n",
    )
    .unwrap();
    let o = tlearn(&["run", "--config", path_str(&cfg), "--trials", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("small-q_learning-n2-seed9,q_learning,small,5,0,"));
}

#[test]
fn help_documents_paper_defaults() {
    let text = stdout(&tlearn(&["run", "--help"]));
    for needle in [
        "[default: 0.5]",
        "[default: 0.85]",
        "[default: 0.1]",
        "[default: 0.75]",
        "[default: 50]",
    ] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

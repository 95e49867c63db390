use std::process::Command;

use outbreak_cli::commands::{exit_code, EXIT_INVARIANT};
use outbreak_core::Error;

fn outbreak() -> Command {
    Command::new(env!("CARGO_BIN_EXE_outbreak"))
}

#[test]
fn run_writes_outputs_under_the_output_root() {
    let root = tempfile::tempdir().unwrap();
    let status = outbreak()
        .env("OUTBREAK_OUTPUT_ROOT", root.path())
        .args(["run", "--policy", "thres_size_rand", "--episodes", "2", "--seeds", "0,1", "--clusters", "2", "--budget", "2", "--out", "demo"])
        .status()
        .unwrap();
    assert!(status.success());
    let dir = root.path().join("demo");
    for f in ["results.csv", "cluster_episodes.csv", "summary.json", "latency.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    assert!(dir.join("trajectories/seed_0_episode_0.ndjson").exists());
}

#[test]
fn spec_file_is_read() {
    let root = tempfile::tempdir().unwrap();
    let spec = root.path().join("spec.toml");
    std::fs::write(
        &spec,
        "episodes = 2\nseeds = [3]\ndump_episodes = 0\n[policy]\nkind = \"fixed_m_qr\"\nm = 2.0\n[sim]\nn_clusters = 2\nbudget = 1\n",
    )
    .unwrap();
    let out = outbreak()
        .env("OUTBREAK_OUTPUT_ROOT", root.path())
        .args(["run", "--spec", spec.to_str().unwrap(), "--out", "s"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(root.path().join("s/results.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("fixed_m_qr,analytic"));
}

#[test]
fn bad_input_fails() {
    let out = outbreak().args(["run", "--policy", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = outbreak().args(["run", "--alpha2=-1", "--episodes", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha2"));
}

#[test]
fn invariant_violations_get_their_own_exit_code() {
    let e = anyhow::Error::from(Error::BudgetViolated { day: 4, tests: 3, budget: 2 }).context("running episode");
    assert_eq!(exit_code(&e), EXIT_INVARIANT);
    let e = anyhow::Error::from(Error::param("alpha2", "negative"));
    assert_eq!(exit_code(&e), 1);
}

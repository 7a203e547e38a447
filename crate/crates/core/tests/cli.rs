use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn binospec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binospec")).args(args).output().expect("binary runs")
}

fn example(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn read(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn simulate_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = binospec(&[
        "simulate",
        "--scenario",
        &example("single_node_failure.toml"),
        "--policy",
        "yarn",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
        "--trace",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("yarn: 1 jobs"));
    assert_eq!(
        read(&out, "jobs.csv").lines().next().unwrap(),
        "job_id,input_size,policy,exec_time_ms,baseline_ms,slowdown,spec_tasks,wasted_work"
    );
    assert_eq!(read(&out, "jobs.csv").lines().count(), 2);
    assert!(read(&out, "faults.csv").contains("node_fail"));
    for f in ["summary.csv", "pdf.csv", "cdf.csv", "trace.txt"] {
        assert!(!read(&out, f).is_empty(), "{f}");
    }
}

#[test]
fn same_invocation_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = binospec(&[
            "simulate",
            "--scenario",
            &example("mof_loss.toml"),
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["jobs.csv", "summary.csv", "pdf.csv", "cdf.csv", "faults.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
}

#[test]
fn bad_scenarios_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[cluster]\nnodes = 0\n\n[[jobs]]\ninput_size = \"1GB\"\n").unwrap();
    let out = tmp.path().join("out");
    for scenario in [bad.to_str().unwrap(), "/no/such/scenario.toml"] {
        let o = binospec(&["simulate", "--scenario", scenario, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{scenario}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    }
    assert!(!out.exists());

    let o = binospec(&["simulate", "--scenario", &example("mof_loss.toml"), "--policy", "fast", "--out", "x"]);
    assert!(!o.status.success());
}

#[test]
fn sweep_runs_the_cross_product() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = binospec(&[
        "simulate",
        "--scenario",
        &example("single_node_failure.toml"),
        "--out",
        out.to_str().unwrap(),
        "--sweep",
        "policy.bino.coll_multiply=1,2",
        "--sweep",
        "cluster.size_neighbor=2,4,8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&out, "sweep_summary.csv");
    let mut lines = summary.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("policy.bino.coll_multiply,cluster.size_neighbor,policy,jobs"));
    assert_eq!(lines.count(), 6);
    assert!(out.join("policy.bino.coll_multiply=2,cluster.size_neighbor=8").join("jobs.csv").exists());

    let o = binospec(&[
        "simulate",
        "--scenario",
        &example("single_node_failure.toml"),
        "--out",
        out.to_str().unwrap(),
        "--sweep",
        "cluster.nodes=4,zero",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

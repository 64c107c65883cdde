use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ctrl_core::harness::{read_checkpoint, read_metrics, METRICS_HEADER};

fn ctrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrl")).args(args).output().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    let text = format!(
        "# tiny LQ run\nenv = lq\nalgo = cpg\nK = 4   # iterations\nT = 2\ndt = 0.01\nmc_eval_samples = 8\neval_stride = 2\n\
         checkpoint_stride = 2\nseeds = 1,2\nout = {}\n{extra}",
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_every_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = ctrl(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let metrics = fs::read_to_string(o.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(read_metrics(&o.join("metrics.csv")).unwrap().len(), 8);
    for k in [0, 2, 4] {
        let ck = read_checkpoint(&o.join(format!("checkpoint_{k}.txt"))).unwrap();
        assert_eq!(ck.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(ck[0].1.len(), 3);
    }
    assert!(fs::read_to_string(o.join("resolved_config.txt")).unwrap().contains("K = 4"));
}

#[test]
fn resolved_config_replays_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    assert_eq!(ctrl(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(0));
    let first = dir.path().join("out");
    let second = dir.path().join("again");
    let resolved = first.join("resolved_config.txt");
    let out = ctrl(&["run", "--config", resolved.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["metrics.csv", "checkpoint_4.txt"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out_dir = dir.path().join("flagged");
    let out = ctrl(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--algo",
        "cppo",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let resolved = fs::read_to_string(out_dir.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("algo = cppo"));
    let rows = read_metrics(&out_dir.join("metrics.csv")).unwrap();
    assert!(rows.iter().all(|r| r.seed == 9));
    assert!(rows.iter().all(|r| r.c_penalty.is_some()));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["bogus_key = 1", "K = -3", "dt = 0.007", "no equals sign here", "algo = sarsa"] {
        let cfg = small_config(dir.path(), bad);
        let out = ctrl(&["run", "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
        assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    }
    let out = ctrl(&["run", "--config", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn all_seeds_diverging_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "lr_policy = 1e300\nlr_policy_schedule = constant\ngrad_clip = none\n");
    let out = ctrl(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics(&dir.path().join("out").join("metrics.csv")).unwrap();
    assert!(rows.iter().any(|r| r.diverged));
}

#[test]
fn verify_writes_check_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.cfg");
    let text = format!(
        "algo = verify\nseed = 3\nverify.trajectories = 200\nverify.pd_pairs = 1\nverify.pd_lhs = 200\n\
         verify.pd_rhs = 2000\nverify.coupling_pairs = 50\nout = {}\n",
        dir.path().join("v").display()
    );
    fs::write(&path, text).unwrap();
    let out = ctrl(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("v").join("verification.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "check,lhs,rhs,se,status");
    assert!(csv.lines().any(|l| l.starts_with("hj_residual_at_optimum,") && l.ends_with(",pass")));
}

#[test]
fn oracle_prints_closed_form_constants() {
    let out = ctrl(&["oracle"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("k0 = 0.7191487"));
    assert!(text.contains("k2 = -0.5351837"));
    assert!(text.contains("mean_intercept = -0.7888974"));
}

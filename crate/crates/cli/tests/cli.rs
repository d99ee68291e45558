use std::path::Path;
use std::process::{Command, Output};

fn melsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melsched"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.conf");
    std::fs::write(
        &path,
        "# four learners, short budgets\nfleet.K = 4\ntask.total_samples = 800\ntask.dim = 4\n\
         task.holdout_samples = 100\ntrain.budget_s = 30\nsweep.budgets = [20, 40]\nsweep.seeds = \"0..2\"\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn rate_lists_every_learner() {
    let out = melsched(&["rate", "--set", "fleet.K=6"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("k,cpu_hz,distance_m,gain,snr,rate_bps,c2,c1,c0\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn train_writes_round_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let csv = dir.path().join("rounds.csv");
    let out = melsched(&[
        "train",
        "--config",
        &cfg,
        "--policy",
        "HU",
        "--seed",
        "3",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("g,tau,L,max_time_s,beta,delta,global_loss,bound,"));
    assert!(text.lines().count() > 2);
}

#[test]
fn infeasible_budget_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = melsched(&["train", "--config", &cfg, "--budget", "0.001"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "fleet.K = 4\ntrain.budget_s = fast\n").unwrap();
    let out = melsched(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.contains("train.budget_s") && err.contains("line 2"),
        "{err}"
    );
    assert_eq!(
        melsched(&["rate", "--set", "nope=1"]).status.code(),
        Some(1)
    );
}

#[test]
fn sweep_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = melsched(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.starts_with("policy,T,seed,final_loss,rounds,total_time\n"));
    assert_eq!(summary.lines().count(), 1 + 2 * 2 * 2);
    assert_eq!(
        summary,
        std::fs::read_to_string(b.join("summary.csv")).unwrap()
    );
    assert!(a.join("loss_vs_T.txt").exists());
    assert!(a.join("rounds").join("HA_T20_seed0.csv").exists());
}

#[test]
fn schedule_and_certify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = melsched(&["schedule", "--config", &cfg, "--policy", "HA"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\ntau,") && text.contains("\nbatches,"));

    let out = melsched(&[
        "certify",
        "--config",
        &cfg,
        "--set",
        "bounds.delta_override=0.5",
        "--tau-max",
        "50",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("passed,true"));
}

//! Subprocess checks of the `ddql` binary: the documented subcommands,
//! output-root routing, and exit statuses.

use std::path::Path;
use std::process::{Command, Output};

fn ddql(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddql"))
        .env("DDQL_OUTPUT_ROOT", root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &str = "
experiment.id = cli
experiment.seeds = 1, 2
experiment.total_steps = 400
env.base = maxbias
agent.algorithm = double_dqn
agent.hidden_sizes = 8
agent.minibatch_size = 8
agent.replay_start_size = 50
eval.frequency = 200
eval.phase_steps = 40
";

#[test]
fn validate_accepts_presets_and_rejects_garbage() {
    let root = tempfile::tempdir().unwrap();
    let ok = ddql(root.path(), &["validate", "desk"]);
    assert!(ok.status.success());
    let text = stdout(&ok);
    assert!(text.contains("preset:desk: ok") && text.contains("gridworld5x5"), "{text}");
    assert!(ddql(root.path(), &["validate", "paper-fullscale"]).status.success());

    let missing = ddql(root.path(), &["validate", "/nonexistent.cfg"]);
    assert!(!missing.status.success());

    let bad = root.path().join("bad.cfg");
    std::fs::write(&bad, format!("{TINY}\nagent.bogus = 1\n")).unwrap();
    let out = ddql(root.path(), &["validate", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("agent.bogus"));
}

#[test]
fn train_compare_oracle_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();

    let train = ddql(root.path(), &["train", cfg.to_str().unwrap()]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    for seed in [1, 2] {
        assert!(root.path().join(format!("runs/cli/cli-s{seed}.csv")).exists());
        assert!(root.path().join(format!("runs/cli/cli-s{seed}.checkpoint")).exists());
    }

    // Seed offset writes new run ids alongside the originals.
    let offset = ddql(root.path(), &["train", cfg.to_str().unwrap(), "--seed-offset", "10"]);
    assert!(offset.status.success());
    assert!(root.path().join("runs/cli/cli-s11.csv").exists());

    let cmp = ddql(
        root.path(),
        &["compare", "cli", "--metric", "overestimation", "--stat", "median"],
    );
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    let text = stdout(&cmp);
    assert!(text.contains("auc(overestimation)"), "{text}");
    assert!(root
        .path()
        .join("runs/compare/cli--overestimation/table.csv")
        .exists());

    let oracle = ddql(root.path(), &["oracle", "maxbias", "--gamma", "0.99"]);
    assert!(oracle.status.success());
    let text = stdout(&oracle);
    assert!(text.contains("q*:") && text.contains("-0.099000"), "{text}");
    assert!(root.path().join("oracle/maxbias-gamma0.99.csv").exists());
    assert!(!ddql(root.path(), &["oracle", "pong", "--gamma", "0.99"]).status.success());
}

#[test]
fn aborted_training_exits_nonzero() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("explode.cfg");
    std::fs::write(&cfg, format!("{TINY}\nagent.adam_step_size = 1e200\n")).unwrap();
    let out = ddql(root.path(), &["train", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("ABORTED"));
}

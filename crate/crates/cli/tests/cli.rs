use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[experiment]
id = cli
env = pendulum
variant = vanilla, scn16
seeds = 0, 1
rollouts = 2

[test]
channels = obs, act
grid = 0, 0.25, 0.5

[ppo]
total_steps = 512
steps_per_batch = 256
epochs_per_iter = 1
";

fn genbench(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_genbench"));
    cmd.args(args).env_remove("GENBENCH_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&genbench(&["--help"], &[])), 0);
    assert_eq!(code(&genbench(&["--version"], &[])), 0);
    assert_eq!(code(&genbench(&["frobnicate"], &[])), 1);
    assert_eq!(code(&genbench(&["sweep"], &[])), 1);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("rollouts = 2", "rollouts = 2\nrollouts = 3"));
    let out = genbench(&["sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("line 7"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), TINY);
    let out = genbench(&["sweep", "--config", &cfg, "--set", "ppo.bogus=1"], &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn sweep_is_deterministic_and_honours_genbench_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = genbench(&["sweep", "--config", &cfg], &[("GENBENCH_OUT", &a)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = genbench(&["sweep", "--config", &cfg, "--out", b.to_str().unwrap(), "--workers", "1"], &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["results.csv", "auc.csv", "heatmap.csv", "analysis.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(results.starts_with(
        "experiment_id,env,variant,seed,channel,scale,mean_return,std_return,n_episodes,training_return\n"
    ));
    // 2 variants × 2 seeds × (2 channels × 3 scales + 1 training row)
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 7);

    // rerunning into a finished directory reuses every stored unit
    let out = genbench(&["sweep", "--config", &cfg, "--out", a.to_str().unwrap()], &[]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 units computed"));

    let merged = dir.path().join("merged");
    let out = genbench(
        &["report", "--input", a.to_str().unwrap(), "--out", merged.to_str().unwrap(), "--correlation", "average"],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(merged.join("results.csv")).unwrap(), results);
    let analysis = fs::read_to_string(merged.join("analysis.json")).unwrap();
    assert!(analysis.contains("\"correlation_mode\": \"average\""), "{analysis}");
}

#[test]
fn train_then_evaluate_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");
    let out = genbench(
        &["train", "--config", &cfg, "--seed", "3", "--variant", "scn", "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = out_dir.join("runs/scn/seed_3/checkpoint.json");
    assert!(ckpt.exists());

    let eval_dir = dir.path().join("eval");
    let out = genbench(
        &[
            "evaluate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--env",
            "pendulum",
            "--channels",
            "obs,dom",
            "--grid",
            "0,0.5",
            "--rollouts",
            "2",
            "--out",
            eval_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let eval = fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + 2 * 2);
    let auc = fs::read_to_string(eval_dir.join("eval_auc.csv")).unwrap();
    assert_eq!(auc.lines().count(), 1 + 2);

    let missing = genbench(&["evaluate", "--checkpoint", "/nonexistent.json", "--env", "pendulum"], &[]);
    assert_eq!(code(&missing), 2);
    let bad_grid = genbench(
        &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--env", "pendulum", "--grid", "0.5,0.1"],
        &[],
    );
    assert_eq!(code(&bad_grid), 1, "{}", stderr(&bad_grid));
}

#[test]
fn diverging_seed_gives_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &TINY.replace("epochs_per_iter = 1", "epochs_per_iter = 1\nlearning_rate = 1e300"),
    );
    let out = genbench(&["sweep", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()], &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let results = fs::read_to_string(dir.path().join("o/results.csv")).unwrap();
    assert!(results.lines().skip(1).all(|l| l.contains(",failed,")));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mabn(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mabn"))
        .args(args)
        .env("MABN_OUT_DIR", out_root)
        .output()
        .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mabn-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const CONFIG: &str = r#"
[env]
kind = "lqr"
horizon = 30
state_bound = 5.0
[agent]
hidden = [8, 8]
batch_size = 16
buffer_capacity = 400
warmup_steps = 40
eval_episodes = 2
[run]
total_steps = 200
eval_every = 100
seeds = [0, 1]
"#;

fn csvs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().contains("_seed") && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn train_aggregate_plot() {
    let dir = scratch("pipeline");
    let cfg = dir.join("lqr.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let runs = dir.join("runs");

    let out = mabn(&["train", cfg.to_str().unwrap(), "--checkpoint"], &runs);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files = csvs(&runs);
    assert_eq!(files.len(), 2);
    let header = std::fs::read_to_string(&files[0]).unwrap();
    assert!(header.starts_with("step,episode_return,eval_return,critic_loss,actor_loss,q_bias_mean,q_bias_std,a_mean_diff,a_var_diff,coverage,sigma_t\n"));
    let ckpt = files[0].to_string_lossy().replace(".csv", ".ckpt.json");
    assert!(std::fs::read_to_string(ckpt).unwrap().contains("\"version\":1"));

    let pattern = format!("{}/*_seed*.csv", runs.display());
    let out = mabn(&["aggregate", &pattern], &runs);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("step,runs,"));
    assert_eq!(table.lines().count(), 3);

    let svg = dir.join("curve.svg");
    let out = mabn(&["plot", &pattern, "-o", svg.to_str().unwrap()], &runs);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn sweep_writes_summary() {
    let dir = scratch("sweep");
    let cfg = dir.join("lqr.toml");
    std::fs::write(&cfg, CONFIG.replace("seeds = [0, 1]", "seeds = [0]")).unwrap();
    let out = mabn(
        &[
            "sweep",
            cfg.to_str().unwrap(),
            "--axis",
            "optimizer",
            "--values",
            "sgd,adam",
            "--axis",
            "mode",
            "--values",
            "MA-BN,Origin",
            "-o",
            dir.join("out").to_str().unwrap(),
        ],
        &dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("sweep_"))
        .unwrap();
    assert_eq!(std::fs::read_to_string(summary).unwrap().lines().count(), 5);
}

#[test]
fn verify_suites_pass() {
    let dir = scratch("verify");
    for suite in ["bn", "lqr"] {
        let out = mabn(&["verify", suite], &dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
        assert!(String::from_utf8(out.stdout).unwrap().contains("PASS"));
    }
}

#[test]
fn bad_input_exits_with_two() {
    let dir = scratch("bad");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[env]\nkind = \"lqr\"\n[agent]\nmode = \"ETT/EE\"\n").unwrap();
    let out = mabn(&["train", cfg.to_str().unwrap()], &dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(mabn(&["verify", "nonsense"], &dir).status.code(), Some(2));
}

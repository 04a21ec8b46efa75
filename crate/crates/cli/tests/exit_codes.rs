use std::fs;
use std::process::Command;

fn afrl(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_afrl")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn bandit_sim_succeeds_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.toml");
    fs::write(&cfg, "[bandit]\nruns = 2\nsteps = 50\n").unwrap();
    let out = dir.path().join("out");
    let (code, err) = afrl(&["bandit-sim", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.join("regret.csv").exists());
    assert!(out.join("regret.meta.json").exists());
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nbatch_size = 0\n").unwrap();
    let (code, err) = afrl(&["train-ensemble", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("batch"), "{err}");
    let (code, _) = afrl(&["evaluate", "--out", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(code, 2);
    let (code, _) = afrl(&["calibrate", "--out", "x", "--profile", "huge"]);
    assert_eq!(code, 2);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    fs::write(
        &cfg,
        "[train]\nepisodes = 3\nexplore_episodes = 1\nbatch_size = 8\ncritic_lr = 1e150\npolicy_lr = 1e150\n[ensemble]\nmax_members = 1\n[baselines]\nenabled = false\n",
    )
    .unwrap();
    let (code, err) = afrl(&["train-ensemble", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
}

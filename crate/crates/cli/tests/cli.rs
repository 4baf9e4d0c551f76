use std::process::Command;

fn elden() -> Command {
    Command::new(env!("CARGO_BIN_EXE_elden"))
}

#[test]
fn collect_honours_out_root_variable() {
    let dir = tempfile::tempdir().unwrap();
    let out = elden()
        .args(["collect", "--env", "thawing", "--seed", "4", "--steps", "200"])
        .env("ELDEN_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("collect/thawing_s4.dset").exists());
    assert!(dir.path().join("collect/thawing_s4.json").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "dynamics.lamda = 1\n").unwrap();
    for args in [
        vec!["collect", "--env", "kitchen"],
        vec!["train-rl", "--method", "magic"],
        vec!["collect", "--config", cfg.to_str().unwrap()],
        vec!["ablate", "--grid", "reward.beta"],
        vec!["collect", "--set", "grid.size=2"],
    ] {
        let out = elden().args(&args).env("ELDEN_OUT_ROOT", dir.path()).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    // usage errors share the code
    assert_eq!(elden().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = elden()
        .args(["eval-deps", "--checkpoint", dir.path().join("missing").to_str().unwrap()])
        .env("ELDEN_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

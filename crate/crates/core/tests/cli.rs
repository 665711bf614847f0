use std::path::Path;
use std::process::{Command, Output};

fn latplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latplan")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version() {
    let out = latplan(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen", "pretrain", "rft", "eval", "ablate"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let out = latplan(&["--version"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = dir.path().join("x");
    assert_eq!(latplan(&["gen"]).status.code(), Some(2));
    assert_eq!(latplan(&["gen", "--count", "1", "--difficulty", "brutal", "--out", s(&out)]).status.code(), Some(2));
    let r = latplan(&["pretrain", "--corpus", s(&missing), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8(r.stderr).unwrap().starts_with("error: "));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"rft": {"group_size": 1}}"#).unwrap();
    assert!(latplan(&["gen", "--count", "2", "--out", s(&corpus)]).status.success());
    let r = latplan(&["pretrain", "--corpus", s(&corpus), "--config", s(&cfg), "--out", s(&dir.path().join("m"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!dir.path().join("m").exists());
}

#[test]
fn corrupt_checkpoint_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let ckpt = dir.path().join("m.ckpt");
    let report = dir.path().join("r.csv");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    assert!(latplan(&["gen", "--count", "2", "--out", s(&corpus)]).status.success());
    let r = latplan(&["eval", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--report", s(&report)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!report.exists());
}

#[test]
fn gen_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    for (p, seed) in paths.iter().zip(["3", "3", "4"]) {
        let r = latplan(&["gen", "--count", "3", "--difficulty", "hard", "--seed", seed, "--out", s(p)]);
        assert!(r.status.success());
        assert!(String::from_utf8(r.stdout).unwrap().starts_with("resolved config:"));
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&paths[0]), read(&paths[1]));
    assert_ne!(read(&paths[0]), read(&paths[2]));
    assert_eq!(std::fs::read_to_string(&paths[0]).unwrap().lines().count(), 3);
}

use std::path::PathBuf;
use std::process::{Command, Output};

fn orlext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orlext")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("orlext-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    assert_eq!(orlext(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["frobnicate"][..],
        &["cphi", "--set", "bogus=1"],
        &["cphi", "--set", "h"],
        &["cphi", "--set", "phi=power:-1"],
        &["cphi", "--config", "/nonexistent/orlext.cfg"],
        &[],
    ] {
        let o = orlext(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn passing_checks_exit_zero_and_print_json() {
    let o = orlext(&["cphi", "--set", "phi=power:3;power:2", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("PASS closed form power:3"), "{err}");
    assert!(err.contains("PASS divergence power:2"), "{err}");
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["verb"], "cphi");
    assert_eq!(report["config"]["phi"], "power:3;power:2");
}

#[test]
fn invariant_violation_exits_two() {
    let o = orlext(&["reflect", "--set", "h=0.1", "--set", "epsilon=5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("quasi-cube"));
}

#[test]
fn positional_verb_and_overrides_beat_the_file() {
    let dir = scratch("config");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# comment\nverb = whitney\nphi = power:4\nout = ignored\n").unwrap();
    let out = dir.join("out");
    let o = orlext(&[
        "cphi",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        &format!("out={}", out.display()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("power:4"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("cphi.json")).unwrap()).unwrap();
    assert_eq!(report["verb"], "cphi");
    assert!(out.join("cphi.timings.json").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn duplicate_keys_in_a_file_are_rejected() {
    let dir = scratch("dup");
    let cfg = dir.join("dup.cfg");
    std::fs::write(&cfg, "h = 0.1\nh = 0.2\n").unwrap();
    let o = orlext(&["cphi", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let _ = std::fs::remove_dir_all(&dir);
}

use std::path::Path;
use std::process::{Command, Output};

fn coupondt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coupondt")).current_dir(dir).args(args).env("RUST_LOG", "off").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn printed_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = coupondt(dir.path(), &["--seed", "5", "show-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 5"));
    std::fs::write(dir.path().join("run.toml"), &text).unwrap();
    let again = coupondt(dir.path(), &["--config", "run.toml", "show-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn bad_configs_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.toml"), "schema = \"coupondt-config-v1\"\n[train]\nlearnin_rate = 1\n").unwrap();
    let out = coupondt(dir.path(), &["--config", "a.toml", "show-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learnin_rate"), "{}", stderr(&out));
    std::fs::write(dir.path().join("b.toml"), "seed = 1\n").unwrap();
    let out = coupondt(dir.path(), &["--config", "b.toml", "show-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("coupondt-config-v1"), "{}", stderr(&out));
}

#[test]
fn missing_inputs_name_the_command_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = coupondt(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("gen-data"), "{}", stderr(&out));
    let out = coupondt(dir.path(), &["time"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("run train first"), "{}", stderr(&out));
    let out = coupondt(dir.path(), &["optimize", "--budget-fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

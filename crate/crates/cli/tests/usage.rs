use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_thermotwin");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(["--log", "error"]).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&[][..], &["frobnicate"], &["train", "--hidden", "64"], &["train", "--layers", "4"], &["serve", "--twin"], &["evaluate", "--split", "dev"]] {
        assert_eq!(code(&run(dir.path(), args)), 2, "{args:?}");
    }
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["twin", "--help"])), 0);
}

#[test]
fn runtime_errors_exit_one_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--data", "missing.csv"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing.csv"), "{err}");

    std::fs::write(dir.path().join("bad.toml"), "[plant]\ncp = -1.0\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "bad.toml", "gen-dataset", "--steps", "60"])), 1);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["gen-dataset", "--steps", "400", "--seed", "3", "--out", "d.csv"]).status.success());
    assert!(run(d, &["train", "--data", "d.csv", "--out", "m.json", "--hidden", "128", "--layers", "1", "--max-epochs", "1"]).status.success());
    std::fs::write(d.join("c.toml"), "[twin]\nmax_steps = 5\neps = 1e-12\n").unwrap();

    let steps = |extra: &[&str]| {
        let mut args = vec!["--config", "c.toml", "twin", "--model", "m.json", "--report", "r.json"];
        args.extend_from_slice(extra);
        let o = run(d, &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
        r["report"]["steps"].as_u64().unwrap()
    };
    assert_eq!(steps(&[]), 5);
    assert_eq!(steps(&["--max-steps", "7"]), 7);
}

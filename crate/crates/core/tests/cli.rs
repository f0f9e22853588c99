use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ftcnkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftcnkit")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftcnkit(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn missing_flag_and_unknown_flag_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ftcnkit(dir.path(), &["describe"]).status.code(), Some(2));
    assert_eq!(ftcnkit(dir.path(), &["transform", "--canonical", "r50", "--out", "x"]).status.code(), Some(2));
    assert_eq!(ftcnkit(dir.path(), &["describe", "--canonical", "ftcn", "--bogus"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_are_one_line_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftcnkit(dir.path(), &["describe", "--arch", "missing.arch"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: io: missing.arch"), "{err}");

    fs::write(dir.path().join("bad.arch"), "input 3x4x8x8\nconv c1 out=4 kernel=3x3\n").unwrap();
    let o = ftcnkit(dir.path(), &["describe", "--arch", "bad.arch"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: parse: "), "{}", stderr(&o));

    let o = ftcnkit(dir.path(), &["transform", "--rule", "nope", "--canonical", "r50", "--out", "x.arch"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: invalid_argument: unknown rule"), "{}", stderr(&o));
}

#[test]
fn transform_then_describe_reaches_table_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftcnkit(dir.path(), &["transform", "--rule", "ftcn", "--canonical", "r50", "--out", "ftcn.arch"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("# command=transform"));
    let o = ftcnkit(dir.path(), &["describe", "--arch", "ftcn.arch", "--out", "report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for s in ["64x32x224x224", "256x32x56x56", "512x16x28x28", "1024x16x14x14", "2048x16x7x7", "2048x16x1x1"] {
        assert!(text.contains(s), "missing {s}\n{text}");
    }
    assert!(dir.path().join("report/describe.csv").exists());
    assert!(dir.path().join("report/describe.txt").exists());
}

#[test]
fn resolved_config_precedes_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftcnkit(dir.path(), &["--seed", "4", "describe", "--canonical", "ftcn", "--width-div", "16", "--input", "3x16x32x32"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# "), "{first}");
    assert!(text.contains("seed=4"), "{text}");
    assert!(text.contains("128x8x1x1"), "{text}");
}

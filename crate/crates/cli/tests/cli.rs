use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prophet-lab")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_writes_a_loadable_instance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gen", "example2", "--n", "5", "--out", "ex.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let inst = prophet_lab::instances::Instance::load(dir.path().join("ex.json")).unwrap();
    assert_eq!(inst.ground_size(), 10);

    let o = run(dir.path(), &["eval", "--instance", "ex.json", "--policy", "half_expected_max"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().contains("policy"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn eval_json_from_generator() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["eval", "--gen", "example1(eps=0.5)", "--policy", "eor_threshold", "--policy", "always_first", "--format", "json"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn monte_carlo_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["eval", "--gen", "example2(n=4)", "--policy", "half_expected_max", "--mode", "mc", "--trials", "2000", "--seed", "3"];
    let (a, b) = (run(dir.path(), &args), run(dir.path(), &args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["eval", "--gen", "example2(n=3)", "--policy", "half_expected_max", "--mode", "mc"],
        &["eval", "--gen", "example2(n=3)", "--policy", "half_expected_max", "--trials", "10"],
        &["eval", "--gen", "example2(n=3)", "--policy", "no_such_policy"],
        &["gen", "mpower", "--n", "400", "--M", "1e6", "--out", "x.json"],
        &["sweep", "--gen", "mpower(M=10)", "--param", "n", "--values", "5,10"],
        &["reduce", "--gen", "example2(n=3)", "--direction", "eor2roe", "--alpha", "0"],
    ];
    for args in cases {
        assert_eq!(run(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn sweep_emits_one_row_per_value_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["sweep", "--gen", "mpower(M=10)", "--param", "n", "--values", "5,10", "--policy", "half_expected_max"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("n,label,policy,"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn reduce_reports_floor() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["reduce", "--gen", "example2(n=3)", "--direction", "roe2eor", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["holds"], serde_json::Value::Bool(true));
}

#[test]
fn verify_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "blm", "--seed", "7", "--trials", "20000"];
    let (a, b) = (run(dir.path(), &args), run(dir.path(), &args));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(run(dir.path(), &["verify", "examples"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["verify", "nonsense"]).status.code(), Some(2));
}

//! Command-line behaviour: outputs, step listings and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tpn_core::cores::{CoreKind, CoreSpec};
use tpn_core::train::toy_model;

fn tpn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn tpn")
}

fn model_file(dir: &Path, core: CoreSpec) -> String {
    let path = dir.join(format!("{}.json", core.kind));
    fs::write(&path, toy_model(core).to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn describe_lists_every_step() {
    let dir = tempfile::tempdir().unwrap();
    for (core, steps) in [
        (CoreSpec::tpn(1, 1), 18),
        (CoreSpec::new(CoreKind::Fpn, 1, 1), 4),
        (CoreSpec::new(CoreKind::Bifpn, 2, 1), 16),
    ] {
        let model = model_file(dir.path(), core.clone());
        let out = tpn(&["describe", "--model", &model], dir.path());
        assert!(out.status.success());
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(
            stdout.starts_with(&format!("{}: {steps} steps", core.label())),
            "{stdout}"
        );
        let csv = fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
        assert_eq!(csv.lines().count(), steps + 1);
    }
}

#[test]
fn params_csv_matches_the_library_count() {
    let dir = tempfile::tempdir().unwrap();
    let model = model_file(dir.path(), CoreSpec::tpn(2, 3));
    assert!(tpn(&["params", "--model", &model], dir.path()).status.success());
    let csv = fs::read_to_string(dir.path().join("params.csv")).unwrap();
    let total = csv.lines().find_map(|l| l.strip_prefix("total,")).unwrap();
    let expected = tpn_core::analysis::count_params(&toy_model(CoreSpec::tpn(2, 3)))
        .unwrap()
        .total;
    assert_eq!(total.parse::<u64>().unwrap(), expected);
}

#[test]
fn table1_reports_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = tpn(&["table1"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("9 of 9 rows within tolerance"));
    assert!(dir.path().join("table1.md").is_file());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let missing = missing.to_string_lossy();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"backbone": "tiny", "core": {"kind": "pyramid"}}"#).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["describe"],
        vec!["describe", "--model", &missing],
        vec!["params", "--model", bad.to_str().unwrap()],
        vec!["eval", "--checkpoint", &missing],
        vec!["bench", "--mode", "sideways"],
        vec!["train", "--epochs", "0"],
        vec!["frobnicate"],
        vec!["table1", "--threads", "0"],
    ];
    for args in cases {
        let out = tpn(&args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

//! The `sqlrank` binary against the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn sqlrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlrank"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn eval12_args<'a>(
    extra: &[&'a str],
    stub: &'a str,
    cfg: &'a str,
    ds: &'a str,
    db: &'a str,
) -> Vec<&'a str> {
    let mut v = vec!["--stub-file", stub, "--config", cfg];
    v.extend_from_slice(extra);
    v.extend_from_slice(&["--dataset", ds, "--db-root", db]);
    v
}

fn chlorine_select(extra: &[&str]) -> Output {
    let (stub, cfg, db, pool) = (
        fx("stubs/chlorine.json"),
        fx("configs/chlorine.json"),
        fx("db/chem.sqlite"),
        fx("pools/chlorine.json"),
    );
    let mut args = vec!["--stub-file", &stub, "--config", &cfg];
    args.extend_from_slice(extra);
    args.extend_from_slice(&[
        "select",
        "--db",
        &db,
        "--task-id",
        "chlorine",
        "--pool",
        &pool,
    ]);
    sqlrank(&args)
}

#[test]
fn evaluate_prints_ex_and_writes_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let (stub, cfg, ds, db) = (
        fx("stubs/eval12.json"),
        fx("configs/eval12.json"),
        fx("datasets/eval12.json"),
        fx("db"),
    );
    let mut args = vec!["evaluate"];
    args.extend(eval12_args(
        &["--out", out.to_str().unwrap()],
        &stub,
        &cfg,
        &ds,
        &db,
    ));
    let o = sqlrank(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("70.00"), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["ex"], 70.0);
    assert!(dir.path().join("report.timings.json").is_file());
}

#[test]
fn select_picks_the_ranked_group_not_the_largest() {
    let r3 = chlorine_select(&[]);
    assert!(r3.status.success(), "{}", stderr(&r3));
    assert!(stdout(&r3).contains("COUNT(DISTINCT m.molecule_id)"));
    assert!(stderr(&r3).starts_with("candidate 1, group 1"));

    // a flag beats the mode set in (or defaulted by) the config file
    let fmv = chlorine_select(&["--mode", "fmv"]);
    assert!(fmv.status.success());
    assert!(
        stderr(&fmv).contains("group 0 of 3 (size 3)"),
        "{}",
        stderr(&fmv)
    );
    assert!(!stdout(&fmv).contains("DISTINCT"));
}

#[test]
fn bad_input_exits_2() {
    let stub = fx("stubs/chlorine.json");
    let pool = fx("pools/chlorine.json");
    let missing_db = sqlrank(&[
        "--stub-file",
        &stub,
        "select",
        "--db",
        "/nonexistent.sqlite",
        "--pool",
        &pool,
    ]);
    assert_eq!(missing_db.status.code(), Some(2));

    let no_db_flag = sqlrank(&["--stub-file", &stub, "select", "--pool", &pool]);
    assert_eq!(no_db_flag.status.code(), Some(2));

    let db = fx("db/chem.sqlite");
    let missing_stub = sqlrank(&[
        "--stub-file",
        "/nonexistent.json",
        "select",
        "--db",
        &db,
        "--pool",
        &pool,
    ]);
    assert_eq!(missing_stub.status.code(), Some(2));

    let bad_mode = chlorine_select(&["--mode", "plurality"]);
    assert_eq!(bad_mode.status.code(), Some(2));
}

#[test]
fn unanswerable_task_is_incomplete_and_exits_3() {
    // eval12 tasks against the chlorine stub table: every backend call misses
    let (stub, cfg, ds, db) = (
        fx("stubs/chlorine.json"),
        fx("configs/eval12.json"),
        fx("datasets/eval12.json"),
        fx("db"),
    );
    let mut args = vec!["evaluate"];
    args.extend(eval12_args(&["--max-parallel", "1"], &stub, &cfg, &ds, &db));
    let o = sqlrank(&args);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("INCOMPLETE"), "{}", stdout(&o));
    assert!(stderr(&o).contains("t01"), "{}", stderr(&o));
}

#[test]
fn ablate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("modes.csv");
    let (stub, cfg, ds, db, grid) = (
        fx("stubs/eval12.json"),
        fx("configs/eval12.json"),
        fx("datasets/eval12.json"),
        fx("db"),
        fx("grids/modes.json"),
    );
    let mut args = vec!["ablate", "--grid", &grid, "--out", out.to_str().unwrap()];
    args.extend(eval12_args(&[], &stub, &cfg, &ds, &db));
    let o = sqlrank(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().nth(1).unwrap().starts_with("r3,70.00,"));
    assert!(stdout(&o).contains("fmv"));
}

#[test]
fn judge_prints_a_decision() {
    let (stub, db, pool) = (
        fx("stubs/chlorine.json"),
        fx("db/chem.sqlite"),
        fx("pools/chlorine.json"),
    );
    let o = sqlrank(&[
        "--stub-file",
        &stub,
        "judge",
        "--db",
        &db,
        "--task-id",
        "chlorine",
        "--pool",
        &pool,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(d["likely_has_correct"], true);
    assert_eq!(d["defaulted"], false);
}

#[test]
fn reward_export_skips_tasks_without_usable_gold() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pairs.jsonl");
    let (stub, cfg, ds, db) = (
        fx("stubs/eval12.json"),
        fx("configs/eval12.json"),
        fx("datasets/eval12.json"),
        fx("db"),
    );
    let mut args = vec![
        "reward-export",
        "--out",
        out.to_str().unwrap(),
        "--with-rewards",
    ];
    args.extend(eval12_args(&[], &stub, &cfg, &ds, &db));
    let o = sqlrank(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("skipped t04: gold_empty_or_failed"));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    for l in &lines {
        let total = l["reward"]["r_total"].as_f64().unwrap();
        assert!([0.0, 1.0, 1.5].contains(&total), "{l}");
    }
}

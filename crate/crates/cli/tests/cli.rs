//! End-to-end runs of the `berfac` binary: exit codes, plan round trips,
//! and output formats.

use std::path::Path;
use std::process::{Command, Output};

fn berfac(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_berfac"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn berfac")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn plan_table_verify_constant_half() {
    let dir = tempfile::tempdir().unwrap();
    let out = berfac(
        &["plan", "--target", "constant:1/2", "--checkpoints", "2,4", "--out", "p.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("p.json").exists());

    let out = berfac(&["table", "p.json", "--p", "1/2", "--csv"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "p,tier,m,elbowX,elbowY,pOne,pZero,pContinue,expectedBitsTruncated,terminalResidual"
    );
    // exact rows: (1/4, 1/4, 1/2) at m=2, then (7/16, 7/16, 1/8) at m=4
    let r1 = lines.next().unwrap();
    assert!(r1.contains("0.25000,0.25000,0.50000"), "{r1}");
    let r2 = lines.next().unwrap();
    assert!(r2.contains("0.43750,0.43750,0.12500"), "{r2}");

    let out = berfac(&["verify", "p.json"], dir.path());
    assert!(out.status.success());
}

#[test]
fn table_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    berfac(
        &["plan", "--target", "linear:1/4,1/2", "--checkpoints", "2,4,8", "--out", "p.json"],
        dir.path(),
    );
    let a = stdout(&berfac(&["table", "p.json", "--p", "1/3,2/7", "--csv"], dir.path()));
    let b = stdout(&berfac(&["table", "p.json", "--p", "1/3,2/7", "--csv"], dir.path()));
    assert_eq!(a, b);
    assert!(a.ends_with('\n') && !a.contains('\r'));
}

#[test]
fn elbows_from_table2_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = berfac(
        &["plan", "--target", "elbow:2,1/5", "--elbows-from-table2", "--out", "plan.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("[20, 21, 222, 1223]"));

    // wrong target for the reference elbow list is a validation failure
    let out = berfac(
        &["plan", "--target", "elbow:3,1/5", "--elbows-from-table2", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sqrt_cascade_records_failure_and_verify_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let out = berfac(
        &[
            "plan",
            "--target",
            "sqrt",
            "--envelopes",
            "power:1/5@100,power:1/3@200,power:50/101@300",
            "--out",
            "sqrt.json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).contains("FAILED"));

    let out = berfac(&["verify", "sqrt.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // with --require-verified the same plan refuses to build
    let out = berfac(
        &[
            "plan",
            "--target",
            "sqrt",
            "--envelopes",
            "power:1/5@100,power:1/3@200,power:50/101@300",
            "--require-verified",
            "--out",
            "x.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_and_sample_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    berfac(
        &["plan", "--target", "constant:1/2", "--checkpoints", "2,4", "--out", "p.json"],
        dir.path(),
    );
    let a = stdout(&berfac(
        &["bench", "p.json", "--p", "1/3", "--trials", "2000", "--seed", "9", "--csv"],
        dir.path(),
    ));
    let b = stdout(&berfac(
        &["bench", "p.json", "--p", "1/3", "--trials", "2000", "--seed", "9", "--csv"],
        dir.path(),
    ));
    assert_eq!(a, b);
    assert!(a.starts_with("plan,trials,minBits"));

    let s = stdout(&berfac(
        &["sample", "p.json", "--p", "1/3", "--trials", "500", "--seed", "4"],
        dir.path(),
    ));
    assert!(s.contains("freqOne"));
}

#[test]
fn curves_density_two_has_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    berfac(
        &["plan", "--target", "constant:1/2", "--checkpoints", "2,4", "--out", "p.json"],
        dir.path(),
    );
    let out = stdout(&berfac(&["curves", "p.json", "--density", "2"], dir.path()));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4); // header + 3 grid rows
    assert_eq!(lines[0], "p,target,envelope_m2,bernstein_m2,envelope_m4,bernstein_m4");
    assert!(lines[1].starts_with("0.000000,"));
    assert!(lines[3].starts_with("1.000000,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    berfac(
        &["plan", "--target", "constant:1/2", "--checkpoints", "2,4", "--out", "p.json"],
        dir.path(),
    );
    // usage errors: 3
    assert_eq!(berfac(&["frobnicate"], dir.path()).status.code(), Some(3));
    assert_eq!(
        berfac(&["bench", "p.json", "--p", "1/3", "--trials", "0", "--seed", "1"], dir.path())
            .status
            .code(),
        Some(3)
    );
    // bench without a seed is a usage error (no wall-clock default)
    assert_eq!(
        berfac(&["bench", "p.json", "--p", "1/3", "--trials", "10"], dir.path())
            .status
            .code(),
        Some(3)
    );
    // validation failures: 2
    assert_eq!(
        berfac(&["table", "p.json", "--p", "0"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        berfac(&["table", "missing.json", "--p", "1/2"], dir.path()).status.code(),
        Some(2)
    );
    // help: 0
    assert_eq!(berfac(&["--help"], dir.path()).status.code(), Some(0));
}

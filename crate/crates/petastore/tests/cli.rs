use std::process::Command;

use clap::Parser;
use petastore::cli::{main_with, Cli};

fn run(args: &[&str]) -> anyhow::Result<String> {
    let cli = Cli::try_parse_from(std::iter::once("petastore").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    main_with(cli, &mut out)?;
    Ok(String::from_utf8(out)?)
}

#[test]
fn catalog_register_bind_resolve_and_deep_copy() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    run(&["catalog", "--root", root, "register", "run7:REAL"]).unwrap();
    run(&["catalog", "--root", root, "register", "export:REAL"]).unwrap();
    run(&[
        "store",
        "--root",
        root,
        "create",
        "run7:REAL",
        "/run7/tau",
        "--events",
        "10",
    ])
    .unwrap();
    run(&[
        "store",
        "--root",
        root,
        "create",
        "run7:REAL",
        "/run7/skims/tau2",
        "--skim-of",
        "/run7/tau",
        "--ordinals",
        "1,4,9",
    ])
    .unwrap();
    run(&["catalog", "--root", root, "bind", "/run7/tau", "run7:REAL"]).unwrap();
    run(&["catalog", "--root", root, "bind", "/run7/skims/tau2", "run7:REAL"]).unwrap();
    assert_eq!(
        run(&["catalog", "--root", root, "resolve", "/run7/skims/tau2"]).unwrap(),
        "/run7/skims/tau2\trun7:REAL\tSKIM\n"
    );
    let copy = run(&[
        "catalog",
        "--root",
        root,
        "deep-copy",
        "/run7/skims/tau2",
        "export:REAL",
    ])
    .unwrap();
    let copy = copy.trim();
    assert!(run(&["catalog", "--root", root, "resolve", copy])
        .unwrap()
        .contains("export:REAL\tSTREAM"));
    let ls = run(&["store", "--root", root, "ls", "export:REAL"]).unwrap();
    assert_eq!(ls, format!("{copy}\tSTREAM\t3\n"));
    let err = run(&["catalog", "--root", root, "resolve", "/nope"]).unwrap_err();
    assert!(err.to_string().contains("NOT_FOUND"), "{err}");
}

#[test]
fn store_pack_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let data = petastore::harness::corpus::generate(5, 200_000, petastore::harness::corpus::DEFAULT_NOISE);
    std::fs::write(p("in"), &data).unwrap();
    let msg = run(&["store", "pack", &p("in"), &p("f.pst")]).unwrap();
    assert!(msg.starts_with("200000 bytes -> "), "{msg}");
    run(&["store", "unpack", &p("f.pst"), &p("out")]).unwrap();
    assert_eq!(std::fs::read(p("out")).unwrap(), data);
    let mut img = std::fs::read(p("f.pst")).unwrap();
    let n = img.len();
    img[n - 10] ^= 0x40;
    std::fs::write(p("f.pst"), &img).unwrap();
    assert!(run(&["store", "unpack", &p("f.pst"), &p("out2")]).is_err());
}

#[test]
fn cdb_insert_lookup_config_sweep_extract() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("prompt");
    let db = db.to_str().unwrap();
    run(&[
        "cdb",
        "--db",
        db,
        "insert",
        "/calib/drift",
        "v",
        "0",
        "100",
        "--at",
        "10",
        "--payload",
        "old",
    ])
    .unwrap();
    run(&[
        "cdb",
        "--db",
        db,
        "insert",
        "/calib/drift",
        "v",
        "50",
        "60",
        "--at",
        "20",
        "--payload",
        "new",
    ])
    .unwrap();
    let hit = run(&["cdb", "--db", db, "lookup", "/calib/drift", "v", "55"]).unwrap();
    assert!(hit.ends_with("new\n"), "{hit}");
    let past = run(&[
        "cdb",
        "--db",
        db,
        "lookup",
        "/calib/drift",
        "v",
        "55",
        "--as-of",
        "15",
    ])
    .unwrap();
    assert!(past.ends_with("old\n"), "{past}");
    let state = run(&[
        "cdb",
        "--db",
        db,
        "mkconfig",
        "snap",
        "/calib=default",
        "--cutoff",
        "15",
    ])
    .unwrap();
    assert!(state.starts_with("snap\tstate="));
    let via = run(&[
        "cdb",
        "--db",
        db,
        "lookup",
        "/calib/drift",
        "v",
        "55",
        "--config",
        "snap",
    ])
    .unwrap();
    assert!(via.ends_with("old\n"));

    let other = dir.path().join("reproc");
    let other = other.to_str().unwrap();
    run(&[
        "cdb",
        "--db",
        other,
        "insert",
        "/calib/drift",
        "v",
        "0",
        "10",
        "--at",
        "30",
        "--revision",
        "r2",
        "--payload",
        "x",
    ])
    .unwrap();
    assert_eq!(
        run(&["cdb", "--db", db, "sweep", other]).unwrap(),
        "merged 1 records\n"
    );
    assert_eq!(
        run(&["cdb", "--db", db, "sweep", other]).unwrap(),
        "merged 0 records\n"
    );

    let sub = dir.path().join("sub");
    run(&[
        "cdb",
        "--db",
        db,
        "extract",
        "snap",
        sub.to_str().unwrap(),
        "--prefix",
        "/calib",
    ])
    .unwrap();
    let got = run(&[
        "cdb",
        "--db",
        sub.to_str().unwrap(),
        "lookup",
        "/calib/drift",
        "v",
        "55",
        "--config",
        "snap",
    ])
    .unwrap();
    assert!(got.ends_with("old\n"), "{got}");
}

#[test]
fn policy_check_and_report_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let pol = dir.path().join("policy.txt");
    std::fs::write(&pol, "replicate_threshold=7\npurge_idle_days=2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_petastore"))
        .args(["redir", "policy-check", pol.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("replicate_threshold=7"));

    std::fs::write(&pol, "replicate_threshold=zero\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_petastore"))
        .args(["redir", "policy-check", pol.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let sc = dir.path().join("s.txt");
    std::fs::write(&sc, "duration_s=10\nruns=2\nn_clients=2\n").unwrap();
    let trace = dir.path().join("t.tsv");
    let out = Command::new(env!("CARGO_BIN_EXE_petastore"))
        .args(["run", sc.to_str().unwrap(), "--trace", trace.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = run(&["report", trace.to_str().unwrap()]).unwrap();
    assert_eq!(report, String::from_utf8(out.stdout).unwrap());
    assert!(report.contains("availability=1.000000"));
}

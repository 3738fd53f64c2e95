use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridvolt::model::write_native_json;
use gridvolt::{parse_case, CaseFormat, GridCase};
use serde_json::Value;

fn case_src(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)
}

fn gridvolt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridvolt"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in ["ieee14.m", "case9.m"] {
        std::fs::copy(case_src(name), dir.path().join(name)).unwrap();
    }
    dir
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write_case(dir: &Path, name: &str, case: &GridCase) -> String {
    std::fs::write(dir.join(name), write_native_json(case)).unwrap();
    name.to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn pf_prints_solution_and_leaves_case_alone() {
    let dir = workdir();
    let before = std::fs::read(dir.path().join("ieee14.m")).unwrap();
    let out = gridvolt(dir.path(), &["pf", "--case", "ieee14.m"]);
    assert_eq!(out.status.code(), Some(0));
    let sol = stdout_json(&out);
    assert_eq!(sol["converged"], true);
    assert_eq!(sol["buses"].as_array().unwrap().len(), 14);
    let v1 = sol["buses"][0]["vm"].as_f64().unwrap();
    assert!((v1 - 1.06).abs() < 1e-9);
    assert_eq!(std::fs::read(dir.path().join("ieee14.m")).unwrap(), before);

    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gridvolt_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pf");
    assert_eq!(manifest["exit_code"], 0);
    assert!(manifest["versions"]["gridvolt-core"].is_string());
    assert!(manifest["timings"]["total"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["resolved"]["solver"]["tol"], 1e-8);
}

#[test]
fn missing_file_is_an_input_error() {
    let dir = workdir();
    let out = gridvolt(dir.path(), &["pf", "--case", "nope.m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.m"));
}

#[test]
fn bad_arguments_are_input_errors() {
    let dir = workdir();
    for args in [
        &["pf", "--case", "ieee14.m", "--vmin", "1.2", "--vmax", "1.0"][..],
        &["pf", "--case", "ieee14.m", "--tol", "-1"],
        &["pf", "--case", "ieee14.m", "--bogus"],
        &["contingency", "--case", "ieee14.m", "--bin-width", "0"],
        &["scale", "--case", "ieee14.m"],
        &["scale", "--case", "ieee14.m", "--scale-load", "-0.5"],
        &["redispatch", "--case", "ieee14.m", "--eps", "0"],
    ] {
        let out = gridvolt(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn non_convergence_exits_one() {
    let dir = workdir();
    let out = gridvolt(
        dir.path(),
        &["pf", "--case", "ieee14.m", "--max-iter", "1", "--homotopy", "off"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["converged"], false);
}

#[test]
fn redispatch_writes_setpoints_and_profiles() {
    let dir = workdir();
    let stressed = parse_case(case_src("ieee14.m"), CaseFormat::MatpowerText)
        .unwrap()
        .with_setpoints(&[(6, 1.30)])
        .unwrap();
    let name = write_case(dir.path(), "stressed.json", &stressed);
    let out = gridvolt(
        dir.path(),
        &[
            "redispatch",
            "--case",
            &name,
            "--vmin",
            "0.85",
            "--vmax",
            "1.15",
            "--limit-slack-q",
            "--out",
            "prof.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["certified"], true);
    assert!(summary["v_range_base"][1].as_f64().unwrap() > 1.15);
    assert!(summary["v_range_redispatch"][1].as_f64().unwrap() <= 1.16);

    let profile = csv_rows(&dir.path().join("prof.csv"));
    assert_eq!(profile[0], ["bus", "base_kv", "v_base", "v_redispatch"]);
    assert_eq!(profile.len(), 15);

    // Exact round trip between the setpoint CSV and the JSON written alongside.
    let sp: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("prof_setpoints.json")).unwrap()).unwrap();
    let table = csv_rows(&dir.path().join("prof_setpoints.csv"));
    assert_eq!(table.len(), sp.len() + 1);
    for (row, rec) in table[1..].iter().zip(&sp) {
        assert_eq!(row[0], rec["bus"].to_string());
        let csv_v: f64 = row[2].parse().unwrap();
        assert_eq!(csv_v.to_bits(), rec["v_set"].as_f64().unwrap().to_bits());
    }
    let v6: f64 = table.iter().find(|r| r[0] == "6").unwrap()[2].parse().unwrap();
    assert!(v6 < 1.2);
    assert!(dir.path().join("prof_manifest.json").exists());

    // The re-dispatched setpoints feed a contingency sweep.
    let out = gridvolt(
        dir.path(),
        &[
            "contingency",
            "--case",
            &name,
            "--setpoints",
            "prof_setpoints.json",
            "--out",
            "n1.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["total"], 24);
    assert_eq!(report["islanded"], 1);
    let rows = csv_rows(&dir.path().join("n1.csv"));
    assert_eq!(
        rows[0],
        ["label", "kind", "converged", "islanded", "v_min", "v_max", "iterations"]
    );
    assert_eq!(rows.len(), 25);
    let hist = csv_rows(&dir.path().join("n1_histogram.csv"));
    let counted: usize = hist[1..]
        .iter()
        .filter(|r| r[0] == "v_max")
        .map(|r| r[3].parse::<usize>().unwrap())
        .sum();
    assert_eq!(counted, report["converged"].as_u64().unwrap() as usize);
}

#[test]
fn kv_filter_restricts_profile_rows() {
    let dir = workdir();
    let mut parts = parse_case(case_src("ieee14.m"), CaseFormat::MatpowerText)
        .unwrap()
        .into_parts();
    for b in parts.buses.iter_mut() {
        b.base_kv = if b.id <= 5 { 330.0 } else { 132.0 };
    }
    let name = write_case(dir.path(), "kv.json", &GridCase::new(parts).unwrap());
    let out = gridvolt(
        dir.path(),
        &["redispatch", "--case", &name, "--kv-filter", "330", "--out", "kv.csv"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("kv.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows[1..].iter().all(|r| r[1].parse::<f64>().unwrap() == 330.0));
}

#[test]
fn contingency_filters() {
    let dir = workdir();
    for (filter, n) in [("branches", 20), ("gens", 4), ("all", 24)] {
        let out = gridvolt(dir.path(), &["contingency", "--case", "ieee14.m", "--filter", filter]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(stdout_json(&out)["total"], n);
        assert_eq!(csv_rows(&dir.path().join("contingency.csv")).len(), n + 1);
    }
}

#[test]
fn scale_writes_scaled_case() {
    let dir = workdir();
    let out = gridvolt(
        dir.path(),
        &["scale", "--case", "ieee14.m", "--scale-load", "0.85", "--out", "s.json"],
    );
    assert_eq!(out.status.code(), Some(0));
    let summary = stdout_json(&out);
    assert_eq!(summary["total_load_mw_before"], 259.0);
    let scaled = parse_case(dir.path().join("s.json"), CaseFormat::NativeJson).unwrap();
    assert!((scaled.total_load_mw() - 0.85 * 259.0).abs() < 1e-9);

    // Stdout variant re-parses to the same case.
    let out = gridvolt(dir.path(), &["scale", "--case", "ieee14.m", "--scale-load", "0.85"]);
    assert_eq!(out.status.code(), Some(0));
    let again = gridvolt::model::parse_case_str(
        std::str::from_utf8(&out.stdout).unwrap(),
        CaseFormat::NativeJson,
        &Default::default(),
    )
    .unwrap();
    assert_eq!(again, scaled);
}

#[test]
fn input_case_is_never_overwritten() {
    let dir = workdir();
    let before = std::fs::read(dir.path().join("ieee14.m")).unwrap();
    for args in [
        &[
            "scale",
            "--case",
            "ieee14.m",
            "--scale-load",
            "0.9",
            "--out",
            "ieee14.m",
        ][..],
        &["pf", "--case", "ieee14.m", "--out", "./ieee14.m"],
        &["pf", "--case", "ieee14.m", "--manifest", "ieee14.m"],
        &["contingency", "--case", "ieee14.m", "--out", "ieee14.m"],
    ] {
        let out = gridvolt(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(std::fs::read(dir.path().join("ieee14.m")).unwrap(), before);
    }
}

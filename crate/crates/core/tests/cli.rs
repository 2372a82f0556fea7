//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, and determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_torsion"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("torsion_cli_tests").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn mesh_subcommand_writes_deterministic_files() {
    let dir = tmp_dir("mesh");
    let out1 = dir.join("a.mesh");
    let out2 = dir.join("b.mesh");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["mesh", "--radius", "1.0", "--level", "1", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    assert_eq!(read(&out1), read(&out2));
    let header = read(&out1).lines().next().unwrap().to_string();
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse().unwrap())
        .collect();
    // Euler relation V - E + F = 1 for the disk.
    assert_eq!(counts[0] as isize - counts[2] as isize + counts[1] as isize, 1);
}

#[test]
fn solve_reports_tiny_duality_gap_in_the_affine_regime() {
    let dir = tmp_dir("solve");
    let rep = dir.join("rep.json");
    let status = bin()
        .args([
            "solve",
            "--disk-level",
            "2",
            "--C",
            "2",
            "--eps-stop",
            "1e-8",
            "--out",
        ])
        .arg(&rep)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let report: serde_json::Value = serde_json::from_str(&read(&rep)).unwrap();
    for key in [
        "iterations",
        "residual_norm",
        "dual_energy",
        "primal_energy",
        "duality_gap",
    ] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    let gap = report["duality_gap"].as_f64().unwrap();
    let scale = 1.0 + report["primal_energy"].as_f64().unwrap().abs();
    assert!(gap.abs() <= 1e-8 * scale, "duality gap {gap:.3e}");
    assert!(report["dual_energy"]["history"].as_array().unwrap().len() >= 2);
}

#[test]
fn solve_on_a_saved_mesh_and_field_dumps() {
    let dir = tmp_dir("roundtrip");
    let mesh_path = dir.join("disk.mesh");
    assert_eq!(
        bin()
            .args(["mesh", "--level", "1", "--out"])
            .arg(&mesh_path)
            .status()
            .unwrap()
            .code(),
        Some(0)
    );

    let rep = dir.join("rep.json");
    let fields = dir.join("fields.csv");
    let indicators = dir.join("ind.csv");
    let status = bin()
        .args(["solve", "--C", "10", "--tau", "1000", "--eps-stop", "1e-6", "--mesh"])
        .arg(&mesh_path)
        .arg("--out")
        .arg(&rep)
        .arg("--dump-fields")
        .arg(&fields)
        .arg("--dump-indicators")
        .arg(&indicators)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let fields_text = read(&fields);
    assert!(fields_text.starts_with("kind,index,value\n"));
    for kind in ["cr,", "rt,", "p0s,", "p0vx,", "p0vy,"] {
        assert!(fields_text.contains(kind), "missing field kind {kind}");
    }
    let ind_text = read(&indicators);
    assert!(ind_text.starts_with("element,eta_sq_contribution\n"));
    // One indicator row per triangle, nonnegative up to the solve tolerance
    // (the reconstructed pair is admissible only up to the flow residual).
    for line in ind_text.lines().skip(1) {
        let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(value >= -1e-6, "indicator {value:.3e}");
    }
}

#[test]
fn study_subcommand_honors_config_file_with_flag_override() {
    let dir = tmp_dir("study");
    let cfg = dir.join("study.json");
    let out_cfg = dir.join("from_config.csv");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"case":{{"C":2.5,"r":1.0}},"levels":[0,1],"flow":{{"tau":1000.0,"eps_stop":1e-8,"max_iter":10000}},"study":"apriori","out":"{}"}}"#,
            out_cfg.display()
        ),
    )
    .unwrap();

    let status = bin()
        .args(["apriori", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = read(&out_cfg);
    assert!(text.starts_with("level,h,N,e_tot,e_gap,eoc_tot,eoc_gap,identity_gap\n"));
    assert_eq!(text.lines().count(), 3, "header plus two level rows");

    // An explicit flag overrides the config's levels.
    let out_flag = dir.join("from_flag.csv");
    let status = bin()
        .args(["apriori", "--levels", "1:1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_flag)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(read(&out_flag).lines().count(), 2);

    // Identical invocations are byte-identical.
    let out_again = dir.join("from_flag_again.csv");
    bin()
        .args(["apriori", "--levels", "1:1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_again)
        .status()
        .unwrap();
    assert_eq!(read(&out_flag), read(&out_again));
}

#[test]
fn exit_codes_follow_the_error_classes() {
    let dir = tmp_dir("exit_codes");

    // Usage errors: invalid load constant, missing mesh source.
    let code = bin()
        .args(["solve", "--C", "-1", "--disk-level", "0"])
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(1));
    let code = bin().args(["solve", "--C", "1"]).status().unwrap().code();
    assert_eq!(code, Some(1));

    // Non-convergence within the iteration cap.
    let code = bin()
        .args([
            "solve",
            "--disk-level",
            "0",
            "--C",
            "10",
            "--tau",
            "1",
            "--eps-stop",
            "1e-12",
            "--max-iter",
            "3",
        ])
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(2));

    // Malformed mesh file: parse errors map to the I/O class.
    let bad = dir.join("bad.mesh");
    std::fs::write(&bad, "3 1 3\n0 0\n1 0\n0 1\n0 1 999\n0 1 1\n1 2 1\n0 2 1\n").unwrap();
    let out = bin()
        .args(["solve", "--C", "1", "--mesh"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 5"), "diagnostic names the line: {stderr}");

    // Missing file is an I/O error too.
    let code = bin()
        .args(["solve", "--C", "1", "--mesh", "/nonexistent/m.mesh"])
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(3));

    // Help exits cleanly and lists the flags.
    let out = bin().args(["solve", "--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--mesh", "--disk-level", "--C", "--tau", "--eps-stop", "--max-iter", "--out"] {
        assert!(help.contains(flag), "help lists {flag}");
    }
}

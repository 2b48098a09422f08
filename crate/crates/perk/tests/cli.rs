use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use perk::spectra::Spectrum;
use perk::stabpoly::StabilityPolynomial;
use perk::tableau::PerkFamily;
use tempfile::TempDir;

fn perk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perk")).args(args).output().unwrap()
}

fn run_with(dir: &Path, command: &str, config: &str, out: &str) -> Output {
    let cfg = dir.join(format!("{out}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(out);
    perk(&[command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn optimize_circle_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"circle": {"center": -1.0, "radius": 1.0, "points": 256}, "p": 2, "degrees": [8], "seed": 3}"#;
    let a = run_with(dir.path(), "optimize", cfg, "a");
    ok(&a);
    let text = fs::read_to_string(dir.path().join("a/poly_p2_E8.json")).unwrap();
    let poly = StabilityPolynomial::from_json(&text).unwrap();
    assert!((poly.dt_opt - 7.0).abs() < 1e-3, "{}", poly.dt_opt);
    ok(&run_with(dir.path(), "optimize", cfg, "b"));
    let again = fs::read(dir.path().join("b/poly_p2_E8.json")).unwrap();
    assert_eq!(text.as_bytes(), &again[..]);
    assert!(dir.path().join("a/manifest.json").exists());
}

#[test]
fn degree_below_order_exits_two() {
    let dir = TempDir::new().unwrap();
    let o = run_with(dir.path(), "optimize", r#"{"circle": {"center": -1.0, "radius": 1.0, "points": 32}, "p": 3, "degrees": [2]}"#, "o");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(perk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(perk(&["optimize", "--threads", "0"]).status.code(), Some(1));
    assert_eq!(perk(&[]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = run_with(dir.path(), "optimize", r#"{"p": 2, "degrees": [4], "degree": 4}"#, "o");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shu_osher_from_tableau() {
    let dir = TempDir::new().unwrap();
    ok(&run_with(dir.path(), "tableau", r#"{"p": 3, "stages": 3, "degrees": [3]}"#, "t"));
    let family = PerkFamily::from_text(&fs::read_to_string(dir.path().join("t/family.txt")).unwrap()).unwrap();
    let a = family.members[0].butcher_matrix();
    assert!((a[(1, 0)] - 1.0).abs() < 1e-12);
    assert!((a[(2, 0)] - 0.25).abs() < 1e-12);
    assert!((a[(2, 1)] - 0.25).abs() < 1e-12);
    assert_eq!(family.b, vec![1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]);
}

#[test]
fn inconsistent_member_stages_exit_two() {
    let dir = TempDir::new().unwrap();
    ok(&run_with(dir.path(), "optimize", r#"{"p": 2, "degrees": [4]}"#, "poly"));
    let poly = dir.path().join("poly/poly_p2_E4.json");
    let cfg = format!(
        r#"{{"p": 2, "stages": 6, "members": [{{"polynomial": {:?}, "stages": 8}}]}}"#,
        poly.to_str().unwrap()
    );
    assert_eq!(run_with(dir.path(), "tableau", &cfg, "t").status.code(), Some(2));
}

#[test]
fn dense_spectrum_rows_and_cap() {
    let dir = TempDir::new().unwrap();
    ok(&run_with(dir.path(), "spectrum", r#"{"cells": 64}"#, "s"));
    let text = fs::read_to_string(dir.path().join("s/spectrum.csv")).unwrap();
    assert_eq!(text.lines().count(), 65);
    let s = Spectrum::from_csv(&text, "s").unwrap();
    // upwind advection with a = 1, dx = 1/32: a circle of radius 32 centred at -32
    for l in &s.eigenvalues {
        assert!(((l.re + 32.0).hypot(l.im) - 32.0).abs() < 1e-9);
    }
    ok(&run_with(dir.path(), "spectrum", r#"{"cells": 64, "scale": 1.0}"#, "s1"));
    assert_eq!(fs::read_to_string(dir.path().join("s1/spectrum.csv")).unwrap(), text);
    let o = run_with(dir.path(), "spectrum", r#"{"cells": 64, "dense_cap": 32}"#, "c");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("arnoldi"));
}

#[test]
fn run_and_report_agree() {
    let dir = TempDir::new().unwrap();
    ok(&run_with(dir.path(), "tableau", r#"{"p": 2, "stages": 6, "degrees": [3, 6]}"#, "t"));
    let family = dir.path().join("t/family.txt");
    let cfg = format!(
        r#"{{"family_file": {:?}, "N0": 32, "cfl": 0.5, "t_final": 0.25, "initial": "gaussian",
            "amr": {{"interval": 5, "max_level": 1, "refine": 0.05, "coarsen": 0.01, "initial_passes": 1}}}}"#,
        family.to_str().unwrap()
    );
    ok(&run_with(dir.path(), "run", &cfg, "r"));
    let run_report = fs::read_to_string(dir.path().join("r/cost_report.json")).unwrap();
    let cfg = format!(
        r#"{{"counters_file": {:?}, "family_file": {:?}}}"#,
        dir.path().join("r/counters.json").to_str().unwrap(),
        family.to_str().unwrap()
    );
    ok(&run_with(dir.path(), "report", &cfg, "rep"));
    assert_eq!(fs::read_to_string(dir.path().join("rep/cost_report.json")).unwrap(), run_report);
}

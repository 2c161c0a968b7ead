//! End-to-end tests driving the compiled binary: canonical output strings,
//! exit-code conventions, determinism, and JSON round-trips.

use std::process::{Command, Output};

use agd_core::diffalg::DiffPoly;
use agd_core::lambda::LambdaValue;

fn agd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agd"))
        .args(args)
        .output()
        .expect("binary should run")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr should be UTF-8")
}

#[test]
fn canonical_bracket_strings() {
    let pencil = agd(&["bracket", "w2", "-1", "-1", "--pencil"]);
    assert!(pencil.status.success());
    assert_eq!(stdout(&pencil).trim(), "(2λ+∂)u + ½λ³ − 2cλ");

    let first = agd(&["bracket", "v1", "-1", "-1", "--structure", "H"]);
    assert!(first.status.success());
    assert_eq!(stdout(&first).trim(), "−λ");

    let gfz = agd(&["bracket", "gfz(3)", "1", "2"]);
    assert!(gfz.status.success());
    assert_eq!(stdout(&gfz).trim(), "s₁₂ λ");
}

#[test]
fn verified_structures_exit_zero() {
    let w3 = agd(&["verify", "w3", "--checks", "skew,jacobi"]);
    assert_eq!(w3.status.code(), Some(0), "stderr: {}", stderr(&w3));
    assert!(stdout(&w3).contains("all zero"));

    let v2 = agd(&["verify", "v2", "--checks", "compat"]);
    assert_eq!(v2.status.code(), Some(0), "stderr: {}", stderr(&v2));
}

#[test]
fn broken_table_fails_with_witness() {
    let out = agd(&["verify", "broken-demo", "--checks", "jacobi"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL jacobi"), "missing witness in: {text}");
}

#[test]
fn nonlocal_jacobi_request_is_a_usage_error() {
    let out = agd(&["verify", "w-mat(2,2)", "--checks", "jacobi"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nonlocal"));
}

#[test]
fn unknown_structure_is_a_usage_error() {
    let out = agd(&["bracket", "nosuch", "0", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let oob = agd(&["bracket", "w2", "-5", "-1"]);
    assert_eq!(oob.status.code(), Some(2));
}

#[test]
fn hierarchy_prints_the_classical_flow() {
    let latex = agd(&["hierarchy", "w2", "--k", "3", "--format", "latex"]);
    assert!(latex.status.success());
    assert_eq!(stdout(&latex).trim(), "\\frac14(u'''+6uu')");

    let crossed = agd(&["hierarchy", "w2", "--k", "3", "--structure", "h", "--cross-check"]);
    assert_eq!(crossed.status.code(), Some(0), "stderr: {}", stderr(&crossed));
    let lax = agd(&["hierarchy", "w2", "--k", "3"]);
    assert_eq!(stdout(&crossed), stdout(&lax));
}

#[test]
fn kp_densities_list_the_first_functionals() {
    let out = agd(&["densities", "kp", "--kmax", "4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "h1 = ∫u₀");
    assert!(lines[2].contains("u₀²"));
}

#[test]
fn reduced_factorization_prints_classically() {
    let out = agd(&["miura", "--N", "2", "--reduced"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "u = v' − v²");
}

#[test]
fn report_names_conformal_data() {
    let out = agd(&["report", "w3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("central charge: 2"));
    assert!(text.contains("weight u: 2"));
    assert!(text.contains("weight v: 3"));
}

#[test]
fn identical_invocations_are_byte_identical() {
    for args in [
        vec!["bracket", "w3", "-2", "-1"],
        vec!["hierarchy", "w3", "--k", "2"],
        vec!["densities", "w2", "--kmax", "5"],
        vec!["verify", "w2", "--checks", "skew,jacobi", "--format", "json"],
    ] {
        let a = agd(&args);
        let b = agd(&args);
        assert_eq!(stdout(&a), stdout(&b), "args: {args:?}");
        assert_eq!(a.status.code(), b.status.code());
    }
}

#[test]
fn bracket_json_round_trips() {
    let out = agd(&["bracket", "w2", "-1", "-1", "--format", "json"]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let value = LambdaValue::from_json(&parsed).unwrap();

    let set = agd_core::agd::by_name("w2").unwrap();
    let key = agd_core::diffalg::VarKey::u(-1);
    let expect = set.h.entry(key, key).unwrap();
    assert_eq!(value, *expect);
}

#[test]
fn hierarchy_json_round_trips() {
    let out = agd(&["hierarchy", "w2", "--k", "3", "--format", "json"]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(parsed["k"], serde_json::json!(3));
    let rhs = DiffPoly::from_json(&parsed["flows"]["u-1"]).unwrap();

    let (ctx, reduced) = agd_core::agd::adler_by_name("w2").unwrap().unwrap();
    let spec = agd_core::hierarchy::HierarchySpec::new(ctx, reduced).unwrap();
    let eq = spec.lax_flow(3).unwrap();
    assert_eq!(&rhs, eq.get(agd_core::diffalg::VarKey::u(-1)).unwrap());
}

#[test]
fn jobs_flag_is_accepted() {
    let out = agd(&["--jobs", "2", "verify", "w2", "--checks", "skew"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let zero = agd(&["--jobs", "0", "verify", "w2", "--checks", "skew"]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn matrix_bracket_respects_entry_flags() {
    let out = agd(&["bracket", "v-mat(1,2)", "-1", "-1", "--ab", "12", "--cd", "21"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(!text.trim().is_empty());

    let bad = agd(&["bracket", "v-mat(1,2)", "-1", "-1", "--ab", "13"]);
    assert_eq!(bad.status.code(), Some(2));
}

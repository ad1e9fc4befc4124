use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_padic-msymb")).args(args).output().expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

#[test]
fn eisenstein_value_at_z_k() {
    let d = json(&["lvalues", "--p", "3", "--N", "1", "--k", "2", "--refinement", "critical", "--characters", "0", "--j", "2"]);
    assert_eq!(d["schema"], "padic-msymb/1");
    assert_eq!(d["measure"]["route"], "boundary");
    let v = &d["values"][0]["value"];
    assert_eq!(v["value"], "2*3^-1 + O(3^10)");
    assert_eq!(v["precision"], 10);
}

#[test]
fn theta_critical_values_vanish() {
    let d = json(&["lvalues", "--p", "5", "--N", "32", "--refinement", "critical", "--characters", "0,2", "--prec", "12"]);
    assert_eq!(d["form"]["refinement"]["theta_critical"], true);
    for v in d["values"].as_array().unwrap() {
        assert_eq!(v["zero"], true);
        assert!(v["zero_mod_p_power"].as_f64().unwrap() >= 8.0, "{v}");
    }
}

#[test]
fn identical_config_gives_identical_bytes() {
    let args = ["lift", "--p", "3", "--N", "11", "--prec", "10", "--seed", "3"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "p = 3\nN = 11\nprec = 8\nterms = 2\nout = \"series.json\"\n").unwrap();
    let out = run(&["lseries", "--config", cfg.to_str().unwrap(), "--terms", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("series.json")).unwrap()).unwrap();
    assert_eq!(d["config"]["m"], 8);
    assert_eq!(d["series"][0]["coefficients"].as_array().unwrap().len(), 3);
}

#[test]
fn config_violations_are_reported() {
    for args in [
        &["lift", "--p", "3", "--N", "12"][..],
        &["lift", "--p", "4", "--N", "11"],
        &["lift", "--p", "3", "--N", "1", "--k", "2", "--prec", "3"],
        &["lift", "--N", "11"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn ingested_eigenform_gives_the_same_symbol() {
    let table = json(&["classical", "--p", "3", "--N", "11"]);
    let data = table["systems"].as_array().unwrap().iter().find(|s| s["type"] == "cuspidal" && s.get("eigendata").is_some()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x11.json");
    std::fs::write(&file, data["eigendata"].to_string()).unwrap();
    let a = json(&["lift", "--eigenform", file.to_str().unwrap(), "--prec", "10"]);
    let b = json(&["lift", "--p", "3", "--N", "11", "--prec", "10"]);
    assert_eq!(a["symbol"], b["symbol"]);
}

#[test]
fn lift_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().to_str().unwrap();
    let first = json(&["lift", "--p", "3", "--N", "11", "--prec", "9", "--cache", cache]);
    assert_eq!(first["route"]["route"], "projection");
    let second = json(&["lift", "--p", "3", "--N", "11", "--prec", "9", "--cache", cache]);
    assert_eq!(second["route"]["route"], "cached");
    assert_eq!(first["symbol"], second["symbol"]);
    assert!(Path::new(second["route"]["file"].as_str().unwrap()).exists());
}

#[test]
fn csv_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    let out = run(&["lvalues", "--p", "3", "--N", "11", "--prec", "8", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("tame,wild_level,wild_r,j,coset_level,zero,valuation,precision,value\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn family_specialization_report_holds() {
    let d = json(&["family", "--p", "3", "--N", "11", "--prec", "9", "--family-deg", "3", "--characters", "0"]);
    for c in d["two_variable"][0]["specialization"].as_array().unwrap() {
        assert_eq!(c["holds"], true, "{c}");
    }
}

#[test]
fn selftest_passes_with_pinned_deviation() {
    let d = json(&["selftest", "--only", "1,4"]);
    assert_eq!(d["result"], "pass");
    assert_eq!(d["known_deviations"], serde_json::json!([1]));
    assert_eq!(d["criteria"][1]["pass"], true);
}

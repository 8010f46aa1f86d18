use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str], dir: &Path, workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lorentz-lab"));
    cmd.args(args).current_dir(dir).env("RUST_LOG", "error");
    match workers {
        Some(w) => cmd.env("LORENTZ_WORKERS", w),
        None => cmd.env_remove("LORENTZ_WORKERS"),
    };
    cmd.output().unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("small.cfg");
    std::fs::write(&p, format!("# quick run\nL = 1\nrho1 = 1\nrho2 = 2\nmu = 1\nepsilon = 0.01\neta = 2\nseed = 5\nbins = 4\nangles = 16\n{extra}")).unwrap();
    p.to_string_lossy().into_owned()
}

fn error_of(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)));
    assert_eq!(v["status"], "error");
    v
}

#[test]
fn gk_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["gk", "--out", "r"], dir.path(), None);
    assert!(out.status.success());
    assert_eq!(header(&dir.path().join("r/gk.csv")), "mu,d,d11,d22,d12,d21,expected");
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/summary.json")).unwrap()).unwrap();
    assert_eq!(s["command"], "gk");
    assert_eq!(s["status"], "pass");
    assert_eq!(s["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(s["config"]["L"], 1.0);
    assert!(s["seed"].is_u64() && s["wall_time_s"].is_f64());
    let row = s["results"]["rows"].as_array().unwrap().iter().find(|r| r["mu"] == 1.0).unwrap();
    assert!((row["d"].as_f64().unwrap() - 0.1875).abs() < 1e-10);
}

#[test]
fn kinetic_profile_is_reproducible_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "samples = 800\n");
    let a = lab(&["profile-kinetic", "--config", &cfg, "--out", "a"], dir.path(), Some("1"));
    let b = lab(&["profile-kinetic", "--config", &cfg, "--out", "b"], dir.path(), Some("3"));
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let pa = std::fs::read(dir.path().join("a/profile.csv")).unwrap();
    let pb = std::fs::read(dir.path().join("b/profile.csv")).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(header(&dir.path().join("a/profile.csv")), lorentz_core::profile::PROFILE_HEADER);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/summary.json")).unwrap()).unwrap();
    assert_eq!(s["workers"], 3);
}

#[test]
fn seed_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "samples = 320\n");
    assert!(lab(&["profile-kinetic", "--config", &cfg, "--out", "a"], dir.path(), None).status.success());
    assert!(lab(&["profile-kinetic", "--config", &cfg, "--out", "b", "--seed", "6"], dir.path(), None).status.success());
    assert_ne!(std::fs::read(dir.path().join("a/profile.csv")).unwrap(), std::fs::read(dir.path().join("b/profile.csv")).unwrap());
}

#[test]
fn eta_sweep_writes_one_profile_per_eta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "samples = 160\n");
    assert!(lab(&["profile-kinetic", "--config", &cfg, "--out", "r", "--sweep-eta", "2,4"], dir.path(), None).status.success());
    assert!(dir.path().join("r/profile_eta2.csv").exists() && dir.path().join("r/profile_eta4.csv").exists());
}

#[test]
fn micro_profile_runs_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "epsilon = 0.05\nsamples = 64\n");
    for mode in ["fresh", "rerandomized"] {
        let out = lab(&["profile-micro", "--config", &cfg, "--out", mode, "--mode", mode], dir.path(), None);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(header(&dir.path().join(mode).join("profile.csv")), lorentz_core::profile::PROFILE_HEADER);
    }
}

#[test]
fn report_headers_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "samples = 320\n");
    let d = dir.path();
    assert!(lab(&["fick", "--config", &cfg, "--out", "f"], d, None).status.success());
    assert_eq!(header(&d.join("f/fick.csv")), "eta,x_center,flux_x,flux_stderr,fick_flux,z");
    assert!(lab(&["survival", "--config", &cfg, "--out", "s"], d, None).status.success());
    assert_eq!(header(&d.join("s/survival.csv")), "x1,survival,stderr,slab_series");
    assert!(lab(&["diffusive-limit", "--config", &cfg, "--out", "dl", "--samples", "900", "--sweep-eta", "2"], d, None).status.success());
    assert_eq!(header(&d.join("dl/diffusive_limit.csv")), "eta,x1,estimate,stderr,reference");
    assert!(lab(&["hilbert-remainder", "--config", &cfg, "--out", "h"], d, None).status.success());
    assert_eq!(header(&d.join("h/remainder.csv")), "eta,l2_norm,excluded_measure,truncation_change");
}

#[test]
fn pathologies_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "samples = 400\n");
    let out = lab(&["pathologies", "--config", &cfg, "--out", "p", "--sweep-epsilon", "1e-2,1e-3"], dir.path(), None);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p/pathologies.json")).unwrap()).unwrap();
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for key in ["epsilon", "eta", "t", "n", "rec_freq", "int_freq", "strip_freq", "memory_freq", "memory_stderr"] {
        assert!(reports[0].get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["source"], "markov");
    assert!(v["fit"].is_null());
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = lab(&["teleport"], d, None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "usage");

    std::fs::write(d.join("bad.cfg"), "epsilon = 0.5\n").unwrap();
    let out = lab(&["gk", "--config", "bad.cfg"], d, None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "invalid_config");

    std::fs::write(d.join("typo.cfg"), "etta = 3\n").unwrap();
    let out = lab(&["gk", "--config", "typo.cfg"], d, None);
    assert_eq!(error_of(&out)["error"]["kind"], "invalid_config");

    let out = lab(&["gk", "--out", "x"], d, Some("zero"));
    assert_eq!(error_of(&out)["error"]["kind"], "invalid_config");

    std::fs::write(d.join("file"), "").unwrap();
    let out = lab(&["gk", "--out", "file/sub"], d, None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "io");

    let out = lab(&["gk", "--config", "missing.cfg"], d, None);
    assert_eq!(error_of(&out)["error"]["kind"], "io");
}

#[test]
fn failed_checks_set_the_exit_code() {
    // At eta = 10 memory effects saturate, so the scaling check fails.
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["pathologies", "--out", "p", "--samples", "500", "--sweep-epsilon", "1e-2,3e-3,1e-3"], dir.path(), None);
    assert_eq!(out.status.code(), Some(1));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p/summary.json")).unwrap()).unwrap();
    assert_eq!(s["status"], "fail");
}

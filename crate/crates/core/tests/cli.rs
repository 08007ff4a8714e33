use ks_moment::moment_control::ControlSignal;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ks-moment"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ks-moment")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_line(o: &Output) -> String {
    let e = String::from_utf8_lossy(&o.stderr).into_owned();
    assert_eq!(e.trim_end().lines().count(), 1, "expected one stderr line, got {e:?}");
    e.trim_end().to_string()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn spectrum_files_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("k50");
    let o = run(&["spectrum", "--kmax", "50", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let csvs = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().map_or(false, |x| x == "csv")).count();
    assert_eq!(csvs, 7);
    assert_eq!(json(&out.join("checks.json"))["passed"], true);

    let out0 = tmp.path().join("k0");
    assert_eq!(run(&["spectrum", "--kmax", "0", "--out", s(&out0)]).status.code(), Some(0));
    let names: Vec<String> = std::fs::read_dir(&out0).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).filter(|n| n.ends_with(".csv")).collect();
    assert_eq!(names, vec!["zero_mode.csv".to_string()]);

    let o = run(&["spectrum", "--kmax", "-1", "--out", s(&tmp.path().join("bad"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: reason=usage"));

    let o = run(&["spectrum", "--kmax", "100000"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: reason=usage"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.conf");
    std::fs::write(&cfg, "scenario = interior_u\nwidth = 3\n").unwrap();
    let o = run(&["synthesize", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("width"));
    let o = run(&["synthesize", "--config", s(&data("interior_u.conf")), "--scenario", "nowhere"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["synthesize", "--config", s(&data("interior_u.conf")), "--rho-poly", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["synthesize", "--config", s(&data("interior_u.conf")), "--init", s(&tmp.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compatibility_violations_name_the_theorem() {
    let tmp = tempfile::tempdir().unwrap();
    for (conf, thm) in [("interior_u.conf", "thm1 "), ("interior_v.conf", "thm1a"), ("boundary_u.conf", "thm2 "), ("boundary_v.conf", "thm2a")] {
        let o = run(&["synthesize", "--config", s(&data(conf)), "--init", s(&data("init_k3_means.json")), "--out", s(tmp.path())]);
        assert_eq!(o.status.code(), Some(4), "{conf}");
        let line = stderr_line(&o);
        assert!(line.starts_with("error: reason=constraint"), "{line}");
        assert!(line.contains(thm), "{conf}: {line}");
    }
}

#[test]
fn synthesize_verify_simulate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let conf = data("interior_u.conf");
    for dir in [&a, &b] {
        let o = run(&["synthesize", "--config", s(&conf), "--out", s(dir)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rep = json(&a.join("residuals.json"));
    assert!(rep["max_enforced_terminal"].as_f64().unwrap() <= 1e-8);
    for f in ["control.json", "residuals.json", "control.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} not deterministic");
    }
    let ctl = a.join("control.json");

    // T = 1: enforced modes vanish, the leaked tail does not
    let o = run(&["verify", "--config", s(&conf), "--control", s(&ctl), "--scope", "enforced", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&a.join("verify.json"));
    assert!(v["summary"]["terminal"]["enforced_dual_norm"].as_f64().unwrap() <= 1e-9);
    assert!(v["summary"]["duality"]["relative"].as_f64().unwrap() <= 1e-7);
    let o = run(&["verify", "--config", s(&conf), "--control", s(&ctl), "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).contains("verify_failed"));

    let o = run(&["verify", "--config", s(&conf), "--control", s(&ctl), "--T", "2", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("T mismatch"));

    let o = run(&["simulate", "--config", s(&conf), "--control", s(&ctl), "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,mode,re_u,im_u,re_v,im_v"));
    assert_eq!(csv.lines().count(), 1 + 21 * 129);
}

#[test]
fn verify_full_scope_at_longer_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = data("interior_u.conf");
    let o = run(&["synthesize", "--config", s(&conf), "--T", "4", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["verify", "--config", s(&conf), "--T", "4", "--control", s(&tmp.path().join("control.json")), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&tmp.path().join("verify.json"));
    assert_eq!(v["total_ok"], true);
}

#[test]
fn verify_rejects_zero_control() {
    let tmp = tempfile::tempdir().unwrap();
    let ctl = tmp.path().join("zero.json");
    ControlSignal::zero(1.0, false).write_json(&ctl, None, None).unwrap();
    let o = run(&["verify", "--config", s(&data("interior_u.conf")), "--control", s(&ctl), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).contains("verify_failed"));
    let o = run(&["verify", "--config", s(&data("interior_u.conf")), "--control", s(&ctl), "--scope", "enforced", "--out", s(tmp.path())]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn boundary_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = data("boundary_v.conf");
    let o = run(&["synthesize", "--config", s(&conf), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["verify", "--config", s(&conf), "--scope", "enforced", "--control", s(&tmp.path().join("control.json")), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn biortho_gram_writes_family() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["biortho", "--T", "1", "--kc", "3", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let f = json(&tmp.path().join("family_gram.json"));
    assert_eq!(f["labels"].as_array().unwrap().len(), 13);
    assert!(json(&tmp.path().join("gram_report.json"))["max_residual"].as_f64().unwrap() <= 1e-8);
    let o = run(&["biortho", "--method", "fourier", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn figures_and_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["figures", "--kmax", "10", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["eigenvalues.csv", "log_kernel_theta.csv", "u2_compensation.csv", "gram_theta.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let o = run(&["estimates", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let e = json(&tmp.path().join("estimates.json"));
    assert_eq!(e["failures"].as_array().unwrap().len(), 0);
    assert!((e["cauchy_bound"][0]["integral"].as_f64().unwrap() - 3.40048).abs() < 1e-4);
}

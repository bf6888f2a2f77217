use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn adaclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaclab"))
        .args(args)
        .env_remove("ADACLAB_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TOY_CLEAN: &str = r#"{"mode":"clean","system":{"n":2,"m":1,"rho":0.7,"seed":1},
  "disturbance":{"kind":"sinusoid","epsilon":0.5},"cost":{"kind":"quadratic_tracking"},
  "horizon":200,"seeds":[3]}"#;

#[test]
fn clean_run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "clean.json", TOY_CLEAN);
    let out = dir.path().join("run");
    let o = adaclab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["regret"].as_f64().unwrap().is_finite());
    assert_eq!(summary["seed"], 3);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "t,stage,s_1,s_2,u_1,w_hat_1,w_hat_2,cost,m_norm");
    assert_eq!(lines.count(), 200);
}

#[test]
fn short_window_is_rejected_naming_assumption_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &TOY_CLEAN.replace(r#""horizon":200"#, r#""horizon":200,"L":2"#));
    let o = adaclab(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Assumption 5"), "{}", stderr(&o));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn long_rollouts_are_rejected_naming_assumption_6() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"mode":"etc","system":{"n":2,"m":1,"rho":0.7,"seed":1},
      "disturbance":{"kind":"sinusoid","epsilon":0.1},"cost":{"kind":"quadratic_tracking"},
      "horizon":1000,"N":100,"D":0.1}"#;
    let cfg = write_config(dir.path(), "bad.json", body);
    let o = adaclab(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Assumption 6"), "{}", stderr(&o));
}

#[test]
fn unreadable_config_is_a_config_error() {
    let o = adaclab(&["run", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(o.status.code(), Some(2));
}

const SYNTHETIC: &str = r#"{"mode":"clean","system":{"n":2,"m":1,"rho":0.7,"seed":1},
  "disturbance":{"kind":"sinusoid","epsilon":0.5},"cost":{"kind":"quadratic_tracking"},
  "horizon":256,"synthetic":{"c":2.0}}"#;

#[test]
fn synthetic_sweep_recovers_two_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "syn.json", SYNTHETIC);
    let out = dir.path().join("sweep");
    let o = adaclab(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "0,1,2,3,4",
        "--horizons",
        "256,512,1024,2048,4096,8192",
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let exponent = summary["fit"]["exponent"].as_f64().unwrap();
    assert!((exponent - 0.667).abs() <= 0.05, "exponent {exponent}");
    let csv = std::fs::read_to_string(out.join("regret_vs_T.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "T,seed,regret,learner_cost,comparator_cost,log_T,log_regret");
    assert_eq!(lines.count(), 30);
}

#[test]
fn sweep_refuses_implicit_seeds_and_short_horizon_lists() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "syn.json", SYNTHETIC);
    let out = dir.path().join("sweep");
    let no_seeds = adaclab(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--horizons", "256,512,1024,2048"]);
    assert_eq!(no_seeds.status.code(), Some(2));
    assert!(stderr(&no_seeds).contains("seeds"));
    let few = adaclab(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seeds", "0", "--horizons", "256,512,1024"]);
    assert_eq!(few.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn environment_variable_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "clean.json", TOY_CLEAN);
    let (flag, env) = (dir.path().join("flag"), dir.path().join("env"));
    let o = Command::new(env!("CARGO_BIN_EXE_adaclab"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", flag.to_str().unwrap()])
        .env("ADACLAB_OUT", &env)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env.join("summary.json").exists());
    assert!(!flag.exists());
}

#[test]
fn mode_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let body = TOY_CLEAN.replace(r#""epsilon":0.5"#, r#""epsilon":0.1"#).replace(r#""horizon":200"#, r#""horizon":600,"D":0.1"#);
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = dir.path().join("etc");
    let o = adaclab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "etc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "etc");
    assert!(summary["schedule"]["T_s"].as_u64().unwrap() > 0);
}

#[test]
fn verify_passes_and_catches_a_corrupted_hankel_column() {
    let ok = adaclab(&["verify"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let table = String::from_utf8_lossy(&ok.stdout);
    assert!(table.contains("10/10 checks passed"), "{table}");

    let bad = adaclab(&["verify", "--inject", "corrupt-hankel-column"]);
    assert_eq!(bad.status.code(), Some(3));
    let table = stderr(&bad);
    assert!(table.lines().any(|l| l.starts_with("FAIL") && l.contains("disturbance reconstruction")), "{table}");
    assert!(table.contains("9/10 checks passed"), "{table}");
}

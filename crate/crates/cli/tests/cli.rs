use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mvlab(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn rates_report_embeds_hash_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("rates.json");
    let out = mvlab(&["rates", "--seed", "99"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = json(&dir.path().join("rates.json"));
    assert_eq!(r["seed"], 99);
    let bytes = std::fs::read(&cfg).unwrap();
    assert_eq!(r["config_sha256"], mvlab_cli::config::sha256_hex(&bytes));
    assert!((r["constants"]["kappa"].as_f64().unwrap() - 0.1698684).abs() < 1e-6);
}

#[test]
fn r0_at_one_exits_with_gate_code_naming_h3() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvlab(&["rates"], &configs().join("rates_h3.json"), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(H3)"));
}

#[test]
fn violated_granular_condition_still_reports_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvlab(&["simulate"], &configs().join("example21_violated.json"), dir.path());
    assert_eq!(out.status.code(), Some(2));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["status"], "no theoretical guarantee");
    assert!(r["fit"]["rate"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("series.csv").exists());
}

#[test]
fn invalid_config_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"schema": 1, "seed": 1, "dimension": 1,
            "potential": {"quadratic": {"lambda": "x"}},
            "interaction": {"quadratic_pair": {"delta": 0.5}}}"#,
    )
    .unwrap();
    let out = mvlab(&["energy"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("potential.quadratic.lambda"), "{err}");
}

#[test]
fn series_csv_has_expected_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = json(&configs().join("ou_granular.json"));
    v["sim"]["particles"] = 200.into();
    v["sim"]["horizon"] = 0.5.into();
    v["sim"]["dt"] = 0.01.into();
    v["sim"]["record_every"] = 5.into();
    v["fit_window"] = serde_json::Value::Null;
    v["plots"] = false.into();
    let cfg = dir.path().join("small.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = mvlab(&["simulate"], &cfg, &out_dir);
    assert!(out.status.code().is_some());
    let csv = std::fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,w2_emp,w2_oracle,ent_knn,ent_oracle,psi_bar_sq_mean,w2_fit,mean_field_entropy"
    );
    assert_eq!(lines.count(), 11);
    assert!(!csv.contains('\r'));
}

use std::fs;
use std::path::Path;
use std::process::Command;

use cookie_monster_sim::cli::*;
use cookie_monster_sim::manifest::sha256_hex;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cookie-monster"));
    c.env_remove("COOKIE_MONSTER_OUTPUT_DIR");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const DESK: &str = r#""microbenchmark":{"total_conversions":1000,"batch_size":100,"products":5,"knob1":1,"knob2":0.1}"#;

fn run(dir: &Path, name: &str, scenario: &str, extra: &str) -> std::path::PathBuf {
    let cfg = write_config(dir, &format!("{name}.json"), &format!(r#"{{{DESK},"scenario":{scenario}{extra}}}"#));
    let out = dir.join(name);
    let status = bin().arg("run").arg("-c").arg(&cfg).arg("-o").arg(&out).status().unwrap();
    assert!(status.success());
    out
}

#[test]
fn generate_default_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let st = bin().args(["generate", "--seed", "4", "-o"]).arg(tmp.path().join(d)).status().unwrap();
        assert!(st.success());
    }
    let a = fs::read(tmp.path().join("a").join(EVENTS_FILE)).unwrap();
    let b = fs::read(tmp.path().join("b").join(EVENTS_FILE)).unwrap();
    assert_eq!(sha256_hex(&a), sha256_hex(&b));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",conversion,")).count(), 40_000);
    assert_eq!(
        fs::read(tmp.path().join("a").join(MANIFEST_FILE)).unwrap(),
        fs::read(tmp.path().join("b").join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn invalid_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"microbenchmark":{"knob1":0}}"#);
    let out = bin().arg("generate").arg("-c").arg(&cfg).arg("-o").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("knob1"));
    let out = bin().args(["run", "-c", "/nonexistent.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"dataset":{"path":"/nonexistent/events.csv"}}"#);
    let out = bin().arg("run").arg("-c").arg(&cfg).arg("-o").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &format!("{{{DESK}}}"));
    let st = bin().arg("generate").arg("-c").arg(&cfg).env("COOKIE_MONSTER_OUTPUT_DIR", tmp.path().join("env")).status().unwrap();
    assert!(st.success());
    assert!(tmp.path().join("env").join(EVENTS_FILE).exists());
}

#[test]
fn ipa_rejections_and_bias_width() {
    let tmp = tempfile::tempdir().unwrap();
    let ipa = run(tmp.path(), "ipa", r#"{"system":"ipa_like","epsilon_global":"10"}"#, "");
    let results = fs::read_to_string(ipa.join(RESULTS_FILE)).unwrap();
    assert!(results.lines().any(|l| l.contains(r#""status":"rejected""#)));

    let cm = run(tmp.path(), "cm", r#"{"system":"cookie_monster"}"#, r#","bias":{"enabled":true}"#);
    let results = fs::read_to_string(cm.join(RESULTS_FILE)).unwrap();
    assert!(results.lines().all(|l| l.contains(r#""payload_width":2"#)));
    let metrics = fs::read_to_string(cm.join(METRICS_FILE)).unwrap();
    let line: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in ["query_id", "rmsre_true", "rmsre_estimated", "accepted", "bias_bound"] {
        assert!(line.get(key).is_some(), "{key}");
    }
    let snapshot = fs::read_to_string(cm.join(SNAPSHOT_FILE)).unwrap();
    let first: serde_json::Value = serde_json::from_str(snapshot.lines().next().unwrap()).unwrap();
    for key in ["querier", "device", "epoch", "consumed", "capacity"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let cdf = fs::read_to_string(cm.join(CDF_FILE)).unwrap();
    assert!(cdf.starts_with("consumed,fraction\n"));
}

#[test]
fn identical_manifests_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(tmp.path(), "a", r#"{"seed":3}"#, r#","bias":{"enabled":true}"#);
    let b = run(tmp.path(), "b", r#"{"seed":3}"#, r#","bias":{"enabled":true}"#);
    for f in [MANIFEST_FILE, RESULTS_FILE, SNAPSHOT_FILE, METRICS_FILE, CDF_FILE, SUMMARY_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = run(tmp.path(), "c", r#"{"seed":4}"#, r#","bias":{"enabled":true}"#);
    assert_ne!(fs::read(a.join(MANIFEST_FILE)).unwrap(), fs::read(c.join(MANIFEST_FILE)).unwrap());
}

fn compare_csv(runs: &[&Path]) -> Vec<Vec<String>> {
    let out = bin().arg("compare").args(runs).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(out.stdout.as_slice());
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn compare_columns_and_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let cm = run(tmp.path(), "cm", r#"{"system":"cookie_monster","epsilon_global":"10"}"#, "");
    let ara = run(tmp.path(), "ara", r#"{"system":"ara_like","epsilon_global":"10"}"#, "");
    let ipa = run(tmp.path(), "ipa", r#"{"system":"ipa_like","epsilon_global":"10"}"#, "");

    let same = compare_csv(&[&cm, &cm]);
    assert_eq!(same[0], vec!["metric", "cookie_monster", "cookie_monster#2", "delta_cookie_monster#2"]);
    assert!(same[1..].iter().all(|r| r[3].is_empty() || r[3].parse::<f64>().unwrap() == 0.0));

    let three = compare_csv(&[&cm, &ara, &ipa]);
    assert_eq!(&three[0][1..4], &["cookie_monster", "ara_like", "ipa_like"]);
    let avg = three.iter().find(|r| r[0] == "avg_budget").unwrap();
    assert!(avg[1].parse::<f64>().unwrap() <= avg[2].parse::<f64>().unwrap());
    for name in ["rmsre_min", "rmsre_q1", "rmsre_median", "rmsre_q3", "rmsre_max"] {
        assert!(three.iter().any(|r| r[0] == name), "{name}");
    }

    let out = bin().arg("compare").arg(&cm).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn compare_rejects_different_schedules() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(tmp.path(), "a", r#"{"queries_per_product":1}"#, "");
    let b = run(tmp.path(), "b", "{}", "");
    let out = bin().arg("compare").arg(&a).arg(&b).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("query schedules differ"));
}

#[test]
fn audit_writes_json_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "a.json", r#"{"audit":{"queries":1}}"#);
    let out = bin().arg("audit").arg("-c").arg(&cfg).arg("-o").arg(tmp.path()).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join(AUDIT_FILE)).unwrap()).unwrap();
    assert!(report["loss"].as_f64().unwrap() <= 0.6);
    let cfg = write_config(tmp.path(), "b.json", r#"{"audit":{"trials":10}}"#);
    let out = bin().arg("audit").arg("-c").arg(&cfg).arg("-o").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

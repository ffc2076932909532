use ecg_field::experiment::{compare, preset, run, ExperimentConfig, ExperimentReport};
use ecg_field::Error;
use serde_json::Value;

fn ca_null() -> Value {
    serde_json::from_str(preset("ca-null").unwrap().json).unwrap()
}

fn validation_messages(value: &Value) -> Vec<String> {
    match ExperimentConfig::from_json(&value.to_string()) {
        Err(Error::Validation(msgs)) => msgs,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn negative_mass_is_named() {
    let mut v = ca_null();
    v["system"]["particles"][0]["mass"] = (-1.0).into();
    let msgs = validation_messages(&v);
    assert!(msgs.iter().any(|m| m.starts_with("system.particles[0].mass")), "{msgs:?}");
}

#[test]
fn every_problem_is_reported_at_once() {
    let mut v = ca_null();
    v["basis"]["blocks"][0]["spread"] = 1.into();
    v["sweep"]["resolution"] = 3.into();
    let msgs = validation_messages(&v);
    assert_eq!(msgs.len(), 2, "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("basis.blocks[0].spread")));
    assert!(msgs.iter().any(|m| m.contains("sweep.resolution")));

    let mut v = ca_null();
    v["version"] = 2.into();
    v["system"]["particles"][1]["mass"] = "muon".into();
    v["fit"]["powers"] = serde_json::json!([2, 0]);
    assert!(validation_messages(&v).len() >= 3);
}

#[test]
fn run_writes_a_reproducible_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_json(&ca_null().to_string()).unwrap();
    let first = run(&config, Some(dir.path())).unwrap();
    assert_eq!(first.files.len(), 3);
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed = ExperimentReport::from_json(&text).unwrap();
    assert_eq!(parsed, first.report);
    assert_eq!(parsed.provenance.seed, config.seed);
    assert_eq!(parsed.provenance.config_sha256.len(), 64);

    let again = run(&parsed.config, Some(&dir.path().join("again"))).unwrap();
    assert_eq!(again.report, first.report);
    let table = compare(&first.report, &again.report).unwrap();
    for row in &table.rows {
        if row.a.is_some() {
            assert_eq!(row.ratio, Some(1.0), "{}", row.quantity);
        }
    }
}

#[test]
fn different_systems_do_not_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(&ExperimentConfig::from_json(&ca_null().to_string()).unwrap(), Some(dir.path())).unwrap();
    let mut v = ca_null();
    v["system"]["particles"][0]["mass"] = "fixed-nucleus".into();
    let b = run(&ExperimentConfig::from_json(&v.to_string()).unwrap(), Some(&dir.path().join("b"))).unwrap();
    assert!(compare(&a.report, &b.report).is_err());
}

#[test]
fn unwritable_output_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let config = ExperimentConfig::from_json(&ca_null().to_string()).unwrap();
    assert!(matches!(run(&config, Some(&blocker.join("out"))), Err(Error::Validation(_))));
}

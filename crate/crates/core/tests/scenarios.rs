use std::path::PathBuf;

use slotwise_core::orchestrator::{replay, run_scenario, Assets, BackendRef, RunConfig};

fn assets() -> Assets {
    Assets::new(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets"))
}

#[test]
fn every_scenario_loads_and_validates() {
    let a = assets();
    let names = a.scenario_names().unwrap();
    assert_eq!(names.len(), 18);
    for n in &names {
        let s = a.load_scenario(n).unwrap_or_else(|e| panic!("{n}: {e}"));
        s.validate().unwrap_or_else(|e| panic!("{n}: {e}"));
        assert_eq!(&s.name, n);
        assert!(!s.gold().is_empty());
    }
}

#[test]
fn fixtures_reproduce_pilot_runs() {
    let a = assets();
    let kb = a.knowledge().unwrap();
    let cfg = RunConfig::default();
    for n in a.scenario_names().unwrap() {
        let s = a.load_scenario(&n).unwrap();
        let live = run_scenario(&s, &cfg, a.backend(&BackendRef::Pilot, &s).unwrap(), kb.clone()).unwrap();
        let canned = run_scenario(
            &s,
            &cfg,
            a.backend(&BackendRef::Fixtures { paths: vec![] }, &s).unwrap(),
            kb.clone(),
        )
        .unwrap();
        assert_eq!(live.first_divergence(&canned), None, "{n}");
        assert_eq!(canned.events[0].str_field("backend"), Some("scripted"));
    }
}

#[test]
fn replay_reproduces_a_recorded_session() {
    let a = assets();
    let kb = a.knowledge().unwrap();
    let s = a.load_scenario("hotel-conflict").unwrap();
    let cfg = RunConfig {
        window: 2,
        ..RunConfig::default()
    };
    let first = run_scenario(&s, &cfg, a.backend(&BackendRef::Pilot, &s).unwrap(), kb.clone()).unwrap();
    let text = first.to_jsonl();
    let loaded = slotwise_core::orchestrator::RunTrace::from_jsonl(&text).unwrap();
    assert_eq!(loaded, first);
    let again = replay(&loaded, &s, a.backend(&BackendRef::Pilot, &s).unwrap(), kb).unwrap();
    assert_eq!(again.first_divergence(&first), None);
    assert_eq!(again.canonical(), first.canonical());
}

#[test]
fn variant_that_cannot_raise_its_dilemma_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scenarios");
    std::fs::create_dir(&scen).unwrap();
    std::fs::copy(
        assets().scenarios_dir().join("takeaway.json"),
        scen.join("takeaway.json"),
    )
    .unwrap();
    // 12 RMB is within the 15 RMB limit, so nothing conflicts
    std::fs::write(
        scen.join("cheap.json"),
        r#"{"name": "cheap", "base": "takeaway.json",
            "dilemma": {"kind": "conflicting_info", "key": "Price Limit", "screen": "mt_spec",
                        "observed": "12 RMB", "resolution": "20 RMB"}}"#,
    )
    .unwrap();
    let a = Assets::new(dir.path());
    assert!(a.load_scenario("takeaway").is_ok());
    assert!(a.load_scenario("cheap").is_err());
}

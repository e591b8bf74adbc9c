//! Strategies and property bodies shared by the property suite and the
//! acceptance target.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use slotwise_core::memory::{KnowledgeBase, SessionStore};
use slotwise_core::{
    normalize_key, trajectory_window, Action, Direction, Inconsistency, InconsistencySet, Instruction, Slot,
    SlotOrigin, SlotSet, TrajectoryStep,
};

pub const CASES: u32 = 1000;

pub fn text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ',.:()-]{0,24}[A-Za-z0-9)]".prop_map(|s| s.trim().to_string())
}

fn key() -> impl Strategy<Value = String> {
    "[A-Z][a-z]{1,8}( [A-Z][a-z]{1,6})?"
}

/// Slots with distinct normalized keys; about a third are pending.
pub fn slot_set(max: usize) -> impl Strategy<Value = SlotSet> {
    prop::collection::btree_map(key(), prop::option::weighted(0.7, text()), 0..max).prop_map(|m| {
        let mut seen = BTreeSet::new();
        let slots = m
            .into_iter()
            .filter(|(k, _)| seen.insert(normalize_key(k)))
            .map(|(k, v)| match v {
                Some(v) => Slot::filled(k, v, SlotOrigin::Extracted).unwrap(),
                None => Slot::pending(k, "Which one?").unwrap(),
            })
            .collect();
        SlotSet::from_slots(slots).unwrap()
    })
}

pub fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        text().prop_map(Action::Click),
        text().prop_map(Action::Type),
        prop::sample::select(Direction::ALL.to_vec()).prop_map(Action::Slide),
        Just(Action::Back),
        Just(Action::Home),
        ("[A-Za-z][A-Za-z0-9 ,]{0,20}[a-z]", text()).prop_map(|(a, b)| Action::help(&a, &b)),
    ]
}

pub type UpdateCase = (SlotSet, Vec<bool>, Vec<String>);

pub fn update_case() -> impl Strategy<Value = UpdateCase> {
    (
        slot_set(8),
        prop::collection::vec(any::<bool>(), 8),
        prop::collection::vec(text(), 8),
    )
}

/// Updating slot values never adds, drops or reorders keys.
pub fn key_preservation((set, pick, vals): UpdateCase) -> Result<(), TestCaseError> {
    let keys = set.keys();
    let targets: Vec<(String, String)> = keys
        .iter()
        .zip(&pick)
        .zip(&vals)
        .filter(|((_, p), _)| **p)
        .map(|((k, _), v)| (k.clone(), v.clone()))
        .collect();
    let delta = InconsistencySet::new(
        targets
            .iter()
            .map(|(k, _)| Inconsistency {
                slot_key: k.clone(),
                observed_value: "x".into(),
                note: String::new(),
            })
            .collect(),
    );
    let repl: BTreeMap<String, String> = targets.iter().cloned().collect();
    let out = set
        .apply_update(&delta, &repl)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(out.keys(), keys);
    for s in set.slots() {
        match repl.get(&s.norm_key()) {
            Some(v) => prop_assert_eq!(out.value_of(s.key()), Some(v.as_str())),
            None => prop_assert_eq!(out.get(s.key()), Some(s)),
        }
    }
    if let Some((k, v)) = targets.first() {
        let filled = set.fill(k, v).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(filled.keys(), set.keys());
    }
    Ok(())
}

/// Supplementing only ever adds keys; existing slots are untouched and a
/// colliding addition is refused.
pub fn monotone_supplement((base, extra): (SlotSet, SlotSet)) -> Result<(), TestCaseError> {
    let base_keys: BTreeSet<String> = base.slots().iter().map(Slot::norm_key).collect();
    let (fresh, clash): (Vec<Slot>, Vec<Slot>) = extra
        .slots()
        .iter()
        .cloned()
        .partition(|s| !base_keys.contains(&s.norm_key()));
    let out = base
        .apply_supplement(fresh.clone())
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(out.len(), base.len() + fresh.len());
    prop_assert_eq!(&out.slots()[..base.len()], base.slots());
    for s in &fresh {
        prop_assert!(out.contains(s.key()));
    }
    if let Some(c) = clash.first() {
        prop_assert!(base.apply_supplement(vec![c.clone()]).is_err());
    }
    Ok(())
}

fn step(i: usize) -> TrajectoryStep {
    TrajectoryStep {
        index: i,
        screen_id: format!("s{i}"),
        state_desc: String::new(),
        plan: String::new(),
        action: Action::Back,
        exec_report: String::new(),
        reflection_ref: None,
    }
}

/// The decision context holds exactly the last min(N, t) steps, in order.
pub fn window_law((len, n): (usize, usize)) -> Result<(), TestCaseError> {
    let mut store = SessionStore::new(Instruction::new("x"), Arc::new(KnowledgeBase::new()), 100);
    store.instruction.clarified = Some("x".into());
    for i in 0..len {
        store
            .record_step(step(i))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
    }
    let ctx = store
        .snapshot_context(n)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let got: Vec<usize> = ctx.window.iter().map(|s| s.index).collect();
    let want: Vec<usize> = (len.saturating_sub(n)..len).collect();
    prop_assert_eq!(got, want);
    prop_assert_eq!(ctx.t, len);
    for t in 0..=len {
        let w = trajectory_window(store.history(), t, n);
        prop_assert_eq!(w.len(), n.min(t));
        prop_assert!(w.last().is_none_or(|s| s.index + 1 == t));
    }
    Ok(())
}

pub fn window_case() -> impl Strategy<Value = (usize, usize)> {
    (0usize..40, 1usize..8)
}

/// Printing an action and parsing it back is the identity.
pub fn round_trip(a: Action) -> Result<(), TestCaseError> {
    let text = a.to_string();
    prop_assert_eq!(
        Action::parse(&text).map_err(|e| TestCaseError::fail(e.to_string()))?,
        a.clone()
    );
    let json = serde_json::to_string(&a).unwrap();
    prop_assert_eq!(serde_json::from_str::<Action>(&json).unwrap(), a);
    Ok(())
}

/// Runs one property for [`CASES`] cases outside the `proptest!` macro.
pub fn check<S: Strategy>(strategy: S, f: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    // no source file to persist failures next to outside the proptest! macro
    let cfg = Config {
        failure_persistence: None,
        ..Config::with_cases(CASES)
    };
    let mut runner = TestRunner::new(cfg);
    runner.run(&strategy, f).map_err(|e| e.to_string())
}

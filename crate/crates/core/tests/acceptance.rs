//! One PASS/FAIL line per acceptance criterion; exits non-zero if any
//! line is FAIL. Runs without the libtest harness so the report is always
//! printed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde_json::Value;
use slotwise_core::evalkit::{
    battery_names, score_run, Metric, Ratio, RunRow, Suite, Table, DILEMMA_VARIANTS, FAMILIES,
};
use slotwise_core::orchestrator::{lint, Assets, BackendRef, EventKind, LintRule, RunConfig, RunTrace, TraceEvent};
use slotwise_core::{Action, Direction};

type Outcome = Result<String, String>;

fn assets_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn suite() -> Suite {
    Suite::new(Assets::new(assets_root()), BackendRef::Pilot).expect("suite")
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

struct Report {
    lines: Vec<(String, Outcome)>,
}

impl Report {
    fn record(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let out = f();
        match &out {
            Ok(note) => println!("PASS {name}: {note}"),
            Err(why) => println!("FAIL {name}: {why}"),
        }
        self.lines.push((name.to_string(), out));
    }
}

fn battery(suite: &Suite) -> (Table, Duration) {
    let start = Instant::now();
    let t = suite
        .run_all(&battery_names(), "full", &RunConfig::default())
        .expect("battery runs");
    (t, start.elapsed())
}

fn check_battery(t: &Table, took: Duration) -> Outcome {
    ensure(
        FAMILIES.len() * DILEMMA_VARIANTS.len() == 12 && t.rows.len() == 12,
        || format!("{} runs", t.rows.len()),
    )?;
    for r in &t.rows {
        let backend = r.trace.events[0].str_field("backend");
        ensure(backend == Some("pilot"), || {
            format!("{}: backend {backend:?}", r.scenario)
        })?;
        ensure(r.status == "success", || format!("{}: {}", r.scenario, r.status))?;
        for m in [Metric::SR, Metric::IC, Metric::CCR] {
            ensure(r.score.value(m) == 1.0, || {
                format!("{}: {} = {}", r.scenario, m.as_str(), r.score.value(m))
            })?;
        }
    }
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!(
        "12/12 success, IC 1.000, CCR 1.000, offline pilot, {:.2}s",
        took.as_secs_f64()
    ))
}

fn check_determinism(suite: &Suite, first: &Table) -> Outcome {
    for r in &first.rows {
        for _ in 0..2 {
            let again = suite
                .run_one(&r.scenario, "full", &RunConfig::default())
                .map_err(|e| e.to_string())?;
            ensure(again.trace.canonical() == r.trace.canonical(), || {
                format!(
                    "{} diverges at seq {:?}",
                    r.scenario,
                    r.trace.first_divergence(&again.trace)
                )
            })?;
        }
    }
    Ok("3 runs of each battery scenario are identical apart from wall times".into())
}

fn check_properties() -> Outcome {
    use common::*;
    check(update_case(), key_preservation).map_err(|e| format!("key preservation: {e}"))?;
    check((slot_set(6), slot_set(6)), monotone_supplement).map_err(|e| format!("monotone supplementation: {e}"))?;
    check(window_case(), window_law).map_err(|e| format!("window law: {e}"))?;
    Ok(format!(
        "key preservation, monotone supplementation, window law at {CASES} cases each"
    ))
}

fn check_grammar() -> Outcome {
    common::check(common::action(), common::round_trip).map_err(|e| format!("round trip: {e}"))?;
    let literal = [
        (
            "CLICK(Click the 'Search' button)",
            Action::Click("Click the 'Search' button".into()),
        ),
        (
            "TYPE(Thick Taro Boba Milk Tea)",
            Action::Type("Thick Taro Boba Milk Tea".into()),
        ),
        ("SLIDE(up)", Action::Slide(Direction::Up)),
        ("BACK()", Action::Back),
        ("HOME()", Action::Home),
        (
            "HELP(Payment page; payment needs the user)",
            Action::Help("Payment page; payment needs the user".into()),
        ),
    ];
    for (text, want) in &literal {
        let got = Action::parse(text).map_err(|e| format!("{text}: {e}"))?;
        ensure(&got == want, || format!("{text} parsed as {got:?}"))?;
        ensure(got.to_string() == *text, || format!("{text} printed as {got}"))?;
    }
    let invalid = [
        "SLIDE(upwards)",
        "SLIDE()",
        "CLICK()",
        "TYPE(   )",
        "BACK(now)",
        "HOME(screen)",
        "HELP(no cause given)",
        "HELP(; only a cause)",
        "TAP(Search)",
        "CLICK Search",
        "CLICK(Search",
        "",
    ];
    for text in invalid {
        ensure(Action::parse(text).is_err(), || format!("accepted {text:?}"))?;
    }
    Ok(format!(
        "round trip at {} cases, 6 literal forms, {} invalid forms rejected",
        common::CASES,
        invalid.len()
    ))
}

// ---- metrics oracle -------------------------------------------------------
// Recomputes every metric from the raw JSON lines and the raw scenario
// files, sharing no code with the scorer.

fn norm(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn amount(s: &str) -> Option<f64> {
    let t = s.trim().trim_start_matches(['¥', '$', '€', '£']).trim();
    let digits: String = t.chars().take_while(|c| c.is_ascii_digit() || *c == '.').collect();
    let rest = &t[digits.len()..];
    if rest.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn acceptable(cmp: &str, gold: &str, got: &str) -> bool {
    match (cmp, amount(gold), amount(got)) {
        ("max", Some(g), Some(x)) => x <= g,
        ("min", Some(g), Some(x)) => x >= g,
        _ => norm(gold) == norm(got),
    }
}

struct Gold {
    slots: Vec<(String, String, String, String)>,
    milestones: Vec<String>,
    ideal: f64,
    conflicts: BTreeSet<String>,
}

fn read_json(name: &str) -> Value {
    let p = assets_root().join("scenarios").join(name);
    serde_json::from_str(&std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn gold_of(scenario: &str) -> Gold {
    let doc = read_json(&format!("{scenario}.json"));
    let (base, dilemma) = match doc["base"].as_str() {
        Some(b) => (read_json(b), doc["dilemma"].clone()),
        None => (doc.clone(), Value::Null),
    };
    let ideal = doc["ideal_steps"].as_f64().or(base["ideal_steps"].as_f64()).unwrap();
    let key = |v: &Value| norm(v.as_str().unwrap_or_default());
    let extra: BTreeSet<String> = match dilemma["kind"].as_str() {
        Some("incremental_required") => dilemma["keys"].as_array().unwrap().iter().map(key).collect(),
        _ => BTreeSet::new(),
    };
    let mut conflicts = BTreeSet::new();
    if dilemma["kind"] == "conflicting_info" {
        conflicts.insert(key(&dilemma["key"]));
    }
    let slots = base["slots"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["stage"] == "initial" || extra.contains(&key(&s["key"])))
        .map(|s| {
            let k = key(&s["key"]);
            let value = if conflicts.contains(&k) {
                &dilemma["resolution"]
            } else {
                &s["value"]
            };
            let str_of = |v: &Value| v.as_str().unwrap_or_default().to_string();
            (k, str_of(value), str_of(&s["attr"]), str_of(&s["cmp"]))
        })
        .collect();
    Gold {
        slots,
        milestones: base["milestones"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["screen"].as_str().unwrap().to_string())
            .collect(),
        ideal,
        conflicts,
    }
}

fn frac(n: usize, d: usize) -> f64 {
    if d == 0 {
        1.0
    } else {
        n as f64 / d as f64
    }
}

fn brute_force(jsonl: &str, g: &Gold) -> BTreeMap<&'static str, f64> {
    let events: Vec<Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let end = &events.iter().rev().find(|e| e["kind"] == "task_end").unwrap()["payload"];
    let truth = &end["truth"];
    let mut m = BTreeMap::new();

    let success = end["status"] == "success" && truth["terminal"] != Value::Bool(false);
    m.insert("SR", if success { 1.0 } else { 0.0 });

    let mut screens = BTreeSet::new();
    for e in &events {
        for f in ["screen_id", "screen_after", "screen_before"] {
            let relevant = matches!(
                (e["kind"].as_str().unwrap(), f),
                ("decision", "screen_id") | ("action_executed", "screen_after") | ("takeover", _)
            );
            if relevant {
                if let Some(s) = e["payload"][f].as_str() {
                    screens.insert(s.to_string());
                }
            }
        }
    }
    if let Some(s) = truth["screen_id"].as_str() {
        screens.insert(s.to_string());
    }
    m.insert(
        "CR",
        frac(
            g.milestones.iter().filter(|s| screens.contains(*s)).count(),
            g.milestones.len(),
        ),
    );

    let (mut da, mut dn) = (0, 0);
    for e in events.iter().filter(|e| e["kind"] == "decision") {
        let p = &e["payload"];
        let exp = &p["expected"];
        if exp.is_null() {
            continue;
        }
        let action = p["action"].as_str().unwrap();
        let verb = &action[..action.find('(').unwrap_or(action.len())];
        let arg = &action[verb.len()..].trim_start_matches('(').trim_end_matches(')');
        let hit = match exp["kind"].as_str().unwrap() {
            "any" => true,
            "click" => verb == "CLICK" && p["element_id"] == exp["arg"],
            "type" => verb == "TYPE" && norm(arg) == norm(exp["arg"].as_str().unwrap()),
            "slide" => verb == "SLIDE" && norm(arg) == norm(exp["arg"].as_str().unwrap()),
            "back" => verb == "BACK",
            "help" => verb == "HELP",
            other => panic!("unknown expectation {other}"),
        };
        dn += 1;
        da += hit as usize;
    }
    m.insert("DA", frac(da, dn));

    let (mut ra, mut rn) = (0, 0);
    for e in events.iter().filter(|e| e["kind"] == "reflection") {
        let (r, t) = (&e["payload"]["result"], &e["payload"]["truth"]);
        let dims: Vec<&str> = ["effective", "consistent"]
            .into_iter()
            .filter(|k| !r[k].is_null() && !t[k].is_null())
            .collect();
        if !dims.is_empty() {
            rn += 1;
            ra += dims.iter().all(|k| r[k] == t[k]) as usize;
        }
    }
    m.insert("RA", frac(ra, rn));

    let steps: Vec<&Value> = events
        .iter()
        .filter(|e| e["kind"] == "action_executed" && e["payload"]["device_step"] == true)
        .map(|e| &e["payload"])
        .collect();
    m.insert(
        "AE",
        frac(steps.iter().filter(|p| p["effect"] == true).count(), steps.len()),
    );

    let taken = truth["device_steps"].as_f64().unwrap_or(0.0);
    m.insert(
        "RE",
        if success && taken > 0.0 {
            (g.ideal / taken).min(1.0)
        } else {
            0.0
        },
    );

    let ledger = &truth["ledger"];
    let ic = g
        .slots
        .iter()
        .filter(|(_, v, attr, cmp)| ledger[attr].as_str().is_some_and(|x| acceptable(cmp, v, x)))
        .count();
    m.insert("IC", frac(ic, g.slots.len()));

    let held: BTreeMap<String, String> = end["slots"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|p| Some((norm(p[0].as_str()?), p[1].as_str()?.to_string())))
        .collect();
    m.insert(
        "ICR",
        frac(
            g.slots.iter().filter(|(k, ..)| held.contains_key(k)).count(),
            g.slots.len(),
        ),
    );
    let judged: Vec<bool> = g
        .slots
        .iter()
        .filter_map(|(k, v, ..)| held.get(k).map(|h| norm(h) == norm(v)))
        .collect();
    m.insert("SA", frac(judged.iter().filter(|b| **b).count(), judged.len()));

    let caught: BTreeSet<String> = events
        .iter()
        .filter(|e| e["kind"] == "dilemma" && e["payload"]["kind"] == "slot_conflict")
        .filter_map(|e| e["payload"]["update_key"].as_str().map(norm))
        .collect();
    m.insert(
        "CCR",
        frac(g.conflicts.intersection(&caught).count(), g.conflicts.len()),
    );
    m
}

fn check_metrics(rows: &[&RunRow]) -> Outcome {
    let assets = Assets::new(assets_root());
    for r in rows {
        let g = gold_of(&r.scenario);
        let want = brute_force(&r.trace.to_jsonl(), &g);
        let scenario = assets.load_scenario(&r.scenario).map_err(|e| e.to_string())?;
        let score = score_run(&r.trace, &scenario).map_err(|e| e.to_string())?;
        for m in Metric::ALL {
            let (got, exp) = (score.value(m), want[m.as_str()]);
            ensure((got - exp).abs() < 1e-12, || {
                format!("{} [{}] {}: scorer {got}, scan {exp}", r.scenario, r.label, m.as_str())
            })?;
        }
    }
    for (n, d, shown) in [(14.0, 15.0, "0.933"), (5.0, 7.0, "0.714")] {
        let r = Ratio::new(n, d);
        ensure(r.display() == shown && format!("{:.3}", n / d) == shown, || {
            format!("{n}/{d} shown as {}", r.display())
        })?;
    }
    Ok(format!(
        "10 metrics agree with a raw scan on {} runs; 14/15 = 0.933, 5/7 = 0.714",
        rows.len()
    ))
}

fn check_ablation(t: &Table) -> Outcome {
    let of = |name: &str, label: &str, m: Metric| {
        t.rows
            .iter()
            .find(|r| r.scenario == name && r.label == label)
            .map(|r| r.score.value(m))
            .unwrap()
    };
    let (full, no_act) = (
        of("takeaway-deadend", "full", Metric::SR),
        of("takeaway-deadend", "no_action_reflection", Metric::SR),
    );
    ensure(full > no_act, || {
        format!("deadend SR full {full} vs no action reflection {no_act}")
    })?;
    let conflict: Vec<String> = FAMILIES.iter().map(|f| format!("{f}-conflict")).collect();
    let pooled = |label: &str| {
        let scores: Vec<_> = t
            .rows
            .iter()
            .filter(|r| r.label == label && conflict.contains(&r.scenario))
            .map(|r| &r.score)
            .collect();
        slotwise_core::evalkit::Score::pool(scores).value(Metric::CCR)
    };
    let (cf, ci) = (pooled("full"), pooled("no_info_reflection"));
    ensure(cf > ci, || format!("conflict CCR full {cf} vs no info reflection {ci}"))?;
    Ok(format!(
        "deadend SR {full:.3} > {no_act:.3}; conflict CCR {cf:.3} > {ci:.3}"
    ))
}

fn check_sweep(suite: &Suite, battery: &Table) -> Outcome {
    let windows = [1, 2, 3, 4, 5, 6];
    let report = suite
        .sweep("flight-roundtrip", &windows, &RunConfig::default())
        .map_err(|e| e.to_string())?;
    let sr = |n| report.score(n).map(|s| s.value(Metric::SR)).unwrap();
    ensure(sr(4) >= sr(1), || format!("SR(4) {} < SR(1) {}", sr(4), sr(1)))?;
    let text = report.render();
    for n in windows {
        ensure(text.lines().any(|l| l.starts_with(&format!("| {n} |"))), || {
            format!("no row for N={n}")
        })?;
    }
    let traces = report
        .rows
        .iter()
        .map(|(_, r)| &r.trace)
        .chain(battery.rows.iter().map(|r| &r.trace));
    let mut checked = 0;
    for tr in traces {
        let t = tr.end().and_then(|e| e.payload["t"].as_u64()).unwrap();
        let n = tr.of_kind(EventKind::Summary).count() as u64;
        ensure(n == t / 4, || format!("{} summaries after {t} steps", n))?;
        checked += 1;
    }
    Ok(format!(
        "SR(N=4) {:.0} >= SR(N=1) {:.0}; rows for N=1..6; summaries = floor(t/4) on {checked} runs",
        sr(4),
        sr(1)
    ))
}

/// Applies `edit` to a copy of the events and renumbers them.
fn mutate(trace: &RunTrace, edit: impl FnOnce(&mut Vec<TraceEvent>)) -> RunTrace {
    let mut events = trace.events.clone();
    edit(&mut events);
    for (i, e) in events.iter_mut().enumerate() {
        e.seq = i as u64;
    }
    RunTrace { events }
}

fn position(events: &[TraceEvent], kind: EventKind) -> usize {
    events.iter().position(|e| e.kind == kind).unwrap()
}

fn check_linter(t: &Table) -> Outcome {
    for r in &t.rows {
        let v = lint(&r.trace);
        ensure(v.is_empty(), || format!("{} [{}]: {}", r.scenario, r.label, v[0]))?;
    }
    let base = &t
        .rows
        .iter()
        .find(|r| r.scenario == "takeaway-conflict" && r.label == "full")
        .unwrap()
        .trace;
    let cases: [(&str, LintRule, RunTrace); 4] = [
        (
            "action before decision",
            LintRule::TurnOrder,
            mutate(base, |ev| {
                let i = position(ev, EventKind::Decision);
                ev.swap(i, i + 1);
            }),
        ),
        (
            "second inquiry while one is pending",
            LintRule::PendingInquiry,
            mutate(base, |ev| {
                let i = position(ev, EventKind::Inquiry);
                ev.insert(i + 1, ev[i].clone());
            }),
        ),
        (
            "HELP not routed to a dilemma",
            LintRule::HelpRouting,
            mutate(base, |ev| {
                ev.remove(position(ev, EventKind::Dilemma));
            }),
        ),
        (
            "slot update without an answered inquiry",
            LintRule::SlotUpdateAudit,
            mutate(base, |ev| {
                let i = position(ev, EventKind::UserReply);
                ev.drain(i - 1..=i);
            }),
        ),
    ];
    for (what, rule, bad) in &cases {
        let v = lint(bad);
        ensure(v.iter().any(|x| x.rule == *rule), || {
            format!("{what}: expected {rule:?}, got {v:?}")
        })?;
    }
    Ok(format!(
        "{} traces clean; {} seeded faults caught",
        t.rows.len(),
        cases.len()
    ))
}

fn main() {
    let suite = suite();
    let mut report = Report { lines: Vec::new() };
    let (bat, took) = battery(&suite);
    let names: Vec<String> = ["takeaway-deadend"]
        .into_iter()
        .map(String::from)
        .chain(FAMILIES.iter().map(|f| format!("{f}-conflict")))
        .collect();
    let ablation = suite.ablate(&names, &RunConfig::default()).expect("ablation runs");

    report.record("battery", || check_battery(&bat, took));
    report.record("determinism", || check_determinism(&suite, &bat));
    report.record("properties", check_properties);
    report.record("action grammar", check_grammar);
    let every: Vec<&RunRow> = bat.rows.iter().chain(&ablation.rows).collect();
    report.record("metrics oracle", || check_metrics(&every));
    report.record("ablation", || check_ablation(&ablation));
    report.record("window sweep", || check_sweep(&suite, &bat));
    let mut all = bat.clone();
    all.rows.extend(ablation.rows.iter().cloned());
    report.record("workflow linter", || check_linter(&all));

    let failed: Vec<&str> = report
        .lines
        .iter()
        .filter(|(_, o)| o.is_err())
        .map(|(n, _)| n.as_str())
        .collect();
    println!(
        "{} of {} criteria pass",
        report.lines.len() - failed.len(),
        report.lines.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

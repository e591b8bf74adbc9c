use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EvalError;
use crate::domain::{normalize_key, Action};
use crate::orchestrator::{EventKind, RunTrace};
use crate::simenv::{satisfies, Cmp, Expected, Scenario};

/// The ten run metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    /// Success rate.
    SR,
    /// Completion rate over milestones.
    CR,
    /// Decision accuracy against the gold plan.
    DA,
    /// Reflection accuracy against simulator truth.
    RA,
    /// Action effectiveness.
    AE,
    /// Reasoning efficiency: ideal over actual device steps.
    RE,
    /// Information completeness: gold slots honoured on the device.
    IC,
    /// Information collection rate: gold slots the agent holds.
    ICR,
    /// Slot accuracy: held values that match gold.
    SA,
    /// Conflicts caught.
    CCR,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::SR,
        Metric::CR,
        Metric::DA,
        Metric::RA,
        Metric::AE,
        Metric::RE,
        Metric::IC,
        Metric::ICR,
        Metric::SA,
        Metric::CCR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SR => "SR",
            Metric::CR => "CR",
            Metric::DA => "DA",
            Metric::RA => "RA",
            Metric::AE => "AE",
            Metric::RE => "RE",
            Metric::IC => "IC",
            Metric::ICR => "ICR",
            Metric::SA => "SA",
            Metric::CCR => "CCR",
        }
    }
}

/// A numerator over a denominator. An empty denominator reads as 1.0: there
/// was nothing to get wrong.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: f64,
    pub den: f64,
}

impl Ratio {
    pub fn new(num: f64, den: f64) -> Self {
        Self { num, den }
    }

    pub fn value(self) -> f64 {
        if self.den == 0.0 {
            1.0
        } else {
            self.num / self.den
        }
    }

    /// Three decimals, half away from zero.
    pub fn display(self) -> String {
        format!("{:.3}", (self.value() * 1000.0).round() / 1000.0)
    }
}

impl std::ops::AddAssign for Ratio {
    fn add_assign(&mut self, o: Ratio) {
        self.num += o.num;
        self.den += o.den;
    }
}

/// Per-metric counts of one run (or a pool of runs).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub counts: [Ratio; 10],
}

impl Score {
    pub fn get(&self, m: Metric) -> Ratio {
        self.counts[m as usize]
    }

    pub fn value(&self, m: Metric) -> f64 {
        self.get(m).value()
    }

    fn set(&mut self, m: Metric, num: usize, den: usize) {
        self.counts[m as usize] = Ratio::new(num as f64, den as f64);
    }

    /// Micro-aggregation: numerators and denominators are summed.
    pub fn pool<'a>(scores: impl IntoIterator<Item = &'a Score>) -> Score {
        let mut out = Score::default();
        for s in scores {
            for (a, b) in out.counts.iter_mut().zip(s.counts) {
                *a += b;
            }
        }
        out
    }
}

fn trace_err(m: impl Into<String>) -> EvalError {
    EvalError::Trace(m.into())
}

/// Final slots carried by `task_end`, as (normalized key, value).
fn final_slots(end: &Value) -> Vec<(String, String)> {
    end["slots"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|e| Some((normalize_key(e[0].as_str()?), e[1].as_str()?.to_string())))
        .collect()
}

/// Scores one trace against the scenario it ran on. The trace must carry
/// evaluator truth.
pub fn score_run(trace: &RunTrace, scenario: &Scenario) -> Result<Score, EvalError> {
    let end = trace.end().ok_or_else(|| trace_err("no task_end"))?;
    let truth = &end.payload["truth"];
    if !truth.is_object() {
        return Err(trace_err("task_end has no evaluator truth"));
    }
    let mut s = Score::default();

    let success = end.str_field("status") == Some("success") && truth["terminal"].as_bool() != Some(false);
    s.set(Metric::SR, success as usize, 1);

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for e in &trace.events {
        let p = &e.payload;
        let ids = match e.kind {
            EventKind::Decision => vec![&p["screen_id"]],
            EventKind::ActionExecuted => vec![&p["screen_after"]],
            EventKind::Takeover => vec![&p["screen_before"], &p["screen_after"]],
            EventKind::TaskEnd => vec![&p["truth"]["screen_id"]],
            _ => vec![],
        };
        seen.extend(ids.into_iter().filter_map(Value::as_str));
    }
    let reached = scenario
        .milestones
        .iter()
        .filter(|m| seen.contains(m.screen.as_str()))
        .count();
    s.set(Metric::CR, reached, scenario.milestones.len());

    let (mut da, mut dn) = (0, 0);
    for e in trace.of_kind(EventKind::Decision) {
        let Some(exp) = e.payload.get("expected").filter(|v| !v.is_null()) else {
            continue;
        };
        let exp: Expected = serde_json::from_value(exp.clone()).map_err(|e| trace_err(format!("expected: {e}")))?;
        let action = Action::parse(e.str_field("action").unwrap_or_default())
            .map_err(|err| trace_err(format!("decision {}: {err}", e.seq)))?;
        dn += 1;
        da += exp.matches(&action, e.str_field("element_id")) as usize;
    }
    s.set(Metric::DA, da, dn);

    let (mut ra, mut rn) = (0, 0);
    for e in trace.of_kind(EventKind::Reflection) {
        let (r, t) = (&e.payload["result"], &e.payload["truth"]);
        let judged: Vec<bool> = ["effective", "consistent"]
            .into_iter()
            .filter(|k| !r[k].is_null() && !t[k].is_null())
            .map(|k| r[k] == t[k])
            .collect();
        if !judged.is_empty() {
            rn += 1;
            ra += judged.iter().all(|&b| b) as usize;
        }
    }
    s.set(Metric::RA, ra, rn);

    let steps: Vec<&Value> = trace
        .of_kind(EventKind::ActionExecuted)
        .map(|e| &e.payload)
        .filter(|p| p["device_step"].as_bool() == Some(true))
        .collect();
    let effective = steps.iter().filter(|p| p["effect"].as_bool() == Some(true)).count();
    s.set(Metric::AE, effective, steps.len());

    let device_steps = truth["device_steps"].as_u64().unwrap_or(0) as f64;
    let re = if success && device_steps > 0.0 {
        (scenario.ideal_steps as f64 / device_steps).min(1.0)
    } else {
        0.0
    };
    s.counts[Metric::RE as usize] = Ratio::new(re, 1.0);

    let gold = scenario.gold();
    let ledger = &truth["ledger"];
    let honoured = gold
        .iter()
        .filter(|g| ledger[&g.attr].as_str().is_some_and(|v| satisfies(g.cmp, &g.value, v)))
        .count();
    s.set(Metric::IC, honoured, gold.len());

    let held = final_slots(&end.payload);
    let gold_keys: Vec<String> = gold.iter().map(|g| normalize_key(&g.key)).collect();
    let collected = gold_keys.iter().filter(|k| held.iter().any(|(h, _)| h == *k)).count();
    s.set(Metric::ICR, collected, gold.len());

    let (mut sa, mut sn) = (0, 0);
    for (k, v) in &held {
        if let Some(g) = gold.iter().find(|g| normalize_key(&g.key) == *k) {
            sn += 1;
            sa += satisfies(Cmp::Exact, &g.value, v) as usize;
        }
    }
    s.set(Metric::SA, sa, sn);

    let caught: BTreeSet<String> = trace
        .of_kind(EventKind::Dilemma)
        .filter(|e| e.str_field("kind") == Some("slot_conflict"))
        .filter_map(|e| e.str_field("update_key").map(normalize_key))
        .collect();
    let armed: BTreeSet<String> = scenario
        .armed_conflicts()
        .into_iter()
        .map(|(k, _)| normalize_key(&k))
        .collect();
    s.set(Metric::CCR, armed.intersection(&caught).count(), armed.len());

    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_display() {
        assert_eq!(Ratio::new(14.0, 15.0).display(), "0.933");
        assert_eq!(Ratio::new(5.0, 7.0).display(), "0.714");
        assert_eq!(Ratio::new(0.0, 0.0).display(), "1.000");
        assert_eq!(Ratio::new(1.0, 8.0).display(), "0.125");
    }

    #[test]
    fn pooling_is_micro() {
        let mut a = Score::default();
        a.set(Metric::DA, 1, 1);
        let mut b = Score::default();
        b.set(Metric::DA, 1, 3);
        let p = Score::pool([&a, &b]);
        assert_eq!(p.get(Metric::DA), Ratio::new(2.0, 4.0));
        assert_eq!(p.value(Metric::CCR), 1.0);
    }
}

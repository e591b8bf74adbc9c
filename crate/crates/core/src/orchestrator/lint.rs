use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::trace::{EventKind, RunTrace, TraceEvent};
use super::RunConfig;
use crate::domain::normalize_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LintRule {
    /// seq runs 0, 1, 2, ... and exactly one task_end closes the trace.
    Sequence,
    TurnOrder,
    PendingInquiry,
    HelpRouting,
    SlotUpdateAudit,
    SummaryCadence,
    AblationScope,
    /// A HELP step's effectiveness is set by rule, never asked for.
    HelpRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: LintRule,
    pub seq: u64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at seq {}: {}", self.rule, self.seq, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Before the first iteration, or between iterations.
    Open {
        preprocess: bool,
    },
    Supplied,
    Decided {
        help: bool,
    },
    Helping,
    Acted,
    Reflected,
    Ended,
}

const SUPPLEMENT_KINDS: [EventKind; 6] = [
    EventKind::SlotCreated,
    EventKind::Inquiry,
    EventKind::UserReply,
    EventKind::SlotFilled,
    EventKind::Instruction,
    EventKind::Warning,
];

const HELP_KINDS: [EventKind; 7] = [
    EventKind::Inquiry,
    EventKind::UserReply,
    EventKind::SlotUpdated,
    EventKind::Instruction,
    EventKind::Decomposed,
    EventKind::Takeover,
    EventKind::Warning,
];

fn is_help(e: &TraceEvent) -> bool {
    e.str_field("action").is_some_and(|a| a.starts_with("HELP("))
}

fn is_retry(e: &TraceEvent) -> bool {
    e.kind == EventKind::Warning && e.payload.get("retry").and_then(Value::as_bool) == Some(true)
}

fn config_of(trace: &RunTrace) -> RunConfig {
    trace
        .of_kind(EventKind::SessionStarted)
        .next()
        .and_then(|e| e.payload.get("config"))
        .and_then(|c| serde_json::from_value(c.clone()).ok())
        .unwrap_or_default()
}

struct Linter {
    out: Vec<Violation>,
}

impl Linter {
    fn flag(&mut self, rule: LintRule, seq: u64, message: impl Into<String>) {
        self.out.push(Violation {
            rule,
            seq,
            message: message.into(),
        });
    }

    fn sequence(&mut self, trace: &RunTrace) {
        for (i, e) in trace.events.iter().enumerate() {
            if e.seq != i as u64 {
                self.flag(LintRule::Sequence, e.seq, format!("expected seq {i}"));
            }
        }
        let ends = trace.of_kind(EventKind::TaskEnd).count();
        let last = trace.events.last().map(|e| e.kind);
        if ends != 1 || last != Some(EventKind::TaskEnd) {
            let seq = trace.events.last().map_or(0, |e| e.seq);
            self.flag(
                LintRule::Sequence,
                seq,
                format!("{ends} task_end events; last event {last:?}"),
            );
        }
    }

    fn turn_order(&mut self, trace: &RunTrace) {
        let mut phase = Phase::Open { preprocess: true };
        for e in &trace.events {
            let k = e.kind;
            if is_retry(e) && !matches!(phase, Phase::Open { .. } | Phase::Ended) {
                phase = Phase::Open { preprocess: false };
                continue;
            }
            if k == EventKind::TaskEnd {
                phase = Phase::Ended;
                continue;
            }
            let next = match phase {
                Phase::Open { preprocess } => match k {
                    EventKind::SessionStarted | EventKind::Intent | EventKind::Decomposed if preprocess => Some(phase),
                    EventKind::Supplement => Some(Phase::Supplied),
                    _ if SUPPLEMENT_KINDS.contains(&k) => Some(phase),
                    _ => None,
                },
                Phase::Supplied => (k == EventKind::Decision).then(|| Phase::Decided { help: is_help(e) }),
                Phase::Decided { help: true } => (k == EventKind::Dilemma).then_some(Phase::Helping),
                Phase::Decided { help: false } => (k == EventKind::ActionExecuted).then_some(Phase::Acted),
                Phase::Helping if HELP_KINDS.contains(&k) => Some(Phase::Helping),
                Phase::Helping | Phase::Acted => (k == EventKind::Reflection).then_some(Phase::Reflected),
                Phase::Reflected => match k {
                    EventKind::Summary => Some(Phase::Open { preprocess: false }),
                    EventKind::Supplement => Some(Phase::Supplied),
                    _ if SUPPLEMENT_KINDS.contains(&k) => Some(Phase::Open { preprocess: false }),
                    _ => None,
                },
                Phase::Ended => None,
            };
            match next {
                Some(p) => phase = p,
                None => self.flag(
                    LintRule::TurnOrder,
                    e.seq,
                    format!("`{k}` not allowed in phase {phase:?}"),
                ),
            }
        }
    }

    fn pending(&mut self, trace: &RunTrace) {
        let mut pending: Option<String> = None;
        for e in &trace.events {
            match e.kind {
                EventKind::Inquiry => {
                    if let Some(p) = &pending {
                        self.flag(
                            LintRule::PendingInquiry,
                            e.seq,
                            format!("new inquiry while `{p}` is pending"),
                        );
                    }
                    pending = e.str_field("id").map(str::to_string);
                }
                EventKind::UserReply => {
                    let id = e.str_field("inquiry_id").map(str::to_string);
                    if id.is_none() || id != pending {
                        self.flag(
                            LintRule::PendingInquiry,
                            e.seq,
                            format!("reply to {id:?} while {pending:?} is pending"),
                        );
                    }
                    pending = None;
                }
                EventKind::TaskEnd => {
                    let success = e.str_field("status") == Some("success");
                    if let (Some(p), true) = (&pending, success) {
                        self.flag(
                            LintRule::PendingInquiry,
                            e.seq,
                            format!("`{p}` still pending at success"),
                        );
                    }
                }
                _ => {}
            }
        }
    }

    fn help_routing(&mut self, trace: &RunTrace) {
        for (i, e) in trace.events.iter().enumerate() {
            if e.kind == EventKind::Decision && is_help(e) {
                let next = trace.events.get(i + 1).map(|n| n.kind);
                if next != Some(EventKind::Dilemma)
                    && next != Some(EventKind::TaskEnd)
                    && !trace.events.get(i + 1).is_some_and(is_retry)
                {
                    self.flag(LintRule::HelpRouting, e.seq, format!("HELP followed by {next:?}"));
                }
            }
        }
    }

    fn slot_updates(&mut self, trace: &RunTrace) {
        // keys the user was asked about (and answered) since the last decision
        let mut notified: BTreeSet<String> = BTreeSet::new();
        let mut dilemma_keys: BTreeSet<String> = BTreeSet::new();
        let mut asked: Option<String> = None;
        for e in &trace.events {
            match e.kind {
                EventKind::Decision => {
                    notified.clear();
                    dilemma_keys.clear();
                }
                EventKind::Dilemma => {
                    if let Some(k) = e.str_field("update_key") {
                        dilemma_keys.insert(normalize_key(k));
                    }
                }
                EventKind::Inquiry => asked = e.str_field("slot_key").map(normalize_key),
                EventKind::UserReply => {
                    if let Some(k) = asked.take() {
                        notified.insert(k);
                    }
                }
                EventKind::SlotUpdated => {
                    let k = e.str_field("key").map(normalize_key).unwrap_or_default();
                    if !notified.remove(&k) {
                        self.flag(
                            LintRule::SlotUpdateAudit,
                            e.seq,
                            format!("`{k}` updated without an answered inquiry"),
                        );
                    }
                    if !dilemma_keys.contains(&k) {
                        self.flag(
                            LintRule::SlotUpdateAudit,
                            e.seq,
                            format!("`{k}` updated without a dilemma naming it"),
                        );
                    }
                }
                _ => {}
            }
        }
    }

    fn summaries(&mut self, trace: &RunTrace, cfg: &RunConfig) {
        let cadence = cfg.summary_cadence.max(1);
        let mut steps = 0u64;
        let mut count = 0usize;
        for e in &trace.events {
            match e.kind {
                EventKind::Reflection => steps += 1,
                EventKind::Summary => {
                    count += 1;
                    let t = e.payload.get("t").and_then(Value::as_u64);
                    if t != Some(steps) || !steps.is_multiple_of(cadence as u64) {
                        self.flag(
                            LintRule::SummaryCadence,
                            e.seq,
                            format!("summary at t={t:?} after {steps} steps"),
                        );
                    }
                }
                EventKind::TaskEnd => {
                    let t = e.payload.get("t").and_then(Value::as_u64).unwrap_or(steps) as usize;
                    if count != t / cadence {
                        self.flag(LintRule::SummaryCadence, e.seq, format!("{count} summaries for t={t}"));
                    }
                }
                _ => {}
            }
        }
    }

    fn scopes(&mut self, trace: &RunTrace, cfg: &RunConfig) {
        let mut last_help = false;
        for e in &trace.events {
            match e.kind {
                EventKind::Decision => last_help = is_help(e),
                EventKind::Reflection => {
                    let r = &e.payload["result"];
                    if !cfg.action_reflection && !r["effective"].is_null() {
                        self.flag(
                            LintRule::AblationScope,
                            e.seq,
                            "effectiveness judged with action reflection off",
                        );
                    }
                    if !cfg.information_reflection
                        && (!r["consistent"].is_null()
                            || r["conflicts"]["pairs"].as_array().is_some_and(|a| !a.is_empty()))
                    {
                        self.flag(
                            LintRule::AblationScope,
                            e.seq,
                            "consistency judged with information reflection off",
                        );
                    }
                    if last_help {
                        let asked = e.payload["asked_scope"]["action"].as_bool();
                        if asked != Some(false) {
                            self.flag(LintRule::HelpRule, e.seq, "generator asked to judge a HELP step");
                        }
                        if cfg.action_reflection
                            && (r["effective"] != Value::Bool(true) || r["rule_applied"] != Value::Bool(true))
                        {
                            self.flag(LintRule::HelpRule, e.seq, "HELP step not marked effective by rule");
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

/// Checks a trace against the workflow invariants.
pub fn lint(trace: &RunTrace) -> Vec<Violation> {
    let cfg = config_of(trace);
    let mut l = Linter { out: Vec::new() };
    l.sequence(trace);
    l.turn_order(trace);
    l.pending(trace);
    l.help_routing(trace);
    l.slot_updates(trace);
    l.summaries(trace, &cfg);
    l.scopes(trace, &cfg);
    l.out.sort_by_key(|v| (v.seq, v.rule));
    l.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::Tracer;
    use serde_json::json;

    fn trace(events: Vec<(EventKind, Value)>) -> RunTrace {
        let mut t = Tracer::new(None);
        for (k, p) in events {
            t.emit(k, p);
        }
        t.finish()
    }

    fn rules(v: &[Violation]) -> Vec<LintRule> {
        v.iter().map(|v| v.rule).collect()
    }

    #[test]
    fn help_must_be_followed_by_dilemma() {
        let t = trace(vec![
            (EventKind::SessionStarted, json!({})),
            (EventKind::Supplement, json!({})),
            (EventKind::Decision, json!({"action": "HELP(a; b)"})),
            (EventKind::ActionExecuted, json!({})),
            (
                EventKind::Reflection,
                json!({"result": {"effective": true, "rule_applied": true}, "asked_scope": {"action": false}}),
            ),
            (EventKind::TaskEnd, json!({"status": "failure", "t": 1})),
        ]);
        let r = rules(&lint(&t));
        assert!(r.contains(&LintRule::HelpRouting));
        assert!(r.contains(&LintRule::TurnOrder));
    }

    #[test]
    fn two_pending_inquiries() {
        let t = trace(vec![
            (EventKind::SessionStarted, json!({})),
            (EventKind::Inquiry, json!({"id": "q0"})),
            (EventKind::Inquiry, json!({"id": "q1"})),
            (EventKind::UserReply, json!({"inquiry_id": "q1"})),
            (EventKind::TaskEnd, json!({"status": "failure", "t": 0})),
        ]);
        assert_eq!(rules(&lint(&t)), vec![LintRule::PendingInquiry]);
    }

    #[test]
    fn unannounced_slot_update() {
        let t = trace(vec![
            (EventKind::SessionStarted, json!({})),
            (EventKind::Supplement, json!({})),
            (EventKind::Decision, json!({"action": "HELP(a; b)"})),
            (EventKind::Dilemma, json!({"update_key": "Price Limit"})),
            (EventKind::SlotUpdated, json!({"key": "Price Limit"})),
            (
                EventKind::Reflection,
                json!({"result": {"effective": true, "rule_applied": true}, "asked_scope": {"action": false}}),
            ),
            (EventKind::TaskEnd, json!({"status": "failure", "t": 1})),
        ]);
        assert_eq!(rules(&lint(&t)), vec![LintRule::SlotUpdateAudit]);
    }

    #[test]
    fn summary_off_cadence_and_missing_end() {
        let t = trace(vec![
            (EventKind::SessionStarted, json!({})),
            (EventKind::Supplement, json!({})),
            (EventKind::Decision, json!({"action": "BACK()"})),
            (EventKind::ActionExecuted, json!({})),
            (EventKind::Reflection, json!({"result": {"effective": true}})),
            (EventKind::Summary, json!({"t": 1})),
        ]);
        let r = rules(&lint(&t));
        assert!(r.contains(&LintRule::SummaryCadence));
        assert!(r.contains(&LintRule::Sequence));
    }
}

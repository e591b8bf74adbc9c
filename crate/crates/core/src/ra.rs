//! Reflection agent: judges each executed action and the screen it led to,
//! tracks subtask progress, and folds old steps into the history summary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    render_trajectory, Action, ElementRole, HistorySummary, Inconsistency, InconsistencySet, Observation, SubtaskList,
    TaskContext, TrajectoryStep,
};
use crate::gateway::{Bindings, Gateway, GatewayError, TaggedFields, TemplateId};
use crate::memory::{render_knowledge, KnowledgeKind};

#[derive(Debug, Error)]
pub enum RaError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("progress is undefined for an empty subtask list")]
    EmptySubtasks,
    #[error("summary requested at t={t}, cadence is every {cadence} steps")]
    CadenceViolation { t: usize, cadence: usize },
}

/// Which judgments the reflector makes. Switching one off is how the
/// ablation configurations are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionScope {
    pub action: bool,
    pub information: bool,
}

impl Default for ReflectionScope {
    fn default() -> Self {
        Self {
            action: true,
            information: true,
        }
    }
}

impl ReflectionScope {
    /// Scope text substituted into the reflect prompt.
    pub fn render(&self) -> String {
        let part = |on: bool, what: &str, tag: &str| {
            if on {
                format!("- Judge {what}.")
            } else {
                format!("- Do not judge {what}; answer Skipped in <{tag}>.")
            }
        };
        [
            part(self.action, "whether the action met its planned goal", "effective"),
            part(
                self.information,
                "whether the screen agrees with the slot information",
                "consistency",
            ),
        ]
        .join("\n")
    }
}

/// Outcome of reflecting on one step. `None` judgments were skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionResult {
    pub step: usize,
    pub text: String,
    pub effective: Option<bool>,
    pub advice: String,
    pub consistent: Option<bool>,
    pub conflicts: InconsistencySet,
    /// Zero-based indices of subtasks the reflector considers done.
    pub completed_subtasks: Vec<usize>,
    pub task_completed: bool,
    pub progress: f64,
    /// Set when a rule overrode the generator's effectiveness verdict.
    #[serde(default)]
    pub rule_applied: bool,
}

fn judgment(j: Option<bool>) -> &'static str {
    match j {
        Some(true) => "True",
        Some(false) => "False",
        None => "Skipped",
    }
}

impl ReflectionResult {
    /// Text handed to the next decision.
    pub fn render(&self) -> String {
        let mut lines = vec![
            format!("reflection: {}", self.text),
            format!("effective: {}", judgment(self.effective)),
        ];
        if self.effective == Some(false) && !self.advice.is_empty() {
            lines.push(format!("advice: {}", self.advice));
        }
        lines.push(format!("consistency: {}", judgment(self.consistent)));
        for c in &self.conflicts.pairs {
            lines.push(format!("conflict: {} :: {}", c.slot_key, c.observed_value));
        }
        lines.push(format!("task completed: {}", self.task_completed));
        lines.join("\n")
    }

    /// One-word verdict appended to execution reports.
    pub fn verdict(&self) -> &'static str {
        match self.effective {
            Some(true) => "effective",
            Some(false) => "ineffective",
            None => "unjudged",
        }
    }
}

/// Fraction of subtasks completed.
pub fn progress_ratio(subtasks: &SubtaskList) -> Result<f64, RaError> {
    if subtasks.is_empty() {
        return Err(RaError::EmptySubtasks);
    }
    Ok(subtasks.completed_count() as f64 / subtasks.len() as f64)
}

/// Everything known about the step being judged.
#[derive(Debug, Clone, Copy)]
pub struct ReflectInput<'a> {
    pub step: usize,
    pub before: &'a Observation,
    pub after: &'a Observation,
    pub action: &'a Action,
    pub plan: &'a str,
    /// Role of the element the action landed on, when it was a click.
    pub target_role: Option<ElementRole>,
    pub ctx: &'a TaskContext,
}

pub fn reflect_bindings(input: &ReflectInput<'_>, scope: ReflectionScope) -> Bindings {
    let ctx = input.ctx;
    [
        ("task_ins", ctx.clarified_instruction.clone()),
        ("slot_info", ctx.slots.render()),
        (
            "app_knowledge",
            render_knowledge(&ctx.knowledge, KnowledgeKind::AppSpecific),
        ),
        ("subtasks", ctx.subtasks.render()),
        ("action_history_summarization", ctx.summary.render()),
        ("trajectory", render_trajectory(&ctx.window)),
        ("plan", input.plan.to_string()),
        ("last_action", input.action.to_string()),
        ("screen_before", input.before.render()),
        ("screen_after", input.after.render()),
        ("reflection_scope", scope.render()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn parse_judgment(tag: &str, raw: Option<&str>, on: bool) -> Result<Option<bool>, GatewayError> {
    let v = raw.map(|s| s.trim().to_lowercase());
    match v.as_deref() {
        Some("true") => Ok(Some(true)),
        Some("false") => Ok(Some(false)),
        Some("skipped") | None if !on => Ok(None),
        other => Err(GatewayError::SchemaViolation(format!("<{tag}> is {other:?}"))),
    }
}

fn parse_reflection(
    f: &TaggedFields,
    input: &ReflectInput<'_>,
    scope: ReflectionScope,
) -> Result<ReflectionResult, GatewayError> {
    let mut effective = parse_judgment("effective", f.first("effective"), scope.action)?;
    let mut consistent = parse_judgment("consistency", f.first("consistency"), scope.information)?;
    if !scope.action {
        effective = None;
    }
    if !scope.information {
        consistent = None;
    }
    let mut pairs = Vec::new();
    if scope.information {
        for c in f.all("conflict") {
            let c = c.trim();
            if c.is_empty() {
                continue;
            }
            let (k, v) = c
                .split_once("::")
                .ok_or_else(|| GatewayError::SchemaViolation(format!("conflict `{c}` lacks `::`")))?;
            pairs.push(Inconsistency {
                slot_key: k.trim().to_string(),
                observed_value: v.trim().to_string(),
                note: String::new(),
            });
        }
    }
    let conflicts = InconsistencySet::new(pairs);
    conflicts
        .validate_against(&input.ctx.slots)
        .map_err(|e| GatewayError::SchemaViolation(e.to_string()))?;
    let n = input.ctx.subtasks.len();
    let mut completed = Vec::new();
    for c in f.all("completed_subtask") {
        let c = c.trim();
        if c.is_empty() {
            continue;
        }
        let i: usize = c
            .parse()
            .map_err(|_| GatewayError::SchemaViolation(format!("subtask number `{c}`")))?;
        if i == 0 || i > n {
            return Err(GatewayError::SchemaViolation(format!("subtask {i} out of 1..={n}")));
        }
        if !completed.contains(&(i - 1)) {
            completed.push(i - 1);
        }
    }
    completed.sort_unstable();
    let task_completed =
        parse_judgment("whether_task_completed", f.first("whether_task_completed"), true)?.expect("required judgment");

    let mut rule_applied = false;
    let rule_effective = input.action.is_help() || input.target_role == Some(ElementRole::Input);
    if scope.action && rule_effective && effective != Some(true) {
        effective = Some(true);
        rule_applied = true;
    }

    let mut subtasks = input.ctx.subtasks.clone();
    subtasks.mark_completed(&completed);
    let progress = progress_ratio(&subtasks).unwrap_or(0.0);
    Ok(ReflectionResult {
        step: input.step,
        text: f.first("actionReflection").unwrap_or_default().trim().to_string(),
        effective,
        advice: f.first("advice").unwrap_or_default().trim().to_string(),
        consistent,
        conflicts,
        completed_subtasks: completed,
        task_completed,
        progress,
        rule_applied,
    })
}

/// Scope actually put to the generator: a HELP step's effectiveness is
/// settled by rule, so the generator is never asked about it.
pub fn asked_scope(action: &Action, scope: ReflectionScope) -> ReflectionScope {
    if action.is_help() {
        ReflectionScope { action: false, ..scope }
    } else {
        scope
    }
}

/// Judges one executed step. Clicks on input fields and HELP actions are
/// always effective regardless of what the generator says.
pub fn reflect(
    gw: &mut Gateway,
    input: &ReflectInput<'_>,
    scope: ReflectionScope,
) -> Result<ReflectionResult, RaError> {
    let asked = asked_scope(input.action, scope);
    let b = reflect_bindings(input, asked);
    let mut r = gw.complete_validated(TemplateId::Reflect, &b, |f| parse_reflection(f, input, asked))?;
    if scope.action && input.action.is_help() {
        r.effective = Some(true);
        r.rule_applied = true;
    }
    Ok(r)
}

/// Whether a summary is due after `t` steps.
pub fn summary_due(t: usize, cadence: usize) -> bool {
    cadence > 0 && t > 0 && t.is_multiple_of(cadence)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutcome {
    pub summary: HistorySummary,
    /// The generator exceeded the bound and the text was cut.
    pub truncated: bool,
}

pub fn summarize_bindings(prev: &HistorySummary, window: &[TrajectoryStep]) -> Bindings {
    [
        ("action_history_summarization", prev.render()),
        ("trajectory", render_trajectory(window)),
        ("max_chars", prev.max_len.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Folds `window` into `prev`. Only valid when a summary is due at `t`; the
/// new summary covers steps up to `t - 1`.
pub fn summarize(
    gw: &mut Gateway,
    prev: &HistorySummary,
    window: &[TrajectoryStep],
    t: usize,
    cadence: usize,
) -> Result<SummaryOutcome, RaError> {
    if !summary_due(t, cadence) {
        return Err(RaError::CadenceViolation { t, cadence });
    }
    let f = gw.complete_tagged(TemplateId::Summarize, &summarize_bindings(prev, window))?;
    let text = f.first("action_history_summarization").unwrap_or_default().trim();
    let max = prev.max_len;
    let truncated = text.chars().count() > max;
    let text: String = text.chars().take(max).collect();
    let summary = HistorySummary::new(text, t - 1, max).expect("text within bound");
    Ok(SummaryOutcome { summary, truncated })
}

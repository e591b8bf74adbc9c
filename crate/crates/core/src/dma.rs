//! Decision-making agent: task decomposition, per-step action choice over
//! the windowed context, and resolution of click descriptions to screen
//! points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{render_trajectory, Action, Observation, SubtaskList, TaskContext, UiElement};
use crate::gateway::{Bindings, Gateway, GatewayError, TemplateId};
use crate::memory::{render_knowledge, KnowledgeEntry, KnowledgeKind};
use crate::ra::ReflectionResult;

#[derive(Debug, Error)]
pub enum DmaError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("decomposition produced no subtasks")]
    EmptyDecomposition,
    #[error("invalid action `{0}`")]
    InvalidAction(String),
    #[error(transparent)]
    Locate(#[from] LocateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum LocateError {
    #[error("no element matches `{0}`")]
    NoMatch(String),
    #[error("description matches several elements equally: {0:?}")]
    Ambiguous(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub state_desc: String,
    pub plan: String,
    pub action: Action,
}

/// Where a click lands, and on which element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenPoint {
    pub x: i32,
    pub y: i32,
    pub element_id: String,
}

fn bind(pairs: Vec<(&str, String)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

const SENSITIVE: [&str; 8] = [
    "pay",
    "payment",
    "login",
    "log in",
    "sign in",
    "verification",
    "verify",
    "password",
];

fn mentions_word(text: &str, word: &str) -> bool {
    let t = text.to_lowercase();
    t.match_indices(word).any(|(i, _)| {
        let before = t[..i].chars().next_back();
        let after = t[i + word.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Structural rules every decomposition must satisfy: the first step opens
/// the app, and steps needing the user carry the marker.
pub fn check_subtasks(items: &[String], app: Option<&str>, marker: &str) -> Result<(), String> {
    let first = items.first().ok_or("no subtasks")?.to_lowercase();
    if !first.contains("open") || app.is_some_and(|a| !first.contains(&a.to_lowercase())) {
        return Err(format!("first subtask does not open the app: `{}`", items[0]));
    }
    let m = marker.to_lowercase();
    for it in items {
        if SENSITIVE.iter().any(|w| mentions_word(it, w)) && !it.to_lowercase().contains(&m) {
            return Err(format!("subtask `{it}` needs the user but lacks `{marker}`"));
        }
    }
    Ok(())
}

/// Splits the clarified instruction into ordered subtasks.
pub fn decompose_task(
    gw: &mut Gateway,
    task_ins: &str,
    knowledge: &[KnowledgeEntry],
    app: Option<&str>,
    marker: &str,
) -> Result<SubtaskList, DmaError> {
    let b = bind(vec![
        ("task_ins", task_ins.to_string()),
        ("app_knowledge", render_knowledge(knowledge, KnowledgeKind::AppSpecific)),
    ]);
    let mut saw_empty = false;
    let r = gw.complete_validated(TemplateId::Decompose, &b, |f| {
        let items: Vec<String> = f
            .all("subtask")
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        saw_empty = items.is_empty();
        check_subtasks(&items, app, marker).map_err(GatewayError::SchemaViolation)?;
        Ok(SubtaskList::from_texts(&items, marker))
    });
    match r {
        Ok(l) => Ok(l),
        Err(GatewayError::ParseExhausted { .. }) if saw_empty => Err(DmaError::EmptyDecomposition),
        Err(e) => Err(e.into()),
    }
}

/// Text of the previous reflection as shown to the decision maker.
pub fn render_reflection(prev: Option<&ReflectionResult>) -> String {
    prev.map(ReflectionResult::render)
        .unwrap_or_else(|| "(no previous action)".to_string())
}

/// Prompt bindings of one decision. The trajectory binding holds exactly
/// the context window.
pub fn decide_bindings(obs: &Observation, prev: Option<&ReflectionResult>, ctx: &TaskContext) -> Bindings {
    bind(vec![
        (
            "phone_knowledge",
            render_knowledge(&ctx.knowledge, KnowledgeKind::PhoneOperation),
        ),
        ("task_ins", ctx.clarified_instruction.clone()),
        ("actionReflection", render_reflection(prev)),
        ("subtasks", ctx.subtasks.render()),
        ("slot_info", ctx.slots.render()),
        ("trajectory", render_trajectory(&ctx.window)),
        ("action_history_summarization", ctx.summary.render()),
        (
            "app_knowledge",
            render_knowledge(&ctx.knowledge, KnowledgeKind::AppSpecific),
        ),
        ("screen", obs.render()),
    ])
}

/// Chooses the next action.
pub fn decide(
    gw: &mut Gateway,
    obs: &Observation,
    prev: Option<&ReflectionResult>,
    ctx: &TaskContext,
) -> Result<Decision, DmaError> {
    let b = decide_bindings(obs, prev, ctx);
    let mut bad_action = None;
    let r = gw.complete_validated(TemplateId::Decide, &b, |f| {
        let raw = f.first("action").unwrap_or_default();
        match parse_action(raw) {
            Ok(action) => Ok(Decision {
                state_desc: f.first("state").unwrap_or_default().trim().to_string(),
                plan: f.first("plan").unwrap_or_default().trim().to_string(),
                action,
            }),
            Err(e) => {
                bad_action = Some(raw.trim().to_string());
                Err(GatewayError::SchemaViolation(e.to_string()))
            }
        }
    });
    match (r, bad_action) {
        (Ok(d), _) => Ok(d),
        (Err(GatewayError::ParseExhausted { .. }), Some(a)) => Err(DmaError::InvalidAction(a)),
        (Err(e), _) => Err(e.into()),
    }
}

pub fn parse_action(text: &str) -> Result<Action, DmaError> {
    Action::parse(text).map_err(|_| DmaError::InvalidAction(text.trim().to_string()))
}

/// Scores how well each element matches a click description.
pub trait Locator: Send + Sync {
    fn score(&self, obs: &Observation, description: &str) -> Vec<(String, f64)>;

    /// Minimum score the winner must exceed.
    fn threshold(&self) -> f64;
}

/// Deterministic scoring over the element model: a quoted exact label
/// scores 10, an unquoted label mention 5, a matching role noun 1, and a
/// satisfied neighbor cue ("right of X", "below X") 3.
#[derive(Debug, Clone, Copy)]
pub struct SimLocator {
    pub threshold: f64,
    pub scale: f64,
}

impl Default for SimLocator {
    fn default() -> Self {
        Self {
            threshold: 4.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relation {
    RightOf,
    LeftOf,
    Above,
    Below,
    Near,
}

const CUES: [(&str, Relation); 8] = [
    ("to the right of", Relation::RightOf),
    ("right of", Relation::RightOf),
    ("to the left of", Relation::LeftOf),
    ("left of", Relation::LeftOf),
    ("above", Relation::Above),
    ("below", Relation::Below),
    ("under", Relation::Below),
    ("next to", Relation::Near),
];

/// Splits a description into the part naming the target and the first
/// neighbor cue. Quoted text is never taken for a cue.
fn split_cue(desc: &str) -> (String, Option<(Relation, String)>) {
    let d = desc.to_lowercase();
    let mut quote = None;
    let masked: String = d
        .chars()
        .map(|c| match (quote, c) {
            (None, '\'' | '"') => {
                quote = Some(c);
                c
            }
            (Some(q), c) if c == q => {
                quote = None;
                c
            }
            (Some(_), c) => {
                if c.is_ascii() {
                    '_'
                } else {
                    c
                }
            }
            (None, c) => c,
        })
        .collect();
    let found = CUES
        .iter()
        .filter_map(|(p, r)| masked.find(p).map(|i| (i, p.len(), *r)))
        .min_by_key(|(i, len, _)| (*i, usize::MAX - len));
    match found {
        Some((i, len, rel)) => {
            let mut head = d[..i].to_string();
            if let Some(j) = masked[..i].rfind("located") {
                head.truncate(j);
            }
            (head, Some((rel, d[i + len..].to_string())))
        }
        None => (d, None),
    }
}

fn quoted(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for q in ['\'', '"'] {
        let parts: Vec<&str> = text.split(q).collect();
        for (i, p) in parts.iter().enumerate() {
            if i % 2 == 1 && i + 1 < parts.len() {
                out.push(p.trim().to_string());
            }
        }
    }
    out
}

fn satisfies(e: &UiElement, anchor: &UiElement, rel: Relation) -> bool {
    let (ex, ey) = e.bounds.center();
    let (ax, ay) = anchor.bounds.center();
    match rel {
        Relation::RightOf => e.bounds.same_row(&anchor.bounds) && ex > ax,
        Relation::LeftOf => e.bounds.same_row(&anchor.bounds) && ex < ax,
        Relation::Above => ey < ay && e.bounds.same_column(&anchor.bounds),
        Relation::Below => ey > ay && e.bounds.same_column(&anchor.bounds),
        Relation::Near => e.bounds.same_row(&anchor.bounds) || e.bounds.same_column(&anchor.bounds),
    }
}

impl Locator for SimLocator {
    fn score(&self, obs: &Observation, description: &str) -> Vec<(String, f64)> {
        let (head, cue) = split_cue(description);
        let quotes = quoted(&head);
        let words: Vec<&str> = head
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let anchor = cue.as_ref().and_then(|(_, rest)| {
            obs.elements
                .iter()
                .filter(|a| a.label.len() >= 2 && rest.contains(&a.label.to_lowercase()))
                .max_by_key(|a| a.label.len())
        });
        obs.elements
            .iter()
            .map(|e| {
                let label = e.label.to_lowercase();
                let mut s = 0.0;
                if !label.is_empty() {
                    if quotes.contains(&label) {
                        s += 10.0;
                    } else if label.len() >= 2 && head.contains(&label) {
                        s += 5.0;
                    }
                }
                if e.role.nouns().iter().any(|n| words.contains(n)) {
                    s += 1.0;
                }
                if let (Some((rel, _)), Some(a)) = (&cue, anchor) {
                    if a.element_id != e.element_id && satisfies(e, a, *rel) {
                        s += 3.0;
                    }
                }
                (e.element_id.clone(), s * self.scale)
            })
            .collect()
    }

    fn threshold(&self) -> f64 {
        self.threshold * self.scale
    }
}

/// Winner of a scoring: must exceed the threshold and beat the runner-up
/// strictly.
pub fn select(scores: &[(String, f64)], threshold: f64, description: &str) -> Result<String, LocateError> {
    let best = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() || best <= threshold {
        return Err(LocateError::NoMatch(description.to_string()));
    }
    let top: Vec<String> = scores
        .iter()
        .filter(|(_, s)| *s == best)
        .map(|(id, _)| id.clone())
        .collect();
    if top.len() > 1 {
        return Err(LocateError::Ambiguous(top));
    }
    Ok(top.into_iter().next().expect("one winner"))
}

fn point_of(obs: &Observation, id: &str) -> ScreenPoint {
    let e = obs.element(id).expect("selected element exists");
    let (x, y) = e.bounds.center();
    ScreenPoint {
        x,
        y,
        element_id: id.to_string(),
    }
}

/// Resolves a click description to the center of one element.
pub fn locate_target(obs: &Observation, description: &str, locator: &dyn Locator) -> Result<ScreenPoint, LocateError> {
    let scores = locator.score(obs, description);
    let id = select(&scores, locator.threshold(), description)?;
    Ok(point_of(obs, &id))
}

/// Resolution delegated to the generator backend.
pub fn locate_with_backend(gw: &mut Gateway, obs: &Observation, description: &str) -> Result<ScreenPoint, DmaError> {
    if obs.elements.is_empty() {
        return Err(LocateError::NoMatch(description.to_string()).into());
    }
    let b = bind(vec![("description", description.to_string()), ("screen", obs.render())]);
    let f = gw.complete_tagged(TemplateId::Locate, &b)?;
    let id = f.first("element_id").unwrap_or_default().trim();
    if obs.element(id).is_none() {
        return Err(LocateError::NoMatch(description.to_string()).into());
    }
    Ok(point_of(obs, id))
}

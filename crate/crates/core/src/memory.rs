//! Shared memory: long-term operating knowledge and short-term per-session
//! state, plus assembly of the decision context.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    trajectory_window, HistorySummary, Instruction, Intent, SlotSet, SubtaskList, TaskContext, TrajectoryStep,
};
use crate::ima::Inquiry;
use crate::ra::ReflectionResult;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("session has not been preprocessed (no clarified instruction)")]
    NotPreprocessed,
    #[error("step index {got} does not follow history length {expected}")]
    IndexGap { expected: usize, got: usize },
    #[error("slot revision {got} is older than stored revision {stored}")]
    StaleRevision { stored: u64, got: u64 },
    #[error("knowledge file {path}: {reason}")]
    BadKnowledgeFile { path: String, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    PhoneOperation,
    AppSpecific,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub kind: KnowledgeKind,
    pub app: Option<String>,
    pub content: String,
}

impl KnowledgeEntry {
    pub fn phone(content: impl Into<String>) -> Self {
        Self {
            kind: KnowledgeKind::PhoneOperation,
            app: None,
            content: content.into(),
        }
    }

    pub fn app(app: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            kind: KnowledgeKind::AppSpecific,
            app: Some(app.into()),
            content: content.into(),
        }
    }

    /// Parses a knowledge document: a `---` delimited front matter with
    /// `kind:` and optional `app:` lines, followed by the body.
    pub fn parse_document(text: &str) -> Result<Self, String> {
        let rest = text.trim_start().strip_prefix("---").ok_or("missing front matter")?;
        let (front, body) = rest.split_once("\n---").ok_or("unterminated front matter")?;
        let mut kind = None;
        let mut app = None;
        for line in front.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| format!("bad front matter line `{line}`"))?;
            match k.trim() {
                "kind" => {
                    kind = Some(match v.trim() {
                        "phone_operation" => KnowledgeKind::PhoneOperation,
                        "app_specific" => KnowledgeKind::AppSpecific,
                        other => return Err(format!("unknown kind `{other}`")),
                    })
                }
                "app" => app = Some(v.trim().to_string()),
                other => return Err(format!("unknown front matter key `{other}`")),
            }
        }
        let kind = kind.ok_or("front matter lacks `kind`")?;
        match (kind, &app) {
            (KnowledgeKind::AppSpecific, None) => return Err("app_specific entry needs `app`".into()),
            (KnowledgeKind::PhoneOperation, Some(_)) => return Err("phone_operation entry must not name an app".into()),
            _ => {}
        }
        let body = body.trim_start_matches('-').trim();
        Ok(Self {
            kind,
            app,
            content: body.to_string(),
        })
    }
}

/// Long-term memory. Read-only once loaded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    entries: Vec<KnowledgeEntry>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `*.md` document in `dir` in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, MemoryError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "md"))
            .collect();
        paths.sort();
        let mut kb = Self::new();
        for p in paths {
            let text = fs::read_to_string(&p)?;
            let entry = KnowledgeEntry::parse_document(&text).map_err(|reason| MemoryError::BadKnowledgeFile {
                path: p.display().to_string(),
                reason,
            })?;
            kb.entries.push(entry);
        }
        Ok(kb)
    }

    pub fn inject_knowledge(&mut self, entries: Vec<KnowledgeEntry>) -> usize {
        let n = entries.len();
        self.entries.extend(entries);
        n
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn filter(&self, kind: KnowledgeKind, app: Option<&str>) -> Vec<&KnowledgeEntry> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .filter(|e| match (kind, app) {
                (KnowledgeKind::AppSpecific, Some(a)) => e.app.as_deref().is_some_and(|x| x.eq_ignore_ascii_case(a)),
                (KnowledgeKind::AppSpecific, None) => false,
                (KnowledgeKind::PhoneOperation, _) => true,
            })
            .collect()
    }

    /// All phone-operation entries plus the app-specific ones for `app`.
    pub fn for_app(&self, app: Option<&str>) -> Vec<KnowledgeEntry> {
        self.entries
            .iter()
            .filter(|e| match e.kind {
                KnowledgeKind::PhoneOperation => true,
                KnowledgeKind::AppSpecific => match (app, e.app.as_deref()) {
                    (Some(a), Some(b)) => a.eq_ignore_ascii_case(b),
                    _ => false,
                },
            })
            .cloned()
            .collect()
    }
}

pub fn render_knowledge(entries: &[KnowledgeEntry], kind: KnowledgeKind) -> String {
    let lines: Vec<_> = entries
        .iter()
        .filter(|e| e.kind == kind)
        .map(|e| format!("- {}", e.content.replace('\n', " ")))
        .collect();
    if lines.is_empty() {
        "(none)".into()
    } else {
        lines.join("\n")
    }
}

/// Short-term memory of one session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionStore {
    pub instruction: Instruction,
    pub intent: Option<Intent>,
    slots: SlotSet,
    pub subtasks: SubtaskList,
    history: Vec<TrajectoryStep>,
    pub summary: HistorySummary,
    pub reflections: Vec<ReflectionResult>,
    pub pending_inquiries: VecDeque<Inquiry>,
    #[serde(skip)]
    knowledge: Arc<KnowledgeBase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepAck {
    pub t: usize,
}

impl SessionStore {
    pub fn new(instruction: Instruction, knowledge: Arc<KnowledgeBase>, summary_max: usize) -> Self {
        Self {
            instruction,
            intent: None,
            slots: SlotSet::new(),
            subtasks: SubtaskList::default(),
            history: Vec::new(),
            summary: HistorySummary::empty(summary_max),
            reflections: Vec::new(),
            pending_inquiries: VecDeque::new(),
            knowledge,
        }
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.knowledge
    }

    pub fn slots(&self) -> &SlotSet {
        &self.slots
    }

    /// Stores a new slot set; rejects a revision older than the stored one.
    pub fn set_slots(&mut self, slots: SlotSet) -> Result<(), MemoryError> {
        if slots.revision() < self.slots.revision() {
            return Err(MemoryError::StaleRevision {
                stored: self.slots.revision(),
                got: slots.revision(),
            });
        }
        self.slots = slots;
        Ok(())
    }

    pub fn history(&self) -> &[TrajectoryStep] {
        &self.history
    }

    pub fn t(&self) -> usize {
        self.history.len()
    }

    pub fn app(&self) -> Option<&str> {
        self.slots.value_of("app")
    }

    pub fn record_step(&mut self, step: TrajectoryStep) -> Result<StepAck, MemoryError> {
        let t = self.history.len();
        if step.index != t {
            return Err(MemoryError::IndexGap {
                expected: t,
                got: step.index,
            });
        }
        self.history.push(step);
        Ok(StepAck { t: t + 1 })
    }

    pub fn last_reflection(&self) -> Option<&ReflectionResult> {
        self.reflections.last()
    }

    pub fn snapshot_context(&self, n: usize) -> Result<TaskContext, MemoryError> {
        let clarified = self.instruction.clarified.clone().ok_or(MemoryError::NotPreprocessed)?;
        let t = self.t();
        Ok(TaskContext {
            clarified_instruction: clarified,
            subtasks: self.subtasks.clone(),
            slots: self.slots.clone(),
            knowledge: self.knowledge.for_app(self.app()),
            summary: self.summary.clone(),
            window: trajectory_window(&self.history, t, n).to_vec(),
            t,
        })
    }

    pub fn export_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session store serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_slot_set, Action};

    fn step(i: usize) -> TrajectoryStep {
        TrajectoryStep {
            index: i,
            screen_id: "s".into(),
            state_desc: String::new(),
            plan: String::new(),
            action: Action::Back,
            exec_report: String::new(),
            reflection_ref: None,
        }
    }

    fn kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.inject_knowledge(vec![
            KnowledgeEntry::phone("Tap an input field before typing."),
            KnowledgeEntry::app("Meituan", "Search from the home page search box."),
            KnowledgeEntry::app("Meituan", "Specifications are chosen on a sheet."),
            KnowledgeEntry::app("Ctrip", "Flights are under the Flights tab."),
        ]);
        kb
    }

    #[test]
    fn inject_and_filter() {
        let mut kb = KnowledgeBase::new();
        let n = kb.inject_knowledge(vec![
            KnowledgeEntry::phone("a"),
            KnowledgeEntry::app("Meituan", "b"),
            KnowledgeEntry::app("Meituan", "c"),
        ]);
        assert_eq!(n, 3);
        assert_eq!(kb.filter(KnowledgeKind::AppSpecific, Some("Meituan")).len(), 2);
        assert_eq!(kb.inject_knowledge(vec![]), 0);
        kb.inject_knowledge(vec![KnowledgeEntry::phone("a")]);
        assert_eq!(kb.filter(KnowledgeKind::PhoneOperation, None).len(), 2);
    }

    #[test]
    fn snapshot_requires_preprocessing() {
        let s = SessionStore::new(Instruction::new("x"), Arc::new(kb()), 1200);
        assert!(matches!(s.snapshot_context(4), Err(MemoryError::NotPreprocessed)));
    }

    #[test]
    fn snapshot_window_and_knowledge() {
        let mut s = SessionStore::new(Instruction::new("x"), Arc::new(kb()), 1200);
        s.instruction.clarified = Some("x".into());
        s.set_slots(make_slot_set(vec![("app", Some("Ctrip"))]).unwrap())
            .unwrap();
        for i in 0..6 {
            s.record_step(step(i)).unwrap();
        }
        let c = s.snapshot_context(4).unwrap();
        assert_eq!(c.window.iter().map(|s| s.index).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        let contents: Vec<_> = c.knowledge.iter().map(|k| k.content.as_str()).collect();
        assert_eq!(
            contents,
            vec![
                "Tap an input field before typing.",
                "Flights are under the Flights tab."
            ]
        );
        assert_eq!(s.snapshot_context(4).unwrap(), c);
    }

    #[test]
    fn record_step_rejects_gaps() {
        let mut s = SessionStore::new(Instruction::new("x"), Arc::new(kb()), 1200);
        assert_eq!(s.record_step(step(0)).unwrap().t, 1);
        s.record_step(step(1)).unwrap();
        s.record_step(step(2)).unwrap();
        assert!(matches!(
            s.record_step(step(5)),
            Err(MemoryError::IndexGap { expected: 3, got: 5 })
        ));
        s.record_step(step(3)).unwrap();
        assert_eq!(s.history().len(), 4);
    }

    #[test]
    fn stale_revision_rejected() {
        let mut s = SessionStore::new(Instruction::new("x"), Arc::new(kb()), 1200);
        let a = make_slot_set(vec![("a", Some("1"))]).unwrap();
        let b = a.apply_supplement(vec![]).unwrap();
        s.set_slots(b).unwrap();
        assert!(matches!(s.set_slots(a), Err(MemoryError::StaleRevision { .. })));
    }

    #[test]
    fn parse_knowledge_document() {
        let e = KnowledgeEntry::parse_document("---\nkind: app_specific\napp: Meituan\n---\nUse the search box.\n")
            .unwrap();
        assert_eq!(e, KnowledgeEntry::app("Meituan", "Use the search box."));
        assert!(KnowledgeEntry::parse_document("---\nkind: app_specific\n---\nx").is_err());
        assert!(KnowledgeEntry::parse_document("---\nkind: phone_operation\napp: X\n---\nx").is_err());
        assert!(KnowledgeEntry::parse_document("no front matter").is_err());
    }
}

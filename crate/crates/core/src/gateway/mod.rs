//! Generator gateway: prompt templates, backends, tag parsing and the retry
//! loop that turns raw completions into typed fields.

mod backend;
mod retry;
mod tags;
mod template;

#[cfg(feature = "http")]
pub use backend::HttpBackend;
pub use backend::{
    digest, write_fixture_file, Backend, BackendConfig, BackendKind, CompletionRequest, FixtureRecord, Recorder,
    ScriptedBackend,
};
pub use retry::{
    attempt_bindings, complete_with_retry, CompletionLog, Gateway, DEFAULT_MAX_ATTEMPTS, FORMAT_REMINDER_BINDING,
};
pub use tags::{parse_tagged, TagSchema, TaggedFields};
pub use template::{placeholders, render_body, PromptTemplate, TemplateSet};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Named values substituted into a template.
pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("missing binding `{0}`")]
    MissingBinding(String),
    #[error("template `{template}` uses `{placeholder}`, which is not in its binding contract")]
    UnknownPlaceholder { template: String, placeholder: String },
    #[error("template file {0} not found")]
    TemplateMissing(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no fixture for {template_id} digest {digest}")]
    FixtureMiss { template_id: String, digest: String },
    #[error("conflicting fixtures for digest {0}")]
    FixtureConflict(String),
    #[error("bad fixture file: {0}")]
    BadFixture(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("<num> declares {declared} groups but {found} were found")]
    CountMismatch { declared: usize, found: usize },
    #[error("malformed tags: {0}")]
    MalformedTags(String),
    #[error("no parseable response after {attempts} attempts ({reason})")]
    ParseExhausted {
        attempts: usize,
        reason: String,
        last_raw: String,
    },
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("config: {0}")]
    Config(String),
}

impl GatewayError {
    /// Errors that a second attempt with a format reminder may fix.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            GatewayError::SchemaViolation(_) | GatewayError::CountMismatch { .. } | GatewayError::MalformedTags(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Intent,
    Preprocess,
    SlotGen,
    InstructionUpdate,
    Dilemma,
    Decompose,
    Decide,
    Reflect,
    Summarize,
    Locate,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Intent,
        TemplateId::Preprocess,
        TemplateId::SlotGen,
        TemplateId::InstructionUpdate,
        TemplateId::Dilemma,
        TemplateId::Decompose,
        TemplateId::Decide,
        TemplateId::Reflect,
        TemplateId::Summarize,
        TemplateId::Locate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Intent => "intent",
            TemplateId::Preprocess => "preprocess",
            TemplateId::SlotGen => "slot_gen",
            TemplateId::InstructionUpdate => "instruction_update",
            TemplateId::Dilemma => "dilemma",
            TemplateId::Decompose => "decompose",
            TemplateId::Decide => "decide",
            TemplateId::Reflect => "reflect",
            TemplateId::Summarize => "summarize",
            TemplateId::Locate => "locate",
        }
    }

    pub fn parse(s: &str) -> Option<TemplateId> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    /// Names a prompt of this template may reference.
    pub fn contract(self) -> &'static [&'static str] {
        match self {
            TemplateId::Intent => &["intent_list", "taskIns"],
            TemplateId::Preprocess => &["taskIns", "intent"],
            TemplateId::SlotGen => &["task", "subtask", "slots_info", "screen"],
            TemplateId::InstructionUpdate => &["taskIns", "slots_info"],
            TemplateId::Dilemma => &["dilemma_description", "task_ins", "slot_info", "screen"],
            TemplateId::Decompose => &["task_ins", "app_knowledge"],
            TemplateId::Decide => &[
                "phone_knowledge",
                "task_ins",
                "actionReflection",
                "subtasks",
                "slot_info",
                "trajectory",
                "action_history_summarization",
                "app_knowledge",
                "screen",
            ],
            TemplateId::Reflect => &[
                "task_ins",
                "slot_info",
                "app_knowledge",
                "subtasks",
                "action_history_summarization",
                "trajectory",
                "plan",
                "last_action",
                "screen_before",
                "screen_after",
                "reflection_scope",
            ],
            TemplateId::Summarize => &["action_history_summarization", "trajectory", "max_chars"],
            TemplateId::Locate => &["description", "screen"],
        }
    }

    pub fn schema(self) -> TagSchema {
        match self {
            TemplateId::Intent => TagSchema {
                required: &["intent"],
                optional: &[],
                group_lead: None,
                count_tag: None,
            },
            TemplateId::Preprocess => TagSchema {
                required: &["num"],
                optional: &["slot_value", "inquiry"],
                group_lead: Some("slot_name"),
                count_tag: Some("num"),
            },
            TemplateId::SlotGen => TagSchema {
                required: &["num"],
                optional: &["screen_description", "thought", "inquiry"],
                group_lead: Some("slot_name"),
                count_tag: Some("num"),
            },
            TemplateId::InstructionUpdate => TagSchema {
                required: &["updated_task_ins"],
                optional: &[],
                group_lead: None,
                count_tag: None,
            },
            TemplateId::Dilemma => TagSchema {
                required: &["dilemma_type", "inquiry"],
                optional: &["thought", "update_info_name", "reason"],
                group_lead: None,
                count_tag: None,
            },
            TemplateId::Decompose => TagSchema {
                required: &[],
                optional: &["subtask"],
                group_lead: None,
                count_tag: None,
            },
            TemplateId::Decide => TagSchema {
                required: &["state", "plan", "action"],
                optional: &[],
                group_lead: None,
                count_tag: None,
            },
            TemplateId::Reflect => TagSchema {
                required: &["actionReflection", "whether_task_completed"],
                optional: &["effective", "advice", "consistency", "conflict", "completed_subtask"],
                group_lead: None,
                count_tag: None,
            },
            TemplateId::Summarize => TagSchema {
                required: &["action_history_summarization"],
                optional: &[],
                group_lead: None,
                count_tag: None,
            },
            TemplateId::Locate => TagSchema {
                required: &["element_id"],
                optional: &["reason"],
                group_lead: None,
                count_tag: None,
            },
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            max_tokens: 2048,
            seed: None,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams(format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params() {
        let p = GenParams::default();
        assert_eq!(p.temperature, 0.2);
        assert_eq!(p.max_tokens, 2048);
        assert!(p.validate().is_ok());
        assert!(GenParams { temperature: -1.0, ..p }.validate().is_err());
        assert!(GenParams { max_tokens: 0, ..p }.validate().is_err());
    }

    #[test]
    fn schema_tags_are_unique() {
        for t in TemplateId::ALL {
            let s = t.schema();
            let mut all: Vec<&str> = s.required.iter().chain(s.optional).copied().collect();
            all.extend(s.group_lead);
            all.extend(s.count_tag.filter(|c| !s.required.contains(c)));
            let n = all.len();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n, "{t}");
        }
    }

    #[test]
    fn template_id_names_roundtrip() {
        for t in TemplateId::ALL {
            assert_eq!(TemplateId::parse(t.as_str()), Some(t));
        }
    }
}

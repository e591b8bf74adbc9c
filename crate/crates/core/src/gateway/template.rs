use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Bindings, GatewayError, TagSchema, TemplateId, FORMAT_REMINDER_BINDING};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    /// Checks that every placeholder of `body` is in the template's binding
    /// contract.
    pub fn new(id: TemplateId, body: impl Into<String>) -> Result<Self, GatewayError> {
        let body = body.into();
        for p in placeholders(&body) {
            if !id.contract().contains(&p.as_str()) {
                return Err(GatewayError::UnknownPlaceholder {
                    template: id.to_string(),
                    placeholder: p,
                });
            }
        }
        Ok(Self { id, body })
    }

    pub fn schema(&self) -> TagSchema {
        self.id.schema()
    }

    pub fn render(&self, bindings: &Bindings) -> Result<String, GatewayError> {
        let mut out = render_body(&self.body, bindings)?;
        if let Some(reminder) = bindings.get(FORMAT_REMINDER_BINDING) {
            out.push_str("\n\n## Format reminder\n");
            out.push_str(reminder);
        }
        Ok(out)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits `body` into literal text and `{name}` placeholders. Braces that do
/// not enclose an identifier are literal.
fn pieces(body: &str) -> Vec<(bool, &str)> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                out.push((false, &rest[..open]));
                out.push((true, &after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push((false, &rest[..open + 1]));
                rest = after;
            }
        }
    }
    out.push((false, rest));
    out
}

/// Placeholder names of `body` in order of first appearance.
pub fn placeholders(body: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for (is_ph, s) in pieces(body) {
        if is_ph && !seen.iter().any(|x: &String| x == s) {
            seen.push(s.to_string());
        }
    }
    seen
}

/// Exact substitution of every placeholder; extra bindings are ignored.
pub fn render_body(body: &str, bindings: &Bindings) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(body.len());
    for (is_ph, s) in pieces(body) {
        if is_ph {
            let v = bindings
                .get(s)
                .ok_or_else(|| GatewayError::MissingBinding(s.to_string()))?;
            out.push_str(v);
        } else {
            out.push_str(s);
        }
    }
    Ok(out)
}

/// All prompt templates of one deployment.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

macro_rules! builtin {
    ($name:literal) => {
        include_str!(concat!("../../../../assets/templates/", $name, ".txt"))
    };
}

impl TemplateSet {
    /// Templates shipped with the crate.
    pub fn builtin() -> Self {
        let bodies = [
            (TemplateId::Intent, builtin!("intent")),
            (TemplateId::Preprocess, builtin!("preprocess")),
            (TemplateId::SlotGen, builtin!("slot_gen")),
            (TemplateId::InstructionUpdate, builtin!("instruction_update")),
            (TemplateId::Dilemma, builtin!("dilemma")),
            (TemplateId::Decompose, builtin!("decompose")),
            (TemplateId::Decide, builtin!("decide")),
            (TemplateId::Reflect, builtin!("reflect")),
            (TemplateId::Summarize, builtin!("summarize")),
            (TemplateId::Locate, builtin!("locate")),
        ];
        let templates = bodies
            .into_iter()
            .map(|(id, body)| (id, PromptTemplate::new(id, body).expect("builtin template is valid")))
            .collect();
        Self { templates }
    }

    /// Loads `<template_id>.txt` for every template from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, GatewayError> {
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            let body =
                fs::read_to_string(&path).map_err(|_| GatewayError::TemplateMissing(path.display().to_string()))?;
            templates.insert(id, PromptTemplate::new(id, body)?);
        }
        Ok(Self { templates })
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render_prompt(&self, id: TemplateId, bindings: &Bindings) -> Result<String, GatewayError> {
        self.get(id).render(bindings)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

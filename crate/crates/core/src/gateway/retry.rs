use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    digest, parse_tagged, Backend, Bindings, CompletionRequest, GatewayError, GenParams, TaggedFields, TemplateId,
    TemplateSet,
};

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;
/// Binding added on retries; templates append it after the body.
pub const FORMAT_REMINDER_BINDING: &str = "format_reminder";

fn reminder(attempt: usize) -> String {
    format!(
        "Attempt {attempt}: the previous reply did not follow the required output format. \
         Reply again using exactly the tags listed under the output format."
    )
}

/// Bindings actually sent on `attempt` (1-based).
pub fn attempt_bindings(bindings: &Bindings, attempt: usize) -> Bindings {
    let mut b = bindings.clone();
    if attempt > 1 {
        b.insert(FORMAT_REMINDER_BINDING.to_string(), reminder(attempt));
    }
    b
}

/// One backend call made through a [`Gateway`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionLog {
    pub template_id: TemplateId,
    pub digest: String,
    pub attempt: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Calls the backend until the response parses and passes `validate`, or
/// `max_attempts` is used up. Backend errors are not retried.
#[allow(clippy::too_many_arguments)]
fn run_attempts<T>(
    backend: &dyn Backend,
    templates: &TemplateSet,
    id: TemplateId,
    bindings: &Bindings,
    params: GenParams,
    max_attempts: usize,
    log: &mut Vec<CompletionLog>,
    mut validate: impl FnMut(&TaggedFields) -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    let max_attempts = max_attempts.max(1);
    let mut last_raw = String::new();
    let mut reason = String::new();
    for attempt in 1..=max_attempts {
        let b = attempt_bindings(bindings, attempt);
        let prompt = templates.render_prompt(id, &b)?;
        let d = digest(id, &b);
        let req = CompletionRequest {
            template_id: id,
            bindings: b,
            prompt,
            params,
        };
        let raw = match backend.complete(&req) {
            Ok(r) => r,
            Err(e) => {
                log.push(CompletionLog {
                    template_id: id,
                    digest: d,
                    attempt,
                    ok: false,
                    error: Some(e.to_string()),
                });
                return Err(e);
            }
        };
        let outcome = parse_tagged(&raw, &id.schema()).and_then(|f| validate(&f));
        match outcome {
            Ok(v) => {
                log.push(CompletionLog {
                    template_id: id,
                    digest: d,
                    attempt,
                    ok: true,
                    error: None,
                });
                return Ok(v);
            }
            Err(e) if e.is_format_error() => {
                tracing::debug!(template = %id, attempt, error = %e, "unparseable completion");
                reason = e.to_string();
                log.push(CompletionLog {
                    template_id: id,
                    digest: d,
                    attempt,
                    ok: false,
                    error: Some(reason.clone()),
                });
                last_raw = raw;
            }
            Err(e) => return Err(e),
        }
    }
    Err(GatewayError::ParseExhausted {
        attempts: max_attempts,
        reason,
        last_raw,
    })
}

/// Free-standing completion with retries: returns the parsed fields of the
/// first response that matches the template schema.
pub fn complete_with_retry(
    backend: &dyn Backend,
    templates: &TemplateSet,
    id: TemplateId,
    bindings: &Bindings,
    params: GenParams,
    max_attempts: usize,
) -> Result<TaggedFields, GatewayError> {
    let mut log = Vec::new();
    run_attempts(backend, templates, id, bindings, params, max_attempts, &mut log, |f| {
        Ok(f.clone())
    })
}

/// Per-session handle on a backend and template set. Keeps a log of every
/// call so the orchestrator can put them in the trace.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    templates: Arc<TemplateSet>,
    pub params: GenParams,
    pub max_attempts: usize,
    log: Vec<CompletionLog>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, templates: Arc<TemplateSet>, params: GenParams) -> Self {
        Self {
            backend,
            templates,
            params,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            log: Vec::new(),
        }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, GatewayError> {
        self.templates.render_prompt(id, bindings)
    }

    pub fn complete_tagged(&mut self, id: TemplateId, bindings: &Bindings) -> Result<TaggedFields, GatewayError> {
        self.complete_validated(id, bindings, |f| Ok(f.clone()))
    }

    /// Like [`complete_with_retry`], with a validator that may reject a
    /// parsed response by returning a format error (which triggers a retry).
    pub fn complete_validated<T>(
        &mut self,
        id: TemplateId,
        bindings: &Bindings,
        validate: impl FnMut(&TaggedFields) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        run_attempts(
            self.backend.as_ref(),
            &self.templates,
            id,
            bindings,
            self.params,
            self.max_attempts,
            &mut self.log,
            validate,
        )
    }

    pub fn drain_log(&mut self) -> Vec<CompletionLog> {
        std::mem::take(&mut self.log)
    }

    pub fn log(&self) -> &[CompletionLog] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;

    fn bindings() -> Bindings {
        [("taskIns", "order tea"), ("intent_list", "- Takeaway Delivery")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn first_try() {
        let mut s = ScriptedBackend::new();
        s.insert(TemplateId::Intent, &bindings(), "<intent>Takeaway Delivery</intent>");
        let f = complete_with_retry(
            &s,
            &TemplateSet::builtin(),
            TemplateId::Intent,
            &bindings(),
            GenParams::default(),
            3,
        )
        .unwrap();
        assert_eq!(f.first("intent"), Some("Takeaway Delivery"));
        assert_eq!(s.calls(), 1);
    }

    #[test]
    fn malformed_then_valid() {
        let mut s = ScriptedBackend::new();
        s.insert(TemplateId::Intent, &bindings(), "I think it is takeaway");
        s.insert(
            TemplateId::Intent,
            &attempt_bindings(&bindings(), 2),
            "<intent>Takeaway Delivery</intent>",
        );
        let f = complete_with_retry(
            &s,
            &TemplateSet::builtin(),
            TemplateId::Intent,
            &bindings(),
            GenParams::default(),
            3,
        )
        .unwrap();
        assert_eq!(f.first("intent"), Some("Takeaway Delivery"));
        assert_eq!(s.calls(), 2);
    }

    #[test]
    fn always_malformed_exhausts() {
        let mut s = ScriptedBackend::new();
        for a in 1..=3 {
            s.insert(
                TemplateId::Intent,
                &attempt_bindings(&bindings(), a),
                format!("<intent>bad {a}"),
            );
        }
        let err = complete_with_retry(
            &s,
            &TemplateSet::builtin(),
            TemplateId::Intent,
            &bindings(),
            GenParams::default(),
            3,
        )
        .unwrap_err();
        match err {
            GatewayError::ParseExhausted { attempts, last_raw, .. } => {
                assert_eq!(attempts, 3);
                assert_eq!(last_raw, "<intent>bad 3");
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(s.calls(), 3);
    }

    #[test]
    fn backend_errors_are_not_retried() {
        let s = ScriptedBackend::new();
        let mut g = Gateway::new(Arc::new(s), Arc::new(TemplateSet::builtin()), GenParams::default());
        assert!(matches!(
            g.complete_tagged(TemplateId::Intent, &bindings()),
            Err(GatewayError::FixtureMiss { .. })
        ));
        assert_eq!(g.drain_log().len(), 1);
        assert!(g.log().is_empty());
    }

    #[test]
    fn retry_prompt_carries_reminder() {
        let t = TemplateSet::builtin();
        let p1 = t
            .render_prompt(TemplateId::Intent, &attempt_bindings(&bindings(), 1))
            .unwrap();
        let p2 = t
            .render_prompt(TemplateId::Intent, &attempt_bindings(&bindings(), 2))
            .unwrap();
        assert!(!p1.contains("Format reminder"));
        assert!(p2.starts_with(&p1));
        assert!(p2.contains("Attempt 2"));
    }
}

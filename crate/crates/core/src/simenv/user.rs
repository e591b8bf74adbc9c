use super::Scenario;
use crate::domain::normalize_key;
use crate::ima::{InquiryKind, Question, Reply};

/// Scripted user that answers inquiries from a scenario's gold slots. A
/// question about a slot the scenario does not know is declined.
#[derive(Debug, Clone)]
pub struct SimUser {
    answers: Vec<(String, String)>,
}

impl SimUser {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            answers: scenario
                .gold()
                .into_iter()
                .map(|g| (normalize_key(&g.key), g.value))
                .collect(),
        }
    }

    pub fn answer(&self, q: &Question) -> Reply {
        if q.kind == InquiryKind::Takeover {
            return Reply::TakeoverDone;
        }
        let Some(k) = q.slot_key.as_deref().map(normalize_key) else {
            return Reply::Declined;
        };
        self.answers
            .iter()
            .find(|(key, _)| *key == k)
            .map_or(Reply::Declined, |(_, v)| Reply::Value(v.clone()))
    }
}

use serde::{Deserialize, Serialize};

use super::{DomainError, SlotSet};

/// Phrase a subtask must contain when the user has to act (login,
/// verification, payment).
pub const DEFAULT_USER_MARKER: &str = "Request User";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub raw: String,
    pub clarified: Option<String>,
}

impl Instruction {
    pub fn new(raw: impl Into<String>) -> Self {
        Self {
            raw: raw.into(),
            clarified: None,
        }
    }

    /// Text agents should act on: the clarified form when available.
    pub fn effective(&self) -> &str {
        self.clarified.as_deref().unwrap_or(&self.raw)
    }

    /// Slot values (non-null) that `text` fails to mention.
    pub fn missing_values(text: &str, slots: &SlotSet) -> Vec<String> {
        let hay = text.to_lowercase();
        slots
            .slots()
            .iter()
            .filter_map(|s| s.value())
            .filter(|v| !hay.contains(&v.to_lowercase()))
            .map(str::to_string)
            .collect()
    }

    pub fn with_clarified(&self, clarified: &str, slots: &SlotSet) -> Result<Instruction, DomainError> {
        let missing = Self::missing_values(clarified, slots);
        if !missing.is_empty() {
            return Err(DomainError::ClarificationIncomplete(missing));
        }
        Ok(Instruction {
            raw: self.raw.clone(),
            clarified: Some(clarified.trim().to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub label: String,
}

/// The configured set of admissible intents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSpace {
    pub labels: Vec<String>,
}

impl Default for IntentSpace {
    fn default() -> Self {
        Self {
            labels: vec![
                "Flight Booking".into(),
                "Takeaway Delivery".into(),
                "Hotel Reservation".into(),
                "Online Shopping".into(),
            ],
        }
    }
}

impl IntentSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        Self {
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }

    /// Canonical intent for a generator-produced label, if admissible.
    pub fn resolve(&self, label: &str) -> Option<Intent> {
        let l = label.trim().to_lowercase();
        self.labels
            .iter()
            .find(|c| c.to_lowercase() == l)
            .map(|c| Intent { label: c.clone() })
    }

    pub fn render(&self) -> String {
        self.labels
            .iter()
            .map(|l| format!("- {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub text: String,
    pub requires_user: bool,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubtaskList {
    pub items: Vec<Subtask>,
}

impl SubtaskList {
    pub fn from_texts<S: AsRef<str>>(texts: &[S], marker: &str) -> Self {
        let m = marker.to_lowercase();
        Self {
            items: texts
                .iter()
                .map(|t| {
                    let text = t.as_ref().trim().to_string();
                    Subtask {
                        requires_user: text.to_lowercase().contains(&m),
                        text,
                        completed: false,
                    }
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn completed_count(&self) -> usize {
        self.items.iter().filter(|s| s.completed).count()
    }

    pub fn all_completed(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|s| s.completed)
    }

    /// First subtask not yet completed.
    pub fn current(&self) -> Option<&Subtask> {
        self.items.iter().find(|s| !s.completed)
    }

    /// Marks the given (zero-based) indices completed; out-of-range indices
    /// are ignored.
    pub fn mark_completed(&mut self, indices: &[usize]) {
        for &i in indices {
            if let Some(s) = self.items.get_mut(i) {
                s.completed = true;
            }
        }
    }

    /// Numbered list with completion marks, as shown to generators.
    pub fn render(&self) -> String {
        self.items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("[{}] {}. {}", if s.completed { "x" } else { " " }, i + 1, s.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_slot_set;

    #[test]
    fn marker_sets_requires_user() {
        let l = SubtaskList::from_texts(
            &[
                "Open the Meituan app",
                "Request User to complete payment",
                "request user login",
            ],
            DEFAULT_USER_MARKER,
        );
        assert_eq!(
            l.items.iter().map(|s| s.requires_user).collect::<Vec<_>>(),
            vec![false, true, true]
        );
    }

    #[test]
    fn clarified_must_mention_values() {
        let slots = make_slot_set(vec![("app", Some("Meituan")), ("item", Some("milk tea"))]).unwrap();
        let i = Instruction::new("order tea");
        assert!(i.with_clarified("Order milk tea on meituan", &slots).is_ok());
        assert_eq!(
            i.with_clarified("Order tea", &slots).unwrap_err(),
            DomainError::ClarificationIncomplete(vec!["Meituan".into(), "milk tea".into()])
        );
    }

    #[test]
    fn intent_space_resolves_case_insensitively() {
        let z = IntentSpace::default();
        assert_eq!(z.resolve("takeaway delivery").unwrap().label, "Takeaway Delivery");
        assert!(z.resolve("Online Ride Booking").is_none());
    }
}

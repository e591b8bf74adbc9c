use serde::{Deserialize, Serialize};

use super::{Action, DomainError, SlotSet, SubtaskList};
use crate::memory::KnowledgeEntry;

pub const DEFAULT_WINDOW: usize = 4;
/// Summary length bound in characters (about 200 words).
pub const DEFAULT_SUMMARY_MAX: usize = 1200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    /// Screen the action was decided on.
    pub screen_id: String,
    pub state_desc: String,
    /// Expected goal of the action.
    pub plan: String,
    pub action: Action,
    pub exec_report: String,
    pub reflection_ref: Option<u64>,
}

impl TrajectoryStep {
    pub fn render(&self) -> String {
        format!(
            "step {} | state: {} | plan: {} | action: {} | action_result: {}",
            self.index, self.state_desc, self.plan, self.action, self.exec_report
        )
    }
}

/// The last `min(n, t)` of the first `t` steps of `history`.
pub fn trajectory_window(history: &[TrajectoryStep], t: usize, n: usize) -> &[TrajectoryStep] {
    let t = t.min(history.len());
    let start = t.saturating_sub(n);
    &history[start..t]
}

pub fn render_trajectory(steps: &[TrajectoryStep]) -> String {
    if steps.is_empty() {
        return "(no actions yet)".to_string();
    }
    steps.iter().map(TrajectoryStep::render).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub text: String,
    /// Last step index folded into the summary.
    pub covers_through: Option<usize>,
    pub max_len: usize,
}

impl Default for HistorySummary {
    fn default() -> Self {
        Self::empty(DEFAULT_SUMMARY_MAX)
    }
}

impl HistorySummary {
    pub fn empty(max_len: usize) -> Self {
        Self {
            text: String::new(),
            covers_through: None,
            max_len,
        }
    }

    pub fn new(text: impl Into<String>, covers_through: usize, max_len: usize) -> Result<Self, DomainError> {
        let text = text.into();
        let len = text.chars().count();
        if len > max_len {
            return Err(DomainError::SummaryTooLong { len, max: max_len });
        }
        Ok(Self {
            text,
            covers_through: Some(covers_through),
            max_len,
        })
    }

    pub fn render(&self) -> String {
        if self.text.is_empty() {
            "(none)".to_string()
        } else {
            self.text.clone()
        }
    }
}

/// Everything the decision maker conditions on besides the current screen and
/// the previous reflection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContext {
    pub clarified_instruction: String,
    pub subtasks: SubtaskList,
    pub slots: SlotSet,
    pub knowledge: Vec<KnowledgeEntry>,
    pub summary: HistorySummary,
    pub window: Vec<TrajectoryStep>,
    /// Number of steps taken so far.
    pub t: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(n: usize) -> Vec<TrajectoryStep> {
        (0..n)
            .map(|i| TrajectoryStep {
                index: i,
                screen_id: "s".into(),
                state_desc: String::new(),
                plan: String::new(),
                action: Action::Back,
                exec_report: String::new(),
                reflection_ref: None,
            })
            .collect()
    }

    fn idx(w: &[TrajectoryStep]) -> Vec<usize> {
        w.iter().map(|s| s.index).collect()
    }

    #[test]
    fn window_examples() {
        let h = steps(9);
        assert_eq!(idx(trajectory_window(&h, 9, 4)), vec![5, 6, 7, 8]);
        assert_eq!(idx(trajectory_window(&h[..2], 2, 4)), vec![0, 1]);
        assert!(trajectory_window(&[], 0, 4).is_empty());
        assert!(trajectory_window(&h, 9, 0).is_empty());
    }

    #[test]
    fn summary_bound() {
        assert!(HistorySummary::new("x".repeat(10), 3, 10).is_ok());
        assert_eq!(
            HistorySummary::new("x".repeat(11), 3, 10).unwrap_err(),
            DomainError::SummaryTooLong { len: 11, max: 10 }
        );
    }
}

use serde::{Deserialize, Serialize};

use super::judge::{gold_judge, normalize_text, satisfies, Cmp};
use super::{observe, DeviceState, PlanOp, Scenario, Screen};
use crate::domain::{Action, Direction, ElementRole, Observation, SlotSet};

/// Gold decision on a screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "snake_case")]
pub enum Expected {
    Click(String),
    Type(String),
    Slide(Direction),
    Back,
    Help,
    /// Nothing left to do here; any decision counts.
    Any,
}

impl Expected {
    /// Whether a decision (with the element its click resolved to) matches.
    pub fn matches(&self, action: &Action, element_id: Option<&str>) -> bool {
        match (self, action) {
            (Expected::Any, _) => true,
            (Expected::Click(id), Action::Click(_)) => element_id == Some(id.as_str()),
            (Expected::Type(v), Action::Type(t)) => normalize_text(v) == normalize_text(t),
            (Expected::Slide(d), Action::Slide(x)) => d == x,
            (Expected::Back, Action::Back) => true,
            (Expected::Help, Action::Help(_)) => true,
            _ => false,
        }
    }
}

/// Value the agent holds for the slot behind `attr`.
pub fn slot_value_for_attr<'a>(scenario: &Scenario, slots: &'a SlotSet, attr: &str) -> Option<(&'a str, Cmp)> {
    let g = scenario.slot_by_attr(attr)?;
    slots.value_of(&g.key).map(|v| (v, g.cmp))
}

fn option_matches(label: &str, committed: &str, want: &str) -> bool {
    satisfies(Cmp::Exact, want, committed) || satisfies(Cmp::Exact, want, label)
}

fn find_in(scenario: &Scenario, screen: &Screen, attr: &str, want: &str) -> Expected {
    let w = normalize_text(want);
    let hit = |s: &Screen| {
        s.elements
            .iter()
            .find(|e| {
                e.role != ElementRole::Input
                    && e.role != ElementRole::Text
                    && (e.attr.as_deref() == Some(attr) || e.deliver)
                    && (option_matches(&e.label, e.committed(), want) || normalize_text(&e.label).contains(&w))
            })
            .map(|e| e.id.clone())
    };
    if let Some(id) = hit(screen) {
        return Expected::Click(id);
    }
    for d in Direction::ALL {
        if let Some(edge) = screen.slide_edge(d) {
            if scenario.screen(&edge.to).and_then(hit).is_some() {
                return Expected::Slide(d);
            }
        }
    }
    Expected::Help
}

/// First unsatisfied op of the current screen's plan, given the slots the
/// agent holds.
pub fn expected_action(scenario: &Scenario, state: &DeviceState, slots: &SlotSet) -> Expected {
    let origin_attr = state.origin.as_ref().and_then(|(s, e)| {
        scenario
            .screen(s)
            .and_then(|s| s.element(e))
            .and_then(|e| e.attr.clone())
    });
    expected_on(
        scenario,
        &observe(scenario, state, false),
        origin_attr.as_deref(),
        slots,
        true,
    )
}

/// [`expected_action`] from what is visible on `obs`, with the picker
/// origin supplied by the caller. With `judge_checks` off, check ops are
/// treated as satisfied.
pub fn expected_on(
    scenario: &Scenario,
    obs: &Observation,
    origin_attr: Option<&str>,
    slots: &SlotSet,
    judge_checks: bool,
) -> Expected {
    let Some(screen) = scenario.screen(&obs.screen_id) else {
        return Expected::Any;
    };
    let attr_of = |id: &str| screen.element(id).and_then(|e| e.attr.clone());
    for op in &screen.plan {
        match op {
            PlanOp::Click { target } => return Expected::Click(target.clone()),
            PlanOp::Fill { target } | PlanOp::Pick { target } => {
                let Some((want, _)) = attr_of(target).and_then(|a| slot_value_for_attr(scenario, slots, &a)) else {
                    continue;
                };
                let el = obs.element(target);
                let have = el.and_then(|e| e.state.content.as_deref()).unwrap_or_default();
                if !have.is_empty() && satisfies(Cmp::Exact, want, have) {
                    continue;
                }
                let focused = el.is_some_and(|e| e.state.focused);
                return match op {
                    PlanOp::Fill { .. } if focused => Expected::Type(want.to_string()),
                    _ => Expected::Click(target.clone()),
                };
            }
            PlanOp::Choose { attr } => {
                let Some((want, _)) = slot_value_for_attr(scenario, slots, attr) else {
                    continue;
                };
                let target = screen.elements.iter().find(|e| {
                    e.role == ElementRole::Option
                        && e.attr.as_deref() == Some(attr.as_str())
                        && option_matches(&e.label, e.committed(), want)
                });
                let Some(target) = target else {
                    continue;
                };
                if obs.element(&target.id).is_some_and(|e| e.state.selected) {
                    continue;
                }
                return Expected::Click(target.id.clone());
            }
            PlanOp::Find { attr } => {
                let Some((want, _)) = slot_value_for_attr(scenario, slots, attr) else {
                    return Expected::Help;
                };
                return find_in(scenario, screen, attr, want);
            }
            PlanOp::FindOrigin => {
                let Some(attr) = origin_attr else {
                    return Expected::Back;
                };
                let Some((want, _)) = slot_value_for_attr(scenario, slots, attr) else {
                    return Expected::Help;
                };
                return find_in(scenario, screen, attr, want);
            }
            PlanOp::Check => {
                if judge_checks && !gold_judge(scenario, slots, obs).is_empty() {
                    return Expected::Help;
                }
            }
            PlanOp::Help => return Expected::Help,
            PlanOp::Back => return Expected::Back,
        }
    }
    Expected::Any
}

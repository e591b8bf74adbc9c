use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::domain::{ElementRole, Inconsistency, InconsistencySet, Observation, SlotSet};

/// How an observed attribute is compared with a slot value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    /// Equal dates or equal normalized text.
    #[default]
    Exact,
    /// The slot is an upper limit.
    Max,
    /// The slot is a lower limit.
    Min,
}

/// Parses an amount such as `18`, `18.5 RMB`, `¥18` or `$ 20`.
pub fn parse_amount(s: &str) -> Option<f64> {
    let t = s.trim().trim_start_matches(['¥', '$', '€', '£']).trim();
    let end = t
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
        .map_or(t.len(), |(i, _)| i);
    let (num, rest) = t.split_at(end);
    if num.is_empty() || num.starts_with('.') || num.ends_with('.') || num.matches('.').count() > 1 {
        return None;
    }
    let rest = rest.trim();
    if !rest
        .chars()
        .all(|c| c.is_alphabetic() || matches!(c, '¥' | '$' | '€' | '£' | '/' | ' '))
    {
        return None;
    }
    num.parse().ok()
}

/// `YYYY-MM-DD` with a plausible month and day.
pub fn parse_iso_date(s: &str) -> Option<(u32, u32, u32)> {
    let parts: Vec<&str> = s.trim().split('-').collect();
    if parts.len() != 3 || parts[0].len() != 4 || parts[1].len() != 2 || parts[2].len() != 2 {
        return None;
    }
    let y: u32 = parts[0].parse().ok()?;
    let m: u32 = parts[1].parse().ok()?;
    let d: u32 = parts[2].parse().ok()?;
    ((1..=12).contains(&m) && (1..=31).contains(&d)).then_some((y, m, d))
}

pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Whether `observed` is acceptable for a slot holding `slot_value`.
pub fn satisfies(cmp: Cmp, slot_value: &str, observed: &str) -> bool {
    match cmp {
        Cmp::Max | Cmp::Min => match (parse_amount(slot_value), parse_amount(observed)) {
            (Some(limit), Some(x)) if cmp == Cmp::Max => x <= limit,
            (Some(limit), Some(x)) => x >= limit,
            _ => normalize_text(slot_value) == normalize_text(observed),
        },
        Cmp::Exact => match (parse_iso_date(slot_value), parse_iso_date(observed)) {
            (Some(a), Some(b)) => a == b,
            _ => normalize_text(slot_value) == normalize_text(observed),
        },
    }
}

/// Slot/screen disagreements visible on `obs`: every valued slot whose
/// attribute is shown as text on the screen is compared with it.
pub fn gold_judge(scenario: &Scenario, slots: &SlotSet, obs: &Observation) -> InconsistencySet {
    let Some(screen) = scenario.screen(&obs.screen_id) else {
        return InconsistencySet::default();
    };
    let mut pairs = Vec::new();
    for slot in slots.slots() {
        let (Some(value), Some(gold)) = (slot.value(), scenario.slot(slot.key())) else {
            continue;
        };
        for e in &obs.elements {
            let Some(observed) = e.value.as_deref() else {
                continue;
            };
            let attr = screen.element(&e.element_id).and_then(|s| s.attr.as_deref());
            if e.role == ElementRole::Text && attr == Some(gold.attr.as_str()) && !satisfies(gold.cmp, value, observed)
            {
                pairs.push(Inconsistency {
                    slot_key: slot.key().to_string(),
                    observed_value: observed.to_string(),
                    note: format!("{} shows {observed}, slot holds {value}", e.label),
                });
            }
        }
    }
    InconsistencySet::new(pairs)
}

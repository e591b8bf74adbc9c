//! Scripted generator for simulated scenarios.
//!
//! The pilot reads only the bindings of each request, like a real model
//! would, and answers from its knowledge of the scenario. It is the backend
//! used to author fixtures and to run the evaluation battery offline.

use std::collections::BTreeSet;

use crate::dma::{select, Locator, SimLocator};
use crate::domain::{make_slot_set, normalize_key, Action, Bounds, ElementRole, Observation, SlotSet, UiElement};
use crate::gateway::{Backend, Bindings, CompletionRequest, GatewayError, TemplateId};
use crate::simenv::{expected_on, gold_judge, Expected, Scenario, Stage};

pub struct Pilot {
    scenario: Scenario,
    locator: SimLocator,
}

fn get<'a>(b: &'a Bindings, k: &str) -> &'a str {
    b.get(k).map(String::as_str).unwrap_or_default()
}

fn tag(name: &str, body: &str) -> String {
    format!("<{name}>{body}</{name}>\n")
}

/// Parses a rendered slot set (`k: v; k2: null`).
pub fn parse_slot_info(text: &str) -> SlotSet {
    let pairs: Vec<(String, Option<String>)> = text
        .split("; ")
        .filter_map(|p| p.split_once(": "))
        .map(|(k, v)| {
            let v = v.trim();
            (
                k.trim().to_string(),
                (v != "null" && !v.is_empty()).then(|| v.to_string()),
            )
        })
        .collect();
    make_slot_set(pairs).unwrap_or_default()
}

fn parse_screen(text: &str) -> Result<Observation, GatewayError> {
    serde_json::from_str(text).map_err(|e| GatewayError::BackendUnavailable(format!("pilot cannot read screen: {e}")))
}

/// `(done, text)` per rendered subtask line.
fn parse_subtasks(text: &str) -> Vec<(bool, String)> {
    text.lines()
        .filter_map(|l| {
            let done = l.starts_with("[x]");
            let rest = l.get(4..)?;
            let (_, t) = rest.split_once(". ")?;
            Some((done, t.to_string()))
        })
        .collect()
}

fn current_subtask(text: &str) -> String {
    parse_subtasks(text)
        .into_iter()
        .find(|(done, _)| !done)
        .map(|(_, t)| t)
        .unwrap_or_else(|| "Finish the task".to_string())
}

fn noun(role: ElementRole) -> &'static str {
    role.nouns()[0]
}

fn contains_word(hay: &str, needle: &str) -> bool {
    let h = hay.to_lowercase();
    let n = needle.to_lowercase();
    h.match_indices(&n).any(|(i, _)| {
        let before = h[..i].chars().next_back();
        let after = h[i + n.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Click description naming the label and role, plus a neighbor when the
/// label alone is not unique.
pub fn describe_click(obs: &Observation, e: &UiElement) -> String {
    let base = format!("Click the '{}' {}", e.label, noun(e.role));
    let same = |a: &UiElement| a.label.eq_ignore_ascii_case(&e.label);
    if obs.elements.iter().filter(|a| same(a)).count() < 2 {
        return base;
    }
    let unique = |a: &&UiElement| {
        a.label.len() >= 2
            && obs
                .elements
                .iter()
                .filter(|b| b.label.eq_ignore_ascii_case(&a.label))
                .count()
                == 1
    };
    let (ex, ey) = e.bounds.center();
    let dist = |b: &Bounds| {
        let (x, y) = b.center();
        (x - ex).abs() + (y - ey).abs()
    };
    let row = obs
        .elements
        .iter()
        .filter(unique)
        .filter(|a| a.bounds.same_row(&e.bounds))
        .min_by_key(|a| dist(&a.bounds));
    let col = obs
        .elements
        .iter()
        .filter(unique)
        .filter(|a| a.bounds.same_column(&e.bounds))
        .min_by_key(|a| dist(&a.bounds));
    let (rel, a) = match (row, col) {
        (Some(a), _) if a.bounds.center().0 < ex => ("to the right of", a),
        (Some(a), _) => ("to the left of", a),
        (None, Some(a)) if a.bounds.center().1 < ey => ("below", a),
        (None, Some(a)) => ("above", a),
        (None, None) => return base,
    };
    format!("{base}, located {rel} the '{}' {}", a.label, noun(a.role))
}

fn state_desc(obs: &Observation) -> String {
    let mut s = format!("{} page with {} elements", obs.title, obs.elements.len());
    if let Some(f) = obs.focused() {
        s.push_str(&format!("; the '{}' field is active", f.label));
    }
    s
}

fn decision(state: &str, plan: &str, action: &Action) -> String {
    format!(
        "{}{}{}",
        tag("state", state),
        tag("plan", plan),
        tag("action", &action.to_string())
    )
}

impl Pilot {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            locator: SimLocator::default(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn intent(&self) -> String {
        tag("intent", &self.scenario.intent)
    }

    fn preprocess(&self, b: &Bindings) -> String {
        let ins = get(b, "taskIns");
        let slots: Vec<_> = self
            .scenario
            .slots
            .iter()
            .filter(|s| s.stage == Stage::Initial)
            .collect();
        let mut out = tag("num", &slots.len().to_string());
        for s in slots {
            out.push_str(&tag("slot_name", &s.key));
            if contains_word(ins, &s.value) {
                out.push_str(&tag("slot_value", &s.value));
                out.push_str(&tag("inquiry", "null"));
            } else {
                out.push_str(&tag("slot_value", "null"));
                out.push_str(&tag("inquiry", &s.inquiry));
            }
        }
        out
    }

    fn instruction_update(&self, b: &Bindings) -> String {
        let slots = parse_slot_info(get(b, "slots_info"));
        let details: Vec<String> = slots
            .slots()
            .iter()
            .filter_map(|s| s.value().map(|v| format!("{}: {v}", s.key())))
            .collect();
        // restate values the user changed since the instruction was written
        let mut ins = self.scenario.instruction();
        for g in &self.scenario.slots {
            if let Some(v) = slots.value_of(&g.key).filter(|v| *v != g.value) {
                ins = ins.replace(&g.value, v);
            }
        }
        let text = format!("{ins} Details: {}.", details.join("; "));
        tag("updated_task_ins", &text)
    }

    fn slot_gen(&self, b: &Bindings) -> Result<String, GatewayError> {
        let obs = parse_screen(get(b, "screen"))?;
        let slots = parse_slot_info(get(b, "slots_info"));
        let screen = self.scenario.screen(&obs.screen_id);
        let mut keys = BTreeSet::new();
        let mut wanted = Vec::new();
        for e in &obs.elements {
            if !e.state.required {
                continue;
            }
            let unfilled = match e.role {
                ElementRole::Input => e.state.content.as_deref().unwrap_or_default().is_empty(),
                ElementRole::Option => e.group.as_deref().is_some_and(|g| obs.selected_in_group(g).is_none()),
                _ => false,
            };
            let attr = screen
                .and_then(|s| s.element(&e.element_id))
                .and_then(|s| s.attr.as_deref());
            let Some(gold) = attr.and_then(|a| self.scenario.slot_by_attr(a)) else {
                continue;
            };
            if unfilled && !slots.contains(&gold.key) && keys.insert(normalize_key(&gold.key)) {
                wanted.push(gold);
            }
        }
        let mut out = tag("screen_description", &state_desc(&obs));
        out.push_str(&tag(
            "thought",
            if wanted.is_empty() {
                "The screen needs nothing beyond the known slots."
            } else {
                "The screen has required fields that no slot covers."
            },
        ));
        out.push_str(&tag("num", &wanted.len().to_string()));
        for g in wanted {
            out.push_str(&tag("slot_name", &g.key));
            out.push_str(&tag("inquiry", &g.inquiry));
        }
        Ok(out)
    }

    fn dilemma(&self, b: &Bindings) -> Result<String, GatewayError> {
        let obs = parse_screen(get(b, "screen"))?;
        let slots = parse_slot_info(get(b, "slot_info"));
        let conflicts = gold_judge(&self.scenario, &slots, &obs);
        if let Some(c) = conflicts.pairs.first() {
            let held = slots.value_of(&c.slot_key).unwrap_or_default();
            return Ok(format!(
                "{}{}{}{}",
                tag("dilemma_type", "Dilemma 1"),
                tag(
                    "thought",
                    &format!(
                        "The screen shows {} for {}, but the slot holds {held}.",
                        c.observed_value, c.slot_key
                    )
                ),
                tag("update_info_name", &c.slot_key),
                tag(
                    "inquiry",
                    &format!(
                        "The {} on screen is {}, which does not match {held}. Please give the {} to use.",
                        c.slot_key, c.observed_value, c.slot_key
                    )
                ),
            ));
        }
        Ok(format!(
            "{}{}{}",
            tag("dilemma_type", "Dilemma 2"),
            tag(
                "reason",
                "The step involves payment or a sensitive operation the user must perform."
            ),
            tag(
                "inquiry",
                "Please complete this step on the device, then reply when done."
            ),
        ))
    }

    fn decompose(&self) -> String {
        self.scenario
            .milestones
            .iter()
            .map(|m| tag("subtask", &m.subtask))
            .collect()
    }

    /// Picker field the current picker screen was opened from, read off the
    /// most recent click in the visible trajectory.
    fn picker_origin(&self, trajectory: &str) -> Option<String> {
        let pickers: Vec<(&str, &str)> = self
            .scenario
            .screens
            .iter()
            .flat_map(|s| {
                s.edges.iter().filter(|e| e.origin).filter_map(|e| {
                    let el = s.element(e.on.as_deref()?)?;
                    Some((el.label.as_str(), el.attr.as_deref()?))
                })
            })
            .collect();
        for line in trajectory.lines().rev() {
            let Some(i) = line.find("action: CLICK(") else {
                continue;
            };
            let rest = &line[i..];
            if let Some((_, attr)) = pickers.iter().find(|(l, _)| rest.contains(&format!("'{l}'"))) {
                return Some(attr.to_string());
            }
        }
        pickers.first().map(|(_, a)| a.to_string())
    }

    fn decide(&self, b: &Bindings) -> Result<String, GatewayError> {
        let obs = parse_screen(get(b, "screen"))?;
        let slots = parse_slot_info(get(b, "slot_info"));
        let reflection = get(b, "actionReflection");
        let trajectory = get(b, "trajectory");
        let summary = get(b, "action_history_summarization");
        let subtask = current_subtask(get(b, "subtasks"));
        let state = state_desc(&obs);
        let Some(screen) = self.scenario.screen(&obs.screen_id) else {
            let a = Action::help(&state, "the screen is unknown and no known step applies");
            return Ok(decision(&state, &subtask, &a));
        };
        let click = |e: &UiElement, goal: &str| {
            let a = Action::Click(describe_click(&obs, e));
            decision(&state, &format!("{subtask}: {goal}"), &a)
        };
        let lures: Vec<&UiElement> = obs
            .elements
            .iter()
            .filter(|e| screen.element(&e.element_id).is_some_and(|s| s.lure))
            .collect();

        if screen.dead_end {
            if reflection.to_lowercase().contains("exit") {
                return Ok(decision(&state, &format!("{subtask}: leave this page"), &Action::Back));
            }
            if let Some(l) = lures.first() {
                return Ok(click(l, "follow the offer"));
            }
        }
        if let Some(line) = reflection.lines().find(|l| l.starts_with("conflict:")) {
            let detail = line.trim_start_matches("conflict:").trim();
            let (k, v) = detail.split_once("::").unwrap_or((detail, ""));
            let a = Action::help(
                &state,
                &format!(
                    "the screen shows {} for {}, which conflicts with the slot information",
                    v.trim(),
                    k.trim()
                ),
            );
            return Ok(decision(&state, &format!("{subtask}: ask about the conflict"), &a));
        }
        let seen_bad = |label: &str| {
            trajectory
                .lines()
                .chain(summary.lines())
                .any(|l| l.contains(&format!("'{label}'")) && l.to_lowercase().contains("ineffective"))
        };
        if let Some(l) = lures.iter().find(|l| !seen_bad(&l.label)) {
            return Ok(click(l, "follow the offer"));
        }

        let origin = self.picker_origin(trajectory);
        let exp = expected_on(&self.scenario, &obs, origin.as_deref(), &slots, false);
        Ok(match exp {
            Expected::Click(id) => match obs.element(&id) {
                Some(e) => click(e, &format!("click the '{}' {}", e.label, noun(e.role))),
                None => decision(
                    &state,
                    &subtask,
                    &Action::help(&state, "the expected element is not visible"),
                ),
            },
            Expected::Type(v) => decision(&state, &format!("{subtask}: type {v}"), &Action::Type(v)),
            Expected::Slide(d) => decision(&state, &format!("{subtask}: look further"), &Action::Slide(d)),
            Expected::Back => decision(&state, &format!("{subtask}: go back"), &Action::Back),
            Expected::Help if screen.manual.is_some() => {
                let a = Action::help(&state, "payment requires the user to operate the device");
                decision(&state, &format!("{subtask}: hand over to the user"), &a)
            }
            Expected::Help => {
                let a = Action::help(&state, "the content required by the slots cannot be found");
                decision(&state, &format!("{subtask}: ask the user"), &a)
            }
            Expected::Any => {
                let a = Action::help(&state, "no further step is known on this screen");
                decision(&state, &format!("{subtask}: ask the user"), &a)
            }
        })
    }

    fn reflect(&self, b: &Bindings) -> Result<String, GatewayError> {
        let before_raw = get(b, "screen_before");
        let after_raw = get(b, "screen_after");
        let before = parse_screen(before_raw)?;
        let after = parse_screen(after_raw)?;
        let scope = get(b, "reflection_scope");
        let judge_action = !scope.contains("Do not judge whether the action");
        let judge_info = !scope.contains("Do not judge whether the screen");
        let last = get(b, "last_action");
        let after_screen = self.scenario.screen(&after.screen_id);

        let mut out = String::new();
        let text = if before.screen_id == after.screen_id {
            format!("Stayed on the {} page.", after.title)
        } else {
            format!("Moved from the {} page to the {} page.", before.title, after.title)
        };
        out.push_str(&tag("actionReflection", &text));
        if judge_action {
            let (eff, advice) = if last.starts_with("HELP(") {
                (true, "")
            } else if after_screen.is_some_and(|s| s.dead_end) {
                (false, "this page does not lead to the task; exit the page to retry")
            } else if before_raw == after_raw {
                (false, "the screen did not change; try a different element")
            } else {
                (true, "")
            };
            out.push_str(&tag("effective", if eff { "True" } else { "False" }));
            if !advice.is_empty() {
                out.push_str(&tag("advice", advice));
            }
        } else {
            out.push_str(&tag("effective", "Skipped"));
        }
        if judge_info {
            let slots = parse_slot_info(get(b, "slot_info"));
            let conflicts = gold_judge(&self.scenario, &slots, &after);
            out.push_str(&tag("consistency", if conflicts.is_empty() { "True" } else { "False" }));
            for c in &conflicts.pairs {
                out.push_str(&tag("conflict", &format!("{} :: {}", c.slot_key, c.observed_value)));
            }
        } else {
            out.push_str(&tag("consistency", "Skipped"));
        }

        let subtasks = parse_subtasks(get(b, "subtasks"));
        let terminal = after_screen.is_some_and(|s| s.terminal);
        let reached = self
            .scenario
            .milestones
            .iter()
            .rposition(|m| m.screen == after.screen_id);
        let mut done: BTreeSet<usize> = subtasks
            .iter()
            .enumerate()
            .filter(|(_, (d, _))| *d)
            .map(|(i, _)| i + 1)
            .collect();
        let upto = if terminal {
            Some(subtasks.len())
        } else {
            reached.map(|i| i + 1)
        };
        if let Some(n) = upto {
            done.extend(1..=n.min(subtasks.len()));
        }
        for i in done {
            out.push_str(&tag("completed_subtask", &i.to_string()));
        }
        out.push_str(&tag("whether_task_completed", if terminal { "True" } else { "False" }));
        Ok(out)
    }

    fn summarize(&self, b: &Bindings) -> String {
        let prev = get(b, "action_history_summarization");
        let max: usize = get(b, "max_chars").parse().unwrap_or(usize::MAX);
        let mut lines: Vec<String> = if prev == "(none)" {
            Vec::new()
        } else {
            prev.lines()
                .filter(|l| l.starts_with("Ineffective:"))
                .map(str::to_string)
                .collect()
        };
        for l in get(b, "trajectory").lines() {
            if !l.to_lowercase().contains("ineffective") {
                continue;
            }
            let action = l
                .split(" | ")
                .find_map(|p| p.strip_prefix("action: "))
                .unwrap_or_default();
            let entry = format!("Ineffective: {action}");
            if !lines.contains(&entry) {
                lines.push(entry);
            }
        }
        let text = if lines.is_empty() {
            "No ineffective actions so far.".to_string()
        } else {
            lines.join("\n")
        };
        tag(
            "action_history_summarization",
            &text.chars().take(max).collect::<String>(),
        )
    }

    fn locate(&self, b: &Bindings) -> Result<String, GatewayError> {
        let obs = parse_screen(get(b, "screen"))?;
        let desc = get(b, "description");
        let scores = self.locator.score(&obs, desc);
        let id = select(&scores, self.locator.threshold(), desc).unwrap_or_default();
        Ok(format!(
            "{}{}",
            tag("element_id", &id),
            tag("reason", "best match for the description")
        ))
    }
}

impl Backend for Pilot {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let b = &req.bindings;
        match req.template_id {
            TemplateId::Intent => Ok(self.intent()),
            TemplateId::Preprocess => Ok(self.preprocess(b)),
            TemplateId::SlotGen => self.slot_gen(b),
            TemplateId::InstructionUpdate => Ok(self.instruction_update(b)),
            TemplateId::Dilemma => self.dilemma(b),
            TemplateId::Decompose => Ok(self.decompose()),
            TemplateId::Decide => self.decide(b),
            TemplateId::Reflect => self.reflect(b),
            TemplateId::Summarize => Ok(self.summarize(b)),
            TemplateId::Locate => self.locate(b),
        }
    }

    fn name(&self) -> &str {
        "pilot"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_info_round_trips() {
        let s = make_slot_set(vec![("app", Some("Meituan")), ("Cup Size", None::<&str>)]).unwrap();
        let back = parse_slot_info(&s.render());
        assert_eq!(back.entries(), s.entries());
    }

    #[test]
    fn subtask_lines() {
        let p = parse_subtasks("[x] 1. Open the app\n[ ] 2. Search. Then pick");
        assert_eq!(
            p,
            vec![(true, "Open the app".into()), (false, "Search. Then pick".into())]
        );
        assert_eq!(current_subtask("[x] 1. Open the app\n[ ] 2. Search"), "Search");
    }

    #[test]
    fn whole_word_presence() {
        assert!(contains_word("buy shoes in Red.", "red"));
        assert!(!contains_word("ordered shoes", "red"));
    }
}

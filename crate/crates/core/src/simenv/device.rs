use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Scenario, Screen, SimError};
use crate::dma::ScreenPoint;
use crate::domain::{
    Action, DilemmaMarker, ElementRole, ElementState, GroundTruth, Observation, UiElement, SCREEN_HEIGHT, SCREEN_WIDTH,
};

use super::DilemmaSpec;

fn fkey(screen: &str, elem: &str) -> String {
    format!("{screen}/{elem}")
}

/// Mutable device state of one simulated session. Maps are keyed
/// `screen/element` (fields, focus) or `screen/group` (selections).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    pub stack: Vec<String>,
    pub fields: BTreeMap<String, String>,
    pub focus: Option<String>,
    pub selections: BTreeMap<String, String>,
    /// Field whose picker is open, as (screen, element).
    pub origin: Option<(String, String)>,
    /// Committed attributes of the order so far.
    pub ledger: BTreeMap<String, String>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecReport {
    pub effect: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<String>,
    pub message: String,
    pub screen_after: String,
}

impl DeviceState {
    pub fn initial(scenario: &Scenario) -> Self {
        let mut st = DeviceState {
            stack: vec![],
            fields: BTreeMap::new(),
            focus: None,
            selections: BTreeMap::new(),
            origin: None,
            ledger: BTreeMap::new(),
            steps: 0,
        };
        for s in &scenario.screens {
            for e in &s.elements {
                if let Some(d) = &e.default {
                    st.fields.insert(fkey(&s.id, &e.id), d.clone());
                }
                if let (true, Some(g)) = (e.selected, &e.group) {
                    st.selections.insert(fkey(&s.id, g), e.id.clone());
                }
            }
        }
        st.enter(scenario, &scenario.initial);
        st
    }

    pub fn current(&self) -> &str {
        self.stack.last().expect("navigation stack is never empty")
    }

    fn screen<'a>(&self, scenario: &'a Scenario) -> &'a Screen {
        scenario.screen(self.current()).expect("current screen exists")
    }

    fn enter(&mut self, scenario: &Scenario, id: &str) {
        if self.stack.last().map(String::as_str) != Some(id) {
            self.stack.push(id.to_string());
        }
        self.focus = None;
        self.note_texts(scenario);
    }

    fn note_texts(&mut self, scenario: &Scenario) {
        let screen = self.screen(scenario);
        for e in &screen.elements {
            if let (ElementRole::Text, Some(a), Some(v)) = (e.role, &e.attr, &e.value) {
                self.ledger.insert(a.clone(), v.clone());
            }
        }
    }

    /// Required elements on the current screen that are still empty.
    pub fn missing_required(&self, scenario: &Scenario) -> Vec<String> {
        let s = self.screen(scenario);
        s.elements
            .iter()
            .filter(|e| e.required)
            .filter(|e| match e.role {
                ElementRole::Option => {
                    let g = e.group.as_deref().unwrap_or_default();
                    !self.selections.contains_key(&fkey(&s.id, g))
                }
                _ => self.fields.get(&fkey(&s.id, &e.id)).is_none_or(|v| v.trim().is_empty()),
            })
            .map(|e| e.id.clone())
            .collect()
    }

    pub fn field(&self, screen: &str, elem: &str) -> Option<&str> {
        self.fields.get(&fkey(screen, elem)).map(String::as_str)
    }
}

/// Observation of the current screen. Hidden annotations are attached only
/// in evaluator mode.
pub fn observe(scenario: &Scenario, state: &DeviceState, evaluator: bool) -> Observation {
    let screen = state.screen(scenario);
    let layout = screen.layout();
    let elements = screen
        .elements
        .iter()
        .zip(layout)
        .map(|(e, bounds)| {
            let key = fkey(&screen.id, &e.id);
            let selected = e
                .group
                .as_ref()
                .is_some_and(|g| state.selections.get(&fkey(&screen.id, g)) == Some(&e.id));
            UiElement {
                element_id: e.id.clone(),
                role: e.role,
                label: e.label.clone(),
                bounds,
                state: ElementState {
                    focused: state.focus.as_deref() == Some(key.as_str()),
                    selected,
                    required: e.required,
                    content: if e.role == ElementRole::Input {
                        Some(state.fields.get(&key).cloned().unwrap_or_default())
                    } else {
                        None
                    },
                },
                group: e.group.clone(),
                value: e.value.clone(),
                options: e.options.clone(),
            }
        })
        .collect();
    let hidden = evaluator.then(|| GroundTruth {
        dilemma_markers: scenario
            .dilemmas
            .iter()
            .filter_map(|d| match d {
                DilemmaSpec::ConflictingInfo { key, screen: s, .. } if *s == screen.id => Some(DilemmaMarker {
                    kind: d.kind().into(),
                    keys: vec![key.clone()],
                }),
                DilemmaSpec::IncrementalRequired { screen: s, keys } if *s == screen.id => Some(DilemmaMarker {
                    kind: d.kind().into(),
                    keys: keys.clone(),
                }),
                _ => None,
            })
            .collect(),
        origin: state.origin.as_ref().map(|(_, e)| e.clone()),
        dead_end: screen.dead_end,
        terminal: screen.terminal,
    });
    Observation {
        screen_id: screen.id.clone(),
        title: screen.title.clone(),
        width: SCREEN_WIDTH,
        height: SCREEN_HEIGHT,
        elements,
        hidden,
    }
}

fn report(
    scenario: &Scenario,
    before: &DeviceState,
    after: &DeviceState,
    element_id: Option<String>,
    message: String,
) -> ExecReport {
    ExecReport {
        effect: observe(scenario, before, false) != observe(scenario, after, false),
        element_id,
        message,
        screen_after: after.current().to_string(),
    }
}

/// Applies one action. HELP is a pass-through that leaves the state
/// untouched; every other action counts as a device step.
pub fn execute_action(
    scenario: &Scenario,
    state: &DeviceState,
    action: &Action,
    point: Option<&ScreenPoint>,
) -> Result<(DeviceState, ExecReport), SimError> {
    if let Action::Help(_) = action {
        let r = ExecReport {
            effect: false,
            element_id: None,
            message: "passed to information management".into(),
            screen_after: state.current().to_string(),
        };
        return Ok((state.clone(), r));
    }
    let mut st = state.clone();
    st.steps += 1;
    let screen = state.screen(scenario);
    let (elem, msg) = match action {
        Action::Click(_) => {
            let p = point.ok_or(SimError::MissingPoint)?;
            if p.x < 0 || p.y < 0 || p.x >= SCREEN_WIDTH || p.y >= SCREEN_HEIGHT {
                return Err(SimError::OutOfBounds { x: p.x, y: p.y });
            }
            let obs = observe(scenario, state, false);
            match obs.elements.iter().find(|e| e.bounds.contains(p.x, p.y)) {
                None => (None, format!("nothing at ({}, {})", p.x, p.y)),
                Some(hit) => {
                    let m = click(scenario, &mut st, screen, &hit.element_id);
                    (Some(hit.element_id.clone()), m)
                }
            }
        }
        Action::Slide(dir) => match screen.slide_edge(*dir) {
            Some(e) => {
                st.stack.pop();
                st.enter(scenario, &e.to);
                (None, format!("slid {} to {}", dir.as_str(), e.to))
            }
            None => (None, format!("screen does not scroll {}", dir.as_str())),
        },
        Action::Type(text) => {
            let focus = st
                .focus
                .clone()
                .filter(|f| f.starts_with(&format!("{}/", screen.id)))
                .ok_or(SimError::NoFocusedField)?;
            let elem = focus[screen.id.len() + 1..].to_string();
            st.fields.insert(focus, text.clone());
            if let Some(a) = screen.element(&elem).and_then(|e| e.attr.clone()) {
                st.ledger.insert(a, text.clone());
            }
            (Some(elem), format!("typed `{text}`"))
        }
        Action::Back => {
            if st.stack.len() > 1 {
                st.stack.pop();
                st.focus = None;
                let to = st.current().to_string();
                if st.origin.as_ref().is_some_and(|(s, _)| *s == to) {
                    st.origin = None;
                }
                (None, format!("back to {to}"))
            } else {
                (None, "already at the first screen".into())
            }
        }
        Action::Home => {
            st.stack.clear();
            st.origin = None;
            st.enter(scenario, &scenario.initial);
            (None, "home".into())
        }
        Action::Help(_) => unreachable!("handled above"),
    };
    let r = report(scenario, state, &st, elem, msg);
    Ok((st, r))
}

fn click(scenario: &Scenario, st: &mut DeviceState, screen: &Screen, id: &str) -> String {
    let e = screen.element(id).expect("hit element exists");
    let edge = screen.click_edge(id);
    match e.role {
        ElementRole::Input => {
            st.focus = Some(fkey(&screen.id, id));
        }
        ElementRole::Option => {
            let g = e.group.as_deref().expect("validated: options have groups");
            st.selections.insert(fkey(&screen.id, g), id.to_string());
            if let Some(a) = &e.attr {
                st.ledger.insert(a.clone(), e.committed().to_string());
            }
        }
        _ => {
            if let Some(a) = &e.attr {
                st.ledger.insert(a.clone(), e.committed().to_string());
            }
        }
    }
    if e.deliver {
        if let Some((os, oe)) = st.origin.take() {
            let value = e.committed().to_string();
            st.fields.insert(fkey(&os, &oe), value.clone());
            if let Some(a) = scenario
                .screen(&os)
                .and_then(|s| s.element(&oe))
                .and_then(|x| x.attr.clone())
            {
                st.ledger.insert(a, value.clone());
            }
            if let Some(pos) = st.stack.iter().rposition(|s| *s == os) {
                st.stack.truncate(pos + 1);
            }
            st.focus = None;
            st.note_texts(scenario);
            return format!("picked `{value}` for {oe}");
        }
    }
    let Some(edge) = edge else {
        return match e.role {
            ElementRole::Input => format!("focused {id}"),
            ElementRole::Option => format!("selected {id}"),
            _ => format!("clicked {id}"),
        };
    };
    if edge.guarded {
        let missing = st.missing_required(scenario);
        if !missing.is_empty() {
            return format!("blocked: required {} empty", missing.join(", "));
        }
    }
    if edge.origin {
        st.origin = Some((screen.id.clone(), id.to_string()));
    }
    if edge.to == screen.id {
        return format!("clicked {id}, page unchanged");
    }
    st.enter(scenario, &edge.to);
    format!("opened {}", edge.to)
}

/// The user finished a takeover: the device moves to the screen's manual
/// continuation, if it has one.
pub fn complete_takeover(scenario: &Scenario, state: &DeviceState) -> DeviceState {
    let mut st = state.clone();
    if let Some(m) = &state.screen(scenario).manual {
        st.enter(scenario, m);
    }
    st
}

/// Abstract device: the simulator is one implementation, a real-device
/// adapter would be another.
pub trait Device {
    fn observe(&self) -> Observation;
    fn execute(&mut self, action: &Action, point: Option<&ScreenPoint>) -> Result<ExecReport, SimError>;
    fn takeover_done(&mut self);
}

/// The simulator behind the [`Device`] interface.
#[derive(Debug, Clone)]
pub struct SimDevice {
    pub scenario: Scenario,
    pub state: DeviceState,
    pub evaluator: bool,
}

impl SimDevice {
    pub fn new(scenario: Scenario, evaluator: bool) -> Self {
        let state = DeviceState::initial(&scenario);
        Self {
            scenario,
            state,
            evaluator,
        }
    }
}

impl Device for SimDevice {
    fn observe(&self) -> Observation {
        observe(&self.scenario, &self.state, self.evaluator)
    }

    fn execute(&mut self, action: &Action, point: Option<&ScreenPoint>) -> Result<ExecReport, SimError> {
        let (st, r) = execute_action(&self.scenario, &self.state, action, point)?;
        self.state = st;
        Ok(r)
    }

    fn takeover_done(&mut self) {
        self.state = complete_takeover(&self.scenario, &self.state);
    }
}

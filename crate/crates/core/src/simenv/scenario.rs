use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::judge::{satisfies, Cmp};
use super::SimError;
use crate::domain::{normalize_key, ActionKind, Bounds, Direction, ElementRole, SCREEN_HEIGHT, SCREEN_WIDTH};

pub const ROW_TOP: i32 = 200;
pub const ROW_PITCH: i32 = 160;
pub const ROW_HEIGHT: i32 = 120;
const MARGIN: i32 = 40;
const GAP: i32 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPart {
    pub text: String,
    /// Gold slot this fragment states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    /// Replacement used when the detail is stripped from the instruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vague: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Incremental,
}

/// Ground-truth slot of a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSlot {
    pub key: String,
    pub value: String,
    /// Screen attribute carrying this information.
    pub attr: String,
    #[serde(default)]
    pub cmp: Cmp,
    pub inquiry: String,
    #[serde(default = "initial_stage")]
    pub stage: Stage,
}

fn initial_stage() -> Stage {
    Stage::Initial
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub id: String,
    pub role: ElementRole,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[i32; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    /// Initial content of an input field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    /// Option selected initially.
    #[serde(default)]
    pub selected: bool,
    /// Looks promising but leads nowhere useful.
    #[serde(default)]
    pub lure: bool,
    #[serde(default)]
    pub required: bool,
    /// Clicking writes this option into the field that opened the picker
    /// and returns to that field's screen.
    #[serde(default)]
    pub deliver: bool,
}

impl ElementSpec {
    /// Value a click or selection commits: the explicit value, else the label.
    pub fn committed(&self) -> &str {
        self.value.as_deref().unwrap_or(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on: Option<String>,
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<Direction>,
    pub to: String,
    /// The clicked field becomes the picker origin.
    #[serde(default)]
    pub origin: bool,
    /// Blocked while a required element on the screen is unfilled.
    #[serde(default)]
    pub guarded: bool,
}

/// One step of a screen's reference procedure. The first unsatisfied op is
/// the gold decision on that screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PlanOp {
    Click { target: String },
    Fill { target: String },
    Choose { attr: String },
    Pick { target: String },
    Find { attr: String },
    FindOrigin,
    Check,
    Help,
    Back,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub dead_end: bool,
    #[serde(default)]
    pub terminal: bool,
    /// Where the device lands once the user finishes a takeover here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual: Option<String>,
    pub elements: Vec<ElementSpec>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub plan: Vec<PlanOp>,
}

impl Screen {
    pub fn element(&self, id: &str) -> Option<&ElementSpec> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn click_edge(&self, elem: &str) -> Option<&Edge> {
        self.edges
            .iter()
            .find(|e| e.action == ActionKind::Click && e.on.as_deref() == Some(elem))
    }

    pub fn slide_edge(&self, dir: Direction) -> Option<&Edge> {
        self.edges
            .iter()
            .find(|e| e.action == ActionKind::Slide && e.dir == Some(dir))
    }

    /// Bounds of every element, computed from explicit bounds or rows.
    /// Elements without a row get a fresh row after the highest one used.
    pub fn layout(&self) -> Vec<Bounds> {
        let mut next = self.elements.iter().filter_map(|e| e.row).max().map_or(0, |r| r + 1);
        let rows: Vec<Option<usize>> = self
            .elements
            .iter()
            .map(|e| {
                if e.bounds.is_some() {
                    None
                } else {
                    Some(e.row.unwrap_or_else(|| {
                        next += 1;
                        next - 1
                    }))
                }
            })
            .collect();
        let mut per_row: BTreeMap<usize, usize> = BTreeMap::new();
        for r in rows.iter().flatten() {
            *per_row.entry(*r).or_default() += 1;
        }
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        self.elements
            .iter()
            .zip(&rows)
            .map(|(e, row)| match (e.bounds, row) {
                (Some([l, t, r, b]), _) => Bounds::new(l, t, r, b),
                (None, Some(row)) => {
                    let k = per_row[row] as i32;
                    let i = {
                        let s = seen.entry(*row).or_default();
                        *s += 1;
                        *s as i32 - 1
                    };
                    let w = (SCREEN_WIDTH - 2 * MARGIN) / k;
                    let top = ROW_TOP + *row as i32 * ROW_PITCH;
                    let right = if i == k - 1 {
                        SCREEN_WIDTH - MARGIN
                    } else {
                        MARGIN + (i + 1) * w - GAP
                    };
                    Bounds::new(MARGIN + i * w, top, right, top + ROW_HEIGHT)
                }
                (None, None) => unreachable!("rows are assigned to every element without bounds"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Milestone {
    pub subtask: String,
    pub screen: String,
}

/// One of the three information dilemmas, armed on a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DilemmaSpec {
    /// The listed details are missing from the instruction.
    AmbiguousInitial { keys: Vec<String> },
    /// The screen cannot be left forward until the listed slots are filled.
    IncrementalRequired { screen: String, keys: Vec<String> },
    /// The screen shows `observed` for the slot's attribute, violating the
    /// slot; the user settles on `resolution`.
    ConflictingInfo {
        key: String,
        screen: String,
        observed: String,
        resolution: String,
    },
}

impl DilemmaSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DilemmaSpec::AmbiguousInitial { .. } => "ambiguous_initial",
            DilemmaSpec::IncrementalRequired { .. } => "incremental_required",
            DilemmaSpec::ConflictingInfo { .. } => "conflicting_info",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub family: String,
    pub app: String,
    pub intent: String,
    #[serde(default)]
    pub description: String,
    pub ideal_steps: usize,
    #[serde(default = "launcher")]
    pub initial: String,
    pub instruction: Vec<InstructionPart>,
    pub slots: Vec<GoldSlot>,
    pub screens: Vec<Screen>,
    pub milestones: Vec<Milestone>,
    #[serde(default)]
    pub dilemmas: Vec<DilemmaSpec>,
}

fn launcher() -> String {
    "launcher".into()
}

/// A scenario defined as a base document plus one armed dilemma.
#[derive(Debug, Clone, Deserialize)]
struct VariantDoc {
    name: String,
    base: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    ideal_steps: Option<usize>,
    dilemma: DilemmaSpec,
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::ScenarioInvalid {
        path: path.into(),
        reason: reason.into(),
    }
}

impl Scenario {
    /// Parses and validates a base scenario document.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| invalid("$", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn screen(&self, id: &str) -> Option<&Screen> {
        self.screens.iter().find(|s| s.id == id)
    }

    pub fn screen_mut(&mut self, id: &str) -> Option<&mut Screen> {
        self.screens.iter_mut().find(|s| s.id == id)
    }

    /// Instruction text as given to the agent.
    pub fn instruction(&self) -> String {
        self.instruction
            .iter()
            .map(|p| p.text.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
            .replace(" .", ".")
            .replace(" ,", ",")
    }

    pub fn slot(&self, key: &str) -> Option<&GoldSlot> {
        let k = normalize_key(key);
        self.slots.iter().find(|s| normalize_key(&s.key) == k)
    }

    pub fn slot_by_attr(&self, attr: &str) -> Option<&GoldSlot> {
        self.slots.iter().find(|s| s.attr == attr)
    }

    fn armed_incremental(&self) -> BTreeSet<String> {
        self.dilemmas
            .iter()
            .filter_map(|d| match d {
                DilemmaSpec::IncrementalRequired { keys, .. } => Some(keys.iter().map(|k| normalize_key(k))),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Slots the task is judged against: initial-stage slots plus the
    /// incremental ones an armed dilemma requires, with conflict
    /// resolutions replacing the original values.
    pub fn gold(&self) -> Vec<GoldSlot> {
        let inc = self.armed_incremental();
        self.slots
            .iter()
            .filter(|s| s.stage == Stage::Initial || inc.contains(&normalize_key(&s.key)))
            .map(|s| {
                let mut g = s.clone();
                for d in &self.dilemmas {
                    if let DilemmaSpec::ConflictingInfo { key, resolution, .. } = d {
                        if normalize_key(key) == normalize_key(&s.key) {
                            g.value = resolution.clone();
                        }
                    }
                }
                g
            })
            .collect()
    }

    /// Conflicts armed on this scenario, as (slot key, trigger screen).
    pub fn armed_conflicts(&self) -> Vec<(String, String)> {
        self.dilemmas
            .iter()
            .filter_map(|d| match d {
                DilemmaSpec::ConflictingInfo { key, screen, .. } => Some((key.clone(), screen.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.ideal_steps == 0 {
            return Err(invalid("ideal_steps", "must be at least 1"));
        }
        let mut ids = HashSet::new();
        for (i, s) in self.screens.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                return Err(invalid(
                    format!("screens[{i}].id"),
                    format!("duplicate screen `{}`", s.id),
                ));
            }
        }
        if !ids.contains(self.initial.as_str()) {
            return Err(invalid("initial", format!("unknown screen `{}`", self.initial)));
        }
        let mut keys = HashSet::new();
        for (i, g) in self.slots.iter().enumerate() {
            if !keys.insert(normalize_key(&g.key)) {
                return Err(invalid(format!("slots[{i}].key"), format!("duplicate key `{}`", g.key)));
            }
        }
        for (i, s) in self.screens.iter().enumerate() {
            self.validate_screen(i, s, &ids)?;
        }
        for (i, p) in self.instruction.iter().enumerate() {
            if let Some(k) = &p.key {
                if self.slot(k).is_none() {
                    return Err(invalid(format!("instruction[{i}].key"), format!("unknown slot `{k}`")));
                }
            }
        }
        for (i, m) in self.milestones.iter().enumerate() {
            if !ids.contains(m.screen.as_str()) {
                return Err(invalid(
                    format!("milestones[{i}].screen"),
                    format!("unknown screen `{}`", m.screen),
                ));
            }
        }
        if self.milestones.is_empty() {
            return Err(invalid("milestones", "at least one milestone is required"));
        }
        let surfaces: HashSet<&str> = self
            .screens
            .iter()
            .flat_map(|s| s.elements.iter().filter_map(|e| e.attr.as_deref()))
            .collect();
        for (i, g) in self.slots.iter().enumerate() {
            if !surfaces.contains(g.attr.as_str()) {
                return Err(invalid(
                    format!("slots[{i}].attr"),
                    format!("attribute `{}` appears on no screen", g.attr),
                ));
            }
        }
        for (i, d) in self.dilemmas.iter().enumerate() {
            if let DilemmaSpec::ConflictingInfo { key, screen, .. } = d {
                if self.slot(key).is_none() {
                    return Err(invalid(format!("dilemmas[{i}].key"), format!("unknown slot `{key}`")));
                }
                if !ids.contains(screen.as_str()) {
                    return Err(invalid(
                        format!("dilemmas[{i}].screen"),
                        format!("unknown screen `{screen}`"),
                    ));
                }
            }
        }
        let reached = self.reachable();
        if let Some(s) = self.screens.iter().find(|s| !reached.contains(&s.id)) {
            return Err(invalid(
                format!("screens[{}]", s.id),
                "unreachable from the initial screen",
            ));
        }
        Ok(())
    }

    fn validate_screen(&self, i: usize, s: &Screen, ids: &HashSet<&str>) -> Result<(), SimError> {
        let at = |what: String| format!("screens[{i}].{what}");
        let mut eids = HashSet::new();
        for (j, e) in s.elements.iter().enumerate() {
            if !eids.insert(e.id.as_str()) {
                return Err(invalid(
                    at(format!("elements[{j}].id")),
                    format!("duplicate element `{}`", e.id),
                ));
            }
            if e.role == ElementRole::Option && e.group.is_none() {
                return Err(invalid(at(format!("elements[{j}].group")), "options need a group"));
            }
        }
        for (j, b) in s.layout().iter().enumerate() {
            if !b.is_valid_within(SCREEN_WIDTH, SCREEN_HEIGHT) {
                return Err(invalid(at(format!("elements[{j}]")), "lies outside the screen"));
            }
        }
        for (j, e) in s.edges.iter().enumerate() {
            if !ids.contains(e.to.as_str()) {
                return Err(invalid(
                    at(format!("edges[{j}].to")),
                    format!("unknown screen `{}`", e.to),
                ));
            }
            match e.action {
                ActionKind::Click => match &e.on {
                    Some(on) if eids.contains(on.as_str()) => {}
                    _ => return Err(invalid(at(format!("edges[{j}].on")), "click edge needs an element")),
                },
                ActionKind::Slide if e.dir.is_some() => {}
                _ => return Err(invalid(at(format!("edges[{j}].action")), "only CLICK and SLIDE edges")),
            }
        }
        if let Some(m) = &s.manual {
            if !ids.contains(m.as_str()) {
                return Err(invalid(at("manual".into()), format!("unknown screen `{m}`")));
            }
        }
        for (j, op) in s.plan.iter().enumerate() {
            let target = match op {
                PlanOp::Click { target } | PlanOp::Fill { target } | PlanOp::Pick { target } => Some(target),
                _ => None,
            };
            if let Some(t) = target {
                if !eids.contains(t.as_str()) {
                    return Err(invalid(
                        at(format!("plan[{j}].target")),
                        format!("unknown element `{t}`"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Screens reachable from the initial one through edges and takeovers.
    pub fn reachable(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.initial.clone()]);
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(s) = self.screen(&id) {
                queue.extend(s.edges.iter().map(|e| e.to.clone()));
                queue.extend(s.manual.clone());
            }
        }
        seen
    }
}

/// Arms `spec` on a copy of `scenario`.
pub fn inject_dilemma(scenario: &Scenario, spec: &DilemmaSpec) -> Result<Scenario, SimError> {
    let mut s = scenario.clone();
    let conflict = |m: String| SimError::SpecConflict(m);
    match spec {
        DilemmaSpec::AmbiguousInitial { keys } => {
            if keys.is_empty() {
                return Err(conflict("nothing to strip".into()));
            }
            for k in keys {
                let g = s.slot(k).ok_or_else(|| conflict(format!("unknown slot `{k}`")))?;
                if g.stage != Stage::Initial {
                    return Err(conflict(format!("`{k}` is not stated in the instruction")));
                }
                let nk = normalize_key(k);
                let part = s
                    .instruction
                    .iter_mut()
                    .find(|p| p.key.as_deref().map(normalize_key) == Some(nk.clone()))
                    .ok_or_else(|| conflict(format!("instruction never states `{k}`")))?;
                part.text = part.vague.clone().unwrap_or_default();
                part.key = None;
            }
        }
        DilemmaSpec::IncrementalRequired { screen, keys } => {
            let attrs: Vec<String> = keys
                .iter()
                .map(|k| {
                    let g = s.slot(k).ok_or_else(|| conflict(format!("unknown slot `{k}`")))?;
                    if g.stage != Stage::Incremental {
                        return Err(conflict(format!("`{k}` is stated up front, it cannot arrive late")));
                    }
                    Ok(g.attr.clone())
                })
                .collect::<Result<_, _>>()?;
            let sc = s
                .screen_mut(screen)
                .ok_or_else(|| conflict(format!("unknown screen `{screen}`")))?;
            for (k, attr) in keys.iter().zip(&attrs) {
                let mut hit = false;
                for e in sc
                    .elements
                    .iter_mut()
                    .filter(|e| e.attr.as_deref() == Some(attr.as_str()))
                {
                    if matches!(e.role, ElementRole::Input | ElementRole::Option) {
                        e.default = None;
                        e.selected = false;
                        e.required = true;
                        hit = true;
                    }
                }
                if !hit {
                    return Err(conflict(format!("screen `{screen}` has no field for `{k}`")));
                }
            }
            for e in sc.edges.iter_mut() {
                let forward = e.on.as_ref().and_then(|on| {
                    sc.elements
                        .iter()
                        .find(|x| &x.id == on)
                        .map(|x| x.role == ElementRole::Button)
                });
                if forward == Some(true) {
                    e.guarded = true;
                }
            }
        }
        DilemmaSpec::ConflictingInfo {
            key,
            screen,
            observed,
            resolution,
        } => {
            let g = s
                .slot(key)
                .ok_or_else(|| conflict(format!("unknown slot `{key}`")))?
                .clone();
            if satisfies(g.cmp, &g.value, observed) {
                return Err(conflict(format!(
                    "observed `{observed}` already satisfies `{}`",
                    g.value
                )));
            }
            if !satisfies(g.cmp, resolution, observed) {
                return Err(conflict(format!(
                    "resolution `{resolution}` still rejects `{observed}`"
                )));
            }
            let sc = s
                .screen_mut(screen)
                .ok_or_else(|| conflict(format!("unknown screen `{screen}`")))?;
            let e = sc
                .elements
                .iter_mut()
                .find(|e| e.role == ElementRole::Text && e.attr.as_deref() == Some(g.attr.as_str()))
                .ok_or_else(|| conflict(format!("screen `{screen}` does not show `{}`", g.attr)))?;
            e.value = Some(observed.clone());
        }
    }
    s.dilemmas.push(spec.clone());
    s.validate()?;
    Ok(s)
}

/// Loads a scenario document. Variant documents (`base` + `dilemma`) load
/// their base from the same directory and arm the dilemma.
pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| invalid(path.display().to_string(), e.to_string()))?;
    if value.get("base").is_none() {
        return Scenario::from_json(&text);
    }
    let v: VariantDoc =
        serde_json::from_value(value).map_err(|e| invalid(path.display().to_string(), e.to_string()))?;
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&v.base);
    let base = load_scenario(&base_path)?;
    let mut s = inject_dilemma(&base, &v.dilemma)?;
    s.name = v.name;
    if let Some(d) = v.description {
        s.description = d;
    }
    if let Some(n) = v.ideal_steps {
        s.ideal_steps = n;
    }
    s.validate()?;
    Ok(s)
}

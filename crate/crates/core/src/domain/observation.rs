use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DomainError;

pub const SCREEN_WIDTH: i32 = 1080;
pub const SCREEN_HEIGHT: i32 = 2400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Bounds {
    pub fn new(left: i32, top: i32, right: i32, bottom: i32) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn center(&self) -> (i32, i32) {
        ((self.left + self.right) / 2, (self.top + self.bottom) / 2)
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.left && x <= self.right && y >= self.top && y <= self.bottom
    }

    pub fn is_valid_within(&self, width: i32, height: i32) -> bool {
        self.left >= 0
            && self.top >= 0
            && self.left < self.right
            && self.top < self.bottom
            && self.right <= width
            && self.bottom <= height
    }

    /// Vertical spans overlap.
    pub fn same_row(&self, other: &Bounds) -> bool {
        self.top < other.bottom && other.top < self.bottom
    }

    /// Horizontal spans overlap.
    pub fn same_column(&self, other: &Bounds) -> bool {
        self.left < other.right && other.left < self.right
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRole {
    Button,
    Input,
    Option,
    Text,
    Item,
    Icon,
    Banner,
}

impl ElementRole {
    /// Words a click description may use for this role.
    pub fn nouns(self) -> &'static [&'static str] {
        match self {
            ElementRole::Button => &["button"],
            ElementRole::Input => &["field", "input", "box"],
            ElementRole::Option => &["option", "choice"],
            ElementRole::Text => &["text", "label"],
            ElementRole::Item => &["item", "entry", "result"],
            ElementRole::Icon => &["icon", "app"],
            ElementRole::Banner => &["banner", "ad", "advertisement"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementRole::Button => "button",
            ElementRole::Input => "input",
            ElementRole::Option => "option",
            ElementRole::Text => "text",
            ElementRole::Item => "item",
            ElementRole::Icon => "icon",
            ElementRole::Banner => "banner",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementState {
    #[serde(default, skip_serializing_if = "is_false")]
    pub focused: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub selected: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub required: bool,
    /// Current text of an input field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiElement {
    pub element_id: String,
    pub role: ElementRole,
    pub label: String,
    pub bounds: Bounds,
    #[serde(default)]
    pub state: ElementState,
    /// Option group this element belongs to (option role only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Displayed value such as a price or a date.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

/// Hidden ground truth attached to an observation in evaluator mode only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dilemma_markers: Vec<DilemmaMarker>,
    /// Field whose picker opened this screen, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub dead_end: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilemmaMarker {
    pub kind: String,
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub screen_id: String,
    pub title: String,
    pub width: i32,
    pub height: i32,
    pub elements: Vec<UiElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<GroundTruth>,
}

impl Observation {
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut ids = HashSet::new();
        for e in &self.elements {
            if !ids.insert(e.element_id.as_str()) {
                return Err(DomainError::InvalidObservation(format!(
                    "duplicate element id {}",
                    e.element_id
                )));
            }
            if !e.bounds.is_valid_within(self.width, self.height) {
                return Err(DomainError::InvalidObservation(format!(
                    "element {} lies outside the screen",
                    e.element_id
                )));
            }
        }
        Ok(())
    }

    pub fn element(&self, id: &str) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.element_id == id)
    }

    pub fn focused(&self) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.state.focused)
    }

    /// Copy without the hidden annotations; what agents get to see.
    pub fn visible(&self) -> Observation {
        Observation {
            hidden: None,
            ..self.clone()
        }
    }

    /// Compact JSON rendering handed to generator prompts in place of a
    /// screenshot. Never includes hidden annotations.
    pub fn render(&self) -> String {
        serde_json::to_string(&self.visible()).expect("observation serializes")
    }

    pub fn selected_in_group(&self, group: &str) -> Option<&UiElement> {
        self.elements
            .iter()
            .find(|e| e.group.as_deref() == Some(group) && e.state.selected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(id: &str, b: Bounds) -> UiElement {
        UiElement {
            element_id: id.into(),
            role: ElementRole::Button,
            label: id.into(),
            bounds: b,
            state: ElementState::default(),
            group: None,
            value: None,
            options: vec![],
        }
    }

    #[test]
    fn validate_checks_ids_and_bounds() {
        let mut o = Observation {
            screen_id: "s".into(),
            title: "S".into(),
            width: SCREEN_WIDTH,
            height: SCREEN_HEIGHT,
            elements: vec![el("a", Bounds::new(0, 0, 10, 10)), el("b", Bounds::new(10, 10, 20, 20))],
            hidden: None,
        };
        assert!(o.validate().is_ok());
        o.elements.push(el("a", Bounds::new(0, 0, 5, 5)));
        assert!(o.validate().is_err());
        o.elements.pop();
        o.elements.push(el("c", Bounds::new(0, 0, 5000, 5)));
        assert!(o.validate().is_err());
    }

    #[test]
    fn render_hides_ground_truth() {
        let o = Observation {
            screen_id: "s".into(),
            title: "S".into(),
            width: SCREEN_WIDTH,
            height: SCREEN_HEIGHT,
            elements: vec![],
            hidden: Some(GroundTruth {
                dead_end: true,
                ..Default::default()
            }),
        };
        assert!(!o.render().contains("dead_end"));
        assert!(serde_json::to_string(&o).unwrap().contains("dead_end"));
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DomainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

impl FromStr for Direction {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .trim_matches(|c| c == '\'' || c == '"')
            .to_ascii_lowercase()
            .as_str()
        {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            _ => Err(DomainError::InvalidAction(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionKind {
    Click,
    Slide,
    Type,
    Back,
    Home,
    Help,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Click => "CLICK",
            ActionKind::Slide => "SLIDE",
            ActionKind::Type => "TYPE",
            ActionKind::Back => "BACK",
            ActionKind::Home => "HOME",
            ActionKind::Help => "HELP",
        }
    }
}

/// One member of the fixed action grammar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ActionRepr", into = "ActionRepr")]
pub enum Action {
    /// Payload describes the element to click.
    Click(String),
    Slide(Direction),
    /// Payload is the exact text to enter.
    Type(String),
    Back,
    Home,
    /// Dilemma description: `<screen state>; <dilemma cause>`.
    Help(String),
}

#[derive(Serialize, Deserialize)]
struct ActionRepr {
    kind: ActionKind,
    payload: String,
}

impl From<Action> for ActionRepr {
    fn from(a: Action) -> Self {
        ActionRepr {
            kind: a.kind(),
            payload: a.payload(),
        }
    }
}

impl TryFrom<ActionRepr> for Action {
    type Error = DomainError;

    fn try_from(r: ActionRepr) -> Result<Self, Self::Error> {
        Action::new(r.kind, &r.payload)
    }
}

/// Splits a HELP description into its screen-state and cause parts.
pub fn split_help(description: &str) -> Option<(&str, &str)> {
    let (screen, cause) = description.split_once(';')?;
    let (screen, cause) = (screen.trim(), cause.trim());
    if screen.is_empty() || cause.is_empty() {
        None
    } else {
        Some((screen, cause))
    }
}

impl Action {
    pub fn new(kind: ActionKind, payload: &str) -> Result<Self, DomainError> {
        let p = payload.trim();
        let bad = || DomainError::InvalidAction(format!("{}({})", kind.as_str(), payload));
        match kind {
            ActionKind::Click if !p.is_empty() => Ok(Action::Click(p.to_string())),
            ActionKind::Type if !p.is_empty() => Ok(Action::Type(p.to_string())),
            ActionKind::Slide => p.parse().map(Action::Slide).map_err(|_| bad()),
            ActionKind::Back if p.is_empty() => Ok(Action::Back),
            ActionKind::Home if p.is_empty() => Ok(Action::Home),
            ActionKind::Help if split_help(p).is_some() => Ok(Action::Help(p.to_string())),
            _ => Err(bad()),
        }
    }

    /// Builds a HELP action from its two parts.
    pub fn help(screen_state: &str, cause: &str) -> Self {
        Action::Help(format!("{}; {}", screen_state.trim().replace(';', ","), cause.trim()))
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click(_) => ActionKind::Click,
            Action::Slide(_) => ActionKind::Slide,
            Action::Type(_) => ActionKind::Type,
            Action::Back => ActionKind::Back,
            Action::Home => ActionKind::Home,
            Action::Help(_) => ActionKind::Help,
        }
    }

    pub fn payload(&self) -> String {
        match self {
            Action::Click(p) | Action::Type(p) | Action::Help(p) => p.clone(),
            Action::Slide(d) => d.as_str().to_string(),
            Action::Back | Action::Home => String::new(),
        }
    }

    pub fn is_help(&self) -> bool {
        matches!(self, Action::Help(_))
    }

    /// Parses `KIND(payload)`. Kind names are case-insensitive, wrapper
    /// quotes/backticks/trailing periods around the whole form are ignored,
    /// and BACK/HOME may omit their empty parentheses.
    pub fn parse(text: &str) -> Result<Self, DomainError> {
        let invalid = || DomainError::InvalidAction(text.to_string());
        let t = text
            .trim()
            .trim_matches(|c: char| matches!(c, '\'' | '"' | '`' | '.' | ',' | ';') || c.is_whitespace());
        let (name, payload) = match t.find('(') {
            Some(open) => {
                if !t.ends_with(')') {
                    return Err(invalid());
                }
                (&t[..open], &t[open + 1..t.len() - 1])
            }
            None => (t, ""),
        };
        let kind = match name.trim().to_ascii_uppercase().as_str() {
            "CLICK" => ActionKind::Click,
            "SLIDE" => ActionKind::Slide,
            "TYPE" => ActionKind::Type,
            "BACK" => ActionKind::Back,
            "HOME" => ActionKind::Home,
            "HELP" => ActionKind::Help,
            _ => return Err(invalid()),
        };
        if t.find('(').is_none() && !matches!(kind, ActionKind::Back | ActionKind::Home) {
            return Err(invalid());
        }
        Action::new(kind, payload).map_err(|_| invalid())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind().as_str(), self.payload())
    }
}

impl FromStr for Action {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::parse(s)
    }
}

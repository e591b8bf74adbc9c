use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::DomainError;

/// Normalized identity of a slot key: trimmed, inner whitespace collapsed,
/// lower-cased. Generators are inconsistent about capitalization, so two keys
/// that only differ in case or spacing name the same slot.
pub fn normalize_key(key: &str) -> String {
    key.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotOrigin {
    Extracted,
    UserSupplied,
    Updated,
}

/// One unit of task information. A slot without a value always carries the
/// inquiry that will be put to the user to fill it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SlotRepr")]
pub struct Slot {
    key: String,
    value: Option<String>,
    origin: SlotOrigin,
    inquiry: Option<String>,
}

#[derive(Deserialize)]
struct SlotRepr {
    key: String,
    value: Option<String>,
    origin: SlotOrigin,
    inquiry: Option<String>,
}

impl TryFrom<SlotRepr> for Slot {
    type Error = DomainError;

    fn try_from(r: SlotRepr) -> Result<Self, Self::Error> {
        match (r.value, r.inquiry) {
            (Some(v), None) => Slot::filled(r.key, v, r.origin),
            (None, Some(q)) => Slot::pending(r.key, q),
            (Some(_), Some(_)) => Err(DomainError::InquiryOnFilledSlot(r.key)),
            (None, None) => Err(DomainError::MissingInquiry(r.key)),
        }
    }
}

impl Slot {
    pub fn filled(key: impl Into<String>, value: impl Into<String>, origin: SlotOrigin) -> Result<Self, DomainError> {
        let key = clean_key(key.into())?;
        Ok(Self {
            key,
            value: Some(value.into().trim().to_string()),
            origin,
            inquiry: None,
        })
    }

    pub fn pending(key: impl Into<String>, inquiry: impl Into<String>) -> Result<Self, DomainError> {
        let key = clean_key(key.into())?;
        let inquiry = inquiry.into();
        let inquiry = if inquiry.trim().is_empty() {
            placeholder_inquiry(&key)
        } else {
            inquiry.trim().to_string()
        };
        Ok(Self {
            key,
            value: None,
            origin: SlotOrigin::Extracted,
            inquiry: Some(inquiry),
        })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn norm_key(&self) -> String {
        normalize_key(&self.key)
    }

    pub fn value(&self) -> Option<&str> {
        self.value.as_deref()
    }

    pub fn origin(&self) -> SlotOrigin {
        self.origin
    }

    pub fn inquiry(&self) -> Option<&str> {
        self.inquiry.as_deref()
    }

    pub fn is_pending(&self) -> bool {
        self.value.is_none()
    }
}

fn clean_key(key: String) -> Result<String, DomainError> {
    let k = key.split_whitespace().collect::<Vec<_>>().join(" ");
    if k.is_empty() {
        Err(DomainError::EmptyKey)
    } else {
        Ok(k)
    }
}

pub(crate) fn placeholder_inquiry(key: &str) -> String {
    format!("Please provide the {key}.")
}

/// Ordered set of slots with unique keys and a revision counter bumped by
/// every mutation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "SlotSetRepr")]
pub struct SlotSet {
    slots: Vec<Slot>,
    revision: u64,
}

#[derive(Deserialize)]
struct SlotSetRepr {
    slots: Vec<Slot>,
    revision: u64,
}

impl TryFrom<SlotSetRepr> for SlotSet {
    type Error = DomainError;

    fn try_from(r: SlotSetRepr) -> Result<Self, Self::Error> {
        ensure_unique(r.slots.iter())?;
        Ok(Self {
            slots: r.slots,
            revision: r.revision,
        })
    }
}

fn ensure_unique<'a>(slots: impl Iterator<Item = &'a Slot>) -> Result<(), DomainError> {
    let mut seen = HashSet::new();
    for s in slots {
        if !seen.insert(s.norm_key()) {
            return Err(DomainError::DuplicateKey(s.key.clone()));
        }
    }
    Ok(())
}

/// Builds a fresh slot set from `(key, value)` pairs. Null values get a
/// placeholder inquiry that an agent may overwrite later.
pub fn make_slot_set<K, V>(pairs: impl IntoIterator<Item = (K, Option<V>)>) -> Result<SlotSet, DomainError>
where
    K: Into<String>,
    V: Into<String>,
{
    let mut slots = Vec::new();
    for (k, v) in pairs {
        let k: String = k.into();
        let slot = match v {
            Some(v) => Slot::filled(k, v, SlotOrigin::Extracted)?,
            None => {
                let q = placeholder_inquiry(k.trim());
                Slot::pending(k, q)?
            }
        };
        slots.push(slot);
    }
    ensure_unique(slots.iter())?;
    Ok(SlotSet { slots, revision: 0 })
}

impl SlotSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from already-constructed slots (revision 0).
    pub fn from_slots(slots: Vec<Slot>) -> Result<Self, DomainError> {
        ensure_unique(slots.iter())?;
        Ok(Self { slots, revision: 0 })
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Slot> {
        let k = normalize_key(key);
        self.slots.iter().find(|s| s.norm_key() == k)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn value_of(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(Slot::value)
    }

    /// Normalized key set.
    pub fn keys(&self) -> Vec<String> {
        self.slots.iter().map(Slot::norm_key).collect()
    }

    pub fn pending(&self) -> impl Iterator<Item = &Slot> {
        self.slots.iter().filter(|s| s.is_pending())
    }

    /// `(key, value)` pairs, the content of the set without its revision.
    pub fn entries(&self) -> Vec<(String, Option<String>)> {
        self.slots.iter().map(|s| (s.key.clone(), s.value.clone())).collect()
    }

    /// Union with slots whose keys are all new. Never overwrites.
    pub fn apply_supplement(&self, additions: Vec<Slot>) -> Result<SlotSet, DomainError> {
        let mut seen: HashSet<String> = self.keys().into_iter().collect();
        for a in &additions {
            if !seen.insert(a.norm_key()) {
                return Err(DomainError::KeyCollision(a.key.clone()));
            }
        }
        let mut slots = self.slots.clone();
        slots.extend(additions);
        Ok(SlotSet {
            slots,
            revision: self.revision + 1,
        })
    }

    /// Drops every slot named in `delta` and merges back the same keys with
    /// their replacement values. The key set is unchanged.
    pub fn apply_update(
        &self,
        delta: &InconsistencySet,
        replacements: &BTreeMap<String, String>,
    ) -> Result<SlotSet, DomainError> {
        let repl: BTreeMap<String, &String> = replacements.iter().map(|(k, v)| (normalize_key(k), v)).collect();
        let mut targets = BTreeMap::new();
        for pair in &delta.pairs {
            let k = normalize_key(&pair.slot_key);
            if !self.contains(&k) {
                return Err(DomainError::UnknownKey(pair.slot_key.clone()));
            }
            let v = repl
                .get(&k)
                .ok_or_else(|| DomainError::MissingReplacement(pair.slot_key.clone()))?;
            targets.insert(k, (*v).clone());
        }
        let slots = self
            .slots
            .iter()
            .map(|s| match targets.get(&s.norm_key()) {
                Some(v) => Slot {
                    key: s.key.clone(),
                    value: Some(v.trim().to_string()),
                    origin: SlotOrigin::Updated,
                    inquiry: None,
                },
                None => s.clone(),
            })
            .collect();
        Ok(SlotSet {
            slots,
            revision: self.revision + 1,
        })
    }

    /// Fills a slot with a user-supplied answer.
    pub fn fill(&self, key: &str, value: &str) -> Result<SlotSet, DomainError> {
        let k = normalize_key(key);
        if !self.contains(&k) {
            return Err(DomainError::UnknownKey(key.to_string()));
        }
        let slots = self
            .slots
            .iter()
            .map(|s| {
                if s.norm_key() == k {
                    Slot {
                        key: s.key.clone(),
                        value: Some(value.trim().to_string()),
                        origin: SlotOrigin::UserSupplied,
                        inquiry: None,
                    }
                } else {
                    s.clone()
                }
            })
            .collect();
        Ok(SlotSet {
            slots,
            revision: self.revision + 1,
        })
    }

    /// Replaces the inquiry text of a pending slot.
    pub fn with_inquiry(&self, key: &str, inquiry: &str) -> Result<SlotSet, DomainError> {
        let k = normalize_key(key);
        let slot = self.get(&k).ok_or_else(|| DomainError::UnknownKey(key.to_string()))?;
        if !slot.is_pending() {
            return Err(DomainError::InquiryOnFilledSlot(key.to_string()));
        }
        let slots = self
            .slots
            .iter()
            .map(|s| {
                if s.norm_key() == k && !inquiry.trim().is_empty() {
                    Slot {
                        inquiry: Some(inquiry.trim().to_string()),
                        ..s.clone()
                    }
                } else {
                    s.clone()
                }
            })
            .collect();
        Ok(SlotSet {
            slots,
            revision: self.revision + 1,
        })
    }

    /// Moves the slot named `key` to the front.
    pub fn with_first(&self, key: &str) -> SlotSet {
        let k = normalize_key(key);
        let mut slots = self.slots.clone();
        if let Some(pos) = slots.iter().position(|s| s.norm_key() == k) {
            let s = slots.remove(pos);
            slots.insert(0, s);
        }
        SlotSet {
            slots,
            revision: self.revision,
        }
    }

    /// `key: value` lines as handed to generator prompts.
    pub fn render(&self) -> String {
        self.slots
            .iter()
            .map(|s| format!("{}: {}", s.key, s.value.as_deref().unwrap_or("null")))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// One slot/screen disagreement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inconsistency {
    pub slot_key: String,
    pub observed_value: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InconsistencySet {
    pub pairs: Vec<Inconsistency>,
}

impl InconsistencySet {
    pub fn new(pairs: Vec<Inconsistency>) -> Self {
        Self { pairs }
    }

    pub fn single(slot_key: &str, observed: &str, note: &str) -> Self {
        Self {
            pairs: vec![Inconsistency {
                slot_key: slot_key.to_string(),
                observed_value: observed.to_string(),
                note: note.to_string(),
            }],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn keys(&self) -> Vec<String> {
        self.pairs.iter().map(|p| normalize_key(&p.slot_key)).collect()
    }

    /// Every pair must name a slot present in `slots`.
    pub fn validate_against(&self, slots: &SlotSet) -> Result<(), DomainError> {
        match self.pairs.iter().find(|p| !slots.contains(&p.slot_key)) {
            Some(p) => Err(DomainError::UnknownKey(p.slot_key.clone())),
            None => Ok(()),
        }
    }
}

//! Information-managing agent: intent recognition, instruction
//! clarification, incremental slot supplementation and dilemma handling.
//! It is the only component that talks to the user.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    normalize_key, DomainError, InconsistencySet, Instruction, Intent, IntentSpace, Observation, Slot, SlotOrigin,
    SlotSet,
};
use crate::gateway::{Bindings, Gateway, GatewayError, TaggedFields, TemplateId};

#[derive(Debug, Error)]
pub enum ImaError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("intent `{0}` is not in the configured intent space")]
    IntentOutOfSpace(String),
    #[error("user declined: {0}")]
    UserDeclined(String),
    #[error("dilemma names unknown slot `{0}`")]
    UnknownSlotKey(String),
    #[error("unexpected reply to {0}")]
    UnexpectedReply(String),
    #[error("user channel: {0}")]
    Channel(String),
    #[error("{0} is empty")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InquiryKind {
    /// Asks for the value of a slot.
    SlotValue,
    /// Tells the user about a conflict and asks for a replacement value.
    Conflict,
    /// Asks the user to perform a step on the device directly.
    Takeover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InquiryStatus {
    Pending,
    Answered,
    Declined,
}

/// What the agent wants to ask; the channel assigns the inquiry id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub kind: InquiryKind,
    pub slot_key: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inquiry {
    pub id: String,
    pub kind: InquiryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_key: Option<String>,
    pub question: String,
    pub status: InquiryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
}

impl Inquiry {
    pub fn pending(id: impl Into<String>, q: &Question) -> Self {
        Self {
            id: id.into(),
            kind: q.kind,
            slot_key: q.slot_key.clone(),
            question: q.text.clone(),
            status: InquiryStatus::Pending,
            reply: None,
        }
    }

    /// Records the reply. Answered inquiries always carry a reply value.
    pub fn close(&mut self, reply: &Reply) {
        match reply {
            Reply::Value(v) => {
                self.status = InquiryStatus::Answered;
                self.reply = Some(v.clone());
            }
            Reply::TakeoverDone => {
                self.status = InquiryStatus::Answered;
                self.reply = Some("takeover_done".into());
            }
            Reply::Declined => {
                self.status = InquiryStatus::Declined;
                self.reply = None;
            }
        }
    }
}

/// A user's answer to an inquiry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Value(String),
    Declined,
    TakeoverDone,
}

/// Notifications the agent emits while it works, in the order things
/// happen.
#[derive(Debug, Clone, PartialEq)]
pub enum ImaEvent {
    SlotCreated(Slot),
    SlotFilled {
        key: String,
        value: String,
    },
    SlotUpdated {
        key: String,
        old: Option<String>,
        new: String,
    },
    InstructionClarified(String),
    Warning(String),
}

/// The agent's link to the user and to whoever records its progress.
pub trait ImaHost {
    /// Blocks until the user replies.
    fn ask(&mut self, q: Question) -> Result<Reply, ImaError>;
    fn note(&mut self, event: ImaEvent);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DilemmaKind {
    SlotConflict,
    PrivacySecurity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilemmaVerdict {
    pub kind: DilemmaKind,
    pub thought_or_reason: String,
    /// Slot to renegotiate; present exactly for slot conflicts.
    pub update_key: Option<String>,
    pub inquiry: String,
}

fn null_or(v: Option<&str>) -> Option<String> {
    v.map(str::trim)
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("null") && !s.eq_ignore_ascii_case("none"))
        .map(str::to_string)
}

fn bind(pairs: &[(&str, String)]) -> Bindings {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Maps the instruction to an intent label from `space`.
pub fn recognize_intent(gw: &mut Gateway, instr: &Instruction, space: &IntentSpace) -> Result<Intent, ImaError> {
    if instr.raw.trim().is_empty() {
        return Err(ImaError::EmptyInput("instruction"));
    }
    let b = bind(&[("taskIns", instr.raw.clone()), ("intent_list", space.render())]);
    let mut last = String::new();
    let r = gw.complete_validated(TemplateId::Intent, &b, |f| {
        let label = f.first("intent").unwrap_or_default().trim().to_string();
        match space.resolve(&label) {
            Some(i) => Ok(i),
            None => {
                last = label.clone();
                Err(GatewayError::SchemaViolation(format!(
                    "intent `{label}` outside the intent space"
                )))
            }
        }
    });
    match r {
        Ok(i) => Ok(i),
        Err(GatewayError::ParseExhausted { .. }) if !last.is_empty() => Err(ImaError::IntentOutOfSpace(last)),
        Err(e) => Err(e.into()),
    }
}

fn slots_from_groups(f: &TaggedFields, lead: &str, allow_values: bool) -> Result<Vec<Slot>, GatewayError> {
    let mut out = Vec::new();
    for g in f.groups(lead) {
        let key = g[lead].trim().to_string();
        let value = if allow_values {
            null_or(g.get("slot_value").map(String::as_str))
        } else {
            None
        };
        let slot = match value {
            Some(v) => Slot::filled(&key, v, SlotOrigin::Extracted),
            None => Slot::pending(&key, null_or(g.get("inquiry").map(String::as_str)).unwrap_or_default()),
        }
        .map_err(|e| GatewayError::SchemaViolation(e.to_string()))?;
        out.push(slot);
    }
    Ok(out)
}

/// Slot extraction step of clarification: one slot per explicit detail and
/// per category the intent needs, `app` first.
pub fn extract_slots(gw: &mut Gateway, instr: &Instruction, intent: &Intent) -> Result<SlotSet, ImaError> {
    let b = bind(&[("taskIns", instr.raw.clone()), ("intent", intent.label.clone())]);
    let set = gw.complete_validated(TemplateId::Preprocess, &b, |f| {
        let slots = slots_from_groups(f, "slot_name", true)?;
        let set = SlotSet::from_slots(slots).map_err(|e| GatewayError::SchemaViolation(e.to_string()))?;
        if !set.contains("app") {
            return Err(GatewayError::SchemaViolation("no `app` slot".into()));
        }
        Ok(set.with_first("app"))
    })?;
    Ok(set)
}

/// Rewrites `task_ins` so that it mentions every slot value.
pub fn update_instruction(gw: &mut Gateway, task_ins: &str, slots: &SlotSet) -> Result<String, ImaError> {
    let b = bind(&[("taskIns", task_ins.to_string()), ("slots_info", slots.render())]);
    let text = gw.complete_validated(TemplateId::InstructionUpdate, &b, |f| {
        let text = f.first("updated_task_ins").unwrap_or_default().trim().to_string();
        let missing = Instruction::missing_values(&text, slots);
        if text.is_empty() || !missing.is_empty() {
            return Err(GatewayError::SchemaViolation(format!(
                "updated instruction omits {missing:?}"
            )));
        }
        Ok(text)
    })?;
    Ok(text)
}

fn ask_value(host: &mut dyn ImaHost, kind: InquiryKind, key: &str, text: &str) -> Result<String, ImaError> {
    match host.ask(Question {
        kind,
        slot_key: Some(key.to_string()),
        text: text.to_string(),
    })? {
        Reply::Value(v) if !v.trim().is_empty() => Ok(v.trim().to_string()),
        Reply::Value(_) | Reply::Declined => Err(ImaError::UserDeclined(key.to_string())),
        Reply::TakeoverDone => Err(ImaError::UnexpectedReply(key.to_string())),
    }
}

/// Asks for every pending slot in order and fills it from the reply.
fn fill_pending(slots: SlotSet, host: &mut dyn ImaHost) -> Result<SlotSet, ImaError> {
    let mut slots = slots;
    let pending: Vec<(String, String)> = slots
        .pending()
        .map(|s| (s.key().to_string(), s.inquiry().unwrap_or_default().to_string()))
        .collect();
    for (key, question) in pending {
        let v = ask_value(host, InquiryKind::SlotValue, &key, &question)?;
        slots = slots.fill(&key, &v)?;
        host.note(ImaEvent::SlotFilled { key, value: v });
    }
    Ok(slots)
}

/// Builds the slot set for the instruction, asks the user for everything the
/// instruction leaves open, and returns the slots with the clarified
/// instruction.
pub fn clarify_instruction(
    gw: &mut Gateway,
    instr: &Instruction,
    intent: &Intent,
    host: &mut dyn ImaHost,
) -> Result<(SlotSet, Instruction), ImaError> {
    let slots = extract_slots(gw, instr, intent)?;
    for s in slots.slots() {
        host.note(ImaEvent::SlotCreated(s.clone()));
    }
    let slots = fill_pending(slots, host)?;
    let text = update_instruction(gw, &instr.raw, &slots)?;
    let clarified = instr.with_clarified(&text, &slots)?;
    host.note(ImaEvent::InstructionClarified(text));
    Ok((slots, clarified))
}

/// Slots the current screen needs that the set lacks. Proposals are pending
/// slots carrying their inquiry.
pub fn propose_slots(
    gw: &mut Gateway,
    task: &str,
    subtask: &str,
    slots: &SlotSet,
    obs: &Observation,
) -> Result<Vec<Slot>, ImaError> {
    let b = bind(&[
        ("task", task.to_string()),
        ("subtask", subtask.to_string()),
        ("slots_info", slots.render()),
        ("screen", obs.render()),
    ]);
    Ok(gw.complete_validated(TemplateId::SlotGen, &b, |f| slots_from_groups(f, "slot_name", false))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupplementOutcome {
    pub slots: SlotSet,
    pub added: Vec<String>,
    /// Refreshed instruction when slots were added.
    pub clarified: Option<String>,
}

/// Incremental supplementation: asks for slots the screen requires, merges
/// them, and refreshes the instruction. Keys that already exist are
/// reported and skipped.
pub fn supplement_slots(
    gw: &mut Gateway,
    obs: &Observation,
    slots: &SlotSet,
    subtask: &str,
    task: &str,
    host: &mut dyn ImaHost,
) -> Result<SupplementOutcome, ImaError> {
    let proposals = propose_slots(gw, task, subtask, slots, obs)?;
    let mut fresh = Vec::new();
    for p in proposals {
        let k = p.norm_key();
        if slots.contains(&k) || fresh.iter().any(|f: &Slot| f.norm_key() == k) {
            host.note(ImaEvent::Warning(format!(
                "slot generation proposed existing key `{}`; ignored",
                p.key()
            )));
        } else {
            fresh.push(p);
        }
    }
    if fresh.is_empty() {
        return Ok(SupplementOutcome {
            slots: slots.clone(),
            added: Vec::new(),
            clarified: None,
        });
    }
    let added: Vec<String> = fresh.iter().map(|s| s.key().to_string()).collect();
    for s in &fresh {
        host.note(ImaEvent::SlotCreated(s.clone()));
    }
    let merged = slots.apply_supplement(fresh)?;
    let merged = fill_pending(merged, host)?;
    let text = update_instruction(gw, task, &merged)?;
    host.note(ImaEvent::InstructionClarified(text.clone()));
    Ok(SupplementOutcome {
        slots: merged,
        added,
        clarified: Some(text),
    })
}

fn parse_kind(s: &str) -> Option<DilemmaKind> {
    let l = s.to_lowercase();
    if l.contains("privacy") || l.contains("security") || l.contains('2') {
        Some(DilemmaKind::PrivacySecurity)
    } else if l.contains("conflict") || l.contains("slot") || l.contains('1') {
        Some(DilemmaKind::SlotConflict)
    } else {
        None
    }
}

/// Classifies a HELP description as a slot conflict or a privacy/security
/// step that needs the user.
pub fn classify_dilemma(
    gw: &mut Gateway,
    description: &str,
    task_ins: &str,
    slots: &SlotSet,
    obs: &Observation,
) -> Result<DilemmaVerdict, ImaError> {
    if description.trim().is_empty() {
        return Err(ImaError::EmptyInput("dilemma description"));
    }
    let b = bind(&[
        ("dilemma_description", description.to_string()),
        ("task_ins", task_ins.to_string()),
        ("slot_info", slots.render()),
        ("screen", obs.render()),
    ]);
    let verdict = gw.complete_validated(TemplateId::Dilemma, &b, |f| {
        let kind = parse_kind(f.first("dilemma_type").unwrap_or_default())
            .ok_or_else(|| GatewayError::SchemaViolation("unknown dilemma_type".into()))?;
        let inquiry = f.first("inquiry").unwrap_or_default().trim().to_string();
        if inquiry.is_empty() {
            return Err(GatewayError::SchemaViolation("empty inquiry".into()));
        }
        let update_key = match kind {
            DilemmaKind::SlotConflict => Some(
                null_or(f.first("update_info_name"))
                    .ok_or_else(|| GatewayError::SchemaViolation("conflict without update_info_name".into()))?,
            ),
            DilemmaKind::PrivacySecurity => None,
        };
        let thought = match kind {
            DilemmaKind::SlotConflict => f.first("thought"),
            DilemmaKind::PrivacySecurity => f.first("reason").or(f.first("thought")),
        };
        Ok(DilemmaVerdict {
            kind,
            thought_or_reason: thought.unwrap_or_default().trim().to_string(),
            update_key,
            inquiry,
        })
    })?;
    if let Some(k) = &verdict.update_key {
        match slots.get(k) {
            Some(s) => {
                return Ok(DilemmaVerdict {
                    update_key: Some(s.key().to_string()),
                    ..verdict
                })
            }
            None => return Err(ImaError::UnknownSlotKey(k.clone())),
        }
    }
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    /// The conflicting slot now holds the user's replacement value.
    Updated {
        slots: SlotSet,
        key: String,
        old: Option<String>,
        new: String,
        clarified: String,
    },
    /// The user has to perform the step on the device.
    UserTakeover,
}

/// Notifies the user of a slot conflict and applies the replacement value,
/// or hands a privacy/security step over to the user.
pub fn resolve_conflict(
    gw: &mut Gateway,
    verdict: &DilemmaVerdict,
    task_ins: &str,
    slots: &SlotSet,
    host: &mut dyn ImaHost,
) -> Result<Resolution, ImaError> {
    let key = match (verdict.kind, &verdict.update_key) {
        (DilemmaKind::PrivacySecurity, _) => return Ok(Resolution::UserTakeover),
        (DilemmaKind::SlotConflict, Some(k)) => k.clone(),
        (DilemmaKind::SlotConflict, None) => return Err(ImaError::UnknownSlotKey(String::new())),
    };
    let old = slots
        .get(&key)
        .ok_or_else(|| ImaError::UnknownSlotKey(key.clone()))?
        .value()
        .map(str::to_string);
    let new = ask_value(host, InquiryKind::Conflict, &key, &verdict.inquiry)?;
    let delta = InconsistencySet::single(&key, old.as_deref().unwrap_or(""), &verdict.thought_or_reason);
    let repl = BTreeMap::from([(normalize_key(&key), new.clone())]);
    let updated = slots.apply_update(&delta, &repl)?;
    host.note(ImaEvent::SlotUpdated {
        key: key.clone(),
        old: old.clone(),
        new: new.clone(),
    });
    let clarified = update_instruction(gw, task_ins, &updated)?;
    host.note(ImaEvent::InstructionClarified(clarified.clone()));
    Ok(Resolution::Updated {
        slots: updated,
        key,
        old,
        new,
        clarified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_slot_set, Observation};
    use crate::gateway::{ScriptedBackend, TemplateSet};
    use std::collections::VecDeque;
    use std::sync::Arc;

    #[derive(Default)]
    struct Host {
        replies: VecDeque<Reply>,
        asked: Vec<Question>,
        events: Vec<ImaEvent>,
    }

    impl ImaHost for Host {
        fn ask(&mut self, q: Question) -> Result<Reply, ImaError> {
            self.asked.push(q);
            self.replies
                .pop_front()
                .ok_or_else(|| ImaError::Channel("no reply".into()))
        }
        fn note(&mut self, event: ImaEvent) {
            self.events.push(event);
        }
    }

    fn gw(s: ScriptedBackend) -> Gateway {
        Gateway::new(Arc::new(s), Arc::new(TemplateSet::builtin()), Default::default())
    }

    fn empty_obs() -> Observation {
        Observation {
            screen_id: "s".into(),
            title: "t".into(),
            width: 1080,
            height: 2400,
            elements: vec![],
            hidden: None,
        }
    }

    #[test]
    fn intent_in_and_out_of_space() {
        let space = IntentSpace::default();
        let instr = Instruction::new("Reserve the hotel in downtown Seattle");
        let b = bind(&[("taskIns", instr.raw.clone()), ("intent_list", space.render())]);
        let mut s = ScriptedBackend::new();
        s.insert(TemplateId::Intent, &b, "<intent>Hotel Reservation</intent>");
        assert_eq!(
            recognize_intent(&mut gw(s), &instr, &space).unwrap().label,
            "Hotel Reservation"
        );

        let mut s = ScriptedBackend::new();
        for a in 1..=3 {
            s.insert(
                TemplateId::Intent,
                &crate::gateway::attempt_bindings(&b, a),
                "<intent>Online Ride Booking</intent>",
            );
        }
        assert!(matches!(
            recognize_intent(&mut gw(s), &instr, &space),
            Err(ImaError::IntentOutOfSpace(l)) if l == "Online Ride Booking"
        ));
    }

    #[test]
    fn clarification_asks_only_for_null_slots() {
        let instr = Instruction::new("order tea on Meituan");
        let intent = Intent {
            label: "Takeaway Delivery".into(),
        };
        let mut s = ScriptedBackend::new();
        s.insert(
            TemplateId::Preprocess,
            &bind(&[("taskIns", instr.raw.clone()), ("intent", intent.label.clone())]),
            "<num>2</num><slot_name>item</slot_name><slot_value>tea</slot_value><inquiry>null</inquiry>\
             <slot_name>app</slot_name><slot_value>Meituan</slot_value><inquiry>null</inquiry>",
        );
        let filled = make_slot_set(vec![("app", Some("Meituan")), ("item", Some("tea"))]).unwrap();
        s.insert(
            TemplateId::InstructionUpdate,
            &bind(&[("taskIns", instr.raw.clone()), ("slots_info", filled.render())]),
            "<updated_task_ins>Order tea on the Meituan app</updated_task_ins>",
        );
        let mut host = Host::default();
        let (slots, clarified) = clarify_instruction(&mut gw(s), &instr, &intent, &mut host).unwrap();
        assert!(host.asked.is_empty());
        assert_eq!(slots.keys(), vec!["app", "item"]);
        assert_eq!(clarified.effective(), "Order tea on the Meituan app");
    }

    #[test]
    fn declined_inquiry_aborts() {
        let instr = Instruction::new("book a ride");
        let intent = Intent { label: "Ride".into() };
        let mut s = ScriptedBackend::new();
        s.insert(
            TemplateId::Preprocess,
            &bind(&[("taskIns", instr.raw.clone()), ("intent", intent.label.clone())]),
            "<num>2</num><slot_name>app</slot_name><slot_value>Didi</slot_value><inquiry>null</inquiry>\
             <slot_name>Budget Range</slot_name><slot_value>null</slot_value><inquiry>What is your budget range?</inquiry>",
        );
        let mut host = Host {
            replies: VecDeque::from([Reply::Declined]),
            ..Default::default()
        };
        assert!(matches!(
            clarify_instruction(&mut gw(s), &instr, &intent, &mut host),
            Err(ImaError::UserDeclined(k)) if k == "Budget Range"
        ));
        assert_eq!(host.asked[0].text, "What is your budget range?");
    }

    #[test]
    fn supplement_skips_existing_keys() {
        let slots = make_slot_set(vec![("app", Some("Meituan")), ("Delivery Address", Some("x"))]).unwrap();
        let obs = empty_obs();
        let mut s = ScriptedBackend::new();
        s.insert(
            TemplateId::SlotGen,
            &bind(&[
                ("task", "t".into()),
                ("subtask", "st".into()),
                ("slots_info", slots.render()),
                ("screen", obs.render()),
            ]),
            "<num>1</num><slot_name>delivery address</slot_name><inquiry>Where?</inquiry>",
        );
        let mut host = Host::default();
        let out = supplement_slots(&mut gw(s), &obs, &slots, "st", "t", &mut host).unwrap();
        assert_eq!(out.slots, slots);
        assert!(matches!(host.events[0], ImaEvent::Warning(_)));
    }

    #[test]
    fn conflict_verdict_must_name_existing_key() {
        let slots = make_slot_set(vec![("app", Some("Ctrip"))]).unwrap();
        let obs = empty_obs();
        let b = bind(&[
            ("dilemma_description", "a; b".into()),
            ("task_ins", "t".into()),
            ("slot_info", slots.render()),
            ("screen", obs.render()),
        ]);
        let mut s = ScriptedBackend::new();
        s.insert(
            TemplateId::Dilemma,
            &b,
            "<dilemma_type>Dilemma 1</dilemma_type><thought>x</thought><update_info_name>Cabin Class</update_info_name><inquiry>?</inquiry>",
        );
        assert!(matches!(
            classify_dilemma(&mut gw(s), "a; b", "t", &slots, &obs),
            Err(ImaError::UnknownSlotKey(k)) if k == "Cabin Class"
        ));
    }

    #[test]
    fn privacy_verdict_yields_takeover_without_slot_change() {
        let slots = make_slot_set(vec![("app", Some("JD.com"))]).unwrap();
        let v = DilemmaVerdict {
            kind: DilemmaKind::PrivacySecurity,
            thought_or_reason: "payment".into(),
            update_key: None,
            inquiry: "Please pay".into(),
        };
        let mut host = Host::default();
        let r = resolve_conflict(&mut gw(ScriptedBackend::new()), &v, "t", &slots, &mut host).unwrap();
        assert_eq!(r, Resolution::UserTakeover);
        assert!(host.asked.is_empty());
    }
}

use std::sync::Arc;

use serde_json::{json, Value};

use super::channel::{ScriptedReplies, SimUserChannel, UserChannel};
use super::config::{LocatorKind, RunConfig};
use super::trace::{EndStatus, EventKind, RunTrace, SessionLog, Tracer};
use super::OrchestratorError;
use crate::dma::{self, locate_target, locate_with_backend, DmaError, ScreenPoint, SimLocator};
use crate::domain::{Action, Instruction, Observation, TrajectoryStep};
use crate::gateway::{Backend, Gateway, TemplateSet};
use crate::ima::{self, ImaError, ImaEvent, ImaHost, Inquiry, InquiryKind, Question, Reply, Resolution};
use crate::memory::{KnowledgeBase, SessionStore};
use crate::ra::{self, asked_scope, summary_due, ReflectInput};
use crate::simenv::{expected_action, gold_judge, Device, Scenario, SimDevice, SimUser};

/// ImA's view of the session: questions go through the channel, everything
/// else lands in the trace.
struct Host<'a> {
    tracer: &'a mut Tracer,
    channel: &'a mut dyn UserChannel,
    store: &'a mut SessionStore,
    next_inquiry: &'a mut usize,
}

impl ImaHost for Host<'_> {
    fn ask(&mut self, q: Question) -> Result<Reply, ImaError> {
        let id = format!("q{}", *self.next_inquiry);
        *self.next_inquiry += 1;
        let mut inquiry = Inquiry::pending(id, &q);
        self.channel.prepare(&inquiry);
        self.tracer.emit(EventKind::Inquiry, json!(inquiry));
        self.store.pending_inquiries.push_back(inquiry.clone());
        let reply = self.channel.ask(&inquiry)?;
        self.store.pending_inquiries.retain(|i| i.id != inquiry.id);
        inquiry.close(&reply);
        self.tracer.emit(
            EventKind::UserReply,
            json!({"inquiry_id": inquiry.id, "kind": inquiry.kind, "slot_key": inquiry.slot_key, "reply": reply}),
        );
        Ok(reply)
    }

    fn note(&mut self, event: ImaEvent) {
        let (kind, payload) = match event {
            ImaEvent::SlotCreated(s) => (EventKind::SlotCreated, json!({ "slot": s })),
            ImaEvent::SlotFilled { key, value } => (EventKind::SlotFilled, json!({"key": key, "value": value})),
            ImaEvent::SlotUpdated { key, old, new } => {
                (EventKind::SlotUpdated, json!({"key": key, "old": old, "new": new}))
            }
            ImaEvent::InstructionClarified(text) => (EventKind::Instruction, json!({ "text": text })),
            ImaEvent::Warning(m) => (EventKind::Warning, json!({ "message": m })),
        };
        self.tracer.emit(kind, payload);
    }
}

/// One agent session over a simulated device.
pub struct Session {
    cfg: RunConfig,
    scenario: Scenario,
    gw: Gateway,
    device: SimDevice,
    store: SessionStore,
    tracer: Tracer,
    channel: Box<dyn UserChannel>,
    next_inquiry: usize,
    decompositions: usize,
    /// Device effect of each recorded step.
    effects: Vec<bool>,
}

struct Outcome {
    message: String,
    effect: bool,
    target_role: Option<crate::domain::ElementRole>,
}

impl Session {
    pub fn new(
        scenario: Scenario,
        instruction: Option<String>,
        cfg: RunConfig,
        backend: Arc<dyn Backend>,
        knowledge: Arc<KnowledgeBase>,
        channel: Box<dyn UserChannel>,
        log: Option<Arc<SessionLog>>,
    ) -> Result<Self, OrchestratorError> {
        cfg.validate()?;
        let text = instruction.unwrap_or_else(|| scenario.instruction());
        let store = SessionStore::new(Instruction::new(text), knowledge, cfg.summary_max);
        let gw = Gateway::new(backend, Arc::new(TemplateSet::builtin()), cfg.gen_params());
        Ok(Self {
            device: SimDevice::new(scenario.clone(), cfg.evaluator),
            scenario,
            gw,
            store,
            tracer: Tracer::new(log),
            channel,
            next_inquiry: 0,
            decompositions: 0,
            effects: Vec::new(),
            cfg,
        })
    }

    fn emit(&mut self, kind: EventKind, payload: Value) {
        self.tracer.emit(kind, payload);
    }

    fn host(&mut self) -> (&mut Gateway, Host<'_>) {
        (
            &mut self.gw,
            Host {
                tracer: &mut self.tracer,
                channel: self.channel.as_mut(),
                store: &mut self.store,
                next_inquiry: &mut self.next_inquiry,
            },
        )
    }

    /// Runs the session to its end and returns the finished trace.
    pub fn run(mut self) -> RunTrace {
        let started = json!({
            "scenario": self.scenario.name,
            "instruction": self.store.instruction.raw,
            "backend": self.gw_name(),
            "config": self.cfg,
        });
        self.emit(EventKind::SessionStarted, started);
        if let Err(e) = self.preprocess() {
            return self.end_with_error(&e);
        }
        for _ in 0..self.cfg.max_iterations {
            match self.iteration_with_retry() {
                Ok(true) => return self.end(EndStatus::Success, "task completed"),
                Ok(false) => {}
                Err(e) => return self.end_with_error(&e),
            }
        }
        self.end(EndStatus::Failure, "max iterations")
    }

    fn gw_name(&self) -> String {
        self.gw.backend_name().to_string()
    }

    fn preprocess(&mut self) -> Result<(), OrchestratorError> {
        let space = self.cfg.intent_space();
        let instr = self.store.instruction.clone();
        let intent = ima::recognize_intent(&mut self.gw, &instr, &space)?;
        self.emit(EventKind::Intent, json!({ "label": intent.label }));
        let (gw, mut host) = self.host();
        let (slots, clarified) = ima::clarify_instruction(gw, &instr, &intent, &mut host)?;
        self.store.intent = Some(intent);
        self.store.set_slots(slots)?;
        self.store.instruction = clarified;
        self.decompose()
    }

    /// (Re)builds the subtask list; subtasks whose text is unchanged keep
    /// their completion mark.
    fn decompose(&mut self) -> Result<(), OrchestratorError> {
        let text = self.store.instruction.effective().to_string();
        let app = self.store.app().map(str::to_string);
        let knowledge = self.store.knowledge().for_app(app.as_deref());
        let mut list = dma::decompose_task(&mut self.gw, &text, &knowledge, app.as_deref(), &self.cfg.user_marker)?;
        let previous = std::mem::take(&mut self.store.subtasks);
        for s in &mut list.items {
            s.completed = previous.items.iter().any(|p| p.completed && p.text == s.text);
        }
        self.decompositions += 1;
        self.store.subtasks = list;
        let payload = json!({
            "version": self.decompositions,
            "subtasks": self.store.subtasks.items,
            "previous": if previous.is_empty() { Value::Null } else { json!(previous.items) },
        });
        self.emit(EventKind::Decomposed, payload);
        Ok(())
    }

    fn iteration_with_retry(&mut self) -> Result<bool, OrchestratorError> {
        match self.iteration() {
            Ok(done) => Ok(done),
            Err(e) if e.is_fatal() => Err(e),
            Err(e) => {
                self.emit(EventKind::Warning, json!({"message": e.to_string(), "retry": true}));
                self.iteration()
            }
        }
    }

    /// The last `repeat_limit - 1` steps were the same ineffective action on
    /// the same screen.
    fn repeats(&self, action: &Action, screen: &str) -> bool {
        let n = self.cfg.repeat_limit - 1;
        let h = self.store.history();
        h.len() >= n
            && h[h.len() - n..]
                .iter()
                .zip(&self.effects[h.len() - n..])
                .all(|(s, eff)| !eff && s.action == *action && s.screen_id == screen)
    }

    fn locate(&mut self, obs: &Observation, desc: &str) -> Result<ScreenPoint, String> {
        match self.cfg.locator {
            LocatorKind::Sim => locate_target(obs, desc, &SimLocator::default()).map_err(|e| e.to_string()),
            LocatorKind::Backend => locate_with_backend(&mut self.gw, obs, desc).map_err(|e| match e {
                DmaError::Locate(l) => l.to_string(),
                other => other.to_string(),
            }),
        }
    }

    fn iteration(&mut self) -> Result<bool, OrchestratorError> {
        let t = self.store.t();
        let obs = self.device.observe();
        let visible = obs.visible();

        // information management
        let ctx = self.store.snapshot_context(self.cfg.window)?;
        let subtask = ctx.subtasks.current().map(|s| s.text.clone()).unwrap_or_default();
        let slots = self.store.slots().clone();
        let (gw, mut host) = self.host();
        let sup = ima::supplement_slots(gw, &visible, &slots, &subtask, &ctx.clarified_instruction, &mut host)?;
        if let Some(text) = &sup.clarified {
            self.store.instruction = self.store.instruction.with_clarified(text, &sup.slots)?;
        }
        self.store.set_slots(sup.slots)?;
        self.emit(
            EventKind::Supplement,
            json!({"t": t, "screen_id": visible.screen_id, "added": sup.added}),
        );

        // decision
        let ctx = self.store.snapshot_context(self.cfg.window)?;
        let d = dma::decide(&mut self.gw, &visible, self.store.last_reflection(), &ctx)?;
        let mut action = d.action.clone();
        let mut override_reason = None;
        if !action.is_help() && self.repeats(&action, &visible.screen_id) {
            override_reason = Some("repeated without effect");
            action = Action::help(
                &d.state_desc,
                &format!("{action} was repeated {} times without effect", self.cfg.repeat_limit),
            );
        }
        let mut point = None;
        if let Action::Click(desc) = &action {
            match self.locate(&visible, desc) {
                Ok(p) => point = Some(p),
                Err(e) => {
                    override_reason = Some("click target not resolved");
                    action = Action::help(&d.state_desc, &format!("the click target is unclear ({e})"));
                }
            }
        }
        let expected = self
            .cfg
            .evaluator
            .then(|| expected_action(&self.scenario, &self.device.state, self.store.slots()));
        self.emit(
            EventKind::Decision,
            json!({
                "t": t,
                "screen_id": visible.screen_id,
                "screen": obs,
                "state": d.state_desc,
                "plan": d.plan,
                "action": action.to_string(),
                "proposed": override_reason.map(|_| d.action.to_string()),
                "override": override_reason,
                "element_id": point.as_ref().map(|p| p.element_id.clone()),
                "point": point.as_ref().map(|p| [p.x, p.y]),
                "slots": self.store.slots().entries(),
                "expected": expected,
            }),
        );

        // dilemma path or device action
        let out = match &action {
            Action::Help(desc) => self.help_path(t, desc, &visible)?,
            _ => self.act(t, &action, point.as_ref()),
        };

        // reflection
        let after = self.device.observe();
        let after_visible = after.visible();
        let ctx = self.store.snapshot_context(self.cfg.window)?;
        let input = ReflectInput {
            step: t,
            before: &visible,
            after: &after_visible,
            action: &action,
            plan: &d.plan,
            target_role: out.target_role,
            ctx: &ctx,
        };
        let scope = self.cfg.scope();
        let r = ra::reflect(&mut self.gw, &input, scope)?;
        let truth = self.cfg.evaluator.then(|| {
            let dead = after.hidden.as_ref().is_some_and(|h| h.dead_end);
            json!({
                "effective": action.is_help() || (out.effect && !dead),
                "consistent": gold_judge(&self.scenario, &ctx.slots, &after).is_empty(),
            })
        });
        let completions = self.gw.drain_log();
        self.emit(
            EventKind::Reflection,
            json!({
                "t": t,
                "screen_id": after.screen_id,
                "result": r,
                "asked_scope": asked_scope(&action, scope),
                "truth": truth,
                "completions": completions,
            }),
        );
        self.store.subtasks.mark_completed(&r.completed_subtasks);
        let step = TrajectoryStep {
            index: t,
            screen_id: visible.screen_id.clone(),
            state_desc: d.state_desc.clone(),
            plan: d.plan.clone(),
            action,
            exec_report: format!("{}; {}", out.message, r.verdict()),
            reflection_ref: Some(t as u64),
        };
        let done = r.task_completed;
        self.store.reflections.push(r);
        self.store.record_step(step)?;
        self.effects.push(out.effect);

        let t1 = self.store.t();
        let cadence = self.cfg.summary_cadence;
        if summary_due(t1, cadence) {
            let window = &self.store.history()[t1 - cadence..t1];
            let s = ra::summarize(&mut self.gw, &self.store.summary, window, t1, cadence)?;
            self.emit(
                EventKind::Summary,
                json!({
                    "t": t1,
                    "text": s.summary.text,
                    "covers_through": s.summary.covers_through,
                    "truncated": s.truncated,
                }),
            );
            self.store.summary = s.summary;
        }
        Ok(done)
    }

    fn act(&mut self, t: usize, action: &Action, point: Option<&ScreenPoint>) -> Outcome {
        let before = self.device.observe();
        match self.device.execute(action, point) {
            Ok(r) => {
                let role = r
                    .element_id
                    .as_deref()
                    .and_then(|id| before.element(id))
                    .map(|e| e.role)
                    .filter(|_| matches!(action, Action::Click(_)));
                self.emit(
                    EventKind::ActionExecuted,
                    json!({
                        "t": t,
                        "action": action.to_string(),
                        "device_step": true,
                        "effect": r.effect,
                        "element_id": r.element_id,
                        "message": r.message,
                        "screen_after": r.screen_after,
                    }),
                );
                Outcome {
                    message: r.message,
                    effect: r.effect,
                    target_role: role,
                }
            }
            Err(e) => {
                let message = format!("action failed: {e}");
                self.emit(
                    EventKind::ActionExecuted,
                    json!({
                        "t": t,
                        "action": action.to_string(),
                        "device_step": false,
                        "effect": false,
                        "element_id": Value::Null,
                        "message": message,
                        "screen_after": before.screen_id,
                    }),
                );
                Outcome {
                    message,
                    effect: false,
                    target_role: None,
                }
            }
        }
    }

    fn help_path(&mut self, t: usize, desc: &str, visible: &Observation) -> Result<Outcome, OrchestratorError> {
        let slots = self.store.slots().clone();
        let task = self.store.instruction.effective().to_string();
        let v = ima::classify_dilemma(&mut self.gw, desc, &task, &slots, visible)?;
        self.emit(
            EventKind::Dilemma,
            json!({
                "t": t,
                "description": desc,
                "kind": v.kind,
                "update_key": v.update_key,
                "thought": v.thought_or_reason,
                "inquiry": v.inquiry,
            }),
        );
        let raw = self.store.instruction.raw.clone();
        let (gw, mut host) = self.host();
        match ima::resolve_conflict(gw, &v, &raw, &slots, &mut host)? {
            Resolution::Updated {
                slots,
                key,
                old,
                new,
                clarified,
            } => {
                self.store.instruction = self.store.instruction.with_clarified(&clarified, &slots)?;
                self.store.set_slots(slots)?;
                self.decompose()?;
                Ok(Outcome {
                    message: format!("{key} changed from {} to {new}", old.as_deref().unwrap_or("null")),
                    effect: false,
                    target_role: None,
                })
            }
            Resolution::UserTakeover => {
                let q = Question {
                    kind: InquiryKind::Takeover,
                    slot_key: None,
                    text: v.inquiry.clone(),
                };
                match host.ask(q)? {
                    Reply::TakeoverDone => {}
                    Reply::Declined => return Err(ImaError::UserDeclined("takeover".into()).into()),
                    Reply::Value(_) => return Err(ImaError::UnexpectedReply("takeover".into()).into()),
                }
                let before = self.device.observe().screen_id;
                self.device.takeover_done();
                let after = self.device.observe().screen_id;
                let effect = before != after;
                self.emit(
                    EventKind::Takeover,
                    json!({"t": t, "screen_before": before, "screen_after": after}),
                );
                Ok(Outcome {
                    message: format!("the user operated the device; now on {after}"),
                    effect,
                    target_role: None,
                })
            }
        }
    }

    fn end_with_error(self, e: &OrchestratorError) -> RunTrace {
        if e.is_declined() {
            self.end(EndStatus::Aborted, "user declined")
        } else {
            let reason = e.to_string();
            self.end(EndStatus::Failure, &reason)
        }
    }

    fn end(mut self, status: EndStatus, reason: &str) -> RunTrace {
        let truth = self.cfg.evaluator.then(|| {
            let screen = self.device.observe();
            json!({
                "screen_id": screen.screen_id,
                "terminal": screen.hidden.as_ref().is_some_and(|h| h.terminal),
                "ledger": self.device.state.ledger,
                "device_steps": self.device.state.steps,
            })
        });
        let payload = json!({
            "status": status,
            "reason": reason,
            "t": self.store.t(),
            "slots": self.store.slots().entries(),
            "subtasks": self.store.subtasks.items,
            "truth": truth,
            "completions": self.gw.drain_log(),
        });
        self.emit(EventKind::TaskEnd, payload);
        self.tracer.finish()
    }
}

/// Runs `scenario` with the scripted gold user.
pub fn run_scenario(
    scenario: &Scenario,
    cfg: &RunConfig,
    backend: Arc<dyn Backend>,
    knowledge: Arc<KnowledgeBase>,
) -> Result<RunTrace, OrchestratorError> {
    let channel = Box::new(SimUserChannel(SimUser::new(scenario)));
    Ok(Session::new(scenario.clone(), None, cfg.clone(), backend, knowledge, channel, None)?.run())
}

/// User replies recorded in a trace, in order.
pub fn replies_of(trace: &RunTrace) -> Result<Vec<Reply>, OrchestratorError> {
    trace
        .of_kind(EventKind::UserReply)
        .map(|e| {
            let r = e.payload.get("reply").cloned().unwrap_or(Value::Null);
            serde_json::from_value(r).map_err(|err| OrchestratorError::BadTrace(format!("event {}: {err}", e.seq)))
        })
        .collect()
}

/// Re-runs a recorded session with its own configuration, instruction and
/// user replies.
pub fn replay(
    trace: &RunTrace,
    scenario: &Scenario,
    backend: Arc<dyn Backend>,
    knowledge: Arc<KnowledgeBase>,
) -> Result<RunTrace, OrchestratorError> {
    let start = trace
        .of_kind(EventKind::SessionStarted)
        .next()
        .ok_or_else(|| OrchestratorError::BadTrace("no session_started event".into()))?;
    let cfg: RunConfig = serde_json::from_value(start.payload.get("config").cloned().unwrap_or(Value::Null))
        .map_err(|e| OrchestratorError::BadTrace(format!("config: {e}")))?;
    let instruction = start.str_field("instruction").map(str::to_string);
    let channel = Box::new(ScriptedReplies::new(replies_of(trace)?));
    Ok(Session::new(scenario.clone(), instruction, cfg, backend, knowledge, channel, None)?.run())
}

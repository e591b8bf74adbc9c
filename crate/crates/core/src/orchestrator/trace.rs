use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::OrchestratorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SessionStarted,
    Intent,
    SlotCreated,
    SlotFilled,
    Inquiry,
    UserReply,
    SlotUpdated,
    Instruction,
    Decomposed,
    Supplement,
    Decision,
    Dilemma,
    Takeover,
    ActionExecuted,
    Reflection,
    Summary,
    Warning,
    TaskEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SessionStarted => "session_started",
            EventKind::Intent => "intent",
            EventKind::SlotCreated => "slot_created",
            EventKind::SlotFilled => "slot_filled",
            EventKind::Inquiry => "inquiry",
            EventKind::UserReply => "user_reply",
            EventKind::SlotUpdated => "slot_updated",
            EventKind::Instruction => "instruction",
            EventKind::Decomposed => "decomposed",
            EventKind::Supplement => "supplement",
            EventKind::Decision => "decision",
            EventKind::Dilemma => "dilemma",
            EventKind::Takeover => "takeover",
            EventKind::ActionExecuted => "action_executed",
            EventKind::Reflection => "reflection",
            EventKind::Summary => "summary",
            EventKind::Warning => "warning",
            EventKind::TaskEnd => "task_end",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch; the only nondeterministic field.
    pub wall_ms: u64,
    pub kind: EventKind,
    pub payload: Value,
}

impl TraceEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    pub fn str_field(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndStatus {
    Success,
    Failure,
    Aborted,
}

/// Append-only event log of one session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
}

impl RunTrace {
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn end(&self) -> Option<&TraceEvent> {
        self.of_kind(EventKind::TaskEnd).last()
    }

    pub fn status(&self) -> Option<EndStatus> {
        self.end()
            .and_then(|e| e.payload.get("status"))
            .and_then(|s| serde_json::from_value(s.clone()).ok())
    }

    pub fn scenario_name(&self) -> Option<&str> {
        self.of_kind(EventKind::SessionStarted)
            .next()
            .and_then(|e| e.str_field("scenario"))
    }

    /// JSON lines with every wall time zeroed; equal for equal runs.
    pub fn canonical(&self) -> String {
        self.events
            .iter()
            .map(|e| {
                TraceEvent {
                    wall_ms: 0,
                    ..e.clone()
                }
                .to_line()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// First event where two runs differ, ignoring wall times and the
    /// backend label. `None` when they are the same run.
    pub fn first_divergence(&self, other: &RunTrace) -> Option<u64> {
        let norm = |e: &TraceEvent| {
            let mut e = TraceEvent {
                wall_ms: 0,
                ..e.clone()
            };
            if e.kind == EventKind::SessionStarted {
                if let Some(o) = e.payload.as_object_mut() {
                    o.remove("backend");
                }
            }
            e.to_line()
        };
        let n = self.events.len().max(other.events.len());
        (0..n)
            .find(|&i| self.events.get(i).map(norm) != other.events.get(i).map(norm))
            .map(|i| i as u64)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s: String = self.events.iter().map(|e| e.to_line() + "\n").collect();
        if s.is_empty() {
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, OrchestratorError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent =
                serde_json::from_str(line).map_err(|e| OrchestratorError::BadTrace(format!("line {}: {e}", i + 1)))?;
            events.push(e);
        }
        Ok(Self { events })
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), OrchestratorError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Default)]
struct LogState {
    events: Vec<TraceEvent>,
    done: bool,
}

/// Live copy of a session's events for any number of readers.
#[derive(Debug, Default)]
pub struct SessionLog {
    state: Mutex<LogState>,
    cond: Condvar,
}

impl SessionLog {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn push(&self, e: TraceEvent) {
        let mut s = self.state.lock().expect("log lock");
        s.events.push(e);
        self.cond.notify_all();
    }

    fn finish(&self) {
        self.state.lock().expect("log lock").done = true;
        self.cond.notify_all();
    }

    /// Events with `seq >= from`, and whether the session has ended.
    pub fn read_from(&self, from: u64) -> (Vec<TraceEvent>, bool) {
        let s = self.state.lock().expect("log lock");
        (s.events.iter().skip(from as usize).cloned().collect(), s.done)
    }

    /// Like [`read_from`](Self::read_from) but waits up to `timeout` for at
    /// least one new event.
    pub fn wait_from(&self, from: u64, timeout: Duration) -> (Vec<TraceEvent>, bool) {
        let s = self.state.lock().expect("log lock");
        let (s, _) = self
            .cond
            .wait_timeout_while(s, timeout, |s| s.events.len() as u64 <= from && !s.done)
            .expect("log lock");
        (s.events.iter().skip(from as usize).cloned().collect(), s.done)
    }

    pub fn trace(&self) -> RunTrace {
        RunTrace {
            events: self.state.lock().expect("log lock").events.clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.state.lock().expect("log lock").done
    }
}

/// Assigns sequence numbers and fans events out to the live log.
#[derive(Debug, Default)]
pub struct Tracer {
    trace: RunTrace,
    log: Option<Arc<SessionLog>>,
}

impl Tracer {
    pub fn new(log: Option<Arc<SessionLog>>) -> Self {
        Self {
            trace: RunTrace::default(),
            log,
        }
    }

    pub fn emit(&mut self, kind: EventKind, payload: Value) -> u64 {
        let seq = self.trace.events.len() as u64;
        let e = TraceEvent {
            seq,
            wall_ms: now_ms(),
            kind,
            payload,
        };
        if let Some(l) = &self.log {
            l.push(e.clone());
        }
        self.trace.events.push(e);
        seq
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn finish(self) -> RunTrace {
        if let Some(l) = &self.log {
            l.finish();
        }
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn jsonl_round_trip_and_canonical_form() {
        let mut t = Tracer::new(None);
        t.emit(EventKind::Intent, json!({"label": "Takeaway Delivery"}));
        t.emit(EventKind::TaskEnd, json!({"status": "success"}));
        let trace = t.finish();
        let back = RunTrace::from_jsonl(&trace.to_jsonl()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.status(), Some(EndStatus::Success));
        assert!(back.canonical().contains("\"wall_ms\":0"));
        assert_eq!(back.events[1].seq, 1);
    }

    #[test]
    fn live_log_resumes_from_seq() {
        let log = SessionLog::new();
        let mut t = Tracer::new(Some(log.clone()));
        for i in 0..5 {
            t.emit(EventKind::Warning, json!({ "i": i }));
        }
        let (evs, done) = log.read_from(3);
        assert_eq!(evs.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![3, 4]);
        assert!(!done);
        t.finish();
        let (evs, done) = log.wait_from(5, Duration::from_millis(10));
        assert!(evs.is_empty() && done);
    }
}

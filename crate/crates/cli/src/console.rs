//! Terminal side of a run: live event printing and stdin replies.

use std::io::{self, BufRead, Write};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use slotwise_core::ima::{ImaError, Inquiry, InquiryKind, Reply};
use slotwise_core::orchestrator::{EventKind, SessionLog, TraceEvent, UserChannel};

/// Asks inquiries on stdout and reads answers from stdin. An empty line
/// or `/decline` declines; any line confirms a takeover.
pub struct StdinChannel;

impl UserChannel for StdinChannel {
    fn ask(&mut self, inquiry: &Inquiry) -> Result<Reply, ImaError> {
        let hint = match inquiry.kind {
            InquiryKind::Takeover => " [press enter when done]",
            _ => "",
        };
        print!("? {}{hint}\n> ", inquiry.question);
        io::stdout().flush().map_err(|e| ImaError::Channel(e.to_string()))?;
        let mut line = String::new();
        let n = io::stdin()
            .lock()
            .read_line(&mut line)
            .map_err(|e| ImaError::Channel(e.to_string()))?;
        if n == 0 {
            return Err(ImaError::Channel("stdin closed".into()));
        }
        let line = line.trim();
        Ok(match inquiry.kind {
            InquiryKind::Takeover if line != "/decline" => Reply::TakeoverDone,
            _ if line.is_empty() || line == "/decline" => Reply::Declined,
            _ => Reply::Value(line.to_string()),
        })
    }
}

/// One-line rendering of an event for the terminal, or `None` to skip it.
pub fn describe(e: &TraceEvent) -> Option<String> {
    let p = &e.payload;
    let s = |k: &str| p[k].as_str().unwrap_or_default().to_string();
    let line = match e.kind {
        EventKind::SessionStarted => format!("session on `{}` with {}", s("scenario"), s("backend")),
        EventKind::Intent => format!("intent: {}", s("label")),
        EventKind::SlotCreated => {
            let slot = &p["slot"];
            format!(
                "slot {} = {}",
                slot["key"].as_str().unwrap_or_default(),
                slot["value"].as_str().unwrap_or("null")
            )
        }
        EventKind::SlotFilled => format!("slot {} = {}", s("key"), s("value")),
        EventKind::SlotUpdated => format!("slot {}: {} -> {}", s("key"), s("old"), s("new")),
        EventKind::Decision => format!("t={} {}", p["t"], s("action")),
        EventKind::ActionExecuted => format!("   {}", s("message")),
        EventKind::Dilemma => format!("   dilemma ({}): {}", s("kind"), s("description")),
        EventKind::UserReply => format!("   user: {}", p["reply"]),
        EventKind::Warning => format!("warning: {}", s("message")),
        EventKind::TaskEnd => format!("end: {} ({}) after {} steps", s("status"), s("reason"), p["t"]),
        _ => return None,
    };
    Some(line)
}

/// Prints events from `log` as they arrive until the session ends.
pub fn follow(log: Arc<SessionLog>, quiet: bool) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut from = 0;
        loop {
            let (batch, done) = log.wait_from(from, Duration::from_millis(200));
            from += batch.len() as u64;
            for e in &batch {
                if quiet && e.kind != EventKind::TaskEnd {
                    continue;
                }
                if let Some(l) = describe(e) {
                    println!("{l}");
                }
            }
            if done {
                break;
            }
        }
    })
}

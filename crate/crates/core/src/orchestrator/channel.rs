use std::collections::{BTreeSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ima::{ImaError, Inquiry, InquiryKind, Question, Reply};
use crate::simenv::SimUser;

/// Where inquiries go and replies come from.
pub trait UserChannel: Send {
    /// Called before the inquiry is announced, so replies that arrive
    /// before [`ask`](Self::ask) blocks are not lost.
    fn prepare(&mut self, _inquiry: &Inquiry) {}

    /// Blocks until the user answers `inquiry`.
    fn ask(&mut self, inquiry: &Inquiry) -> Result<Reply, ImaError>;
}

fn question_of(i: &Inquiry) -> Question {
    Question {
        kind: i.kind,
        slot_key: i.slot_key.clone(),
        text: i.question.clone(),
    }
}

/// Answers from the scenario's gold slots.
pub struct SimUserChannel(pub SimUser);

impl UserChannel for SimUserChannel {
    fn ask(&mut self, inquiry: &Inquiry) -> Result<Reply, ImaError> {
        Ok(self.0.answer(&question_of(inquiry)))
    }
}

/// Replays a fixed sequence of replies, e.g. the ones recorded in a trace.
#[derive(Debug, Clone, Default)]
pub struct ScriptedReplies {
    replies: VecDeque<Reply>,
}

impl ScriptedReplies {
    pub fn new(replies: impl IntoIterator<Item = Reply>) -> Self {
        Self {
            replies: replies.into_iter().collect(),
        }
    }
}

impl UserChannel for ScriptedReplies {
    fn ask(&mut self, inquiry: &Inquiry) -> Result<Reply, ImaError> {
        let r = self
            .replies
            .pop_front()
            .ok_or_else(|| ImaError::Channel(format!("no scripted reply for {}", inquiry.id)))?;
        let fits = match r {
            Reply::TakeoverDone => inquiry.kind == InquiryKind::Takeover,
            Reply::Value(_) => inquiry.kind != InquiryKind::Takeover,
            Reply::Declined => true,
        };
        if fits {
            Ok(r)
        } else {
            Err(ImaError::UnexpectedReply(inquiry.id.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ReplyError {
    #[error("unknown inquiry `{0}`")]
    UnknownInquiry(String),
    #[error("inquiry `{0}` was already answered")]
    AlreadyAnswered(String),
}

#[derive(Debug, Default)]
struct BrokerState {
    pending: Option<Inquiry>,
    answered: BTreeSet<String>,
    reply: Option<Reply>,
}

/// Hands replies submitted from another thread to the waiting session.
#[derive(Debug)]
pub struct ReplyBroker {
    state: Mutex<BrokerState>,
    cond: Condvar,
    timeout: Option<Duration>,
}

impl ReplyBroker {
    pub fn new(timeout: Option<Duration>) -> Self {
        Self {
            state: Mutex::new(BrokerState::default()),
            cond: Condvar::new(),
            timeout,
        }
    }

    pub fn pending(&self) -> Option<Inquiry> {
        self.state.lock().expect("broker lock").pending.clone()
    }

    /// Accepts the reply to the pending inquiry `inquiry_id`.
    pub fn submit(&self, inquiry_id: &str, reply: Reply) -> Result<(), ReplyError> {
        let mut s = self.state.lock().expect("broker lock");
        if s.answered.contains(inquiry_id) {
            return Err(ReplyError::AlreadyAnswered(inquiry_id.to_string()));
        }
        match &s.pending {
            Some(p) if p.id == inquiry_id && s.reply.is_none() => {
                s.reply = Some(reply);
                s.answered.insert(inquiry_id.to_string());
                self.cond.notify_all();
                Ok(())
            }
            _ => Err(ReplyError::UnknownInquiry(inquiry_id.to_string())),
        }
    }

    fn open(&self, inquiry: &Inquiry) {
        let mut s = self.state.lock().expect("broker lock");
        if s.pending.as_ref().is_none_or(|p| p.id != inquiry.id) {
            s.pending = Some(inquiry.clone());
            s.reply = None;
        }
    }

    fn wait(&self, inquiry: &Inquiry) -> Result<Reply, ImaError> {
        self.open(inquiry);
        let mut s = self.state.lock().expect("broker lock");
        let deadline = self.timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(r) = s.reply.take() {
                s.pending = None;
                return Ok(r);
            }
            s = match deadline {
                None => self.cond.wait(s).expect("broker lock"),
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        s.pending = None;
                        return Err(ImaError::Channel(format!(
                            "no reply to {} before the timeout",
                            inquiry.id
                        )));
                    }
                    self.cond.wait_timeout(s, left).expect("broker lock").0
                }
            };
        }
    }
}

impl UserChannel for std::sync::Arc<ReplyBroker> {
    fn prepare(&mut self, inquiry: &Inquiry) {
        self.open(inquiry);
    }

    fn ask(&mut self, inquiry: &Inquiry) -> Result<Reply, ImaError> {
        self.wait(inquiry)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;
    use std::thread;

    use super::*;

    fn inquiry(id: &str) -> Inquiry {
        Inquiry::pending(
            id,
            &Question {
                kind: InquiryKind::SlotValue,
                slot_key: Some("Price Limit".into()),
                text: "Budget?".into(),
            },
        )
    }

    #[test]
    fn broker_unblocks_waiting_session() {
        let broker = Arc::new(ReplyBroker::new(Some(Duration::from_secs(5))));
        let mut ch = broker.clone();
        let h = thread::spawn(move || ch.ask(&inquiry("q0")));
        while broker.pending().is_none() {
            thread::yield_now();
        }
        assert_eq!(
            broker.submit("q9", Reply::Declined),
            Err(ReplyError::UnknownInquiry("q9".into()))
        );
        broker.submit("q0", Reply::Value("20 RMB".into())).unwrap();
        assert_eq!(h.join().unwrap().unwrap(), Reply::Value("20 RMB".into()));
        assert_eq!(
            broker.submit("q0", Reply::Value("x".into())),
            Err(ReplyError::AlreadyAnswered("q0".into()))
        );
    }

    #[test]
    fn reply_between_prepare_and_ask_is_kept() {
        let mut broker = Arc::new(ReplyBroker::new(Some(Duration::from_secs(1))));
        broker.prepare(&inquiry("q0"));
        broker.submit("q0", Reply::Declined).unwrap();
        assert_eq!(broker.ask(&inquiry("q0")).unwrap(), Reply::Declined);
    }

    #[test]
    fn broker_times_out() {
        let mut broker = Arc::new(ReplyBroker::new(Some(Duration::from_millis(10))));
        assert!(matches!(broker.ask(&inquiry("q0")), Err(ImaError::Channel(_))));
        assert!(broker.pending().is_none());
    }

    #[test]
    fn scripted_replies_run_out() {
        let mut s = ScriptedReplies::new([Reply::Value("Large".into())]);
        assert_eq!(s.ask(&inquiry("q0")).unwrap(), Reply::Value("Large".into()));
        assert!(s.ask(&inquiry("q1")).is_err());
    }
}

//! Conversation transcript and the human-in-the-loop message state machine.
//!
//! Every incoming message is either a termination signal, answered by the
//! auto-reply callback, or (once `max_replies` consecutive auto-replies have
//! been produced in [`HilMode::Terminate`]) handed to a human who may
//! terminate, skip (fall through to the auto-reply) or intercept (reply in
//! place of the agent, which resets the counter).

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HUMAN: &str = "human";
pub const TERMINATION_TOKEN: &str = "TERMINATE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HilMode {
    /// Never ask a human; every message gets an auto-reply.
    Never,
    /// Ask a human once the auto-reply budget is spent.
    #[default]
    Terminate,
}

impl HilMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HilMode::Never => "never",
            HilMode::Terminate => "terminate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Task,
    Reply,
    Feedback,
    Termination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub sender: String,
    pub recipient: String,
    pub kind: MessageKind,
    pub content: String,
    pub timestamp: DateTime<Utc>,
}

impl Message {
    /// A message with `seq` 0; sequence numbers are assigned when the
    /// message is appended to a transcript.
    pub fn new(
        sender: impl Into<String>,
        recipient: impl Into<String>,
        kind: MessageKind,
        content: impl Into<String>,
    ) -> Self {
        Message {
            seq: 0,
            sender: sender.into(),
            recipient: recipient.into(),
            kind,
            content: content.into(),
            timestamp: Utc::now(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HilChoice {
    Terminate,
    Skip,
    Intercept,
}

impl fmt::Display for HilChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HilChoice::Terminate => "TERMINATE",
            HilChoice::Skip => "SKIP",
            HilChoice::Intercept => "INTERCEPT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilDecision {
    pub choice: HilChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement_content: Option<String>,
}

impl HilDecision {
    pub fn terminate() -> Self {
        HilDecision {
            choice: HilChoice::Terminate,
            replacement_content: None,
        }
    }

    pub fn skip() -> Self {
        HilDecision {
            choice: HilChoice::Skip,
            replacement_content: None,
        }
    }

    pub fn intercept(content: impl Into<String>) -> Self {
        HilDecision {
            choice: HilChoice::Intercept,
            replacement_content: Some(content.into()),
        }
    }

    /// INTERCEPT must carry non-empty replacement text.
    pub fn validate(&self) -> Result<(), String> {
        match (self.choice, &self.replacement_content) {
            (HilChoice::Intercept, Some(text)) if !text.trim().is_empty() => Ok(()),
            (HilChoice::Intercept, _) => {
                Err("INTERCEPT requires non-empty replacement content".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum HilError<E> {
    #[error("conversation is no longer active")]
    Inactive,
    #[error("invalid human decision: {0}")]
    InvalidDecision(String),
    #[error(transparent)]
    Callback(E),
}

/// What processing one message did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    /// The message was a termination message.
    Terminated,
    /// The auto-reply callback answered without human involvement.
    AutoReplied(Message),
    /// A human was asked and chose SKIP; the auto-reply answered.
    Skipped(Message),
    /// A human intercepted and replied.
    HumanReplied(Message),
    /// A human chose to end the conversation.
    HumanTerminated,
}

impl Step {
    pub fn reply(&self) -> Option<&Message> {
        match self {
            Step::AutoReplied(m) | Step::Skipped(m) | Step::HumanReplied(m) => Some(m),
            Step::Terminated | Step::HumanTerminated => None,
        }
    }
}

/// True when the message is explicitly a termination, or its trimmed content
/// ends with the uppercase `TERMINATE` token as a separate word.
pub fn is_termination_message(m: &Message) -> bool {
    if m.kind == MessageKind::Termination {
        return true;
    }
    let trimmed = m.content.trim_end();
    match trimmed.strip_suffix(TERMINATION_TOKEN) {
        Some(head) => head
            .chars()
            .next_back()
            .is_none_or(|c| !(c.is_alphanumeric() || c == '_')),
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationState {
    /// Replies produced by this conversation (auto and human), in order.
    pub transcript: Vec<Message>,
    /// Auto-replies since the last human touch.
    pub counter: u32,
    pub conversation_active: bool,
    pub mode: HilMode,
    pub max_replies: u32,
}

impl ConversationState {
    pub fn new(mode: HilMode, max_replies: u32) -> Self {
        assert!(max_replies >= 1, "max_replies must be positive");
        ConversationState {
            transcript: Vec::new(),
            counter: 0,
            conversation_active: true,
            mode,
            max_replies,
        }
    }

    fn append(&mut self, mut reply: Message) -> Message {
        reply.seq = self.transcript.last().map_or(1, |m| m.seq + 1);
        self.transcript.push(reply.clone());
        reply
    }

    /// Handles one incoming message. On a callback error nothing is
    /// appended and the conversation stays active.
    pub fn process_message<A, H, E>(
        &mut self,
        m: &Message,
        mut auto_reply: A,
        mut human: H,
    ) -> Result<Step, HilError<E>>
    where
        A: FnMut(&Message) -> Result<Message, E>,
        H: FnMut(&Message) -> Result<HilDecision, E>,
    {
        if !self.conversation_active {
            return Err(HilError::Inactive);
        }
        if is_termination_message(m) {
            self.conversation_active = false;
            return Ok(Step::Terminated);
        }
        match self.mode {
            HilMode::Never => {
                let reply = auto_reply(m).map_err(HilError::Callback)?;
                Ok(Step::AutoReplied(self.append(reply)))
            }
            HilMode::Terminate if self.counter >= self.max_replies => {
                let decision = human(m).map_err(HilError::Callback)?;
                decision.validate().map_err(HilError::InvalidDecision)?;
                match decision.choice {
                    HilChoice::Terminate => {
                        self.conversation_active = false;
                        Ok(Step::HumanTerminated)
                    }
                    HilChoice::Skip => {
                        let reply = auto_reply(m).map_err(HilError::Callback)?;
                        Ok(Step::Skipped(self.append(reply)))
                    }
                    HilChoice::Intercept => {
                        let content = decision.replacement_content.unwrap_or_default();
                        let reply = Message::new(HUMAN, m.sender.clone(), MessageKind::Reply, content);
                        let reply = self.append(reply);
                        self.counter = 0;
                        Ok(Step::HumanReplied(reply))
                    }
                }
            }
            HilMode::Terminate => {
                let reply = auto_reply(m).map_err(HilError::Callback)?;
                let reply = self.append(reply);
                self.counter += 1;
                Ok(Step::AutoReplied(reply))
            }
        }
    }

    /// Drives the conversation until it deactivates or the source runs dry.
    pub fn run_conversation<S, A, H, E>(
        &mut self,
        source: S,
        mut auto_reply: A,
        mut human: H,
    ) -> Result<(), HilError<E>>
    where
        S: IntoIterator<Item = Message>,
        A: FnMut(&Message) -> Result<Message, E>,
        H: FnMut(&Message) -> Result<HilDecision, E>,
    {
        let mut source = source.into_iter();
        while self.conversation_active {
            match source.next() {
                Some(m) => {
                    self.process_message(&m, &mut auto_reply, &mut human)?;
                }
                None => self.conversation_active = false,
            }
        }
        Ok(())
    }
}

/// One JSON object per line.
pub fn transcript_to_jsonl(messages: &[Message]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(&serde_json::to_string(m).expect("message serializes"));
        out.push('\n');
    }
    out
}

pub fn transcript_from_jsonl(text: &str) -> Result<Vec<Message>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

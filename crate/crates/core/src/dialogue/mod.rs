//! Conversation state: transcript, turn-taking phases, the clarification
//! loop and the memory of prior deliveries.
//!
//! The phase machine is
//!
//! ```text
//! AwaitingUser --submit_utterance--> AwaitingAssistant
//! AwaitingAssistant --ingest_reply(conversation | decode error)--> AwaitingUser
//! AwaitingAssistant --ingest_reply(commands)--> Executing
//! Executing --complete_execution--> AwaitingUser
//! ```

mod backend;
mod prompt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    parse_fixture, BackendError, EchoBackend, LiveBackend, LiveSettings, LlmBackend, ScriptedBackend,
    API_KEY_ENV,
};
pub use prompt::build_system_prompt;

use crate::command::{decode_reply, Command, CommandError, DecodedReply, MoveTarget, Token};
use crate::geometry::{Bounds, Point};
use crate::scene::Scene;

pub const DEFAULT_WINDOW_TURNS: usize = 20;

pub const DECODE_APOLOGY: &str =
    "Sorry, I could not turn that into a robot command. Could you say it again?";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DialogueError {
    #[error("operation `{op}` is not allowed in phase {phase:?}")]
    WrongPhase { op: &'static str, phase: Phase },
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("sample assistant line `{line}` is not valid: {source}")]
    InvalidExample { line: String, source: CommandError },
    #[error("the object manifest is empty")]
    EmptyManifest,
    #[error("transcript alternation violated: expected {expected:?}, got {got:?}")]
    Alternation { expected: Role, got: Role },
    #[error("session memory is missing the `back` waypoint")]
    MissingBack,
    #[error("waypoint `{0}` lies outside the workspace")]
    WaypointOutOfBounds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// Ordered messages: optional leading system message, then strictly
/// alternating user/assistant turns starting with the user.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Transcript {
    system: Option<ChatMessage>,
    turns: Vec<ChatMessage>,
}

impl Transcript {
    pub fn new(system_prompt: Option<String>) -> Self {
        Transcript {
            system: system_prompt.map(|p| ChatMessage::new(Role::System, p)),
            turns: Vec::new(),
        }
    }

    fn expected_role(&self) -> Role {
        match self.turns.last() {
            Some(m) if m.role == Role::User => Role::Assistant,
            _ => Role::User,
        }
    }

    pub fn push(&mut self, message: ChatMessage) -> Result<(), DialogueError> {
        let expected = self.expected_role();
        if message.role != expected {
            return Err(DialogueError::Alternation {
                expected,
                got: message.role,
            });
        }
        self.turns.push(message);
        Ok(())
    }

    pub fn system(&self) -> Option<&ChatMessage> {
        self.system.as_ref()
    }

    pub fn turns(&self) -> &[ChatMessage] {
        &self.turns
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        self.system.iter().chain(self.turns.iter()).cloned().collect()
    }

    /// System message plus at most `max_turns` of the most recent turns. The
    /// first retained turn is always a user turn.
    pub fn window(&self, max_turns: usize) -> Vec<ChatMessage> {
        let mut start = self.turns.len().saturating_sub(max_turns);
        if self.turns.get(start).is_some_and(|m| m.role != Role::User) {
            start += 1;
        }
        self.system
            .iter()
            .chain(self.turns[start.min(self.turns.len())..].iter())
            .cloned()
            .collect()
    }

    pub fn is_well_formed(&self) -> bool {
        self.turns.iter().enumerate().all(|(i, m)| {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            m.role == expected && !m.content.is_empty()
        })
    }
}

/// Remembered delivery target and named waypoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionMemory {
    last_delivery: Option<MoveTarget>,
    named_waypoints: BTreeMap<Token, Point>,
    bounds: Bounds,
}

impl SessionMemory {
    pub fn new(named_waypoints: BTreeMap<Token, Point>, bounds: Bounds) -> Result<Self, DialogueError> {
        if !named_waypoints.keys().any(|k| k.as_str() == "back") {
            return Err(DialogueError::MissingBack);
        }
        if let Some((name, _)) = named_waypoints.iter().find(|(_, p)| !bounds.contains(p)) {
            return Err(DialogueError::WaypointOutOfBounds(name.to_string()));
        }
        Ok(SessionMemory {
            last_delivery: None,
            named_waypoints,
            bounds,
        })
    }

    pub fn from_scene(scene: &Scene) -> Self {
        SessionMemory::new(scene.waypoints().clone(), *scene.bounds())
            .expect("scene guarantees `back` and in-bounds waypoints")
    }

    pub fn last_delivery(&self) -> Option<&MoveTarget> {
        self.last_delivery.as_ref()
    }

    pub fn waypoint(&self, name: &Token) -> Option<Point> {
        self.named_waypoints.get(name).copied()
    }

    pub fn named_waypoints(&self) -> &BTreeMap<Token, Point> {
        &self.named_waypoints
    }

    /// Records the Move preceding a trailing Drop, if the sequence has one.
    fn observe(&mut self, seq: &[Command]) {
        let [.., Command::Move { target }, Command::Drop { .. }] = seq else {
            return;
        };
        let storable = match target {
            MoveTarget::Cartesian { x, y, z } => self.bounds.contains(&Point::new(*x, *y, *z)),
            MoveTarget::Named { .. } => true,
        };
        if storable {
            self.last_delivery = Some(target.clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingUser,
    AwaitingAssistant,
    Executing,
}

/// Messages to send to the backend for one generate call.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayKind {
    /// The assistant is asking or chatting; no commands were present.
    Conversation,
    /// The reply could not be decoded and was replaced by an apology.
    DecodeError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Relay { text: String, kind: RelayKind },
    Execute(Vec<Command>),
}

#[derive(Debug, Clone)]
pub struct DialogueState {
    phase: Phase,
    transcript: Transcript,
    memory: SessionMemory,
    window_turns: usize,
}

impl DialogueState {
    pub fn new(system_prompt: Option<String>, memory: SessionMemory) -> Self {
        DialogueState {
            phase: Phase::AwaitingUser,
            transcript: Transcript::new(system_prompt),
            memory,
            window_turns: DEFAULT_WINDOW_TURNS,
        }
    }

    pub fn with_window(mut self, max_turns: usize) -> Self {
        self.window_turns = max_turns.max(2);
        self
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn memory(&self) -> &SessionMemory {
        &self.memory
    }

    fn require(&self, op: &'static str, phase: Phase) -> Result<(), DialogueError> {
        if self.phase != phase {
            return Err(DialogueError::WrongPhase { op, phase: self.phase });
        }
        Ok(())
    }

    pub fn submit_utterance(&mut self, text: &str) -> Result<BackendRequest, DialogueError> {
        self.require("submit_utterance", Phase::AwaitingUser)?;
        if text.trim().is_empty() {
            return Err(DialogueError::EmptyUtterance);
        }
        self.transcript.push(ChatMessage::new(Role::User, text))?;
        self.phase = Phase::AwaitingAssistant;
        Ok(BackendRequest {
            messages: self.transcript_window(self.window_turns),
        })
    }

    /// Classifies an assistant reply. Commands move the session to
    /// `Executing`; conversation and undecodable replies are relayed to the
    /// operator. Undecodable replies never surface as errors.
    pub fn ingest_reply(&mut self, reply: &str) -> Result<Effect, DialogueError> {
        self.require("ingest_reply", Phase::AwaitingAssistant)?;
        let (effect, stored) = match decode_reply(reply) {
            Ok(DecodedReply::Conversation(text)) => (
                Effect::Relay {
                    text,
                    kind: RelayKind::Conversation,
                },
                reply.to_string(),
            ),
            Ok(DecodedReply::Commands(seq)) => {
                self.memory.observe(&seq);
                (Effect::Execute(seq), reply.to_string())
            }
            Err(err) => {
                tracing::warn!(%err, "undecodable assistant reply");
                (
                    Effect::Relay {
                        text: DECODE_APOLOGY.to_string(),
                        kind: RelayKind::DecodeError,
                    },
                    DECODE_APOLOGY.to_string(),
                )
            }
        };
        self.transcript.push(ChatMessage::new(Role::Assistant, stored))?;
        self.phase = match effect {
            Effect::Execute(_) => Phase::Executing,
            Effect::Relay { .. } => Phase::AwaitingUser,
        };
        Ok(effect)
    }

    /// Withdraws the pending utterance after a failed backend call, so the
    /// operator can retry.
    pub fn cancel_submission(&mut self) -> Result<(), DialogueError> {
        self.require("cancel_submission", Phase::AwaitingAssistant)?;
        self.transcript.turns.pop();
        self.phase = Phase::AwaitingUser;
        Ok(())
    }

    /// Ends an execution (successful or not) and hands the turn back to the
    /// operator.
    pub fn complete_execution(&mut self) -> Result<(), DialogueError> {
        self.require("complete_execution", Phase::Executing)?;
        self.phase = Phase::AwaitingUser;
        Ok(())
    }

    pub fn transcript_window(&self, max_turns: usize) -> Vec<ChatMessage> {
        self.transcript.window(max_turns)
    }
}

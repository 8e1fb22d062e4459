//! Bracketed command grammar and the decoder that pulls typed command
//! sequences out of free-form assistant text.
//!
//! The grammar has three verbs, matched case-insensitively:
//!
//! ```text
//! Grab [object]      Move [x,y,z]      Move [waypoint]      Drop [object]
//! ```
//!
//! Whitespace inside the brackets is ignored. Numbers are plain decimals with
//! an optional sign; exponent notation is not part of the grammar.

use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

static COMMAND_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\b(grab|move|drop)\s*\[([^\]]*)\]").expect("command regex"));
static NUMBER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)$").expect("number regex"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("assistant reply is empty")]
    EmptyReply,
    #[error("malformed command `{keyword} [{body}]` at byte {offset}")]
    MalformedCommand {
        keyword: String,
        body: String,
        offset: usize,
    },
    #[error("invalid token `{0}`: expected [a-z][a-z0-9_-]*")]
    InvalidToken(String),
}

fn is_token(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

/// Lowercase name token used for scene objects and named waypoints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    /// Parses a token, folding ASCII case.
    pub fn new(raw: &str) -> Result<Self, CommandError> {
        let folded = raw.to_ascii_lowercase();
        if is_token(&folded) {
            Ok(Token(folded))
        } else {
            Err(CommandError::InvalidToken(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Token {
    type Error = CommandError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Token::new(&value)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> Self {
        t.0
    }
}

impl FromStr for Token {
    type Err = CommandError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Token::new(s)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Scene object name, e.g. `screw` or `drill`.
pub type ObjectId = Token;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MoveTarget {
    /// Meters in the robot base frame, z up.
    Cartesian { x: f64, y: f64, z: f64 },
    Named { waypoint: Token },
}

impl MoveTarget {
    pub fn cartesian(x: f64, y: f64, z: f64) -> Self {
        MoveTarget::Cartesian { x, y, z }
    }

    pub fn named(waypoint: &str) -> Result<Self, CommandError> {
        Ok(MoveTarget::Named {
            waypoint: Token::new(waypoint)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum Command {
    Grab { object: ObjectId },
    Move { target: MoveTarget },
    Drop { object: ObjectId },
}

impl Command {
    pub fn grab(name: &str) -> Result<Self, CommandError> {
        Ok(Command::Grab {
            object: Token::new(name)?,
        })
    }

    pub fn drop(name: &str) -> Result<Self, CommandError> {
        Ok(Command::Drop {
            object: Token::new(name)?,
        })
    }

    pub fn move_to(x: f64, y: f64, z: f64) -> Self {
        Command::Move {
            target: MoveTarget::cartesian(x, y, z),
        }
    }

    pub fn move_named(waypoint: &str) -> Result<Self, CommandError> {
        Ok(Command::Move {
            target: MoveTarget::named(waypoint)?,
        })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_command(self))
    }
}

pub type CommandSequence = Vec<Command>;

#[derive(Debug, Clone, PartialEq)]
pub enum DecodedReply {
    Commands(CommandSequence),
    Conversation(String),
}

impl DecodedReply {
    pub fn is_conversation(&self) -> bool {
        matches!(self, DecodedReply::Conversation(_))
    }
}

enum BracketBody {
    Token(Token),
    Vector([f64; 3]),
}

fn parse_body(body: &str) -> Option<BracketBody> {
    let compact: String = body.chars().filter(|c| !c.is_whitespace()).collect();
    if let Ok(tok) = Token::new(&compact) {
        return Some(BracketBody::Token(tok));
    }
    let parts: Vec<&str> = compact.split(',').collect();
    if parts.len() != 3 {
        return None;
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        if !NUMBER_RE.is_match(part) {
            return None;
        }
        let value: f64 = part.parse().ok()?;
        if !value.is_finite() {
            return None;
        }
        *slot = value;
    }
    Some(BracketBody::Vector(out))
}

/// Decodes an assistant reply.
///
/// Any well-formed command pattern turns the whole reply into a command
/// sequence in textual order; surrounding prose is ignored. A keyword followed
/// by a bracket group that is neither a token nor a 3-vector rejects the
/// entire reply.
pub fn decode_reply(text: &str) -> Result<DecodedReply, CommandError> {
    if text.trim().is_empty() {
        return Err(CommandError::EmptyReply);
    }

    let mut commands = Vec::new();
    for caps in COMMAND_RE.captures_iter(text) {
        let keyword = caps.get(1).expect("keyword group");
        let body = caps.get(2).expect("body group").as_str();
        let malformed = || CommandError::MalformedCommand {
            keyword: keyword.as_str().to_string(),
            body: body.to_string(),
            offset: keyword.start(),
        };
        let parsed = parse_body(body).ok_or_else(malformed)?;
        let verb = keyword.as_str().to_ascii_lowercase();
        let cmd = match (verb.as_str(), parsed) {
            ("grab", BracketBody::Token(object)) => Command::Grab { object },
            ("drop", BracketBody::Token(object)) => Command::Drop { object },
            ("move", BracketBody::Token(waypoint)) => Command::Move {
                target: MoveTarget::Named { waypoint },
            },
            ("move", BracketBody::Vector([x, y, z])) => Command::Move {
                target: MoveTarget::Cartesian { x, y, z },
            },
            _ => return Err(malformed()),
        };
        commands.push(cmd);
    }

    if commands.is_empty() {
        let body = text
            .strip_suffix("\r\n")
            .or_else(|| text.strip_suffix('\n'))
            .unwrap_or(text);
        Ok(DecodedReply::Conversation(body.to_string()))
    } else {
        Ok(DecodedReply::Commands(commands))
    }
}

/// Canonical text form of a command: `Grab [name]`, `Move [x,y,z]`,
/// `Move [name]`, `Drop [name]`.
pub fn render_command(cmd: &Command) -> String {
    match cmd {
        Command::Grab { object } => format!("Grab [{object}]"),
        Command::Drop { object } => format!("Drop [{object}]"),
        Command::Move {
            target: MoveTarget::Named { waypoint },
        } => format!("Move [{waypoint}]"),
        // f64 Display is the shortest round-tripping decimal and never uses
        // exponent notation.
        Command::Move {
            target: MoveTarget::Cartesian { x, y, z },
        } => format!("Move [{x},{y},{z}]"),
    }
}

/// Renders a sequence as a single space-separated line.
pub fn render_sequence(cmds: &[Command]) -> String {
    cmds.iter()
        .map(render_command)
        .collect::<Vec<_>>()
        .join(" ")
}

//! In-process publish/subscribe bus and its line-delimited wire encoding.
//!
//! Every envelope carries a per-topic sequence number starting at 1 and a
//! session-relative timestamp in simulated milliseconds, so a session log is
//! reproducible byte for byte.

use std::collections::HashMap;
use std::fmt;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TryRecvError, TrySendError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Per-subscriber queue bound; a subscriber that falls this far behind is
/// disconnected.
pub const SUBSCRIBER_QUEUE: usize = 1024;

static TOPIC_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"^[a-z0-9_]+(/[a-z0-9_]+)*$").expect("topic regex"));

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("malformed topic `{0}`")]
    MalformedTopic(String),
    #[error("malformed subscription pattern `{0}`")]
    MalformedPattern(String),
    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
}

/// Fixed topic catalog. Each topic has a single writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topic {
    UserUtterance,
    AssistantReply,
    RobotCommand,
    RobotState,
    SceneObjects,
    ExecStatus,
    SessionEvent,
}

impl Topic {
    pub const ALL: [Topic; 7] = [
        Topic::UserUtterance,
        Topic::AssistantReply,
        Topic::RobotCommand,
        Topic::RobotState,
        Topic::SceneObjects,
        Topic::ExecStatus,
        Topic::SessionEvent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::UserUtterance => "user/utterance",
            Topic::AssistantReply => "assistant/reply",
            Topic::RobotCommand => "robot/command",
            Topic::RobotState => "robot/state",
            Topic::SceneObjects => "scene/objects",
            Topic::ExecStatus => "exec/status",
            Topic::SessionEvent => "session/event",
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn is_valid_topic(topic: &str) -> bool {
    TOPIC_RE.is_match(topic)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub topic: String,
    pub seq: u64,
    pub ts_ms: u64,
    pub payload: Value,
}

/// Encodes an envelope as one line of JSON (no trailing newline).
pub fn encode_envelope(e: &Envelope) -> String {
    serde_json::to_string(e).expect("envelope serialization is infallible")
}

pub fn decode_envelope(line: &str) -> Result<Envelope, BusError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let envelope: Envelope = serde_json::from_str(line).map_err(|e| BusError::Decode {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if !is_valid_topic(&envelope.topic) {
        return Err(BusError::Decode {
            offset: 0,
            message: format!("malformed topic `{}`", envelope.topic),
        });
    }
    if envelope.seq == 0 {
        return Err(BusError::Decode {
            offset: 0,
            message: "seq starts at 1".into(),
        });
    }
    Ok(envelope)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pattern {
    All,
    Exact(String),
    Prefix(String),
}

impl Pattern {
    fn parse(pattern: &str) -> Result<Self, BusError> {
        if pattern == "*" {
            return Ok(Pattern::All);
        }
        if let Some(prefix) = pattern.strip_suffix("/*") {
            if is_valid_topic(prefix) {
                return Ok(Pattern::Prefix(format!("{prefix}/")));
            }
        } else if is_valid_topic(pattern) {
            return Ok(Pattern::Exact(pattern.to_string()));
        }
        Err(BusError::MalformedPattern(pattern.to_string()))
    }

    fn matches(&self, topic: &str) -> bool {
        match self {
            Pattern::All => true,
            Pattern::Exact(t) => t == topic,
            Pattern::Prefix(p) => topic.starts_with(p.as_str()),
        }
    }
}

/// Synchronous consumer invoked inside `publish`, used for session logs.
pub trait EnvelopeSink: Send {
    fn accept(&mut self, envelope: &Envelope);
    fn flush(&mut self) {}
}

struct Subscriber {
    id: u64,
    pattern: Pattern,
    tx: SyncSender<Envelope>,
}

#[derive(Default)]
struct Inner {
    seqs: HashMap<String, u64>,
    subscribers: Vec<Subscriber>,
    sinks: Vec<(Pattern, Box<dyn EnvelopeSink>)>,
    clock_ms: u64,
    next_id: u64,
}

/// Cloneable handle to one bus. Each session owns its own bus, so sequence
/// counters are per session.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Mutex<Inner>>,
}

impl fmt::Debug for Bus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.lock();
        f.debug_struct("Bus")
            .field("clock_ms", &inner.clock_ms)
            .field("subscribers", &inner.subscribers.len())
            .finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Sets the timestamp applied to subsequent envelopes.
    pub fn set_clock_ms(&self, ms: u64) {
        self.lock().clock_ms = ms;
    }

    pub fn clock_ms(&self) -> u64 {
        self.lock().clock_ms
    }

    pub fn publish(&self, topic: &str, payload: Value) -> Result<Envelope, BusError> {
        if !is_valid_topic(topic) {
            return Err(BusError::MalformedTopic(topic.to_string()));
        }
        let mut inner = self.lock();
        let seq = {
            let counter = inner.seqs.entry(topic.to_string()).or_insert(0);
            *counter += 1;
            *counter
        };
        let envelope = Envelope {
            topic: topic.to_string(),
            seq,
            ts_ms: inner.clock_ms,
            payload,
        };
        for (pattern, sink) in inner.sinks.iter_mut() {
            if pattern.matches(topic) {
                sink.accept(&envelope);
            }
        }
        inner.subscribers.retain(|sub| {
            if !sub.pattern.matches(topic) {
                return true;
            }
            match sub.tx.try_send(envelope.clone()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    tracing::warn!(subscriber = sub.id, "subscriber queue full, disconnecting");
                    false
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
        Ok(envelope)
    }

    pub fn publish_topic(&self, topic: Topic, payload: Value) -> Envelope {
        self.publish(topic.as_str(), payload).expect("catalog topics are well formed")
    }

    /// Subscribes to an exact topic, a `prefix/*` wildcard or `*`. Only
    /// envelopes published after this call are delivered.
    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        self.subscribe_with_capacity(pattern, SUBSCRIBER_QUEUE)
    }

    pub fn subscribe_with_capacity(&self, pattern: &str, capacity: usize) -> Result<Subscription, BusError> {
        let pattern = Pattern::parse(pattern)?;
        let (tx, rx) = mpsc::sync_channel(capacity);
        let mut inner = self.lock();
        inner.next_id += 1;
        let id = inner.next_id;
        inner.subscribers.push(Subscriber { id, pattern, tx });
        Ok(Subscription { rx })
    }

    pub fn add_sink(&self, pattern: &str, sink: Box<dyn EnvelopeSink>) -> Result<(), BusError> {
        let pattern = Pattern::parse(pattern)?;
        self.lock().sinks.push((pattern, sink));
        Ok(())
    }

    pub fn flush_sinks(&self) {
        for (_, sink) in self.lock().sinks.iter_mut() {
            sink.flush();
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.lock().subscribers.len()
    }

    /// Drops all subscribers, ending their streams.
    pub fn close(&self) {
        let mut inner = self.lock();
        inner.subscribers.clear();
        for (_, sink) in inner.sinks.iter_mut() {
            sink.flush();
        }
    }
}

/// Stream of envelopes for one subscriber.
#[derive(Debug)]
pub struct Subscription {
    rx: Receiver<Envelope>,
}

impl Subscription {
    /// Blocks until the next envelope; `None` once disconnected and drained.
    pub fn recv(&self) -> Option<Envelope> {
        self.rx.recv().ok()
    }

    pub fn try_recv(&self) -> Result<Option<Envelope>, Disconnected> {
        match self.rx.try_recv() {
            Ok(e) => Ok(Some(e)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(Disconnected),
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Envelope>, Disconnected> {
        match self.rx.recv_timeout(timeout) {
            Ok(e) => Ok(Some(e)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(Disconnected),
        }
    }

    /// Everything currently queued.
    pub fn drain(&self) -> Vec<Envelope> {
        self.rx.try_iter().collect()
    }
}

impl IntoIterator for Subscription {
    type Item = Envelope;
    type IntoIter = mpsc::IntoIter<Envelope>;
    fn into_iter(self) -> Self::IntoIter {
        self.rx.into_iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("subscription disconnected")]
pub struct Disconnected;

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seq_counts_per_topic() {
        let bus = Bus::new();
        assert_eq!(bus.publish("robot/state", json!({})).unwrap().seq, 1);
        assert_eq!(bus.publish("robot/state", json!({})).unwrap().seq, 2);
        assert_eq!(bus.publish("exec/status", json!({})).unwrap().seq, 1);
    }

    #[test]
    fn malformed_topics_and_patterns() {
        let bus = Bus::new();
        assert_eq!(
            bus.publish("Robot State", json!(null)),
            Err(BusError::MalformedTopic("Robot State".into()))
        );
        assert!(bus.publish("robot//state", json!(null)).is_err());
        assert!(bus.publish("/robot", json!(null)).is_err());
        assert!(matches!(bus.subscribe("robot/"), Err(BusError::MalformedPattern(_))));
        assert!(matches!(bus.subscribe("*/state"), Err(BusError::MalformedPattern(_))));
    }

    #[test]
    fn publish_without_subscribers() {
        let bus = Bus::new();
        let e = bus.publish("session/event", json!({"event": "start"})).unwrap();
        assert_eq!(e.seq, 1);
    }

    #[test]
    fn wildcard_and_exact_subscriptions() {
        let bus = Bus::new();
        let robot = bus.subscribe("robot/*").unwrap();
        let exec = bus.subscribe("exec/status").unwrap();
        bus.publish("robot/state", json!(1)).unwrap();
        bus.publish("robot/command", json!(2)).unwrap();
        bus.publish("exec/status", json!(3)).unwrap();
        bus.publish("robotics/x", json!(4)).unwrap();
        let topics: Vec<String> = robot.drain().into_iter().map(|e| e.topic).collect();
        assert_eq!(topics, vec!["robot/state", "robot/command"]);
        let exec: Vec<Envelope> = exec.drain();
        assert_eq!(exec.len(), 1);
        assert_eq!(exec[0].payload, json!(3));
    }

    #[test]
    fn no_replay_for_late_subscribers() {
        let bus = Bus::new();
        bus.publish("exec/status", json!("early")).unwrap();
        let sub = bus.subscribe("exec/status").unwrap();
        bus.publish("exec/status", json!("late")).unwrap();
        let got = sub.drain();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].seq, 2);
    }

    #[test]
    fn slow_subscriber_is_disconnected() {
        let bus = Bus::new();
        let slow = bus.subscribe_with_capacity("*", 4).unwrap();
        let fast = bus.subscribe("*").unwrap();
        for i in 0..10 {
            bus.publish("robot/state", json!(i)).unwrap();
        }
        assert_eq!(bus.subscriber_count(), 1);
        assert_eq!(slow.drain().len(), 4);
        assert_eq!(slow.try_recv(), Err(Disconnected));
        assert_eq!(fast.drain().len(), 10);
    }

    #[test]
    fn timestamps_follow_the_clock() {
        let bus = Bus::new();
        bus.set_clock_ms(1500);
        assert_eq!(bus.publish("robot/state", json!(null)).unwrap().ts_ms, 1500);
    }

    #[test]
    fn wire_round_trip_and_errors() {
        let e = Envelope {
            topic: "robot/state".into(),
            seq: 7,
            ts_ms: 1234,
            payload: json!({"x": [0.1, 0.2, 0.30000000000000004], "extra": {"kept": true}}),
        };
        let line = encode_envelope(&e);
        assert!(!line.contains('\n'));
        assert!(line.starts_with(r#"{"topic":"robot/state","seq":7,"ts_ms":1234,"payload":"#));
        assert_eq!(decode_envelope(&line).unwrap(), e);

        let truncated = &line[..line.len() - 5];
        match decode_envelope(truncated) {
            Err(BusError::Decode { offset, .. }) => assert!(offset <= truncated.len()),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            decode_envelope(r#"{"topic":"Bad Topic","seq":1,"ts_ms":0,"payload":null}"#),
            Err(BusError::Decode { .. })
        ));
    }
}

//! One operator session: utterance → assistant → decoder → planner →
//! simulated arm, with every step published on the session's bus.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::Condition;
use crate::bus::{encode_envelope, Bus, EnvelopeSink, Envelope, Topic};
use crate::command::{render_command, Command, ObjectId, Token};
use crate::dialogue::{
    build_system_prompt, BackendError, DialogueError, DialogueState, Effect, LlmBackend, RelayKind, SessionMemory,
    DEFAULT_WINDOW_TURNS,
};
use crate::dynamics::{ConfigVector, ControllerParams, ControllerState, DynamicsError, ImpedanceGains, GRIPPER_OPEN};
use crate::executor::{plan, tick, ExecEvent, ExecParams, ExecStatus};
use crate::geometry::Point;
use crate::scene::Scene;

pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Controller(#[from] DynamicsError),
    #[error("invalid timestep {0}: must lie in (0, 0.01]")]
    InvalidTimestep(f64),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub dt: f64,
    pub gains: ImpedanceGains,
    pub controller: ControllerParams,
    pub exec: ExecParams,
    /// Publish `robot/state` every this many controller steps.
    pub state_every: u64,
    pub window_turns: usize,
    /// Radius around a waypoint within which an object counts as visiting it.
    pub zone_radius: f64,
    /// Sample dialogues for the system prompt; `None` uses built-in samples.
    pub examples: Option<Vec<(String, String)>>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            dt: DEFAULT_DT,
            gains: ImpedanceGains::default(),
            controller: ControllerParams::default(),
            exec: ExecParams::default(),
            state_every: 20,
            window_turns: DEFAULT_WINDOW_TURNS,
            zone_radius: 0.05,
            examples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub condition: Condition,
    pub pairing_id: Option<String>,
}

impl SessionInfo {
    pub fn new(session_id: impl Into<String>) -> Self {
        SessionInfo {
            session_id: session_id.into(),
            condition: Condition::Assistant,
            pairing_id: None,
        }
    }
}

/// Sample conversation used to condition the assistant when none is
/// configured. Only the first listed object is referenced.
pub fn default_examples(first_object: &ObjectId) -> Vec<(String, String)> {
    let o = first_object.as_str();
    vec![
        ("hello, let's get started".into(), "Okay, what do you want me to grab first?".into()),
        (format!("give me the {o}"), format!("Grab [{o}]")),
        ("bring it closer to me".into(), "Move [0.2,0,0.6]".into()),
        ("a bit closer".into(), "Move [0.2,0,1]".into()),
        ("ok hand it over".into(), format!("Drop [{o}]")),
        (
            "put that away".into(),
            "Which object do you want me to put away?".into(),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ExecSummary {
    Done { primitives: usize, sim_time_s: f64 },
    Failed { cursor: usize, error: String },
    Rejected { error: String },
}

/// Result of one operator turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnOutcome {
    pub reply: String,
    /// Text shown to the operator.
    pub display: String,
    pub commands: Vec<Command>,
    pub relay: Option<RelayKind>,
    pub exec: Option<ExecSummary>,
}

pub struct Session {
    cfg: SessionConfig,
    info: SessionInfo,
    dialogue: DialogueState,
    backend: Box<dyn LlmBackend>,
    scene: Scene,
    ctrl: ControllerState,
    bus: Bus,
    steps: u64,
    visits: BTreeMap<ObjectId, BTreeSet<Token>>,
}

fn round_ms(t: f64) -> u64 {
    (t * 1000.0).round() as u64
}

impl Session {
    pub fn new(
        cfg: SessionConfig,
        info: SessionInfo,
        scene: Scene,
        backend: Box<dyn LlmBackend>,
        bus: Bus,
    ) -> Result<Self, SessionError> {
        if !(cfg.dt > 0.0 && cfg.dt <= crate::dynamics::MAX_DT) {
            return Err(SessionError::InvalidTimestep(cfg.dt));
        }
        let objects = scene.object_ids();
        let examples = match (&cfg.examples, objects.first()) {
            (Some(e), _) => e.clone(),
            (None, Some(first)) => default_examples(first),
            (None, None) => Vec::new(),
        };
        let prompt = build_system_prompt(&objects, scene.waypoints(), &examples)?;
        let memory = SessionMemory::from_scene(&scene);
        let dialogue = DialogueState::new(Some(prompt), memory).with_window(cfg.window_turns);
        let home = scene
            .waypoint("home")
            .unwrap_or_else(|_| Point::new(0.3, 0.0, 0.5));
        let mut controller = cfg.controller.clone();
        controller.bounds = *scene.bounds();
        let ctrl = ControllerState::new(
            ConfigVector::from_pose(home, [0.0; 3], GRIPPER_OPEN),
            cfg.gains.clone(),
            controller,
        );
        Ok(Session {
            cfg,
            info,
            dialogue,
            backend,
            scene,
            ctrl,
            bus,
            steps: 0,
            visits: BTreeMap::new(),
        })
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn controller(&self) -> &ControllerState {
        &self.ctrl
    }

    pub fn dialogue(&self) -> &DialogueState {
        &self.dialogue
    }

    pub fn info(&self) -> &SessionInfo {
        &self.info
    }

    pub fn sim_time(&self) -> f64 {
        self.ctrl.time()
    }

    /// Waypoints each object has come within `zone_radius` of.
    pub fn visits(&self) -> &BTreeMap<ObjectId, BTreeSet<Token>> {
        &self.visits
    }

    fn publish(&self, topic: Topic, payload: Value) -> Envelope {
        self.bus.set_clock_ms(round_ms(self.ctrl.time()));
        self.bus.publish_topic(topic, payload)
    }

    fn event(&self, name: &str, extra: Value) {
        let mut payload = json!({ "event": name });
        if let (Value::Object(p), Value::Object(e)) = (&mut payload, extra) {
            p.extend(e);
        }
        self.publish(Topic::SessionEvent, payload);
    }

    fn scene_payload(&self) -> Value {
        let objects: Vec<Value> = self
            .scene
            .objects()
            .map(|o| json!({ "id": o.id, "x": o.pose.x, "y": o.pose.y, "z": o.pose.z, "held": o.held }))
            .collect();
        json!({ "objects": objects })
    }

    fn state_payload(&self) -> Value {
        let mut v = serde_json::to_value(self.ctrl.snapshot()).expect("snapshot serializes");
        if let Value::Object(m) = &mut v {
            m.insert(
                "held".into(),
                self.scene.held().map(|o| json!(o.id)).unwrap_or(Value::Null),
            );
        }
        v
    }

    /// Publishes the session start and the initial scene and arm state.
    pub fn start(&mut self) {
        self.event(
            "start",
            json!({
                "session_id": self.info.session_id,
                "condition": self.info.condition,
                "pairing_id": self.info.pairing_id,
                "backend": self.backend.name(),
            }),
        );
        self.publish(Topic::SceneObjects, self.scene_payload());
        self.publish(Topic::RobotState, self.state_payload());
        self.record_visits();
    }

    pub fn complete_task(&mut self) {
        self.event("task_complete", json!({ "sim_time_s": self.ctrl.time() }));
    }

    pub fn finish(&mut self) {
        self.event("end", json!({}));
        self.bus.flush_sinks();
    }

    /// Reports a client-side problem without touching the dialogue.
    pub fn report_error(&mut self, message: &str) {
        self.event("error", json!({ "message": message }));
    }

    fn record_visits(&mut self) {
        for o in self.scene.objects() {
            for (name, p) in self.scene.waypoints() {
                if o.pose.distance(p) <= self.cfg.zone_radius {
                    self.visits.entry(o.id.clone()).or_default().insert(name.clone());
                }
            }
        }
    }

    /// Runs one operator turn to completion, including any robot motion.
    pub fn handle_utterance(&mut self, text: &str) -> Result<TurnOutcome, SessionError> {
        let request = self.dialogue.submit_utterance(text)?;
        self.publish(Topic::UserUtterance, json!({ "text": text }));
        let reply = match self.backend.generate(&request) {
            Ok(r) => r,
            Err(e) => {
                self.dialogue.cancel_submission()?;
                self.report_error(&e.to_string());
                return Err(e.into());
            }
        };
        let effect = self.dialogue.ingest_reply(&reply)?;
        match effect {
            Effect::Relay { text: display, kind } => {
                self.publish(
                    Topic::AssistantReply,
                    json!({ "text": reply, "kind": kind, "display": display }),
                );
                Ok(TurnOutcome {
                    reply,
                    display,
                    commands: Vec::new(),
                    relay: Some(kind),
                    exec: None,
                })
            }
            Effect::Execute(seq) => {
                let rendered: Vec<String> = seq.iter().map(render_command).collect();
                self.publish(
                    Topic::AssistantReply,
                    json!({ "text": reply, "kind": "commands", "commands": rendered }),
                );
                for (i, c) in rendered.iter().enumerate() {
                    self.publish(
                        Topic::RobotCommand,
                        json!({ "command": c, "index": i, "count": rendered.len() }),
                    );
                }
                let summary = self.execute(&seq);
                self.dialogue.complete_execution()?;
                let display = match &summary {
                    ExecSummary::Done { .. } => reply.clone(),
                    ExecSummary::Failed { error, .. } | ExecSummary::Rejected { error } => {
                        format!("I could not finish that: {error}")
                    }
                };
                Ok(TurnOutcome {
                    reply,
                    display,
                    commands: seq,
                    relay: None,
                    exec: Some(summary),
                })
            }
        }
    }

    fn execute(&mut self, seq: &[Command]) -> ExecSummary {
        let mut plan = match plan(seq, &self.scene, self.dialogue.memory(), self.ctrl.target(), &self.cfg.exec) {
            Ok(p) => p,
            Err(e) => {
                let error = e.to_string();
                self.publish(Topic::ExecStatus, json!({ "state": "rejected", "error": error }));
                return ExecSummary::Rejected { error };
            }
        };
        let started = self.ctrl.time();
        let total = plan.len();
        let mut events = Vec::new();
        loop {
            events.clear();
            let before = self.ctrl.time();
            let status = tick(&mut plan, &mut self.ctrl, &mut self.scene, &self.cfg.exec, self.cfg.dt, &mut events);
            let stepped = self.ctrl.time() > before;
            for event in &events {
                match event {
                    ExecEvent::Started { index, action } => {
                        self.publish(
                            Topic::ExecStatus,
                            json!({ "state": "running", "cursor": index, "total": total, "primitive": action.to_string() }),
                        );
                    }
                    ExecEvent::Attached { .. } | ExecEvent::Detached { .. } => {
                        self.publish(Topic::SceneObjects, self.scene_payload());
                    }
                    ExecEvent::Completed { .. } => {}
                }
            }
            if stepped {
                self.steps += 1;
                self.record_visits();
                if self.steps.is_multiple_of(self.cfg.state_every.max(1)) {
                    self.publish(Topic::RobotState, self.state_payload());
                }
            }
            match status {
                ExecStatus::Running(_) => continue,
                ExecStatus::Done => {
                    self.record_visits();
                    self.publish(Topic::RobotState, self.state_payload());
                    self.publish(Topic::SceneObjects, self.scene_payload());
                    let sim_time_s = self.ctrl.time() - started;
                    self.publish(
                        Topic::ExecStatus,
                        json!({ "state": "done", "total": total, "sim_time_s": sim_time_s }),
                    );
                    return ExecSummary::Done {
                        primitives: total,
                        sim_time_s,
                    };
                }
                ExecStatus::Failed { error, cursor } => {
                    let primitive = plan.actions().get(cursor).map(|a| a.to_string()).unwrap_or_default();
                    let error = format!("primitive {cursor} ({primitive}) failed: {error}");
                    self.publish(Topic::RobotState, self.state_payload());
                    self.publish(Topic::SceneObjects, self.scene_payload());
                    self.publish(
                        Topic::ExecStatus,
                        json!({ "state": "failed", "cursor": cursor, "total": total, "error": error }),
                    );
                    return ExecSummary::Failed { cursor, error };
                }
            }
        }
    }
}

/// Writes each envelope as one line, identical to the wire form.
pub struct LineLog<W: Write + Send> {
    writer: W,
}

impl<W: Write + Send> LineLog<W> {
    pub fn new(writer: W) -> Self {
        LineLog { writer }
    }
}

impl<W: Write + Send> EnvelopeSink for LineLog<W> {
    fn accept(&mut self, envelope: &Envelope) {
        let line = encode_envelope(envelope);
        if let Err(e) = writeln!(self.writer, "{line}") {
            tracing::warn!(%e, "failed to write session log");
        }
    }

    fn flush(&mut self) {
        if let Err(e) = self.writer.flush() {
            tracing::warn!(%e, "failed to flush session log");
        }
    }
}

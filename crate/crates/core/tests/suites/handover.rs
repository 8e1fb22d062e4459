// Golden replay of the reference operator conversation. Shared between the
// core integration tests and the acceptance runner.

#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use verba_arm_core::dialogue::ScriptedBackend;
use verba_arm_core::dialogue::RelayKind;
use verba_arm_core::session::{ExecSummary, LineLog, SessionConfig, SessionInfo};
use verba_arm_core::{render_command, Bus, Scene, Session, TurnOutcome};

pub const SCENE: &str = include_str!("../../../../scenes/assembly.json");
pub const REPLIES: &str = include_str!("../../../../fixtures/handover.replies");

/// Operator lines as transcribed, speech recognition errors included.
pub const OPERATOR: [&str; 10] = [
    "hello let's start the assembly",
    "give me the school",
    "get closer to me",
    "closer",
    "good hand it over",
    "now I want to assemble the plate",
    "give me at the same location as before",
    "give me a jeweler",
    "finished now take it back",
    "drill",
];

/// Expected decoded commands per assistant line; `None` marks a relay.
pub const EXPECTED: [Option<&str>; 10] = [
    None,
    Some("Grab [screw]"),
    Some("Move [0.2,0,0.6]"),
    Some("Move [0.2,0,1]"),
    Some("Drop [screw]"),
    Some("Grab [plate]"),
    Some("Move [0.2,0,1] Drop [plate]"),
    Some("Grab [drill] Move [0.2,0,1] Drop [drill]"),
    None,
    Some("Grab [drill] Move [back] Drop [drill]"),
];

#[derive(Clone, Default)]
pub struct SharedBuf(pub Arc<Mutex<Vec<u8>>>);

impl std::io::Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().write(buf)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub struct Replay {
    pub outcomes: Vec<TurnOutcome>,
    pub session: Session,
    pub log: Vec<u8>,
}

pub fn replay() -> Result<Replay, String> {
    let scene = Scene::from_json(SCENE).map_err(|e| e.to_string())?;
    let bus = Bus::new();
    let log = SharedBuf::default();
    bus.add_sink("*", Box::new(LineLog::new(log.clone()))).map_err(|e| e.to_string())?;
    let backend = ScriptedBackend::from_fixture(REPLIES);
    let mut session = Session::new(
        SessionConfig::default(),
        SessionInfo::new("handover"),
        scene,
        Box::new(backend),
        bus,
    )
    .map_err(|e| e.to_string())?;
    session.start();
    let mut outcomes = Vec::new();
    for line in OPERATOR {
        outcomes.push(session.handle_utterance(line).map_err(|e| format!("{line:?}: {e}"))?);
    }
    session.complete_task();
    session.finish();
    let bytes = log.0.lock().unwrap().clone();
    Ok(Replay {
        outcomes,
        session,
        log: bytes,
    })
}

/// Checks decoded commands, relays, execution results and the final scene.
pub fn check(r: &Replay) -> Result<(), String> {
    for (i, (outcome, expected)) in r.outcomes.iter().zip(EXPECTED).enumerate() {
        let line = 2 * i + 2;
        match expected {
            None => {
                if outcome.relay != Some(RelayKind::Conversation) || !outcome.commands.is_empty() || outcome.exec.is_some() {
                    return Err(format!("line {line}: expected a relay, got {outcome:?}"));
                }
            }
            Some(want) => {
                let got: Vec<String> = outcome.commands.iter().map(render_command).collect();
                if got.join(" ") != want {
                    return Err(format!("line {line}: decoded {got:?}, want {want}"));
                }
                if !matches!(outcome.exec, Some(ExecSummary::Done { .. })) {
                    return Err(format!("line {line}: execution {:?}", outcome.exec));
                }
            }
        }
    }
    let scene = r.session.scene();
    let visits = r.session.visits();
    for object in ["screw", "plate", "drill"] {
        let seen = visits
            .iter()
            .find(|(id, _)| id.as_str() == object)
            .is_some_and(|(_, w)| w.iter().any(|t| t.as_str() == "operator"));
        if !seen {
            return Err(format!("{object} never reached the operator zone"));
        }
    }
    let back = scene.waypoint("back").map_err(|e| e.to_string())?;
    let drill = scene.resolve_object("drill").map_err(|e| e.to_string())?;
    let gap = drill.pose.distance(&back);
    if drill.held || gap > 0.02 {
        return Err(format!("drill rests {gap:.4} m from back (held: {})", drill.held));
    }
    if scene.held().is_some() {
        return Err("gripper still holds an object".into());
    }
    Ok(())
}

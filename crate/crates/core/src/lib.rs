//! Conversational control of a simulated impedance-controlled arm.
//!
//! An operator utterance goes to an assistant backend; the reply is decoded
//! with a strict bracketed grammar into grab/move/drop commands, expanded into
//! primitive motions and executed on a dual-stage impedance controller. All
//! traffic is published on a topic bus whose line encoding doubles as the
//! session log, and session logs feed the statistics in [`analysis`].

pub mod analysis;
pub mod bus;
pub mod command;
pub mod dialogue;
pub mod dynamics;
pub mod executor;
pub mod geometry;
pub mod scene;
pub mod session;
pub mod stats;

pub use bus::{decode_envelope, encode_envelope, Bus, Envelope, Topic};
pub use command::{decode_reply, render_command, Command, CommandError, DecodedReply, MoveTarget, ObjectId, Token};
pub use dialogue::{DialogueState, Effect, LlmBackend, Phase, SessionMemory};
pub use dynamics::{ConfigVector, ControllerParams, ControllerState, ImpedanceGains};
pub use executor::{plan, tick, ExecParams, ExecStatus, ExecutionPlan, PrimitiveAction};
pub use geometry::{Bounds, Point};
pub use scene::Scene;
pub use session::{Session, SessionConfig, SessionInfo, TurnOutcome};

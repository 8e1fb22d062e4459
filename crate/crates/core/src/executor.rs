//! Expansion of decoded commands into primitive arm actions, and the
//! tick-driven executor that runs them strictly one after another.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{Command, MoveTarget, ObjectId};
use crate::dialogue::SessionMemory;
use crate::dynamics::{ConfigVector, ControllerState, DynamicsError, GRIPPER_CLOSED, GRIPPER_OPEN};
use crate::geometry::Point;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecParams {
    /// Height above an object for approach and retreat, meters.
    pub clearance: f64,
    pub attach_radius: f64,
    pub settle_eps: f64,
    pub settle_hold: f64,
    /// Per-primitive limit in simulated seconds.
    pub action_timeout: f64,
}

impl Default for ExecParams {
    fn default() -> Self {
        ExecParams {
            clearance: 0.15,
            attach_radius: 0.02,
            settle_eps: 1e-2,
            settle_hold: 0.2,
            action_timeout: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("empty command sequence")]
    EmptySequence,
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown waypoint `{0}`")]
    UnknownWaypoint(String),
    #[error("cannot grab `{requested}` while holding `{held}`")]
    AlreadyHolding { held: String, requested: String },
    #[error("cannot drop `{0}`: nothing is held")]
    NotHolding(String),
    #[error("cannot drop `{requested}`: holding `{held}`")]
    WrongObject { held: String, requested: String },
    #[error("target ({x}, {y}, {z}) is outside the workspace")]
    OutOfWorkspace { x: f64, y: f64, z: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("primitive {index} ({action}) did not settle within {limit} s")]
    ActionTimeout {
        index: usize,
        action: String,
        limit: f64,
    },
    #[error("cannot attach `{object}`: gripper is {distance:.3} m away")]
    AttachOutOfRange { object: String, distance: f64 },
    #[error("cannot attach `{0}`: not in the scene or already held")]
    AttachUnavailable(String),
    #[error(transparent)]
    Controller(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveAction {
    MoveTo { target: ConfigVector },
    CloseGripper,
    OpenGripper,
    Attach { object: ObjectId },
    Detach,
}

impl PrimitiveAction {
    fn is_motion(&self) -> bool {
        matches!(
            self,
            PrimitiveAction::MoveTo { .. } | PrimitiveAction::CloseGripper | PrimitiveAction::OpenGripper
        )
    }
}

impl fmt::Display for PrimitiveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimitiveAction::MoveTo { target } => {
                let p = target.position();
                write!(f, "MoveTo({},{},{}; g={})", p.x, p.y, p.z, target.gripper())
            }
            PrimitiveAction::CloseGripper => f.write_str("CloseGripper"),
            PrimitiveAction::OpenGripper => f.write_str("OpenGripper"),
            PrimitiveAction::Attach { object } => write!(f, "Attach({object})"),
            PrimitiveAction::Detach => f.write_str("Detach"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecStatus {
    Running(usize),
    Done,
    Failed { error: ExecError, cursor: usize },
}

impl ExecStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, ExecStatus::Running(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecEvent {
    Started { index: usize, action: PrimitiveAction },
    Completed { index: usize },
    Attached { object: ObjectId },
    Detached { object: ObjectId, pose: Point },
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    actions: Vec<PrimitiveAction>,
    source: Vec<Command>,
    cursor: usize,
    started_at: Option<f64>,
    status: ExecStatus,
}

impl ExecutionPlan {
    pub fn from_actions(actions: Vec<PrimitiveAction>, source: Vec<Command>) -> Self {
        ExecutionPlan {
            actions,
            source,
            cursor: 0,
            started_at: None,
            status: ExecStatus::Running(0),
        }
    }

    pub fn actions(&self) -> &[PrimitiveAction] {
        &self.actions
    }

    pub fn source(&self) -> &[Command] {
        &self.source
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn status(&self) -> &ExecStatus {
        &self.status
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn out_of_workspace(p: Point) -> PlanError {
    PlanError::OutOfWorkspace {
        x: p.x,
        y: p.y,
        z: p.z,
    }
}

/// Expands a command sequence into primitive actions, starting from the
/// configuration `start`.
///
/// Grab expands to approach-above, descend with open gripper, close, attach,
/// retreat-above. Move keeps the current orientation and aperture. Drop opens
/// the gripper and detaches at the current pose.
pub fn plan(
    seq: &[Command],
    scene: &Scene,
    memory: &SessionMemory,
    start: ConfigVector,
    params: &ExecParams,
) -> Result<ExecutionPlan, PlanError> {
    if seq.is_empty() {
        return Err(PlanError::EmptySequence);
    }
    let bounds = scene.bounds();
    let mut pose = start;
    let mut held = scene.held().map(|o| o.id.clone());
    let mut object_poses: BTreeMap<ObjectId, Point> = scene.objects().map(|o| (o.id.clone(), o.pose)).collect();
    let mut actions = Vec::new();

    let move_to = |actions: &mut Vec<PrimitiveAction>, pose: &mut ConfigVector, target: ConfigVector| {
        let p = target.position();
        if !bounds.contains(&p) {
            return Err(out_of_workspace(p));
        }
        *pose = target;
        actions.push(PrimitiveAction::MoveTo { target });
        Ok(())
    };

    for cmd in seq {
        match cmd {
            Command::Grab { object } => {
                let object_pose = *object_poses
                    .get(object)
                    .ok_or_else(|| PlanError::UnknownObject(object.to_string()))?;
                if let Some(h) = &held {
                    return Err(PlanError::AlreadyHolding {
                        held: h.to_string(),
                        requested: object.to_string(),
                    });
                }
                let above = object_pose.offset_z(params.clearance);
                let next = pose.with_position(above);
                move_to(&mut actions, &mut pose, next)?;
                let next = pose.with_position(object_pose).with_gripper(GRIPPER_OPEN);
                move_to(&mut actions, &mut pose, next)?;
                actions.push(PrimitiveAction::CloseGripper);
                pose = pose.with_gripper(GRIPPER_CLOSED);
                actions.push(PrimitiveAction::Attach { object: object.clone() });
                held = Some(object.clone());
                let next = pose.with_position(above);
                move_to(&mut actions, &mut pose, next)?;
            }
            Command::Move { target } => {
                let p = match target {
                    MoveTarget::Cartesian { x, y, z } => Point::new(*x, *y, *z),
                    MoveTarget::Named { waypoint } => scene
                        .waypoint(waypoint.as_str())
                        .ok()
                        .or_else(|| memory.waypoint(waypoint))
                        .ok_or_else(|| PlanError::UnknownWaypoint(waypoint.to_string()))?,
                };
                let next = pose.with_position(p);
                move_to(&mut actions, &mut pose, next)?;
            }
            Command::Drop { object } => {
                if !object_poses.contains_key(object) {
                    return Err(PlanError::UnknownObject(object.to_string()));
                }
                match &held {
                    None => return Err(PlanError::NotHolding(object.to_string())),
                    Some(h) if h != object => {
                        return Err(PlanError::WrongObject {
                            held: h.to_string(),
                            requested: object.to_string(),
                        })
                    }
                    Some(_) => {}
                }
                actions.push(PrimitiveAction::OpenGripper);
                pose = pose.with_gripper(GRIPPER_OPEN);
                actions.push(PrimitiveAction::Detach);
                object_poses.insert(object.clone(), pose.position());
                held = None;
            }
        }
    }

    Ok(ExecutionPlan::from_actions(actions, seq.to_vec()))
}

/// Advances the plan by one controller step.
///
/// Instantaneous primitives (attach, detach) at the cursor complete without
/// stepping the controller; the next motion primitive then sets its target
/// once and the controller is stepped by `dt`. A motion primitive completes
/// when the controller reports settled.
pub fn tick(
    plan: &mut ExecutionPlan,
    ctrl: &mut ControllerState,
    scene: &mut Scene,
    params: &ExecParams,
    dt: f64,
    events: &mut Vec<ExecEvent>,
) -> ExecStatus {
    if plan.status.is_terminal() {
        return plan.status.clone();
    }
    let status = match advance(plan, ctrl, scene, params, dt, events) {
        Ok(()) if plan.cursor >= plan.actions.len() => ExecStatus::Done,
        Ok(()) => ExecStatus::Running(plan.cursor),
        Err(error) => ExecStatus::Failed {
            error,
            cursor: plan.cursor,
        },
    };
    plan.status = status.clone();
    status
}

fn advance(
    plan: &mut ExecutionPlan,
    ctrl: &mut ControllerState,
    scene: &mut Scene,
    params: &ExecParams,
    dt: f64,
    events: &mut Vec<ExecEvent>,
) -> Result<(), ExecError> {
    while let Some(action) = plan.actions.get(plan.cursor).cloned() {
        let index = plan.cursor;
        if !action.is_motion() {
            events.push(ExecEvent::Started {
                index,
                action: action.clone(),
            });
            match &action {
                PrimitiveAction::Attach { object } => attach(scene, ctrl, object, params)?,
                PrimitiveAction::Detach => {
                    let pose = ctrl.tool_position();
                    if let Some(held) = scene.held().map(|o| o.id.clone()) {
                        let o = scene.object_mut(&held).expect("held object exists");
                        o.held = false;
                        o.pose = pose;
                        events.push(ExecEvent::Detached { object: held, pose });
                    }
                }
                _ => unreachable!(),
            }
            if let PrimitiveAction::Attach { object } = &action {
                events.push(ExecEvent::Attached { object: object.clone() });
            }
            events.push(ExecEvent::Completed { index });
            plan.cursor += 1;
            continue;
        }

        let started_at = match plan.started_at {
            Some(t) => t,
            None => {
                let target = match &action {
                    PrimitiveAction::MoveTo { target } => *target,
                    PrimitiveAction::CloseGripper => ctrl.target().with_gripper(GRIPPER_CLOSED),
                    PrimitiveAction::OpenGripper => ctrl.target().with_gripper(GRIPPER_OPEN),
                    _ => unreachable!(),
                };
                ctrl.set_target(target)?;
                events.push(ExecEvent::Started { index, action: action.clone() });
                plan.started_at = Some(ctrl.time());
                ctrl.time()
            }
        };

        ctrl.step(dt)?;
        scene.sync_held(ctrl.tool_position());

        if ctrl.settled(params.settle_eps, params.settle_hold) {
            events.push(ExecEvent::Completed { index });
            plan.cursor += 1;
            plan.started_at = None;
        } else if ctrl.time() - started_at > params.action_timeout {
            return Err(ExecError::ActionTimeout {
                index,
                action: action.to_string(),
                limit: params.action_timeout,
            });
        }
        return Ok(());
    }
    Ok(())
}

fn attach(scene: &mut Scene, ctrl: &ControllerState, object: &ObjectId, params: &ExecParams) -> Result<(), ExecError> {
    if scene.held().is_some() {
        return Err(ExecError::AttachUnavailable(object.to_string()));
    }
    let gripper = ctrl.tool_position();
    let o = scene
        .object_mut(object)
        .ok_or_else(|| ExecError::AttachUnavailable(object.to_string()))?;
    let distance = gripper.distance(&o.pose);
    if distance > params.attach_radius {
        return Err(ExecError::AttachOutOfRange {
            object: object.to_string(),
            distance,
        });
    }
    o.held = true;
    o.pose = gripper;
    Ok(())
}

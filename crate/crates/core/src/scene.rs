//! Workspace ground truth: objects, named waypoints and bounds.
//!
//! Object lookup goes through [`Scene::resolve_object`]; anything that can
//! answer "where is object X" (a detector, a registry) plugs in there.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{ObjectId, Token};
use crate::geometry::{Bounds, Point};

pub const REQUIRED_WAYPOINTS: [&str; 2] = ["back", "operator"];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown waypoint `{0}`")]
    UnknownWaypoint(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("`{0}` lies outside the workspace bounds")]
    OutOfBounds(String),
    #[error("scene is missing required waypoint `{0}`")]
    MissingWaypoint(&'static str),
    #[error("invalid bounds")]
    InvalidBounds,
    #[error("more than one object is held")]
    MultipleHeld,
    #[error("invalid name: {0}")]
    InvalidName(#[from] crate::command::CommandError),
    #[error("failed to read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scene file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub pose: Point,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    objects: BTreeMap<ObjectId, SceneObject>,
    waypoints: BTreeMap<Token, Point>,
    bounds: Bounds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedPoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// On-disk scene document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default)]
    pub description: Option<String>,
    pub bounds: Bounds,
    pub objects: Vec<NamedPoint>,
    pub waypoints: Vec<NamedPoint>,
}

impl Scene {
    pub fn new(
        bounds: Bounds,
        objects: impl IntoIterator<Item = (ObjectId, Point)>,
        waypoints: impl IntoIterator<Item = (Token, Point)>,
    ) -> Result<Self, SceneError> {
        if !bounds.is_valid() {
            return Err(SceneError::InvalidBounds);
        }
        let mut scene = Scene {
            objects: BTreeMap::new(),
            waypoints: BTreeMap::new(),
            bounds,
        };
        for (id, pose) in objects {
            if !bounds.contains(&pose) {
                return Err(SceneError::OutOfBounds(id.to_string()));
            }
            let object = SceneObject {
                id: id.clone(),
                pose,
                held: false,
            };
            if scene.objects.insert(id.clone(), object).is_some() {
                return Err(SceneError::Duplicate(id.to_string()));
            }
        }
        for (name, p) in waypoints {
            if !bounds.contains(&p) {
                return Err(SceneError::OutOfBounds(name.to_string()));
            }
            if scene.waypoints.insert(name.clone(), p).is_some() {
                return Err(SceneError::Duplicate(name.to_string()));
            }
        }
        for required in REQUIRED_WAYPOINTS {
            if !scene.waypoints.keys().any(|k| k.as_str() == required) {
                return Err(SceneError::MissingWaypoint(required));
            }
        }
        Ok(scene)
    }

    pub fn from_file_doc(doc: SceneFile) -> Result<Self, SceneError> {
        let objects = doc
            .objects
            .iter()
            .map(|o| Ok((Token::new(&o.name)?, Point::new(o.x, o.y, o.z))))
            .collect::<Result<Vec<_>, SceneError>>()?;
        let waypoints = doc
            .waypoints
            .iter()
            .map(|w| Ok((Token::new(&w.name)?, Point::new(w.x, w.y, w.z))))
            .collect::<Result<Vec<_>, SceneError>>()?;
        Scene::new(doc.bounds, objects, waypoints)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Scene::from_file_doc(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Scene::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_doc(&self) -> SceneFile {
        let named = |name: &Token, p: &Point| NamedPoint {
            name: name.to_string(),
            x: p.x,
            y: p.y,
            z: p.z,
        };
        SceneFile {
            description: None,
            bounds: self.bounds,
            objects: self.objects.values().map(|o| named(&o.id, &o.pose)).collect(),
            waypoints: self.waypoints.iter().map(|(n, p)| named(n, p)).collect(),
        }
    }

    /// Case-insensitive exact lookup.
    pub fn resolve_object(&self, name: &str) -> Result<&SceneObject, SceneError> {
        Token::new(name)
            .ok()
            .and_then(|id| self.objects.get(&id))
            .ok_or_else(|| SceneError::UnknownObject(name.to_string()))
    }

    pub fn waypoint(&self, name: &str) -> Result<Point, SceneError> {
        Token::new(name)
            .ok()
            .and_then(|id| self.waypoints.get(&id).copied())
            .ok_or_else(|| SceneError::UnknownWaypoint(name.to_string()))
    }

    pub fn waypoints(&self) -> &BTreeMap<Token, Point> {
        &self.waypoints
    }

    pub fn objects(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.values()
    }

    pub fn object_ids(&self) -> Vec<ObjectId> {
        self.objects.keys().cloned().collect()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn held(&self) -> Option<&SceneObject> {
        self.objects.values().find(|o| o.held)
    }

    pub(crate) fn object_mut(&mut self, id: &ObjectId) -> Option<&mut SceneObject> {
        self.objects.get_mut(id)
    }

    /// Moves the held object, if any, to the given gripper position.
    pub fn sync_held(&mut self, gripper: Point) {
        if let Some(o) = self.objects.values_mut().find(|o| o.held) {
            o.pose = gripper;
        }
    }

    pub fn check_invariants(&self) -> Result<(), SceneError> {
        if self.objects.values().filter(|o| o.held).count() > 1 {
            return Err(SceneError::MultipleHeld);
        }
        Ok(())
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::DialogueError;
use crate::command::{decode_reply, ObjectId, Token};
use crate::geometry::Point;

/// Assembles the system prompt that conditions the assistant: role, object
/// manifest, named locations, command grammar, clarification rule and the
/// sample dialogues verbatim.
pub fn build_system_prompt(
    objects: &[ObjectId],
    waypoints: &BTreeMap<Token, Point>,
    examples: &[(String, String)],
) -> Result<String, DialogueError> {
    if objects.is_empty() {
        return Err(DialogueError::EmptyManifest);
    }
    for (_, assistant) in examples {
        decode_reply(assistant).map_err(|source| DialogueError::InvalidExample {
            line: assistant.clone(),
            source,
        })?;
    }

    let mut out = String::new();
    out.push_str(
        "You are a robot control assistant. You operate a 7-degree-of-freedom robot arm that \
         fetches tools and parts for a human operator during an assembly task, and you talk with \
         the operator in plain language.\n\n",
    );

    out.push_str("Objects in the workspace (these are the only objects that exist):\n");
    for o in objects {
        let _ = writeln!(out, "- {o}");
    }

    if !waypoints.is_empty() {
        out.push_str("\nNamed locations (meters, robot base frame, z up):\n");
        for (name, p) in waypoints {
            let _ = writeln!(out, "- {name}: [{},{},{}]", p.x, p.y, p.z);
        }
    }

    out.push_str(
        "\nTo control the robot, reply with commands only, using exactly these forms:\n\
         Grab [object]   pick up the named object\n\
         Move [x,y,z]    move the gripper to a position in meters\n\
         Move [location] move the gripper to a named location\n\
         Drop [object]   release the held object where the gripper is\n\
         Chain several commands on one line in the order they must run, \
         e.g. Grab [screw] Move [0.2,0,1] Drop [screw]\n\
         Only one object can be held at a time. When the operator asks for the same location as \
         before, repeat the previous Move vector. The operator's words come from speech \
         recognition and may be garbled; map them to the listed object they most likely mean.\n\
         \nIf the request is ambiguous or you cannot tell which object or location is meant, do not \
         send any command. Ask the operator a short clarifying question instead, and never write a \
         bracketed command inside a question.\n",
    );

    if !examples.is_empty() {
        out.push_str("\nSample conversations:\n");
        for (user, assistant) in examples {
            let _ = writeln!(out, "Operator: {user}");
            let _ = writeln!(out, "Assistant: {assistant}");
        }
    }

    Ok(out)
}

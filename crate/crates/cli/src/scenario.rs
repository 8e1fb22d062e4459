//! Scripted scenario files: operator lines, canned replies and end-state
//! assertions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use verba_arm_core::dialogue::{parse_fixture, ScriptedBackend};
use verba_arm_core::geometry::Point;
use verba_arm_core::session::ExecSummary;
use verba_arm_core::{render_command, Scene, Session, TurnOutcome};

use crate::config::{BackendKind, Config};
use crate::{open_session, CliError};

pub const WALL_LIMIT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub object: String,
    /// Expected resting position.
    #[serde(default)]
    pub at: Option<[f64; 3]>,
    /// Expected resting waypoint.
    #[serde(default)]
    pub waypoint: Option<String>,
    /// Waypoint the object must have passed within the zone radius.
    #[serde(default)]
    pub visited: Option<String>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Scene file, relative to the scenario file.
    pub scene: PathBuf,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub utterances: Vec<String>,
    /// Inline replies for the scripted backend.
    #[serde(default)]
    pub replies: Option<Vec<String>>,
    /// Reply fixture file, relative to the scenario file.
    #[serde(default)]
    pub replies_file: Option<PathBuf>,
    /// Per-turn expectation: `relay`, or the canonical command text.
    #[serde(default)]
    pub expect: Option<Vec<String>>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self, CliError> {
        let s: Scenario = serde_yaml::from_str(text).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_yaml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if s.scene.is_relative() {
            s.scene = base.join(&s.scene);
        }
        if let Some(f) = s.replies_file.as_mut() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(s)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(format!("scenario {}: {m}", self.name)));
        if self.replies.is_some() && self.replies_file.is_some() {
            return bad("give either replies or replies_file, not both".into());
        }
        if let Some(r) = &self.replies {
            if r.len() < self.utterances.len() {
                return bad(format!("{} utterances but only {} replies", self.utterances.len(), r.len()));
            }
        }
        if let Some(e) = &self.expect {
            if e.len() != self.utterances.len() {
                return bad(format!("expect has {} entries for {} utterances", e.len(), self.utterances.len()));
            }
        }
        for a in &self.assertions {
            let kinds = [a.at.is_some(), a.waypoint.is_some(), a.visited.is_some()];
            if kinds.iter().filter(|k| **k).count() != 1 {
                return bad(format!("assertion on `{}` needs exactly one of at, waypoint, visited", a.object));
            }
            if !(a.tolerance >= 0.0 && a.tolerance.is_finite()) {
                return bad(format!("assertion on `{}` has a negative tolerance", a.object));
            }
        }
        Ok(())
    }

    fn scripted_replies(&self) -> Result<Option<Vec<String>>, CliError> {
        if let Some(r) = &self.replies {
            return Ok(Some(r.clone()));
        }
        if let Some(path) = &self.replies_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            return Ok(Some(parse_fixture(&text)));
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub turns: Vec<TurnOutcome>,
    pub checks: Vec<CheckResult>,
    pub sim_time_s: f64,
    pub log_path: PathBuf,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn commands_executed(&self) -> usize {
        self.turns.iter().map(|t| t.commands.len()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {}", self.name);
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "  {mark} {}: {}", c.label, c.detail);
        }
        let _ = writeln!(
            out,
            "{} turns, {} commands, {:.3} s simulated, log {}",
            self.turns.len(),
            self.commands_executed(),
            self.sim_time_s,
            self.log_path.display()
        );
        let _ = writeln!(out, "{}", if self.passed() { "PASSED" } else { "FAILED" });
        out
    }
}

fn describe(turn: &TurnOutcome) -> String {
    if turn.relay.is_some() {
        "relay".into()
    } else {
        turn.commands.iter().map(render_command).collect::<Vec<_>>().join(" ")
    }
}

fn resolve_target(scene: &Scene, a: &Assertion) -> Result<Point, String> {
    match (&a.at, &a.waypoint) {
        (Some(p), _) => Ok(Point::from(*p)),
        (None, Some(w)) => scene.waypoint(w).map_err(|e| e.to_string()),
        _ => unreachable!("validated: exactly one target kind"),
    }
}

fn evaluate(session: &Session, a: &Assertion) -> CheckResult {
    let scene = session.scene();
    let object = match scene.resolve_object(&a.object) {
        Ok(o) => o,
        Err(e) => {
            return CheckResult {
                label: a.object.clone(),
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    if let Some(zone) = &a.visited {
        let passed = session
            .visits()
            .get(&object.id)
            .is_some_and(|w| w.iter().any(|t| t.as_str().eq_ignore_ascii_case(zone)));
        return CheckResult {
            label: format!("{} visited {zone}", a.object),
            passed,
            detail: if passed { "yes".into() } else { "never entered the zone".into() },
        };
    }
    let label = match (&a.at, &a.waypoint) {
        (Some(p), _) => format!("{} at ({}, {}, {})", a.object, p[0], p[1], p[2]),
        _ => format!("{} at {}", a.object, a.waypoint.as_deref().unwrap_or_default()),
    };
    match resolve_target(scene, a) {
        Ok(target) => {
            let d = object.pose.distance(&target);
            let passed = !object.held && d <= a.tolerance;
            CheckResult {
                label,
                passed,
                detail: format!(
                    "distance {d:.4} m, tolerance {} m{}",
                    a.tolerance,
                    if object.held { ", still held" } else { "" }
                ),
            }
        }
        Err(e) => CheckResult {
            label,
            passed: false,
            detail: e,
        },
    }
}

/// Runs a scenario end to end and writes the session log.
///
/// With a scripted backend (the default for scenarios carrying replies) no
/// network is touched. Backend errors abort the run; expectation and
/// assertion failures are collected in the report.
pub fn run_scenario(cfg: &Config, scenario: &Scenario) -> Result<ScenarioReport, CliError> {
    let wall = Instant::now();
    let mut cfg = cfg.clone();
    cfg.scene = scenario.scene.clone();
    let session_id = scenario.session_id.clone().unwrap_or_else(|| scenario.name.clone());
    cfg.session.id = session_id.clone();
    cfg.validate()?;
    let replies = scenario.scripted_replies()?;
    let backend = match (cfg.backend.kind, replies) {
        (BackendKind::Scripted, Some(r)) => Box::new(ScriptedBackend::new(r)) as Box<_>,
        _ => cfg.backend()?,
    };
    let scripted = cfg.backend.kind == BackendKind::Scripted;
    let (mut session, log_path) = open_session(&cfg, &session_id, backend)?;
    session.start();

    let mut turns = Vec::new();
    let mut checks = Vec::new();
    for (i, line) in scenario.utterances.iter().enumerate() {
        if wall.elapsed() > WALL_LIMIT {
            session.finish();
            return Err(CliError::Scenario(format!(
                "scenario {} exceeded the {} s wall limit at turn {}",
                scenario.name,
                WALL_LIMIT.as_secs(),
                i + 1
            )));
        }
        let outcome = match session.handle_utterance(line) {
            Ok(o) => o,
            Err(e) => {
                session.finish();
                return Err(CliError::from_session(e));
            }
        };
        if let Some(ExecSummary::Failed { error, .. } | ExecSummary::Rejected { error }) = &outcome.exec {
            checks.push(CheckResult {
                label: format!("turn {} execution", i + 1),
                passed: false,
                detail: error.clone(),
            });
        }
        if let (true, Some(expect)) = (scripted, &scenario.expect) {
            let got = describe(&outcome);
            let want = &expect[i];
            checks.push(CheckResult {
                label: format!("turn {} reply", i + 1),
                passed: got == *want,
                detail: if got == *want { got } else { format!("got `{got}`, expected `{want}`") },
            });
        }
        turns.push(outcome);
    }
    session.complete_task();
    for a in &scenario.assertions {
        checks.push(evaluate(&session, a));
    }
    let sim_time_s = session.sim_time();
    session.finish();
    Ok(ScenarioReport {
        name: scenario.name.clone(),
        turns,
        checks,
        sim_time_s,
        log_path,
    })
}

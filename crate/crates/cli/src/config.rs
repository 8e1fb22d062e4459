//! TOML configuration with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use verba_arm_core::analysis::Condition;
use verba_arm_core::dialogue::{
    parse_fixture, EchoBackend, LiveBackend, LiveSettings, LlmBackend, ScriptedBackend,
};
use verba_arm_core::dynamics::{ImpedanceGains, DIM, MAX_DT};
use verba_arm_core::session::{SessionConfig, SessionInfo};
use verba_arm_core::{ExecParams, Scene};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Live,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Reply fixture for the scripted backend.
    pub fixture: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let live = LiveSettings::default();
        BackendSection {
            kind: BackendKind::Echo,
            fixture: None,
            endpoint: live.endpoint,
            model: live.model,
            timeout_s: live.timeout_s,
        }
    }
}

/// Diagonal stiffness per axis group and a uniform mass; damping is always
/// critical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSection {
    pub mass: f64,
    pub position: f64,
    pub orientation: f64,
    pub gripper: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        GainsSection {
            mass: 1.0,
            position: 400.0,
            orientation: 100.0,
            gripper: 400.0,
        }
    }
}

impl GainsSection {
    pub fn build(&self) -> Result<ImpedanceGains, CliError> {
        let (p, o, g) = (self.position, self.orientation, self.gripper);
        ImpedanceGains::critically_damped([self.mass; DIM], [p, p, p, o, o, o, g])
            .map_err(|e| CliError::Config(format!("gains: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub id: String,
    pub condition: Condition,
    pub pairing_id: Option<String>,
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection {
            id: "session".into(),
            condition: Condition::Assistant,
            pairing_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scene: PathBuf,
    pub dt: f64,
    pub host: String,
    pub port: u16,
    pub log_dir: PathBuf,
    /// Publish `robot/state` every this many simulation steps.
    pub state_every: u64,
    pub session: SessionSection,
    pub backend: BackendSection,
    pub gains: GainsSection,
    pub exec: ExecParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            scene: PathBuf::from("scenes/assembly.json"),
            dt: 1e-3,
            host: "127.0.0.1".into(),
            port: 8765,
            log_dir: PathBuf::from("logs"),
            state_every: 20,
            session: SessionSection::default(),
            backend: BackendSection::default(),
            gains: GainsSection::default(),
            exec: ExecParams::default(),
        }
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub fixture: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub port: Option<u16>,
    pub log_dir: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.scene);
        rebase(base, &mut cfg.log_dir);
        if let Some(f) = cfg.backend.fixture.as_mut() {
            rebase(base, f);
        }
        Ok(cfg)
    }

    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
        if let Some(f) = &o.fixture {
            self.backend.fixture = Some(f.clone());
        }
        if let Some(s) = &o.scene {
            self.scene = s.clone();
        }
        if let Some(p) = o.port {
            self.port = p;
        }
        if let Some(l) = &o.log_dir {
            self.log_dir = l.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return Err(CliError::Config(format!("dt must be in (0, {MAX_DT}], got {}", self.dt)));
        }
        if self.port < 1024 {
            return Err(CliError::Config(format!("port must be in [1024, 65535], got {}", self.port)));
        }
        if self.state_every == 0 {
            return Err(CliError::Config("state_every must be at least 1".into()));
        }
        if self.session.id.is_empty()
            || !self.session.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(CliError::Config(format!(
                "session id `{}` must be non-empty and use only letters, digits, `-`, `_` or `.`",
                self.session.id
            )));
        }
        let e = &self.exec;
        if [e.clearance, e.attach_radius, e.settle_eps, e.settle_hold, e.action_timeout]
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(CliError::Config("exec parameters must be positive".into()));
        }
        self.gains.build()?;
        Ok(())
    }

    pub fn session_config(&self) -> Result<SessionConfig, CliError> {
        Ok(SessionConfig {
            dt: self.dt,
            gains: self.gains.build()?,
            exec: self.exec.clone(),
            state_every: self.state_every,
            ..SessionConfig::default()
        })
    }

    pub fn session_info(&self, id: &str) -> SessionInfo {
        SessionInfo {
            session_id: id.to_string(),
            condition: self.session.condition,
            pairing_id: self.session.pairing_id.clone(),
        }
    }

    pub fn load_scene(&self) -> Result<Scene, CliError> {
        Scene::load(&self.scene).map_err(|e| CliError::Config(format!("scene {}: {e}", self.scene.display())))
    }

    /// Builds the configured backend. Missing fixtures or keys are
    /// configuration errors, reported before any interaction.
    pub fn backend(&self) -> Result<Box<dyn LlmBackend>, CliError> {
        match self.backend.kind {
            BackendKind::Echo => Ok(Box::new(EchoBackend)),
            BackendKind::Scripted => {
                let path = self
                    .backend
                    .fixture
                    .as_ref()
                    .ok_or_else(|| CliError::Config("scripted backend needs a reply fixture".into()))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("fixture {}: {e}", path.display())))?;
                Ok(Box::new(ScriptedBackend::new(parse_fixture(&text))))
            }
            BackendKind::Live => {
                let settings = LiveSettings {
                    endpoint: self.backend.endpoint.clone(),
                    model: self.backend.model.clone(),
                    timeout_s: self.backend.timeout_s,
                };
                LiveBackend::from_env(settings)
                    .map(|b| Box::new(b) as Box<dyn LlmBackend>)
                    .map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.log_dir.join(format!("{session_id}.jsonl"))
    }
}

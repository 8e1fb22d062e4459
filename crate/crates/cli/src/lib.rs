//! Command-line front end: interactive REPL, scenario runner, network serve
//! mode and log analysis.

pub mod config;
pub mod repl;
pub mod scenario;
pub mod serve;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;
use verba_arm_core::analysis::{analyze_logs, AnalysisOptions};
use verba_arm_core::dialogue::LlmBackend;
use verba_arm_core::session::{LineLog, SessionError};
use verba_arm_core::{Bus, Session};

use config::{BackendKind, Config, Overrides};
use scenario::{run_scenario, Scenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Scenario(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Scenario(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn from_session(e: SessionError) -> Self {
        match e {
            SessionError::Backend(b) => CliError::Backend(b.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "verba-arm", version, about = "Talk to a simulated robot arm")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Reply fixture for the scripted backend.
    #[arg(long, global = true)]
    pub fixture: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scene: Option<PathBuf>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    #[arg(long, global = true)]
    pub log_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Type operator lines; `/done` marks the task complete, `/quit` exits.
    Repl,
    /// Run a scenario file and check its assertions.
    Run { scenario: PathBuf },
    /// Accept operator connections over TCP (line protocol) and WebSocket (`/ws`).
    Serve,
    /// Score sessions and test conditions from session logs.
    Analyze {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// CSV with `session_id,condition,metric,value` rows.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Use Welch's test instead of the paired test.
        #[arg(long)]
        welch: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Configuration commands.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Validate the configuration, scene and backend settings.
    Check,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            backend: self.backend,
            fixture: self.fixture.clone(),
            scene: self.scene.clone(),
            port: self.port,
            log_dir: self.log_dir.clone(),
        }
    }
}

/// Builds a session whose full envelope stream is written to
/// `<log_dir>/<session_id>.jsonl`.
pub fn open_session(
    cfg: &Config,
    session_id: &str,
    backend: Box<dyn LlmBackend>,
) -> Result<(Session, PathBuf), CliError> {
    let scene = cfg.load_scene()?;
    std::fs::create_dir_all(&cfg.log_dir)
        .map_err(|e| CliError::Config(format!("log dir {}: {e}", cfg.log_dir.display())))?;
    let path = cfg.log_path(session_id);
    let file = File::create(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let bus = Bus::new();
    bus.add_sink("*", Box::new(LineLog::new(BufWriter::new(file))))
        .map_err(|e| CliError::Other(e.to_string()))?;
    let session = Session::new(cfg.session_config()?, cfg.session_info(session_id), scene, backend, bus)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((session, path))
}

fn cmd_run(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let mut cfg = Config::resolve(cli.config.as_deref(), &cli.overrides())?;
    let scenario = Scenario::load(path)?;
    if cli.backend.is_none() && (scenario.replies.is_some() || scenario.replies_file.is_some()) {
        cfg.backend.kind = BackendKind::Scripted;
    }
    let report = run_scenario(&cfg, &scenario)?;
    print!("{}", report.to_text());
    if report.passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(CliError::Scenario(format!("{failed} check(s) failed")))
    }
}

fn cmd_analyze(logs: &[PathBuf], metrics: Option<&Path>, welch: bool, out: Option<&Path>) -> Result<(), CliError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::Other(format!("{}: {e}", p.display())));
    let mut inputs = Vec::new();
    for p in logs {
        inputs.push((p.display().to_string(), read(p)?));
    }
    let csv = metrics.map(read).transpose()?;
    let report = analyze_logs(&inputs, csv.as_deref(), AnalysisOptions { welch })
        .map_err(|e| CliError::Other(e.to_string()))?;
    print!("{}", report.to_text());
    if let Some(out) = out {
        std::fs::write(out, report.to_json()).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

fn cmd_config_check(cli: &Cli) -> Result<(), CliError> {
    let cfg = Config::resolve(cli.config.as_deref(), &cli.overrides())?;
    let scene = cfg.load_scene()?;
    let backend = cfg.backend()?;
    println!("config ok");
    println!("  backend: {}", backend.name());
    println!(
        "  scene: {} ({} objects, {} waypoints)",
        cfg.scene.display(),
        scene.object_ids().len(),
        scene.waypoints().len()
    );
    println!("  dt: {} s", cfg.dt);
    println!("  serve: {}:{}", cfg.host, cfg.port);
    println!("  logs: {}", cfg.log_dir.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Repl => {
            let cfg = Config::resolve(cli.config.as_deref(), &cli.overrides())?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            repl::run_repl(&cfg, stdin.lock(), stdout.lock())
        }
        Command::Run { scenario } => cmd_run(&cli, scenario),
        Command::Serve => {
            let cfg = Config::resolve(cli.config.as_deref(), &cli.overrides())?;
            serve::serve(&cfg)
        }
        Command::Analyze {
            logs,
            metrics,
            welch,
            out,
        } => cmd_analyze(logs, metrics.as_deref(), *welch, out.as_deref()),
        Command::Config {
            action: ConfigAction::Check,
        } => cmd_config_check(&cli),
    }
}

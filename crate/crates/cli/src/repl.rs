//! Line-oriented operator console.

use std::io::{BufRead, Write};

use serde_json::Value;
use verba_arm_core::session::ExecSummary;
use verba_arm_core::Envelope;

use crate::config::Config;
use crate::{open_session, CliError};

fn io_err(e: std::io::Error) -> CliError {
    CliError::Other(format!("terminal: {e}"))
}

/// One line per exec/status transition.
pub fn format_status(e: &Envelope) -> Option<String> {
    let p = &e.payload;
    let total = p.get("total").and_then(Value::as_u64).unwrap_or(0);
    match p.get("state")?.as_str()? {
        "running" => Some(format!(
            "  [{}/{}] {}",
            p.get("cursor")?.as_u64()? + 1,
            total,
            p.get("primitive")?.as_str()?
        )),
        "done" => Some(format!(
            "  done: {total} primitives in {:.3} s",
            p.get("sim_time_s")?.as_f64()?
        )),
        "failed" => Some(format!("  failed: {}", p.get("error")?.as_str()?)),
        "rejected" => Some(format!("  rejected: {}", p.get("error")?.as_str()?)),
        _ => None,
    }
}

/// Reads operator lines until `/quit` or end of input. `/done` records task
/// completion. Each assistant reply and every execution status transition is
/// printed.
pub fn run_repl(cfg: &Config, input: impl BufRead, mut out: impl Write) -> Result<(), CliError> {
    // Built first so a missing key or fixture fails before any prompt.
    let backend = cfg.backend()?;
    let (mut session, log_path) = open_session(cfg, &cfg.session.id, backend)?;
    let status = session
        .bus()
        .subscribe("exec/status")
        .map_err(|e| CliError::Other(e.to_string()))?;
    session.start();
    writeln!(out, "session {} (log {})", cfg.session.id, log_path.display()).map_err(io_err)?;
    writeln!(out, "/done marks the task complete, /quit exits").map_err(io_err)?;

    let mut result = Ok(());
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        let text = line.trim();
        match text {
            "" => continue,
            "/quit" => break,
            "/done" => {
                session.complete_task();
                writeln!(out, "task marked complete at {:.3} s", session.sim_time()).map_err(io_err)?;
                continue;
            }
            _ => {}
        }
        match session.handle_utterance(text) {
            Ok(turn) => {
                writeln!(out, "assistant: {}", turn.reply).map_err(io_err)?;
                for e in status.drain() {
                    if let Some(s) = format_status(&e) {
                        writeln!(out, "{s}").map_err(io_err)?;
                    }
                }
                if let Some(ExecSummary::Failed { .. } | ExecSummary::Rejected { .. }) = turn.exec {
                    writeln!(out, "assistant: {}", turn.display).map_err(io_err)?;
                }
            }
            Err(e) => {
                result = Err(CliError::from_session(e));
                break;
            }
        }
    }
    session.finish();
    out.flush().map_err(io_err)?;
    result
}

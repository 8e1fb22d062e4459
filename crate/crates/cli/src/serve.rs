//! Network front end. Each connection gets its own session and bus.
//!
//! A connection whose first bytes are `GET ` is upgraded to a WebSocket
//! (path `/ws`) carrying one envelope per text frame; anything else speaks
//! newline-delimited envelopes over plain TCP. Clients send envelopes on
//! `user/utterance` with payload `{"text": ...}`, or on `session/event` with
//! payload `{"event": "task_complete"}`; `seq` and `ts_ms` may be omitted.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::Message;
use verba_arm_core::bus::Subscription;
use verba_arm_core::encode_envelope;
use verba_arm_core::session::SessionError;

use crate::config::Config;
use crate::{open_session, CliError};

const POLL: Duration = Duration::from_millis(20);
const SNIFF: Duration = Duration::from_millis(250);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientEnvelope {
    topic: String,
    #[serde(default)]
    #[allow(dead_code)]
    seq: Option<u64>,
    #[serde(default)]
    #[allow(dead_code)]
    ts_ms: Option<u64>,
    payload: Value,
}

#[derive(Debug, PartialEq)]
pub enum Inbound {
    Utterance(String),
    TaskComplete,
    Malformed(String),
}

/// Interprets one client line or frame.
pub fn parse_inbound(line: &str) -> Inbound {
    let env: ClientEnvelope = match serde_json::from_str(line) {
        Ok(e) => e,
        Err(e) => return Inbound::Malformed(format!("unreadable envelope: {e}")),
    };
    match env.topic.as_str() {
        "user/utterance" => match env.payload.get("text").and_then(Value::as_str) {
            Some(t) if !t.trim().is_empty() => Inbound::Utterance(t.to_string()),
            _ => Inbound::Malformed("user/utterance needs a non-empty payload.text".into()),
        },
        "session/event" if env.payload.get("event").and_then(Value::as_str) == Some("task_complete") => {
            Inbound::TaskComplete
        }
        other => Inbound::Malformed(format!("clients may not publish on `{other}`")),
    }
}

/// Starts a session for one connection. Returns the inbound channel and the
/// subscription carrying everything the session publishes; the worker thread
/// finishes the session and closes the bus when the channel is dropped.
fn spawn_session(cfg: &Config, session_id: String) -> Result<(mpsc::Sender<Inbound>, Subscription), CliError> {
    let backend = cfg.backend()?;
    let (mut session, _) = open_session(cfg, &session_id, backend)?;
    let sub = session.bus().subscribe("*").map_err(|e| CliError::Other(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<Inbound>();
    thread::spawn(move || {
        session.start();
        for msg in rx {
            match msg {
                Inbound::Utterance(text) => match session.handle_utterance(&text) {
                    Ok(_) | Err(SessionError::Backend(_)) => {}
                    Err(e) => session.report_error(&e.to_string()),
                },
                Inbound::TaskComplete => session.complete_task(),
                Inbound::Malformed(m) => session.report_error(&m),
            }
        }
        session.finish();
        session.bus().close();
        tracing::info!(session = %session.info().session_id, "session closed");
    });
    Ok((tx, sub))
}

fn serve_lines(stream: TcpStream, tx: mpsc::Sender<Inbound>, sub: Subscription) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let forward = thread::spawn(move || {
        for e in sub {
            let line = encode_envelope(&e);
            if writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Write);
    });
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if tx.send(parse_inbound(&line)).is_err() {
            break;
        }
    }
    drop(tx);
    let _ = forward.join();
    Ok(())
}

fn serve_websocket(stream: TcpStream, tx: mpsc::Sender<Inbound>, sub: Subscription) -> Result<(), String> {
    let check_path = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() == "/ws" {
            Ok(resp)
        } else {
            let mut err = ErrorResponse::new(Some("only /ws is served".into()));
            *err.status_mut() = StatusCode::NOT_FOUND;
            Err(err)
        }
    };
    let mut ws = tungstenite::accept_hdr(stream, check_path).map_err(|e| e.to_string())?;
    ws.get_ref().set_read_timeout(Some(POLL)).map_err(|e| e.to_string())?;
    loop {
        loop {
            match sub.try_recv() {
                Ok(Some(e)) => ws.send(Message::text(encode_envelope(&e))).map_err(|e| e.to_string())?,
                Ok(None) => break,
                Err(_) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                if tx.send(parse_inbound(t.as_str())).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Binary(_)) => {
                let _ = tx.send(Inbound::Malformed("binary frames are not supported".into()));
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.to_string()),
        }
    }
}

/// WebSocket clients speak first; line clients may wait for the server. Look
/// for `GET ` briefly and fall back to the line protocol.
fn sniff_http(stream: &TcpStream) -> bool {
    let mut head = [0u8; 4];
    let _ = stream.set_read_timeout(Some(SNIFF));
    let deadline = std::time::Instant::now() + SNIFF;
    let found = loop {
        match stream.peek(&mut head) {
            Ok(4) => break &head == b"GET ",
            Ok(0) => break false,
            Ok(n) if head[..n] != b"GET "[..n] => break false,
            Ok(_) if std::time::Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
            _ => break false,
        }
    };
    let _ = stream.set_read_timeout(None);
    found
}

fn handle(stream: TcpStream, cfg: &Config, session_id: String) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let is_http = sniff_http(&stream);
    let (tx, sub) = match spawn_session(cfg, session_id.clone()) {
        Ok(s) => s,
        Err(e) => {
            tracing::error!(%peer, "cannot start session: {e}");
            return;
        }
    };
    tracing::info!(%peer, session = %session_id, websocket = is_http, "connection opened");
    let result = if is_http {
        serve_websocket(stream, tx, sub)
    } else {
        serve_lines(stream, tx, sub).map_err(|e| e.to_string())
    };
    if let Err(e) = result {
        tracing::warn!(%peer, "connection ended: {e}");
    }
}

/// Accepts connections on `listener` until it fails. Sessions are named
/// `<session id>-<n>` with n counting from 1.
pub fn serve_on(listener: TcpListener, cfg: Config) -> Result<(), CliError> {
    let cfg = Arc::new(cfg);
    let counter = AtomicU64::new(0);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                continue;
            }
        };
        let n = counter.fetch_add(1, Ordering::Relaxed) + 1;
        let cfg = Arc::clone(&cfg);
        let id = format!("{}-{n}", cfg.session.id);
        thread::spawn(move || handle(stream, &cfg, id));
    }
    Ok(())
}

pub fn serve(cfg: &Config) -> Result<(), CliError> {
    // Fail fast on a bad backend or scene instead of on the first connection.
    cfg.backend()?;
    cfg.load_scene()?;
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let listener = TcpListener::bind(&addr).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => CliError::Config(format!("port {} is in use", cfg.port)),
        _ => CliError::Config(format!("cannot listen on {addr}: {e}")),
    })?;
    eprintln!("listening on {addr} (TCP lines, WebSocket at /ws)");
    serve_on(listener, cfg.clone())
}

//! Batch analysis of session logs: completion times, performance scores,
//! normality checks per condition and the cross-condition t-test.
//!
//! The report is a pure function of the input bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bus::{decode_envelope, BusError, Topic};
use crate::stats::{ad_normality, paired_t, score_sessions, welch_t, ScoreReport, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Fixed,
    Assistant,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Fixed => "fixed",
            Condition::Assistant => "assistant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Some(Condition::Fixed),
            "assistant" => Some(Condition::Assistant),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{source_name}:{line}: {error}")]
    Decode {
        source_name: String,
        line: usize,
        error: BusError,
    },
    #[error("session `{session}` is missing the `{event}` event")]
    MissingEvent { session: String, event: &'static str },
    #[error("session `{session}` has unknown condition `{condition}`")]
    UnknownCondition { session: String, condition: String },
    #[error("session `{0}` has a non-positive completion time")]
    NonPositiveCompletion(String),
    #[error("session `{0}` appears in more than one log")]
    DuplicateSession(String),
    #[error("metrics csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub condition: Condition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairing_id: Option<String>,
    pub completion_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalysisOptions {
    /// Use Welch's independent-samples test instead of the paired test.
    pub welch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { result: TestResult },
    Skipped { reason: String },
}

impl Outcome {
    fn from(r: Result<TestResult, crate::stats::StatsError>) -> Self {
        match r {
            Ok(result) => Outcome::Ok { result },
            Err(e) => Outcome::Skipped { reason: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTestRow {
    pub kind: &'static str,
    /// `fixed − assistant`.
    pub comparison: &'static str,
    pub n_pairs: usize,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub normality: BTreeMap<Condition, Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_test: Option<TTestRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub sessions: Vec<SessionRecord>,
    pub scores: Result<ScoreReport, String>,
    pub metrics: Vec<MetricReport>,
    pub warnings: Vec<String>,
}

/// Extracts the session record from one log's bytes.
pub fn read_session(source_name: &str, text: &str) -> Result<SessionRecord, AnalysisError> {
    let mut start: Option<(u64, &Value)> = None;
    let mut complete: Option<u64> = None;
    let mut payloads = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let env = decode_envelope(line).map_err(|error| AnalysisError::Decode {
            source_name: source_name.to_string(),
            line: i + 1,
            error,
        })?;
        if env.topic == Topic::SessionEvent.as_str() {
            payloads.push((env.ts_ms, env.payload));
        }
    }
    for (ts, payload) in &payloads {
        match payload.get("event").and_then(Value::as_str) {
            Some("start") if start.is_none() => start = Some((*ts, payload)),
            Some("task_complete") if complete.is_none() => complete = Some(*ts),
            _ => {}
        }
    }
    let session_of = |p: Option<&Value>| {
        p.and_then(|p| p.get("session_id"))
            .and_then(Value::as_str)
            .unwrap_or(source_name)
            .to_string()
    };
    let Some((start_ts, start_payload)) = start else {
        return Err(AnalysisError::MissingEvent {
            session: session_of(None),
            event: "start",
        });
    };
    let session_id = session_of(Some(start_payload));
    let Some(complete_ts) = complete else {
        return Err(AnalysisError::MissingEvent {
            session: session_id,
            event: "task_complete",
        });
    };
    let raw_condition = start_payload
        .get("condition")
        .and_then(Value::as_str)
        .unwrap_or("assistant");
    let condition = Condition::parse(raw_condition).ok_or_else(|| AnalysisError::UnknownCondition {
        session: session_id.clone(),
        condition: raw_condition.to_string(),
    })?;
    let pairing_id = start_payload
        .get("pairing_id")
        .and_then(Value::as_str)
        .map(str::to_string);
    if complete_ts <= start_ts {
        return Err(AnalysisError::NonPositiveCompletion(session_id));
    }
    Ok(SessionRecord {
        session_id,
        condition,
        pairing_id,
        completion_s: (complete_ts - start_ts) as f64 / 1000.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct MetricRow {
    session_id: String,
    condition: Condition,
    metric: String,
    value: f64,
}

fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>, AnalysisError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("session_id")) {
            continue;
        }
        let err = |message: String| AnalysisError::Csv { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [session_id, condition, metric, value] = fields[..] else {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        };
        let condition = Condition::parse(condition).ok_or_else(|| err(format!("unknown condition `{condition}`")))?;
        let value: f64 = value.parse().map_err(|_| err(format!("invalid number `{value}`")))?;
        rows.push(MetricRow {
            session_id: session_id.to_string(),
            condition,
            metric: metric.to_string(),
            value,
        });
    }
    Ok(rows)
}

/// Runs the full analysis over `(name, contents)` log pairs and an optional
/// per-session metrics CSV (`session_id,condition,metric,value`).
pub fn analyze_logs(
    logs: &[(String, String)],
    metrics_csv: Option<&str>,
    options: AnalysisOptions,
) -> Result<AnalysisReport, AnalysisError> {
    let mut sessions = Vec::new();
    let mut seen = BTreeSet::new();
    for (name, text) in logs {
        let record = read_session(name, text)?;
        if !seen.insert(record.session_id.clone()) {
            return Err(AnalysisError::DuplicateSession(record.session_id));
        }
        sessions.push(record);
    }
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));

    let mut warnings = Vec::new();
    let times: Vec<(String, f64)> = sessions.iter().map(|s| (s.session_id.clone(), s.completion_s)).collect();
    let scores = score_sessions(&times).map_err(|e| e.to_string());
    if let Err(e) = &scores {
        warnings.push(format!("performance scores unavailable: {e}"));
    }

    // metric name -> session id -> value
    let mut columns: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    columns.insert("completion_s".into(), times.iter().cloned().collect());
    if let Ok(report) = &scores {
        columns.insert("performance_score".into(), report.scores.iter().cloned().collect());
    }
    let mut conditions: BTreeMap<String, Condition> =
        sessions.iter().map(|s| (s.session_id.clone(), s.condition)).collect();
    let pairing: BTreeMap<String, String> = sessions
        .iter()
        .filter_map(|s| s.pairing_id.clone().map(|p| (s.session_id.clone(), p)))
        .collect();
    if let Some(csv) = metrics_csv {
        for row in parse_metrics_csv(csv)? {
            if !conditions.contains_key(&row.session_id) {
                warnings.push(format!(
                    "metric `{}` for session `{}` has no log; excluded from pairing",
                    row.metric, row.session_id
                ));
            }
            conditions.entry(row.session_id.clone()).or_insert(row.condition);
            columns.entry(row.metric).or_default().insert(row.session_id, row.value);
        }
    }

    let present: BTreeSet<Condition> = conditions.values().copied().collect();
    let mut metrics = Vec::new();
    for (metric, values) in &columns {
        let mut by_condition: BTreeMap<Condition, Vec<f64>> = BTreeMap::new();
        for (session, value) in values {
            by_condition.entry(conditions[session]).or_default().push(*value);
        }
        let normality = by_condition
            .iter()
            .map(|(c, v)| (*c, Outcome::from(ad_normality(v))))
            .collect();

        let t_test = if present.len() < 2 {
            None
        } else if options.welch {
            let empty = Vec::new();
            let a = by_condition.get(&Condition::Fixed).unwrap_or(&empty);
            let b = by_condition.get(&Condition::Assistant).unwrap_or(&empty);
            Some(TTestRow {
                kind: "welch",
                comparison: "fixed - assistant",
                n_pairs: 0,
                outcome: Outcome::from(welch_t(a, b)),
            })
        } else {
            let mut pairs: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
            for (session, value) in values {
                let Some(pair) = pairing.get(session) else { continue };
                let slot = pairs.entry(pair.as_str()).or_default();
                match conditions[session] {
                    Condition::Fixed => slot.0 = Some(*value),
                    Condition::Assistant => slot.1 = Some(*value),
                }
            }
            let (a, b): (Vec<f64>, Vec<f64>) = pairs
                .values()
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            if a.is_empty() {
                warnings.push(format!("{metric}: t-test skipped, no paired sessions across conditions"));
                None
            } else {
                Some(TTestRow {
                    kind: "paired",
                    comparison: "fixed - assistant",
                    n_pairs: a.len(),
                    outcome: Outcome::from(paired_t(&a, &b)),
                })
            }
        };
        metrics.push(MetricReport {
            metric: metric.clone(),
            normality,
            t_test,
        });
    }

    Ok(AnalysisReport {
        sessions,
        scores,
        metrics,
        warnings,
    })
}

fn describe(outcome: &Outcome, label: &str) -> String {
    match outcome {
        Outcome::Ok { result } => match result.df {
            None => format!(
                "{label} A*2={:.4} crit={:.3} n={} -> {}",
                result.statistic,
                result.threshold_or_p,
                result.n,
                if result.reject { "non-normal" } else { "normal" }
            ),
            Some(df) => format!(
                "{label} t={:.4} df={:.2} p={:.6} n={} -> {}",
                result.statistic,
                df,
                result.threshold_or_p,
                result.n,
                if result.reject { "significant" } else { "not significant" }
            ),
        },
        Outcome::Skipped { reason } => format!("{label} skipped ({reason})"),
    }
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sessions: {}", self.sessions.len());
        let scores: BTreeMap<&str, f64> = match &self.scores {
            Ok(r) => r.scores.iter().map(|(id, s)| (id.as_str(), *s)).collect(),
            Err(_) => BTreeMap::new(),
        };
        for s in &self.sessions {
            let _ = write!(
                out,
                "  {}  condition={}  pair={}  completion={:.3} s",
                s.session_id,
                s.condition.as_str(),
                s.pairing_id.as_deref().unwrap_or("-"),
                s.completion_s
            );
            if let Some(score) = scores.get(s.session_id.as_str()) {
                let _ = write!(out, "  score={score:.4}");
            }
            out.push('\n');
        }
        match &self.scores {
            Ok(r) => {
                let _ = writeln!(out, "performance score range: t_min={:.3} s t_max={:.3} s", r.t_min, r.t_max);
            }
            Err(e) => {
                let _ = writeln!(out, "performance score: unavailable ({e})");
            }
        }
        for m in &self.metrics {
            let _ = writeln!(out, "metric {}", m.metric);
            for (c, outcome) in &m.normality {
                let _ = writeln!(out, "  {}", describe(outcome, &format!("normality[{}]:", c.as_str())));
            }
            if let Some(t) = &m.t_test {
                let label = format!("{} t-test ({}, pairs={}):", t.kind, t.comparison, t.n_pairs);
                let _ = writeln!(out, "  {}", describe(&t.outcome, &label));
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

//! JSONL run traces. Keys are sorted and nothing depends on the wall
//! clock, so the same scenario and seed give the same bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::Protocol;
use crate::crypto::{hash, Digest};
use crate::encoding::CommandCode;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

/// Line types and the fields each must carry.
const SCHEMA: &[(&str, &[&str])] = &[
    ("scenario", &["name", "seed", "canaries", "vfs"]),
    ("step", &["index", "label", "op"]),
    ("envelope", &["seq", "from", "to", "protocol", "step", "kind", "payload"]),
    ("adversary", &["seq", "protocol", "action"]),
    ("delivery", &["seq", "protocol", "to", "tick", "result"]),
    ("tpm", &["party", "seq", "protocol", "commands"]),
    ("checkpoint", &["step", "orchestrator", "agents"]),
    ("assertion", &["step", "name", "ok"]),
    ("step_result", &["index", "label", "outcome", "errors"]),
    ("result", &["expectation_met", "failure"]),
];

#[derive(Clone, Debug, Default)]
pub struct Trace {
    lines: Vec<Value>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    /// Appends a line; `body` must be an object.
    pub fn push(&mut self, kind: &str, body: Value) {
        let mut obj = match body {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        obj.insert("type".into(), Value::String(kind.into()));
        self.lines.push(Value::Object(obj));
    }

    pub fn lines(&self) -> &[Value] {
        &self.lines
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&serde_json::to_string(l).expect("trace line serializes"));
            out.push('\n');
        }
        out
    }
}

/// Digests under which secrets are listed in the trace header.
pub fn canary_digests(canaries: &[[u8; 32]]) -> Vec<Digest> {
    let set: BTreeSet<Digest> = canaries.iter().map(|c| hash(c)).collect();
    set.into_iter().collect()
}

/// Lines (1-based) holding any 32-byte hex window whose hash is listed.
pub fn secret_hits(text: &str, digests: &[Digest]) -> Vec<usize> {
    let wanted: BTreeSet<&Digest> = digests.iter().collect();
    let mut hits = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let b = line.as_bytes();
        let mut i = 0;
        let mut found = false;
        while i < b.len() && !found {
            if !b[i].is_ascii_hexdigit() {
                i += 1;
                continue;
            }
            let start = i;
            while i < b.len() && b[i].is_ascii_hexdigit() {
                i += 1;
            }
            let run = &line[start..i];
            if run.len() < 64 {
                continue;
            }
            for off in 0..=run.len() - 64 {
                if let Ok(bytes) = hex::decode(&run[off..off + 64]) {
                    if wanted.contains(&hash(&bytes)) {
                        found = true;
                        break;
                    }
                }
            }
        }
        if found {
            hits.push(n + 1);
        }
    }
    hits
}

fn parse_line(n: usize, text: &str) -> Result<Map<String, Value>, TraceError> {
    let err = |message: String| TraceError { line: n, message };
    let v: Value = serde_json::from_str(text).map_err(|e| err(format!("not JSON: {e}")))?;
    let Value::Object(obj) = v else { return Err(err("not an object".into())) };
    let kind = obj.get("type").and_then(Value::as_str).ok_or_else(|| err("missing type".into()))?;
    let (_, fields) = SCHEMA
        .iter()
        .find(|(k, _)| *k == kind)
        .ok_or_else(|| err(format!("unknown line type {kind:?}")))?;
    for f in *fields {
        if !obj.contains_key(*f) {
            return Err(err(format!("{kind} line lacks {f:?}")));
        }
    }
    if let Some(p) = obj.get("protocol").filter(|p| !p.is_null()) {
        serde_json::from_value::<Protocol>(p.clone()).map_err(|e| err(format!("protocol: {e}")))?;
    }
    Ok(obj)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inspection {
    pub rendered: String,
    /// Lines where a listed secret appears.
    pub leaks: Vec<usize>,
}

/// Validates every line against the schema and renders a readable view,
/// optionally restricted to one protocol.
pub fn inspect(text: &str, only: Option<Protocol>) -> Result<Inspection, TraceError> {
    let mut out = String::new();
    let mut digests = Vec::new();
    let mut header = false;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj = parse_line(n, raw)?;
        let kind = obj["type"].as_str().unwrap_or_default();
        if n == 1 && kind != "scenario" {
            return Err(TraceError { line: 1, message: "first line must be the scenario header".into() });
        }
        let s = |k: &str| match &obj[k] {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        if let (Some(want), Some(p)) = (only, obj.get("protocol")) {
            if p.as_str() != Some(want.name()) {
                continue;
            }
        }
        let _ = match kind {
            "scenario" => {
                header = true;
                digests = serde_json::from_value::<Vec<Digest>>(obj["canaries"].clone())
                    .map_err(|e| TraceError { line: n, message: format!("canaries: {e}") })?;
                writeln!(out, "scenario {} seed={}", s("name"), s("seed"))
            }
            "step" => writeln!(out, "== {} ({})", s("label"), obj["op"]["op"].as_str().unwrap_or("?")),
            "envelope" => writeln!(
                out,
                "  #{:<4} {:<9} {} -> {}: {}",
                s("seq"),
                s("protocol"),
                s("from"),
                s("to"),
                s("kind")
            ),
            "adversary" => writeln!(out, "  #{:<4} {:<9} adversary {}", s("seq"), s("protocol"), s("action")),
            "delivery" => {
                let detail = match (obj.get("error"), obj.get("note")) {
                    (Some(Value::String(e)), _) => format!(" {e}"),
                    (_, Some(Value::String(note))) => format!(" ({note})"),
                    _ => String::new(),
                };
                writeln!(
                    out,
                    "  #{:<4} {:<9} delivered to {} at t={}: {}{}",
                    s("seq"),
                    s("protocol"),
                    s("to"),
                    s("tick"),
                    s("result"),
                    detail
                )
            }
            "tpm" => {
                let cmds: Vec<String> = obj["commands"]
                    .as_array()
                    .ok_or_else(|| TraceError { line: n, message: "commands is not a list".into() })?
                    .iter()
                    .map(|c| {
                        let cc = CommandCode(c["cc"].as_u64().unwrap_or_default() as u32);
                        match c["result"].as_str() {
                            Some("success") | None => cc.mnemonic().to_string(),
                            Some(r) => format!("{}[{r}]", cc.mnemonic()),
                        }
                    })
                    .collect();
                writeln!(out, "  #{:<4} {:<9} {} tpm: {}", s("seq"), s("protocol"), s("party"), cmds.join(", "))
            }
            "checkpoint" => Ok(()),
            "assertion" => {
                let ok = obj["ok"].as_bool().unwrap_or(false);
                let detail = match obj.get("detail") {
                    Some(Value::Array(a)) if a.is_empty() => String::new(),
                    Some(d) => format!(" {d}"),
                    None => String::new(),
                };
                writeln!(out, "  assert {}: {}{}", s("name"), if ok { "ok" } else { "FAILED" }, detail)
            }
            "step_result" => writeln!(out, "  -> {}", s("outcome")),
            "result" => writeln!(out, "result: expectation {}", if obj["expectation_met"] == json!(true) { "met" } else { "not met" }),
            _ => Ok(()),
        };
    }
    if !header {
        return Err(TraceError { line: 1, message: "empty trace".into() });
    }
    Ok(Inspection { rendered: out, leaks: secret_hits(text, &digests) })
}

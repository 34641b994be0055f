// SPDX-License-Identifier: Apache-2.0

//! Change-data-capture log and causal tracing.
//!
//! The log is an ordinary table, `sys.log`, flagged `cdc_exempt`. Its row id
//! is the log id. Entries are staged in the writing transaction's private
//! view and become visible with the rest of its state at commit.

use std::fmt;
use std::str::FromStr;

use chrono::{TimeZone, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ColumnDef, Database, RowId, TableDef, TableRef};
use crate::value::{cells_from_json, cells_to_json, Cells, Value, ValueKind};

pub const SYS_SCHEMA: &str = "sys";
pub const LOG_TABLE: &str = "log";
pub const MAX_TRACE_LEN: usize = 64;

pub fn log_table_ref() -> TableRef {
    TableRef::new(SYS_SCHEMA, LOG_TABLE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LogKind {
    Insert,
    Update,
    Delete,
    ProcCall,
    TriggerFire,
    ExternalCall,
    ProcRegister,
    TriggerRegister,
    Commit,
    Rollback,
    AuthDeny,
    CompensationPending,
}

impl LogKind {
    pub const ALL: [LogKind; 12] = [
        LogKind::Insert,
        LogKind::Update,
        LogKind::Delete,
        LogKind::ProcCall,
        LogKind::TriggerFire,
        LogKind::ExternalCall,
        LogKind::ProcRegister,
        LogKind::TriggerRegister,
        LogKind::Commit,
        LogKind::Rollback,
        LogKind::AuthDeny,
        LogKind::CompensationPending,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::Insert => "Insert",
            LogKind::Update => "Update",
            LogKind::Delete => "Delete",
            LogKind::ProcCall => "ProcCall",
            LogKind::TriggerFire => "TriggerFire",
            LogKind::ExternalCall => "ExternalCall",
            LogKind::ProcRegister => "ProcRegister",
            LogKind::TriggerRegister => "TriggerRegister",
            LogKind::Commit => "Commit",
            LogKind::Rollback => "Rollback",
            LogKind::AuthDeny => "AuthDeny",
            LogKind::CompensationPending => "CompensationPending",
        }
    }

    pub fn is_mutation(self) -> bool {
        matches!(self, LogKind::Insert | LogKind::Update | LogKind::Delete)
    }
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LogKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown log kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CauseKind {
    ExternalRequest,
    TelemetryBatch,
    ProcInvocation,
    TriggerActivation,
}

impl CauseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CauseKind::ExternalRequest => "ExternalRequest",
            CauseKind::TelemetryBatch => "TelemetryBatch",
            CauseKind::ProcInvocation => "ProcInvocation",
            CauseKind::TriggerActivation => "TriggerActivation",
        }
    }

    pub fn is_root(self) -> bool {
        matches!(self, CauseKind::ExternalRequest | CauseKind::TelemetryBatch)
    }
}

impl FromStr for CauseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            CauseKind::ExternalRequest,
            CauseKind::TelemetryBatch,
            CauseKind::ProcInvocation,
            CauseKind::TriggerActivation,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::Malformed(format!("unknown cause kind {s:?}")))
    }
}

/// Why an entry exists. Root kinds reference a request or telemetry batch
/// id; the others reference the log id of the entry that led to this one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cause {
    pub kind: CauseKind,
    pub ref_id: u64,
}

impl Cause {
    pub fn request(id: u64) -> Self {
        Cause {
            kind: CauseKind::ExternalRequest,
            ref_id: id,
        }
    }

    pub fn telemetry(batch: u64) -> Self {
        Cause {
            kind: CauseKind::TelemetryBatch,
            ref_id: batch,
        }
    }

    pub fn invocation(proc_call_log_id: u64) -> Self {
        Cause {
            kind: CauseKind::ProcInvocation,
            ref_id: proc_call_log_id,
        }
    }

    pub fn activation(log_id: u64) -> Self {
        Cause {
            kind: CauseKind::TriggerActivation,
            ref_id: log_id,
        }
    }

    pub fn is_root(&self) -> bool {
        self.kind.is_root()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub log_id: u64,
    /// UTC microseconds since the epoch.
    pub ts: i64,
    pub user: String,
    pub txn: u64,
    pub kind: LogKind,
    pub table: Option<TableRef>,
    pub row_id: Option<RowId>,
    pub old_cells: Option<Cells>,
    pub new_cells: Option<Cells>,
    pub detail: String,
    pub cause: Cause,
}

pub fn log_table_def() -> TableDef {
    let mut def = TableDef::new(
        SYS_SCHEMA,
        LOG_TABLE,
        vec![
            ColumnDef::new("log_id", ValueKind::Int).primary_key(),
            ColumnDef::new("ts", ValueKind::Timestamp).not_null(),
            ColumnDef::new("user", ValueKind::Text).not_null(),
            ColumnDef::new("txn", ValueKind::Int).not_null(),
            ColumnDef::new("kind", ValueKind::Text).not_null(),
            ColumnDef::new("table", ValueKind::Text),
            ColumnDef::new("row_id", ValueKind::Int),
            ColumnDef::new("old_cells", ValueKind::Text),
            ColumnDef::new("new_cells", ValueKind::Text),
            ColumnDef::new("detail", ValueKind::Text).not_null(),
            ColumnDef::new("cause_kind", ValueKind::Text).not_null(),
            ColumnDef::new("cause_ref", ValueKind::Int).not_null(),
        ],
    );
    def.flags.cdc_exempt = true;
    def
}

fn cells_text(cells: &Option<Cells>) -> Value {
    match cells {
        Some(c) => Value::Text(serde_json::to_string(c).expect("cells always serialize")),
        None => Value::Null,
    }
}

fn parse_cells_text(v: Option<&Value>) -> Result<Option<Cells>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Text(s)) => serde_json::from_str(s)
            .map(Some)
            .map_err(|e| Error::Internal(format!("corrupt log cells: {e}"))),
        Some(other) => Err(Error::Internal(format!(
            "corrupt log cells of kind {}",
            other.kind_name()
        ))),
    }
}

impl LogEntry {
    pub fn to_cells(&self) -> Cells {
        let mut c = Cells::new();
        c.insert("log_id".into(), Value::Int(self.log_id as i64));
        c.insert("ts".into(), Value::Timestamp(self.ts));
        c.insert("user".into(), Value::Text(self.user.clone()));
        c.insert("txn".into(), Value::Int(self.txn as i64));
        c.insert("kind".into(), Value::Text(self.kind.as_str().into()));
        c.insert(
            "table".into(),
            self.table.as_ref().map_or(Value::Null, |t| Value::Text(t.to_string())),
        );
        c.insert(
            "row_id".into(),
            self.row_id.map_or(Value::Null, |r| Value::Int(r as i64)),
        );
        c.insert("old_cells".into(), cells_text(&self.old_cells));
        c.insert("new_cells".into(), cells_text(&self.new_cells));
        c.insert("detail".into(), Value::Text(self.detail.clone()));
        c.insert("cause_kind".into(), Value::Text(self.cause.kind.as_str().into()));
        c.insert("cause_ref".into(), Value::Int(self.cause.ref_id as i64));
        c
    }

    pub fn from_cells(c: &Cells) -> Result<LogEntry> {
        let int = |k: &str| {
            c.get(k)
                .and_then(Value::as_i64)
                .ok_or_else(|| Error::Internal(format!("log row missing {k}")))
        };
        let text = |k: &str| {
            c.get(k)
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| Error::Internal(format!("log row missing {k}")))
        };
        Ok(LogEntry {
            log_id: int("log_id")? as u64,
            ts: int("ts")?,
            user: text("user")?,
            txn: int("txn")? as u64,
            kind: text("kind")?.parse()?,
            table: match c.get("table") {
                Some(Value::Text(t)) => Some(t.parse()?),
                _ => None,
            },
            row_id: c.get("row_id").and_then(Value::as_i64).map(|r| r as u64),
            old_cells: parse_cells_text(c.get("old_cells"))?,
            new_cells: parse_cells_text(c.get("new_cells"))?,
            detail: text("detail")?,
            cause: Cause {
                kind: text("cause_kind")?.parse()?,
                ref_id: int("cause_ref")? as u64,
            },
        })
    }

    /// Export form: field names as in the entry, ts as ISO-8601 UTC with
    /// microseconds, cells as plain JSON objects.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "log_id": self.log_id,
            "ts": format_ts(self.ts),
            "user": self.user,
            "txn": self.txn,
            "kind": self.kind.as_str(),
            "table": self.table.as_ref().map(|t| t.to_string()),
            "row_id": self.row_id,
            "old_cells": self.old_cells.as_ref().map(cells_to_json),
            "new_cells": self.new_cells.as_ref().map(cells_to_json),
            "detail": self.detail,
            "cause": {"kind": self.cause.kind.as_str(), "ref_id": self.cause.ref_id},
        })
    }

    pub fn from_json(json: &serde_json::Value) -> Result<LogEntry> {
        let bad = |what: &str| Error::Malformed(format!("log entry: bad {what}"));
        let obj = json.as_object().ok_or_else(|| bad("object"))?;
        let u = |k: &str| obj.get(k).and_then(|v| v.as_u64()).ok_or_else(|| bad(k));
        let s = |k: &str| {
            obj.get(k)
                .and_then(|v| v.as_str())
                .map(str::to_owned)
                .ok_or_else(|| bad(k))
        };
        let cells = |k: &str| -> Result<Option<Cells>> {
            match obj.get(k) {
                None | Some(serde_json::Value::Null) => Ok(None),
                Some(v) => cells_from_json(v).map(Some),
            }
        };
        let cause = obj.get("cause").ok_or_else(|| bad("cause"))?;
        Ok(LogEntry {
            log_id: u("log_id")?,
            ts: parse_ts(&s("ts")?)?,
            user: s("user")?,
            txn: u("txn")?,
            kind: s("kind")?.parse()?,
            table: match obj.get("table").and_then(|v| v.as_str()) {
                Some(t) => Some(t.parse()?),
                None => None,
            },
            row_id: obj.get("row_id").and_then(|v| v.as_u64()),
            old_cells: cells("old_cells")?,
            new_cells: cells("new_cells")?,
            detail: s("detail")?,
            cause: Cause {
                kind: cause
                    .get("kind")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| bad("cause.kind"))?
                    .parse()?,
                ref_id: cause
                    .get("ref_id")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| bad("cause.ref_id"))?,
            },
        })
    }
}

pub fn format_ts(micros: i64) -> String {
    match Utc.timestamp_micros(micros).single() {
        Some(t) => t.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string(),
        None => micros.to_string(),
    }
}

pub fn parse_ts(s: &str) -> Result<i64> {
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp_micros())
        .map_err(|e| Error::Malformed(format!("timestamp {s:?}: {e}")))
}

/// Wall clock in microseconds that never runs backwards.
#[derive(Debug, Default)]
pub struct Clock {
    last: Mutex<i64>,
}

impl Clock {
    pub fn now(&self) -> i64 {
        let wall = Utc::now().timestamp_micros();
        let mut last = self.last.lock();
        *last = (*last).max(wall);
        *last
    }
}

pub fn entry(db: &Database, log_id: u64) -> Result<Option<LogEntry>> {
    let table = db.table(&log_table_ref()).map_err(|_| Error::NotInitialized)?;
    table.get(log_id).map(LogEntry::from_cells).transpose()
}

pub fn entries(db: &Database) -> Result<Vec<LogEntry>> {
    let table = db.table(&log_table_ref()).map_err(|_| Error::NotInitialized)?;
    table.rows().map(|(_, c)| LogEntry::from_cells(c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    /// From the queried entry back to the entry caused by a root.
    pub chain: Vec<LogEntry>,
    pub root: Cause,
}

impl TraceResult {
    /// Entry kinds in chain order followed by the root cause kind.
    pub fn kinds(&self) -> Vec<String> {
        self.chain
            .iter()
            .map(|e| e.kind.as_str().to_owned())
            .chain(std::iter::once(self.root.kind.as_str().to_owned()))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "chain": self.chain.iter().map(LogEntry::to_json).collect::<Vec<_>>(),
            "root": {"kind": self.root.kind.as_str(), "ref_id": self.root.ref_id},
            "kinds": self.kinds(),
        })
    }
}

pub fn trace(db: &Database, log_id: u64) -> Result<TraceResult> {
    let mut current = entry(db, log_id)?.ok_or(Error::UnknownLogId(log_id))?;
    let mut chain = Vec::new();
    loop {
        let cause = current.cause;
        let id = current.log_id;
        chain.push(current);
        if cause.is_root() {
            return Ok(TraceResult { chain, root: cause });
        }
        if chain.len() >= MAX_TRACE_LEN || cause.ref_id >= id {
            return Err(Error::BrokenChain(id));
        }
        current = entry(db, cause.ref_id)?.ok_or(Error::BrokenChain(id))?;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogFilter {
    pub user: Option<String>,
    pub table: Option<String>,
    pub kind: Option<LogKind>,
    /// Inclusive lower bound, microseconds.
    pub since: Option<i64>,
    /// Exclusive upper bound, microseconds.
    pub until: Option<i64>,
}

impl LogFilter {
    pub fn matches(&self, e: &LogEntry) -> bool {
        self.user.as_ref().is_none_or(|u| *u == e.user)
            && self.table.as_ref().is_none_or(|t| {
                e.table
                    .as_ref()
                    .is_some_and(|et| et.to_string() == *t || (!t.contains('.') && et.name == *t))
            })
            && self.kind.is_none_or(|k| k == e.kind)
            && self.since.is_none_or(|s| e.ts >= s)
            && self.until.is_none_or(|u| e.ts < u)
    }
}

pub fn query_log(db: &Database, filter: &LogFilter) -> Result<Vec<LogEntry>> {
    Ok(entries(db)?.into_iter().filter(|e| filter.matches(e)).collect())
}

/// Newline-delimited JSON, one entry per line.
pub fn export_ndjson(entries: &[LogEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_json().to_string());
        out.push('\n');
    }
    out
}

/// Rebuilds every table's rows from the log's old/new images, starting
/// from the rows seeded at init, and reports the first table whose rows
/// differ from `db`.
pub fn verify_log_replay(db: &Database) -> Result<()> {
    let mut seed = Database::new();
    for s in db.schemas() {
        seed.create_schema(s)?;
    }
    for (_, t) in db.tables() {
        seed.create_table(t.def().clone())?;
    }
    for op in crate::acl::bootstrap_ops() {
        if let crate::journal::JournalOp::Insert { .. } = op {
            crate::journal::apply(&mut seed, &op)?;
        }
    }
    for e in entries(db)? {
        if !e.kind.is_mutation() {
            continue;
        }
        let (Some(table), Some(row_id)) = (&e.table, e.row_id) else {
            return Err(Error::Internal(format!("mutation entry {} lacks a row", e.log_id)));
        };
        let t = seed.table_mut(table)?;
        match e.kind {
            LogKind::Delete => {
                t.remove(row_id);
            }
            _ => t.put(row_id, e.new_cells.clone().unwrap_or_default()),
        }
    }
    let log = log_table_ref();
    for (r, t) in db.tables() {
        if *r == log {
            continue;
        }
        let want: Vec<_> = t.rows().collect();
        let replayed = seed.table(r)?;
        let got: Vec<_> = replayed.rows().collect();
        if want.len() != got.len() {
            return Err(Error::Internal(format!(
                "log replay of {r} gives {} rows, state has {}",
                got.len(),
                want.len()
            )));
        }
        if let Some((w, g)) = want.iter().zip(&got).find(|(w, g)| w != g) {
            return Err(Error::Internal(format!(
                "log replay of {r} differs: row {} is {:?}, replay gives row {} as {:?}",
                w.0, w.1, g.0, g.1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LogEntry {
        let mut new = Cells::new();
        new.insert("nodeId".into(), Value::Int(4));
        new.insert("cpuUtil".into(), Value::Float(0.0));
        LogEntry {
            log_id: 7,
            ts: 1_700_000_000_123_456,
            user: "alice".into(),
            txn: 3,
            kind: LogKind::Insert,
            table: Some(TableRef::new("compute", "Nodes")),
            row_id: Some(4),
            old_cells: None,
            new_cells: Some(new),
            detail: String::new(),
            cause: Cause::invocation(5),
        }
    }

    #[test]
    fn row_round_trip() {
        let e = sample();
        assert_eq!(LogEntry::from_cells(&e.to_cells()).unwrap(), e);
    }

    #[test]
    fn export_format() {
        let e = sample();
        let line = export_ndjson(std::slice::from_ref(&e));
        assert!(line.ends_with('\n'));
        let json: serde_json::Value = serde_json::from_str(line.trim_end()).unwrap();
        assert_eq!(json["ts"], "2023-11-14T22:13:20.123456Z");
        assert_eq!(json["new_cells"]["cpuUtil"], 0.0);
        assert_eq!(json["cause"]["kind"], "ProcInvocation");
        let back = LogEntry::from_json(&json).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn clock_is_monotonic() {
        let c = Clock::default();
        let mut prev = c.now();
        for _ in 0..1000 {
            let t = c.now();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn filter_by_bare_table_name() {
        let e = sample();
        let f = LogFilter {
            table: Some("Nodes".into()),
            ..LogFilter::default()
        };
        assert!(f.matches(&e));
        let f = LogFilter {
            table: Some("compute.Pods".into()),
            ..LogFilter::default()
        };
        assert!(!f.matches(&e));
    }
}

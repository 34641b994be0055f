// SPDX-License-Identifier: Apache-2.0

//! Span ingestion and per-node metric rollups.
//!
//! Spans land in `traces.Spans` (attributes in `traces.SpanAttributes`). An
//! insert trigger keeps cumulative counters in `metrics.NodeMetrics`, and
//! `reset_metrics` clears a node's spans and counters.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{TriggerDef, TriggerEvent};
use crate::provenance::Cause;
use crate::store::{ColumnDef, Database, TableDef, TableRef};
use crate::txn::{Kernel, Origin};
use crate::value::{Cells, Value, ValueKind};

pub const TRACES_SCHEMA: &str = "traces";
pub const METRICS_SCHEMA: &str = "metrics";
pub const SPANS_TABLE: &str = "Spans";
pub const ATTRS_TABLE: &str = "SpanAttributes";
pub const METRICS_TABLE: &str = "NodeMetrics";

/// The node inventory consulted to flag spans from unknown nodes.
pub const NODES_SCHEMA: &str = "compute";
pub const NODES_TABLE: &str = "Nodes";
pub const NODE_KEY: &str = "nodeId";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanStatus {
    Ok,
    Error,
}

impl SpanStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SpanStatus::Ok => "Ok",
            SpanStatus::Error => "Error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    #[serde(default)]
    pub parent_span_id: Option<String>,
    pub name: String,
    pub node_id: i64,
    pub start_ts: i64,
    pub end_ts: i64,
    pub status: SpanStatus,
    #[serde(default)]
    pub attributes: Vec<(String, String)>,
}

fn is_hex_id(s: &str, len: usize) -> bool {
    s.len() == len && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl Span {
    pub fn key(&self) -> String {
        format!("{}:{}", self.trace_id, self.span_id)
    }

    pub fn latency(&self) -> i64 {
        self.end_ts - self.start_ts
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedSpan(msg));
        if !is_hex_id(&self.trace_id, 32) {
            return bad(format!("trace_id {:?} is not 32 lowercase hex digits", self.trace_id));
        }
        if !is_hex_id(&self.span_id, 16) {
            return bad(format!("span_id {:?} is not 16 lowercase hex digits", self.span_id));
        }
        if let Some(p) = &self.parent_span_id {
            if !is_hex_id(p, 16) {
                return bad(format!("parent_span_id {p:?} is not 16 lowercase hex digits"));
            }
        }
        if self.name.is_empty() {
            return bad("empty span name".into());
        }
        if self.end_ts < self.start_ts {
            return bad(format!("span {} ends before it starts", self.span_id));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("spans always serialize")
    }
}

/// Validates a whole batch, including span_id uniqueness per trace.
pub fn validate_batch(spans: &[Span]) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, s) in spans.iter().enumerate() {
        s.validate().map_err(|e| {
            Error::MalformedSpan(format!(
                "span {i}: {}",
                e.to_string().trim_start_matches("malformed span: ")
            ))
        })?;
        if !seen.insert((s.trace_id.as_str(), s.span_id.as_str())) {
            return Err(Error::MalformedSpan(format!(
                "span {i}: span_id {} repeats within trace {}",
                s.span_id, s.trace_id
            )));
        }
    }
    Ok(())
}

/// Decodes and validates the ingest wire format: a JSON array of spans.
pub fn decode_spans(bytes: &[u8]) -> Result<Vec<Span>> {
    let spans: Vec<Span> = serde_json::from_slice(bytes).map_err(|e| Error::MalformedSpan(e.to_string()))?;
    validate_batch(&spans)?;
    Ok(spans)
}

pub fn spans_ref() -> TableRef {
    TableRef::new(TRACES_SCHEMA, SPANS_TABLE)
}

pub fn attrs_ref() -> TableRef {
    TableRef::new(TRACES_SCHEMA, ATTRS_TABLE)
}

pub fn metrics_ref() -> TableRef {
    TableRef::new(METRICS_SCHEMA, METRICS_TABLE)
}

pub fn nodes_ref() -> TableRef {
    TableRef::new(NODES_SCHEMA, NODES_TABLE)
}

pub fn spans_def() -> TableDef {
    TableDef::new(
        TRACES_SCHEMA,
        SPANS_TABLE,
        vec![
            ColumnDef::new("span_key", ValueKind::Text).primary_key(),
            ColumnDef::new("trace_id", ValueKind::Text).not_null(),
            ColumnDef::new("span_id", ValueKind::Text).not_null(),
            ColumnDef::new("parent_span_id", ValueKind::Text),
            ColumnDef::new("name", ValueKind::Text).not_null(),
            ColumnDef::new("node_id", ValueKind::Int).not_null(),
            ColumnDef::new("start_ts", ValueKind::Timestamp).not_null(),
            ColumnDef::new("end_ts", ValueKind::Timestamp)
                .not_null()
                .check("end_ts >= start_ts"),
            ColumnDef::new("status", ValueKind::Text)
                .not_null()
                .check("status = 'Ok' OR status = 'Error'"),
            ColumnDef::new("unmatched", ValueKind::Bool).not_null(),
        ],
    )
}

pub fn attrs_def() -> TableDef {
    TableDef::new(
        TRACES_SCHEMA,
        ATTRS_TABLE,
        vec![
            ColumnDef::new("span_ref", ValueKind::Text).not_null(),
            ColumnDef::new("key", ValueKind::Text).not_null(),
            ColumnDef::new("value", ValueKind::Text),
        ],
    )
}

pub fn metrics_def() -> TableDef {
    TableDef::new(
        METRICS_SCHEMA,
        METRICS_TABLE,
        vec![
            ColumnDef::new("node_id", ValueKind::Int).primary_key(),
            ColumnDef::new("span_count", ValueKind::Int)
                .not_null()
                .check("span_count >= 0"),
            ColumnDef::new("error_count", ValueKind::Int)
                .not_null()
                .check("error_count >= 0 AND error_count <= span_count"),
            ColumnDef::new("latency_sum", ValueKind::Int).not_null(),
            ColumnDef::new("error_rate", ValueKind::Float),
            ColumnDef::new("avg_latency", ValueKind::Float),
        ],
    )
}

pub const SPAN_ROLLUP: &str = "\
PROC span_rollup(p_node: INT, p_latency: INT, p_error: BOOL) BEGIN
  DECLARE present: INT;
  DECLARE e: INT;
  SET e = 0;
  IF p_error THEN
    SET e = 1;
  END IF;
  SELECT COUNT(*) INTO present FROM metrics.NodeMetrics WHERE node_id = p_node;
  IF present = 0 THEN
    INSERT INTO metrics.NodeMetrics (node_id, span_count, error_count, latency_sum, error_rate, avg_latency)
      VALUES (p_node, 1, e, p_latency, e / 1, p_latency / 1);
  ELSE
    UPDATE metrics.NodeMetrics
      SET span_count = span_count + 1,
          error_count = error_count + e,
          latency_sum = latency_sum + p_latency,
          error_rate = (error_count + e) / (span_count + 1),
          avg_latency = (latency_sum + p_latency) / (span_count + 1)
      WHERE node_id = p_node;
  END IF;
END";

pub const RECOMPUTE_METRICS: &str = "\
PROC recompute_metrics(p_node: INT) BEGIN
  DECLARE c: INT;
  DECLARE ec: INT;
  DECLARE ls: INT;
  DECLARE present: INT;
  SELECT COUNT(*), SUM(end_ts - start_ts) INTO c, ls FROM traces.Spans WHERE node_id = p_node;
  SELECT COUNT(*) INTO ec FROM traces.Spans WHERE node_id = p_node AND status = 'Error';
  SELECT COUNT(*) INTO present FROM metrics.NodeMetrics WHERE node_id = p_node;
  IF present = 0 THEN
    INSERT INTO metrics.NodeMetrics (node_id, span_count, error_count, latency_sum)
      VALUES (p_node, 0, 0, 0);
  END IF;
  IF c = 0 THEN
    UPDATE metrics.NodeMetrics
      SET span_count = 0, error_count = 0, latency_sum = 0, error_rate = NULL, avg_latency = NULL
      WHERE node_id = p_node;
  ELSE
    UPDATE metrics.NodeMetrics
      SET span_count = c, error_count = ec, latency_sum = ls, error_rate = ec / c, avg_latency = ls / c
      WHERE node_id = p_node;
  END IF;
END";

pub const RESET_METRICS: &str = "\
PROC reset_metrics(p_node: INT) BEGIN
  FOR s IN (SELECT span_key FROM traces.Spans WHERE node_id = p_node) LOOP
    DELETE FROM traces.SpanAttributes WHERE span_ref = s.span_key;
  END LOOP;
  DELETE FROM traces.Spans WHERE node_id = p_node;
  CALL recompute_metrics(p_node);
END";

pub fn span_trigger() -> TriggerDef {
    TriggerDef {
        name: "span_ins".into(),
        table: format!("{TRACES_SCHEMA}.{SPANS_TABLE}"),
        event: TriggerEvent::AfterInsert,
        when: None,
        procedure: "span_rollup".into(),
        args: vec![
            "NEW.node_id".into(),
            "NEW.end_ts - NEW.start_ts".into(),
            "NEW.status = 'Error'".into(),
        ],
        order_key: 0,
    }
}

/// Creates the telemetry schemas, tables, procedures and trigger in one
/// transaction.
pub fn install(kernel: &Kernel, origin: &Origin) -> Result<()> {
    kernel.run(origin, |x| {
        x.create_schema(TRACES_SCHEMA)?;
        x.create_schema(METRICS_SCHEMA)?;
        x.create_table(spans_def())?;
        x.create_table(attrs_def())?;
        x.create_table(metrics_def())?;
        x.register_procedure(SPAN_ROLLUP)?;
        x.register_procedure(RECOMPUTE_METRICS)?;
        x.register_procedure(RESET_METRICS)?;
        x.register_trigger(span_trigger())
    })
}

pub fn is_installed(db: &Database) -> bool {
    db.table(&spans_ref()).is_ok() && db.table(&metrics_ref()).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestReport {
    /// TelemetryBatch root cause id; 0 when the batch was empty.
    pub batch_id: u64,
    pub accepted: usize,
}

/// Ingests one batch in one transaction. Structural problems reject the
/// whole batch before anything runs.
pub fn ingest(kernel: &Kernel, spans: &[Span], user: &str) -> Result<IngestReport> {
    validate_batch(spans)?;
    if spans.is_empty() {
        return Ok(IngestReport {
            batch_id: 0,
            accepted: 0,
        });
    }
    ingest_batch(kernel, spans, user, kernel.next_request_id())
}

/// Like [`ingest`], with the batch id chosen by the caller.
pub fn ingest_batch(kernel: &Kernel, spans: &[Span], user: &str, batch_id: u64) -> Result<IngestReport> {
    validate_batch(spans)?;
    if spans.is_empty() {
        return Ok(IngestReport { batch_id, accepted: 0 });
    }
    let origin = Origin::new(user, Cause::telemetry(batch_id));
    let accepted = kernel.run(&origin, |x| {
        let spans_t = spans_ref();
        let attrs_t = attrs_ref();
        let cause = x.root_cause();
        for s in spans {
            let unmatched = match x.db().table(&nodes_ref()) {
                Ok(t) => !t.rows().any(|(_, c)| c.get(NODE_KEY) == Some(&Value::Int(s.node_id))),
                Err(_) => true,
            };
            x.insert(&spans_t, span_cells(s, unmatched), cause, 0)?;
            for (k, v) in &s.attributes {
                let mut c = Cells::new();
                c.insert("span_ref".into(), Value::from(s.key().as_str()));
                c.insert("key".into(), Value::from(k.as_str()));
                c.insert("value".into(), Value::from(v.as_str()));
                x.insert(&attrs_t, c, cause, 0)?;
            }
        }
        Ok(spans.len())
    })?;
    Ok(IngestReport { batch_id, accepted })
}

fn span_cells(s: &Span, unmatched: bool) -> Cells {
    let mut c = Cells::new();
    c.insert("span_key".into(), Value::from(s.key().as_str()));
    c.insert("trace_id".into(), Value::from(s.trace_id.as_str()));
    c.insert("span_id".into(), Value::from(s.span_id.as_str()));
    c.insert(
        "parent_span_id".into(),
        s.parent_span_id.as_deref().map_or(Value::Null, Value::from),
    );
    c.insert("name".into(), Value::from(s.name.as_str()));
    c.insert("node_id".into(), Value::Int(s.node_id));
    c.insert("start_ts".into(), Value::Timestamp(s.start_ts));
    c.insert("end_ts".into(), Value::Timestamp(s.end_ts));
    c.insert("status".into(), Value::from(s.status.as_str()));
    c.insert("unmatched".into(), Value::Bool(unmatched));
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub node_id: i64,
    pub span_count: i64,
    pub error_count: i64,
    /// Microseconds.
    pub latency_sum: i64,
    pub error_rate: Option<f64>,
    /// Microseconds.
    pub avg_latency: Option<f64>,
}

impl NodeMetrics {
    fn from_counts(node_id: i64, span_count: i64, error_count: i64, latency_sum: i64) -> Self {
        let derived = |n: i64| (span_count > 0).then(|| n as f64 / span_count as f64);
        NodeMetrics {
            node_id,
            span_count,
            error_count,
            latency_sum,
            error_rate: derived(error_count),
            avg_latency: derived(latency_sum),
        }
    }

    fn from_cells(c: &Cells) -> Self {
        let int = |k: &str| c.get(k).and_then(Value::as_i64).unwrap_or(0);
        let float = |k: &str| c.get(k).and_then(Value::as_f64);
        NodeMetrics {
            node_id: int("node_id"),
            span_count: int("span_count"),
            error_count: int("error_count"),
            latency_sum: int("latency_sum"),
            error_rate: float("error_rate"),
            avg_latency: float("avg_latency"),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("metrics always serialize")
    }
}

/// Metrics computed directly from the stored spans.
pub fn brute_force_metrics(db: &Database, node_id: i64) -> Result<NodeMetrics> {
    let (mut n, mut errors, mut latency) = (0, 0, 0);
    for (_, c) in db.table(&spans_ref())?.rows() {
        if c.get("node_id").and_then(Value::as_i64) != Some(node_id) {
            continue;
        }
        n += 1;
        if c.get("status").and_then(Value::as_str) == Some("Error") {
            errors += 1;
        }
        let ts = |k: &str| c.get(k).and_then(Value::as_i64).unwrap_or(0);
        latency += ts("end_ts") - ts("start_ts");
    }
    Ok(NodeMetrics::from_counts(node_id, n, errors, latency))
}

/// Reads committed metrics for a node.
pub fn get_metrics(db: &Database, node_id: i64) -> Result<NodeMetrics> {
    if node_id < 0 {
        return Err(Error::UnknownNode(node_id));
    }
    let t = db.table(&metrics_ref())?;
    if let Some(Some(id)) = t.lookup_unique("node_id", &Value::Int(node_id)) {
        return Ok(NodeMetrics::from_cells(t.get(id).expect("indexed row exists")));
    }
    let m = brute_force_metrics(db, node_id)?;
    if m.span_count == 0 {
        return Err(Error::UnknownNode(node_id));
    }
    Ok(m)
}

/// Deterministic span generator for tests and load drivers.
pub mod gen {
    use super::{Span, SpanStatus};

    pub fn hex(n: u64, width: usize) -> String {
        format!("{n:0width$x}")
    }

    pub fn span(trace: u64, span: u64, node_id: i64, start: i64, latency: i64, status: SpanStatus) -> Span {
        Span {
            trace_id: hex(trace, 32),
            span_id: hex(span, 16),
            parent_span_id: None,
            name: "request".into(),
            node_id,
            start_ts: start,
            end_ts: start + latency,
            status,
            attributes: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::gen::span;
    use super::*;
    use crate::proxy::SimFleet;
    use crate::syntax::parse_statement;

    fn kernel() -> Kernel {
        let k = Kernel::new(Arc::new(SimFleet::new(std::time::Duration::ZERO)));
        k.init_provenance().unwrap();
        install(&k, &Origin::new("admin", Cause::request(k.next_request_id()))).unwrap();
        k
    }

    #[test]
    fn three_ok_spans() {
        let k = kernel();
        let batch: Vec<Span> = [10_000, 20_000, 30_000]
            .iter()
            .enumerate()
            .map(|(i, lat)| span(1, i as u64 + 1, 1, 1_000_000, *lat, SpanStatus::Ok))
            .collect();
        let r = ingest(&k, &batch, "admin").unwrap();
        assert_eq!(r.accepted, 3);
        let m = get_metrics(&k.snapshot(), 1).unwrap();
        assert_eq!(m.span_count, 3);
        assert_eq!(m.error_rate, Some(0.0));
        assert_eq!(m.avg_latency, Some(20_000.0));
    }

    #[test]
    fn ok_and_error_give_half() {
        let k = kernel();
        let batch = vec![
            span(2, 1, 7, 0, 5, SpanStatus::Ok),
            span(2, 2, 7, 0, 5, SpanStatus::Error),
        ];
        ingest(&k, &batch, "admin").unwrap();
        assert_eq!(get_metrics(&k.snapshot(), 7).unwrap().error_rate, Some(0.5));
    }

    #[test]
    fn empty_batch_has_no_effect() {
        let k = kernel();
        let before = k.log().unwrap().len();
        assert_eq!(ingest(&k, &[], "admin").unwrap().accepted, 0);
        assert_eq!(k.log().unwrap().len(), before);
    }

    #[test]
    fn malformed_span_rejects_batch() {
        let k = kernel();
        let mut bad = span(3, 2, 1, 10, 0, SpanStatus::Ok);
        bad.end_ts = 5;
        let batch = vec![span(3, 1, 1, 0, 1, SpanStatus::Ok), bad];
        assert!(matches!(ingest(&k, &batch, "admin"), Err(Error::MalformedSpan(_))));
        assert!(k.snapshot().table(&spans_ref()).unwrap().is_empty());
        let dup = vec![span(3, 1, 1, 0, 1, SpanStatus::Ok), span(3, 1, 2, 0, 1, SpanStatus::Ok)];
        assert!(matches!(ingest(&k, &dup, "admin"), Err(Error::MalformedSpan(_))));
    }

    #[test]
    fn decode_rejects_bad_ids_and_fields() {
        let ok = serde_json::to_vec(&vec![span(1, 1, 1, 0, 1, SpanStatus::Ok)]).unwrap();
        assert_eq!(decode_spans(&ok).unwrap().len(), 1);
        for bad in [
            r#"[{"trace_id":"ABC","span_id":"0000000000000001","name":"x","node_id":1,"start_ts":0,"end_ts":1,"status":"Ok"}]"#,
            r#"[{"trace_id":"00000000000000000000000000000001","span_id":"1","name":"x","node_id":1,"start_ts":0,"end_ts":1,"status":"Ok"}]"#,
            r#"[{"trace_id":"00000000000000000000000000000001","span_id":"0000000000000001","name":"x","node_id":1,"start_ts":0,"end_ts":1,"status":"Maybe"}]"#,
            r#"[{"trace_id":"00000000000000000000000000000001","span_id":"0000000000000001","name":"x","node_id":1,"start_ts":0,"end_ts":1,"status":"Ok","extra":1}]"#,
            r#"{"not":"an array"}"#,
        ] {
            assert!(
                matches!(decode_spans(bad.as_bytes()), Err(Error::MalformedSpan(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn unknown_nodes_and_negative_ids() {
        let k = kernel();
        assert!(matches!(get_metrics(&k.snapshot(), -1), Err(Error::UnknownNode(-1))));
        assert!(matches!(get_metrics(&k.snapshot(), 99), Err(Error::UnknownNode(99))));
        ingest(&k, &[span(4, 1, 99, 0, 1, SpanStatus::Ok)], "admin").unwrap();
        let db = k.snapshot();
        let t = db.table(&spans_ref()).unwrap();
        let (_, row) = t.rows().next().unwrap();
        assert_eq!(row.get("unmatched"), Some(&Value::Bool(true)));
    }

    #[test]
    fn reset_clears_spans_and_nulls_metrics() {
        let k = kernel();
        let mut s = span(5, 1, 3, 0, 100, SpanStatus::Error);
        s.attributes.push(("http.method".into(), "GET".into()));
        ingest(&k, &[s, span(5, 2, 4, 0, 100, SpanStatus::Ok)], "admin").unwrap();
        k.call_procedure(
            "reset_metrics",
            vec![Value::Int(3)],
            &Origin::new("admin", Cause::request(99)),
            None,
        )
        .unwrap();
        let db = k.snapshot();
        let m = get_metrics(&db, 3).unwrap();
        assert_eq!((m.span_count, m.error_rate, m.avg_latency), (0, None, None));
        assert_eq!(db.table(&attrs_ref()).unwrap().len(), 0);
        assert_eq!(get_metrics(&db, 4).unwrap().span_count, 1);
    }

    #[test]
    fn recompute_matches_counters_and_handles_unknown_node() {
        let k = kernel();
        ingest(
            &k,
            &[
                span(6, 1, 2, 0, 7, SpanStatus::Error),
                span(6, 2, 2, 0, 3, SpanStatus::Ok),
            ],
            "admin",
        )
        .unwrap();
        let origin = Origin::new("admin", Cause::request(100));
        let before = get_metrics(&k.snapshot(), 2).unwrap();
        k.call_procedure("recompute_metrics", vec![Value::Int(2)], &origin, None)
            .unwrap();
        assert_eq!(get_metrics(&k.snapshot(), 2).unwrap(), before);
        k.call_procedure("recompute_metrics", vec![Value::Int(42)], &origin, None)
            .unwrap();
        let m = get_metrics(&k.snapshot(), 42).unwrap();
        assert_eq!((m.span_count, m.error_rate), (0, None));
        let rs = k
            .execute_sql("SELECT COUNT(*) FROM traces.Spans WHERE node_id = 2", &origin, None)
            .unwrap();
        assert_eq!(rs.to_json()["rows"][0][0], 2);
        assert!(parse_statement("SELECT * FROM metrics.NodeMetrics").is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Incremental counters equal a full recomputation after every batch.
        #[test]
        fn counters_match_brute_force(
            batches in prop::collection::vec(
                prop::collection::vec((0i64..5, 0i64..1_000, any::<bool>()), 0..40),
                1..6,
            )
        ) {
            let k = kernel();
            let mut next = 0u64;
            for b in &batches {
                let spans: Vec<Span> = b
                    .iter()
                    .map(|(node, lat, err)| {
                        next += 1;
                        span(next, 1, *node, 0, *lat, if *err { SpanStatus::Error } else { SpanStatus::Ok })
                    })
                    .collect();
                ingest(&k, &spans, "admin").unwrap();
                let db = k.snapshot();
                for node in 0..5 {
                    let want = brute_force_metrics(&db, node).unwrap();
                    match get_metrics(&db, node) {
                        Ok(got) => {
                            prop_assert_eq!(got.span_count, want.span_count);
                            prop_assert_eq!(got.error_count, want.error_count);
                            prop_assert_eq!(got.latency_sum, want.latency_sum);
                            prop_assert_eq!(got.error_rate, want.error_rate);
                            prop_assert_eq!(got.avg_latency, want.avg_latency);
                        }
                        Err(Error::UnknownNode(_)) => prop_assert_eq!(want.span_count, 0),
                        Err(e) => return Err(TestCaseError::fail(e.to_string())),
                    }
                }
            }
        }
    }
}

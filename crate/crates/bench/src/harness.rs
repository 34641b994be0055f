// SPDX-License-Identifier: Apache-2.0

//! Drives the scenarios through the client API and checks their outcome.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dbnet_core::api::Service;
use dbnet_core::proxy::{convergence_gaps, DeviceClient, SimFleet, TimedDevices};
use dbnet_core::store::{DeviceKind, TableRef};
use dbnet_core::telemetry::{self, gen, Span, SpanStatus};
use dbnet_core::{acl, provenance, Kernel, Value};
use dbnet_server::{router, spawn, Running};
use serde_json::{json, Value as Json};

use crate::scenario::{self, ScenarioConfig, AUTOSCALERS, LOADBALANCERS, NODES, SEED_NODES, THRESHOLDS};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{method} {path} returned {status}: {body}")]
    Api {
        method: String,
        path: String,
        status: u16,
        body: String,
    },
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Core(#[from] dbnet_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> BenchResult<()> {
    if cond {
        Ok(())
    } else {
        Err(BenchError::Assertion(msg()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Requests go straight to the service object.
    InProcess,
    /// Requests go over loopback HTTP to a server on an ephemeral port.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectCounts {
    pub schemas: usize,
    pub tables: usize,
    pub procedures: usize,
    pub triggers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetupReport {
    pub latency: Duration,
    pub counts: ObjectCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub name: &'static str,
    /// Wall clock from the triggering request until its response, device
    /// sync included.
    pub e2e: Duration,
    /// Time spent inside the service minus time spent in device calls.
    pub kernel: Duration,
    pub device: Duration,
    pub new_node: i64,
    /// Kinds along the provenance trace of the new node's Insert.
    pub chain: Vec<String>,
    /// Kinds of every log entry the run appended.
    pub log_kinds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub clients: usize,
    pub spans_per_client: usize,
    pub requests: usize,
    pub spans_stored: usize,
    pub latency: Duration,
}

/// Per-pod aggregates as stored: (avgCpuUtil, nodeCount) and (avgIngTraff, backends).
pub type PodAggregates = (BTreeMap<i64, (Option<f64>, i64)>, BTreeMap<i64, (Option<f64>, i64)>);

pub const ADMIN: &str = acl::ADMIN_USER;

pub struct Harness {
    pub cfg: ScenarioConfig,
    pub kernel: Arc<Kernel>,
    pub fleet: Arc<SimFleet>,
    pub service: Arc<Service>,
    timed: Arc<TimedDevices>,
    transport: Transport,
    server: Option<Running>,
    agent: ureq::Agent,
}

impl Harness {
    /// A fresh, initialized kernel with an empty fleet. The outbox is
    /// drained inline so runs are deterministic.
    pub fn new(cfg: ScenarioConfig, transport: Transport) -> BenchResult<Harness> {
        cfg.validate().map_err(BenchError::Assertion)?;
        let fleet = Arc::new(SimFleet::new(cfg.provisioning_delay));
        let timed = Arc::new(TimedDevices::new(fleet.clone()));
        let kernel = Arc::new(Kernel::new(timed.clone()));
        kernel.init_provenance()?;
        let service = Arc::new(Service::new(kernel.clone()).with_inline_drain());
        let mut h = Harness {
            cfg,
            kernel,
            fleet,
            service,
            timed,
            transport,
            server: None,
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        };
        if transport == Transport::Http {
            h.http_base()?;
        }
        Ok(h)
    }

    pub fn transport(&self) -> Transport {
        self.transport
    }

    /// Base URL of the HTTP server, starting it on first use.
    pub fn http_base(&mut self) -> BenchResult<String> {
        if self.server.is_none() {
            self.server = Some(spawn(router(self.service.clone()), ([127, 0, 0, 1], 0).into())?);
        }
        Ok(self.server.as_ref().map(Running::base_url).unwrap_or_default())
    }

    /// Sends one request and returns status and body text.
    pub fn request(&self, method: &str, path: &str, user: &str, body: Option<&Json>) -> BenchResult<(u16, String)> {
        let text = body.map(Json::to_string).unwrap_or_default();
        let auth = format!("Bearer {user}");
        match (&self.server, self.transport) {
            (Some(srv), Transport::Http) => http_send(&self.agent, &srv.base_url(), method, path, &auth, body),
            _ => {
                let (path, query) = split_query(path);
                let r = self.service.handle(method, path, &query, Some(&auth), text.as_bytes());
                Ok((r.status, r.body_string()))
            }
        }
    }

    /// Sends as admin and requires a 200.
    pub fn call(&self, method: &str, path: &str, body: Option<Json>) -> BenchResult<String> {
        let (status, text) = self.request(method, path, ADMIN, body.as_ref())?;
        if status != 200 {
            return Err(BenchError::Api {
                method: method.into(),
                path: path.into(),
                status,
                body: text,
            });
        }
        Ok(text)
    }

    pub fn call_json(&self, method: &str, path: &str, body: Option<Json>) -> BenchResult<Json> {
        let text = self.call(method, path, body)?;
        serde_json::from_str(&text).map_err(|e| BenchError::Transport(format!("bad JSON from {path}: {e}")))
    }

    pub fn query(&self, sql: &str) -> BenchResult<Vec<Vec<Json>>> {
        let j = self.call_json("POST", "/v1/query", Some(json!({ "sql": sql })))?;
        serde_json::from_value(j["rows"].clone()).map_err(|e| BenchError::Transport(e.to_string()))
    }

    pub fn object_counts(&self) -> ObjectCounts {
        let db = self.kernel.snapshot();
        let sys = provenance::SYS_SCHEMA;
        ObjectCounts {
            schemas: db.schemas().filter(|s| *s != sys).count(),
            tables: db.tables().filter(|(r, _)| r.schema != sys).count(),
            procedures: db.procedures().count(),
            triggers: db.triggers().count(),
        }
    }

    /// Programs the use case through the API: schemas, tables, procedures,
    /// triggers and the threshold row.
    pub fn setup_example1(&self) -> BenchResult<SetupReport> {
        let start = Instant::now();
        for s in scenario::schemas() {
            self.call("POST", "/v1/schema", Some(json!({ "name": s })))?;
        }
        for def in scenario::tables() {
            let body = serde_json::to_value(&def).map_err(|e| BenchError::Transport(e.to_string()))?;
            self.call("POST", "/v1/table", Some(body))?;
        }
        for src in scenario::procedures() {
            self.call("POST", "/v1/procedure", Some(json!({ "source": src })))?;
        }
        for t in scenario::triggers() {
            let body = serde_json::to_value(&t).map_err(|e| BenchError::Transport(e.to_string()))?;
            self.call("POST", "/v1/trigger", Some(body))?;
        }
        let c = &self.cfg;
        self.call(
            "POST",
            "/v1/txn",
            Some(json!({"ops": [{"op": "insert", "table": THRESHOLDS, "cells": {
                "id": 1,
                "ingressThreshold": c.ingress_threshold,
                "errorRateThreshold": c.error_rate_threshold,
                "latencyThreshold": c.latency_threshold.as_micros() as i64,
                "minSpans": c.min_spans,
            }}]})),
        )?;
        Ok(SetupReport {
            latency: start.elapsed(),
            counts: self.object_counts(),
        })
    }

    /// Inserts the three canonical nodes in one transaction.
    pub fn seed_nodes(&self) -> BenchResult<()> {
        let ops: Vec<Json> = SEED_NODES
            .iter()
            .map(|(id, pod, cpu, ingress)| {
                json!({"op": "insert", "table": NODES, "cells": {
                    "nodeId": id, "podId": pod, "cpuUtil": cpu, "ingressTraff": ingress
                }})
            })
            .collect();
        self.call("POST", "/v1/txn", Some(json!({ "ops": ops })))?;
        self.check_quiescent()
    }

    pub fn pod_aggregates(&self) -> BenchResult<PodAggregates> {
        let read = |sql: &str| -> BenchResult<BTreeMap<i64, (Option<f64>, i64)>> {
            Ok(self
                .query(sql)?
                .iter()
                .map(|r| {
                    (
                        r[0].as_i64().unwrap_or(-1),
                        (r[1].as_f64(), r[2].as_i64().unwrap_or(-1)),
                    )
                })
                .collect())
        };
        Ok((
            read(&format!("SELECT podId, avgCpuUtil, nodeCount FROM {AUTOSCALERS}"))?,
            read(&format!("SELECT podId, avgIngTraff, backends FROM {LOADBALANCERS}"))?,
        ))
    }

    /// Node rows as (nodeId -> (podId, cpuUtil, ingressTraff)).
    pub fn nodes(&self) -> BenchResult<BTreeMap<i64, (i64, f64, f64)>> {
        Ok(self
            .query(&format!("SELECT nodeId, podId, cpuUtil, ingressTraff FROM {NODES}"))?
            .iter()
            .map(|r| {
                let f = |j: &Json| j.as_f64().unwrap_or(f64::NAN);
                (
                    r[0].as_i64().unwrap_or(-1),
                    (r[1].as_i64().unwrap_or(-1), f(&r[2]), f(&r[3])),
                )
            })
            .collect())
    }

    /// Aggregates recomputed from the node rows must match the stored ones.
    pub fn check_aggregates(&self) -> BenchResult<()> {
        let nodes = self.nodes()?;
        let (auto, lb) = self.pod_aggregates()?;
        let pods: BTreeSet<i64> = nodes.values().map(|n| n.0).collect();
        for pod in &pods {
            let members: Vec<_> = nodes.values().filter(|n| n.0 == *pod).collect();
            let n = members.len() as f64;
            let cpu = members.iter().map(|m| m.1).sum::<f64>() / n;
            let ingress = members.iter().map(|m| m.2).sum::<f64>() / n;
            let a = auto.get(pod).copied();
            let l = lb.get(pod).copied();
            let close = |x: Option<f64>, y: f64| x.is_some_and(|x| (x - y).abs() < 1e-9);
            ensure(
                a.is_some_and(|(v, c)| close(v, cpu) && c == members.len() as i64),
                || {
                    format!(
                        "auto-scaler for pod {pod} is {a:?}, nodes give ({cpu}, {})",
                        members.len()
                    )
                },
            )?;
            ensure(
                l.is_some_and(|(v, c)| close(v, ingress) && c == members.len() as i64),
                || {
                    format!(
                        "load-balancer for pod {pod} is {l:?}, nodes give ({ingress}, {})",
                        members.len()
                    )
                },
            )?;
        }
        Ok(())
    }

    /// Drains the outbox, then checks that the fleet matches every
    /// device-backed row and that the log replays to the current state.
    pub fn check_quiescent(&self) -> BenchResult<()> {
        self.kernel.drain_outbox();
        let db = self.kernel.snapshot();
        let gaps = convergence_gaps(&db, self.fleet.as_ref());
        ensure(gaps.is_empty(), || format!("fleet diverges from tables: {gaps:?}"))?;
        provenance::verify_log_replay(&db).map_err(|e| BenchError::Assertion(format!("log replay: {e}")))
    }

    fn log_len(&self) -> BenchResult<usize> {
        Ok(self.kernel.log()?.len())
    }

    /// Sends one request and splits its latency into kernel and device time.
    fn timed_request(&self, path: &str, body: Json) -> BenchResult<(Duration, Duration, Duration)> {
        let access_mark = self.service.access_log().len();
        self.timed.reset();
        let start = Instant::now();
        self.call("POST", path, Some(body))?;
        let e2e = start.elapsed();
        let device = self.timed.reset();
        let served: u64 = self.service.access_log()[access_mark..].iter().map(|a| a.micros).sum();
        let kernel = Duration::from_micros(served).saturating_sub(device);
        Ok((e2e, kernel, device))
    }

    fn insert_chain(&self, node: i64) -> BenchResult<Vec<String>> {
        let text = self.call("GET", "/v1/log?table=compute.Nodes&kind=Insert", None)?;
        let id = text
            .lines()
            .filter_map(|l| serde_json::from_str::<Json>(l).ok())
            .filter(|e| e["new_cells"]["nodeId"] == json!(node))
            .filter_map(|e| e["log_id"].as_u64())
            .next_back()
            .ok_or_else(|| BenchError::Assertion(format!("no Insert entry for node {node}")))?;
        let trace = self.call_json("GET", &format!("/v1/provenance/trace/{id}"), None)?;
        serde_json::from_value(trace["kinds"].clone()).map_err(|e| BenchError::Transport(e.to_string()))
    }

    fn new_log_kinds(&self, mark: usize) -> BenchResult<Vec<String>> {
        Ok(self.kernel.log()?[mark..]
            .iter()
            .map(|e| e.kind.as_str().to_owned())
            .collect())
    }

    /// ex1: node ingress updates push pod 1 over the threshold; the
    /// update trigger adds a node and rebalances. Requires setup and seed.
    pub fn run_example1(&self) -> BenchResult<ScenarioReport> {
        let before = self.nodes()?;
        let mark = self.log_len()?;
        let body = json!({"ops": [
            {"op": "update", "table": NODES, "set": {"ingressTraff": 320.0}, "where": "nodeId = 1"},
            {"op": "update", "table": NODES, "set": {"ingressTraff": 410.0}, "where": "nodeId = 2"}
        ]});
        let (e2e, kernel, device) = self.timed_request("/v1/txn", body)?;

        let after = self.nodes()?;
        let added: Vec<i64> = after.keys().filter(|k| !before.contains_key(k)).copied().collect();
        ensure(added.len() == 1, || format!("expected one new node, got {added:?}"))?;
        let new_node = added[0];
        ensure(after[&new_node].0 == 1, || {
            format!("new node {new_node} is not in pod 1")
        })?;
        let state = self.fleet.state(DeviceKind::Node, new_node)?;
        ensure(state.get("alive") == Some(&Value::Bool(true)), || {
            format!("new node {new_node} is not alive in the fleet")
        })?;
        let weights = self.fleet.lb_weights(1).unwrap_or_default();
        ensure(weights.len() == 3, || {
            format!("pod 1 load-balancer weights {weights:?}")
        })?;
        self.check_aggregates()?;
        let log_kinds = self.new_log_kinds(mark)?;
        ensure(log_kinds.iter().any(|k| k == "TriggerFire"), || {
            "no trigger fired".into()
        })?;
        let chain = self.insert_chain(new_node)?;
        self.check_quiescent()?;
        Ok(ScenarioReport {
            name: "ex1",
            e2e,
            kernel,
            device,
            new_node,
            chain,
            log_kinds,
        })
    }

    /// ex2 spans: healthy traffic on nodes 1 and 2, then a burst of
    /// slow failing requests on node 3.
    pub fn example2_spans(&self) -> Vec<Span> {
        let base = 1_700_000_000_000_000;
        let ok_latency = 20_000;
        let bad_latency = self.cfg.latency_threshold.as_micros() as i64 * 2;
        let mut spans = Vec::new();
        let mut next = 1u64;
        for node in [1, 2] {
            for _ in 0..5 {
                spans.push(gen::span(
                    next,
                    next,
                    node,
                    base + next as i64 * 1000,
                    ok_latency,
                    SpanStatus::Ok,
                ));
                next += 1;
            }
        }
        for _ in 0..self.cfg.min_spans {
            spans.push(gen::span(
                next,
                next,
                3,
                base + next as i64 * 1000,
                bad_latency,
                SpanStatus::Error,
            ));
            next += 1;
        }
        spans
    }

    /// ex2: anomalous telemetry for node 3 gets it killed and
    /// replaced, and its metrics reset. Requires setup and seed.
    pub fn run_example2(&self) -> BenchResult<ScenarioReport> {
        let before = self.nodes()?;
        let mark = self.log_len()?;
        let spans: Vec<Json> = self.example2_spans().iter().map(Span::to_json).collect();
        let (e2e, kernel, device) = self.timed_request("/v1/telemetry/spans", Json::Array(spans))?;

        let after = self.nodes()?;
        ensure(!after.contains_key(&3), || "node 3 is still in Nodes".into())?;
        let added: Vec<i64> = after.keys().filter(|k| !before.contains_key(k)).copied().collect();
        ensure(added.len() == 1, || {
            format!("expected one replacement node, got {added:?}")
        })?;
        let new_node = added[0];
        ensure(after[&new_node].0 == 2, || {
            format!("replacement {new_node} is not in pod 2")
        })?;
        let alive = |id| self.fleet.state(DeviceKind::Node, id).map(|s| s.get("alive").cloned());
        ensure(alive(3)? == Some(Value::Bool(false)), || "node 3 was not killed".into())?;
        ensure(alive(new_node)? == Some(Value::Bool(true)), || {
            "replacement is not alive".into()
        })?;
        for id in [1, 2] {
            ensure(after.get(&id) == before.get(&id), || format!("node {id} changed"))?;
            ensure(alive(id)? == Some(Value::Bool(true)), || {
                format!("node {id} is not alive")
            })?;
        }
        let m = self.query("SELECT node_id, span_count, error_count FROM metrics.NodeMetrics")?;
        let m: BTreeMap<i64, (i64, i64)> = m
            .iter()
            .map(|r| {
                (
                    r[0].as_i64().unwrap_or(-1),
                    (r[1].as_i64().unwrap_or(-1), r[2].as_i64().unwrap_or(-1)),
                )
            })
            .collect();
        ensure(m.get(&3) == Some(&(0, 0)), || {
            format!("node 3 metrics not reset: {:?}", m.get(&3))
        })?;
        ensure(m.get(&1) == Some(&(5, 0)) && m.get(&2) == Some(&(5, 0)), || {
            format!("healthy node metrics disturbed: {m:?}")
        })?;
        let left = self.query("SELECT COUNT(*) FROM traces.Spans WHERE node_id = 3")?;
        ensure(left == vec![vec![json!(0)]], || {
            format!("node 3 spans remain: {left:?}")
        })?;
        self.check_aggregates()?;
        let log_kinds = self.new_log_kinds(mark)?;
        let chain = self.insert_chain(new_node)?;
        self.check_quiescent()?;
        Ok(ScenarioReport {
            name: "ex2",
            e2e,
            kernel,
            device,
            new_node,
            chain,
            log_kinds,
        })
    }

    /// Spans one load client submits: one span per trace, healthy nodes of
    /// the seeded fleet, a small error share.
    pub fn load_spans(&self, client: usize, count: usize) -> Vec<Span> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.cfg.seed ^ ((client as u64 + 1) << 32));
        let base = 1_800_000_000_000_000 + client as i64 * 1_000_000_000;
        (0..count)
            .map(|i| {
                let id = (client as u64 + 1) * 1_000_000 + i as u64 + 1;
                let node = rng.gen_range(1..=SEED_NODES.len() as i64);
                let latency = rng.gen_range(1_000..50_000);
                let status = if rng.gen_bool(0.05) {
                    SpanStatus::Error
                } else {
                    SpanStatus::Ok
                };
                gen::span(id, id, node, base + i as i64 * 1000, latency, status)
            })
            .collect()
    }

    /// `clients` concurrent submitters each stream `spans_per_client` spans
    /// over HTTP in batches. Requires setup and seed.
    pub fn load_test(&mut self, clients: usize, spans_per_client: usize) -> BenchResult<LoadReport> {
        let batch = self.cfg.batch_size;
        let mut report = LoadReport {
            clients,
            spans_per_client,
            requests: 0,
            spans_stored: 0,
            latency: Duration::ZERO,
        };
        if clients == 0 || spans_per_client == 0 {
            return Ok(report);
        }
        let base = self.http_base()?;
        let stored_before = self.kernel.snapshot().table(&telemetry::spans_ref())?.len();
        let payloads: Vec<Vec<String>> = (0..clients)
            .map(|c| {
                self.load_spans(c, spans_per_client)
                    .chunks(batch)
                    .map(|ch| Json::Array(ch.iter().map(Span::to_json).collect()).to_string())
                    .collect()
            })
            .collect();
        report.requests = payloads.iter().map(Vec::len).sum();
        let auth = format!("Bearer {ADMIN}");
        let start = Instant::now();
        let accepted: Vec<BenchResult<u64>> = std::thread::scope(|s| {
            let handles: Vec<_> = payloads
                .iter()
                .map(|bodies| {
                    let (base, auth) = (&base, &auth);
                    s.spawn(move || {
                        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build();
                        let mut n = 0;
                        for body in bodies {
                            let r = agent
                                .post(&format!("{base}/v1/telemetry/spans"))
                                .set("Authorization", auth)
                                .set("Content-Type", "application/json")
                                .send_string(body);
                            let j: Json = match r {
                                Ok(r) => r.into_json().map_err(|e| BenchError::Transport(e.to_string()))?,
                                Err(ureq::Error::Status(status, r)) => {
                                    return Err(BenchError::Api {
                                        method: "POST".into(),
                                        path: "/v1/telemetry/spans".into(),
                                        status,
                                        body: r.into_string().unwrap_or_default(),
                                    })
                                }
                                Err(e) => return Err(BenchError::Transport(e.to_string())),
                            };
                            n += j["accepted_count"].as_u64().unwrap_or(0);
                        }
                        Ok(n)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(BenchError::Transport("client panicked".into())))
                })
                .collect()
        });
        report.latency = start.elapsed();
        let mut total = 0;
        for a in accepted {
            total += a?;
        }
        let expected = (clients * spans_per_client) as u64;
        ensure(total == expected, || {
            format!("{total} of {expected} spans acknowledged")
        })?;

        let db = self.kernel.snapshot();
        report.spans_stored = db.table(&telemetry::spans_ref())?.len() - stored_before;
        ensure(report.spans_stored == expected as usize, || {
            format!("{} of {expected} spans stored", report.spans_stored)
        })?;
        let metrics = db.table(&telemetry::metrics_ref())?;
        for (_, cells) in metrics.rows() {
            let node = cells.get("node_id").and_then(Value::as_i64).unwrap_or(-1);
            let stored = telemetry::get_metrics(&db, node)?;
            let oracle = telemetry::brute_force_metrics(&db, node)?;
            ensure(stored == oracle, || {
                format!("node {node} metrics {stored:?} differ from spans {oracle:?}")
            })?;
        }
        let nodes = self.nodes()?;
        ensure(nodes.len() == SEED_NODES.len(), || {
            format!("load test restarted nodes: {nodes:?}")
        })?;
        self.check_quiescent()?;
        Ok(report)
    }

    /// Every table except the log, for determinism comparisons.
    pub fn state_digest(&self) -> Json {
        let db = self.kernel.snapshot();
        let log = provenance::log_table_ref();
        let tables: BTreeMap<String, Vec<Json>> = db
            .tables()
            .filter(|(r, _)| **r != log)
            .map(|(r, t): (&TableRef, _)| (r.to_string(), t.rows().map(|(_, c)| json!(c)).collect()))
            .collect();
        json!(tables)
    }
}

fn split_query(path: &str) -> (&str, Vec<(String, String)>) {
    match path.split_once('?') {
        None => (path, Vec::new()),
        Some((p, q)) => (
            p,
            q.split('&')
                .filter(|kv| !kv.is_empty())
                .map(|kv| {
                    let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
                    (k.to_owned(), v.to_owned())
                })
                .collect(),
        ),
    }
}

fn http_send(
    agent: &ureq::Agent,
    base: &str,
    method: &str,
    path: &str,
    auth: &str,
    body: Option<&Json>,
) -> BenchResult<(u16, String)> {
    let req = agent
        .request(method, &format!("{base}{path}"))
        .set("Authorization", auth);
    let res = match body {
        Some(b) => req.send_json(b),
        None => req.call(),
    };
    match res {
        Ok(r) => Ok((r.status(), r.into_string()?)),
        Err(ureq::Error::Status(code, r)) => Ok((code, r.into_string()?)),
        Err(e) => Err(BenchError::Transport(e.to_string())),
    }
}

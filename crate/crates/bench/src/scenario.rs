// SPDX-License-Identifier: Apache-2.0

//! The control program for the node / auto-scaler / load-balancer use case.

use std::time::Duration;

use dbnet_core::policy::{TriggerDef, TriggerEvent};
use dbnet_core::store::{ColumnDef, DeviceKind, TableDef};
use dbnet_core::telemetry;
use dbnet_core::ValueKind;

pub const COMPUTE: &str = "compute";
pub const AUTOSCALING: &str = "autoscaling";
pub const LOADBALANCING: &str = "loadbalancing";
pub const CONFIG: &str = "config";
/// Namespace reserved for operator policy objects; created empty.
pub const POLICY: &str = "policy";

pub const NODES: &str = "compute.Nodes";
pub const AUTOSCALERS: &str = "autoscaling.AutoScalers";
pub const LOADBALANCERS: &str = "loadbalancing.LoadBalancers";
pub const THRESHOLDS: &str = "config.Thresholds";

/// Knobs for one benchmark session. Threshold values are synthetic.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub ingress_threshold: f64,
    pub error_rate_threshold: f64,
    pub latency_threshold: Duration,
    /// Spans a node must report before its health is judged.
    pub min_spans: i64,
    pub provisioning_delay: Duration,
    pub clients: usize,
    pub spans_per_client: usize,
    /// Spans per telemetry request in the load test.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            ingress_threshold: 300.0,
            error_rate_threshold: 0.5,
            latency_threshold: Duration::from_millis(250),
            min_spans: 10,
            provisioning_delay: dbnet_core::proxy::DEFAULT_PROVISIONING_DELAY,
            clients: 20,
            spans_per_client: 100,
            batch_size: 10,
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = self.ingress_threshold > 0.0
            && self.error_rate_threshold > 0.0
            && !self.latency_threshold.is_zero()
            && self.min_spans > 0;
        if !positive {
            return Err("thresholds must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be positive".into());
        }
        Ok(())
    }
}

/// (nodeId, podId, cpuUtil, ingressTraff)
pub const SEED_NODES: [(i64, i64, f64, f64); 3] = [(1, 1, 0.37, 221.0), (2, 1, 0.82, 382.0), (3, 2, 0.14, 67.0)];

pub fn schemas() -> [&'static str; 7] {
    [
        COMPUTE,
        AUTOSCALING,
        LOADBALANCING,
        telemetry::TRACES_SCHEMA,
        telemetry::METRICS_SCHEMA,
        CONFIG,
        POLICY,
    ]
}

pub fn tables() -> Vec<TableDef> {
    vec![
        TableDef::new(
            COMPUTE,
            "Nodes",
            vec![
                ColumnDef::new("nodeId", ValueKind::Int).primary_key(),
                ColumnDef::new("podId", ValueKind::Int).not_null(),
                ColumnDef::new("cpuUtil", ValueKind::Float).check("cpuUtil >= 0"),
                ColumnDef::new("ingressTraff", ValueKind::Float).check("ingressTraff >= 0"),
            ],
        )
        .device(DeviceKind::Node),
        TableDef::new(
            AUTOSCALING,
            "AutoScalers",
            vec![
                ColumnDef::new("podId", ValueKind::Int).primary_key(),
                ColumnDef::new("avgCpuUtil", ValueKind::Float),
                ColumnDef::new("nodeCount", ValueKind::Int).not_null(),
            ],
        )
        .device(DeviceKind::AutoScaler),
        TableDef::new(
            LOADBALANCING,
            "LoadBalancers",
            vec![
                ColumnDef::new("podId", ValueKind::Int).primary_key(),
                ColumnDef::new("avgIngTraff", ValueKind::Float),
                ColumnDef::new("backends", ValueKind::Int).not_null(),
            ],
        )
        .device(DeviceKind::LoadBalancer),
        telemetry::spans_def(),
        telemetry::attrs_def(),
        telemetry::metrics_def(),
        TableDef::new(
            CONFIG,
            "Thresholds",
            vec![
                ColumnDef::new("id", ValueKind::Int).primary_key(),
                ColumnDef::new("ingressThreshold", ValueKind::Float).not_null(),
                ColumnDef::new("errorRateThreshold", ValueKind::Float).not_null(),
                ColumnDef::new("latencyThreshold", ValueKind::Int).not_null(),
                ColumnDef::new("minSpans", ValueKind::Int).not_null(),
            ],
        ),
    ]
}

pub const RECOMPUTE_AUTOSCALER: &str = "\
PROC recompute_autoscaler(p_pod: INT) BEGIN
  DECLARE n: INT;
  DECLARE cpu: FLOAT;
  DECLARE present: INT;
  SELECT COUNT(*), AVG(cpuUtil) INTO n, cpu FROM compute.Nodes WHERE podId = p_pod;
  SELECT COUNT(*) INTO present FROM autoscaling.AutoScalers WHERE podId = p_pod;
  IF present = 0 THEN
    INSERT INTO autoscaling.AutoScalers (podId, avgCpuUtil, nodeCount) VALUES (p_pod, cpu, n);
  ELSE
    UPDATE autoscaling.AutoScalers SET avgCpuUtil = cpu, nodeCount = n WHERE podId = p_pod;
  END IF;
END";

pub const RECOMPUTE_LOADBALANCER: &str = "\
PROC recompute_loadbalancer(p_pod: INT) BEGIN
  DECLARE n: INT;
  DECLARE ingress: FLOAT;
  DECLARE present: INT;
  SELECT COUNT(*), AVG(ingressTraff) INTO n, ingress FROM compute.Nodes WHERE podId = p_pod;
  SELECT COUNT(*) INTO present FROM loadbalancing.LoadBalancers WHERE podId = p_pod;
  IF present = 0 THEN
    INSERT INTO loadbalancing.LoadBalancers (podId, avgIngTraff, backends) VALUES (p_pod, ingress, n);
  ELSE
    UPDATE loadbalancing.LoadBalancers SET avgIngTraff = ingress, backends = n WHERE podId = p_pod;
  END IF;
END";

pub const REFRESH_POD: &str = "\
PROC refresh_pod(p_pod: INT) BEGIN
  CALL recompute_autoscaler(p_pod);
  CALL recompute_loadbalancer(p_pod);
END";

/// Runs on every node update: refreshes the pod aggregates, then adds a
/// node when the pod's average ingress is over the threshold.
pub const SCALE_UP: &str = "\
PROC scale_up(p_pod: INT) BEGIN
  DECLARE ingress: FLOAT;
  DECLARE ceiling: FLOAT;
  DECLARE fresh: INT;
  CALL refresh_pod(p_pod);
  SELECT avgIngTraff INTO ingress FROM loadbalancing.LoadBalancers WHERE podId = p_pod;
  SELECT ingressThreshold INTO ceiling FROM config.Thresholds WHERE id = 1;
  IF ingress > ceiling THEN
    EXTERNAL create_node(p_pod) INTO fresh;
    INSERT INTO compute.Nodes (nodeId, podId, cpuUtil, ingressTraff) VALUES (fresh, p_pod, 0.0, 0.0);
  END IF;
END";

pub const HEALTH_CHECK: &str = "\
PROC health_check(p_node: INT) BEGIN
  DECLARE present: INT;
  DECLARE n: INT;
  DECLARE rate: FLOAT;
  DECLARE latency: FLOAT;
  DECLARE min_n: INT;
  DECLARE max_rate: FLOAT;
  DECLARE max_latency: INT;
  SELECT COUNT(*) INTO present FROM compute.Nodes WHERE nodeId = p_node;
  IF present = 1 THEN
    SELECT span_count, error_rate, avg_latency INTO n, rate, latency FROM metrics.NodeMetrics WHERE node_id = p_node;
    SELECT minSpans, errorRateThreshold, latencyThreshold INTO min_n, max_rate, max_latency
      FROM config.Thresholds WHERE id = 1;
    IF n >= min_n AND (rate > max_rate OR latency > max_latency) THEN
      CALL restart_node(p_node);
    END IF;
  END IF;
END";

pub const RESTART_NODE: &str = "\
PROC restart_node(p_node: INT) BEGIN
  DECLARE pod: INT;
  DECLARE killed: BOOL;
  DECLARE fresh: INT;
  SELECT podId INTO pod FROM compute.Nodes WHERE nodeId = p_node;
  EXTERNAL kill_node(p_node) INTO killed;
  DELETE FROM compute.Nodes WHERE nodeId = p_node;
  EXTERNAL create_node(pod) INTO fresh;
  INSERT INTO compute.Nodes (nodeId, podId, cpuUtil, ingressTraff) VALUES (fresh, pod, 0.0, 0.0);
  CALL reset_metrics(p_node);
END";

/// In registration order: callees first.
pub fn procedures() -> [&'static str; 9] {
    [
        telemetry::SPAN_ROLLUP,
        telemetry::RECOMPUTE_METRICS,
        telemetry::RESET_METRICS,
        RECOMPUTE_AUTOSCALER,
        RECOMPUTE_LOADBALANCER,
        REFRESH_POD,
        SCALE_UP,
        RESTART_NODE,
        HEALTH_CHECK,
    ]
}

fn trigger(
    name: &str,
    table: &str,
    event: TriggerEvent,
    when: Option<&str>,
    procedure: &str,
    args: &[&str],
) -> TriggerDef {
    TriggerDef {
        name: name.into(),
        table: table.into(),
        event,
        when: when.map(str::to_owned),
        procedure: procedure.into(),
        args: args.iter().map(|a| (*a).to_owned()).collect(),
        order_key: 0,
    }
}

pub fn triggers() -> [TriggerDef; 5] {
    [
        trigger(
            "nodes_ins",
            NODES,
            TriggerEvent::AfterInsert,
            None,
            "refresh_pod",
            &["NEW.podId"],
        ),
        trigger(
            "nodes_upd",
            NODES,
            TriggerEvent::AfterUpdate,
            None,
            "scale_up",
            &["NEW.podId"],
        ),
        trigger(
            "nodes_del",
            NODES,
            TriggerEvent::AfterDelete,
            None,
            "refresh_pod",
            &["OLD.podId"],
        ),
        telemetry::span_trigger(),
        trigger(
            "metrics_watch",
            "metrics.NodeMetrics",
            TriggerEvent::AfterUpdate,
            Some("NEW.span_count > OLD.span_count"),
            "health_check",
            &["NEW.node_id"],
        ),
    ]
}

// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;
use std::time::Duration;

use dbnet_core::api::Service;
use dbnet_core::proxy::{DeviceClient, FailureRule};
use dbnet_core::store::DeviceKind;
use dbnet_core::Value;
use dbnet_server::{backend, router, spawn, Config, FleetMode, HttpFleet, Running};
use serde_json::{json, Value as Json};

fn start(config: &Config) -> (dbnet_server::Backend, Running) {
    let b = backend(config).unwrap();
    let svc = Arc::new(Service::new(b.kernel.clone()).with_inline_drain());
    let running = spawn(router(svc), ([127, 0, 0, 1], 0).into()).unwrap();
    (b, running)
}

fn send(base: &str, method: &str, path: &str, user: Option<&str>, body: Option<Json>) -> (u16, String) {
    let mut req = ureq::request(method, &format!("{base}{path}"));
    if let Some(u) = user {
        req = req.set("Authorization", &format!("Bearer {u}"));
    }
    let res = match body {
        Some(b) => req.send_json(b),
        None => req.call(),
    };
    match res {
        Ok(r) => (r.status(), r.into_string().unwrap()),
        Err(ureq::Error::Status(code, r)) => (code, r.into_string().unwrap()),
        Err(e) => panic!("transport error: {e}"),
    }
}

fn quick(mode: FleetMode) -> Config {
    Config {
        fleet_mode: mode,
        provisioning_delay: Duration::from_millis(5),
        ..Config::default()
    }
}

const NODES: &str = r#"{"schema": "compute", "name": "Nodes", "device_backed": true, "device_kind": "Node",
  "columns": [
    {"name": "nodeId", "value_kind": "Int", "constraints": [{"kind": "PrimaryKey"}]},
    {"name": "podId", "value_kind": "Int", "constraints": [{"kind": "NotNull"}]},
    {"name": "cpuUtil", "value_kind": "Float"},
    {"name": "ingressTraff", "value_kind": "Float"}]}"#;

const GROW: &str = "PROC grow(p: INT) BEGIN
  DECLARE n: INT;
  EXTERNAL create_node(p) INTO n;
  INSERT INTO compute.Nodes (nodeId, podId, cpuUtil, ingressTraff) VALUES (n, p, 0.0, 0.0);
  RETURN n;
END";

fn program(base: &str) {
    let admin = Some("admin");
    assert_eq!(
        send(base, "POST", "/v1/schema", admin, Some(json!({"name": "compute"}))).0,
        200
    );
    let (s, b) = send(
        base,
        "POST",
        "/v1/table",
        admin,
        Some(serde_json::from_str(NODES).unwrap()),
    );
    assert_eq!(s, 200, "{b}");
    let (s, b) = send(base, "POST", "/v1/procedure", admin, Some(json!({"source": GROW})));
    assert_eq!(s, 200, "{b}");
}

#[test]
fn round_trip_over_http() {
    let (b, srv) = start(&quick(FleetMode::InProc));
    let base = srv.base_url();
    assert_eq!(send(&base, "GET", "/v1/health", None, None).0, 200);
    program(&base);

    let (s, body) = send(
        &base,
        "POST",
        "/v1/procedure/grow/call",
        Some("admin"),
        Some(json!({"args": [7]})),
    );
    assert_eq!(s, 200, "{body}");
    let j: Json = serde_json::from_str(&body).unwrap();
    assert_eq!(j["values"], json!([1]));
    assert_eq!(b.fleet.nodes(), vec![(1, true)]);

    let (s, body) = send(&base, "GET", "/v1/log?kind=Insert&table=Nodes", Some("admin"), None);
    assert_eq!(s, 200);
    assert_eq!(body.lines().count(), 1);

    assert_eq!(send(&base, "GET", "/v1/log", Some("ghost"), None).0, 401);
    assert_eq!(
        send(&base, "GET", "/v1/log?since=yesterday", Some("admin"), None).0,
        400
    );
    assert_eq!(send(&base, "DELETE", "/v1/schema", Some("admin"), None).0, 400);
    let (s, body) = send(
        &base,
        "POST",
        "/v1/procedure/nope/call",
        Some("admin"),
        Some(json!({"args": []})),
    );
    assert_eq!(s, 404, "{body}");
    let j: Json = serde_json::from_str(&body).unwrap();
    assert_eq!(j["error_kind"], "UnknownProcedure");
}

#[test]
fn loopback_fleet_mode_reaches_devices_over_http() {
    let (b, srv) = start(&quick(FleetMode::Http));
    let base = srv.base_url();
    program(&base);
    let (s, body) = send(
        &base,
        "POST",
        "/v1/procedure/grow/call",
        Some("admin"),
        Some(json!({"args": [1]})),
    );
    assert_eq!(s, 200, "{body}");
    assert_eq!(b.fleet.nodes(), vec![(1, true)]);

    let fleet_url = b.fleet_server.as_ref().unwrap().base_url();
    let client = HttpFleet::new(&fleet_url);
    let state = client.state(DeviceKind::Node, 1).unwrap();
    assert_eq!(state.get("alive"), Some(&Value::Bool(true)));
    assert_eq!(state.get("podId"), Some(&Value::Int(1)));
    assert_eq!(client.state(DeviceKind::Node, 42).unwrap_err().kind(), "UnknownDevice");
    assert_eq!(client.call("reboot", &[]).unwrap_err().kind(), "UnknownExternal");

    client
        .inject_failure(&FailureRule {
            action: "create_node".into(),
            count: 1,
        })
        .unwrap();
    let (s, body) = send(
        &base,
        "POST",
        "/v1/procedure/grow/call",
        Some("admin"),
        Some(json!({"args": [1]})),
    );
    assert_eq!(s, 500, "{body}");
    let j: Json = serde_json::from_str(&body).unwrap();
    assert_eq!(j["error_kind"], "DeviceError");
    assert_eq!(j["message"], "device error: create_node: injected failure");
    assert_eq!(b.fleet.nodes().len(), 1);
}

#[test]
fn restart_replays_the_journal() {
    let dir = tempfile::tempdir().unwrap();
    let config = Config {
        journal: Some(dir.path().join("dbnet.journal")),
        ..quick(FleetMode::InProc)
    };
    let before = {
        let (b, srv) = start(&config);
        program(&srv.base_url());
        let (s, _) = send(
            &srv.base_url(),
            "POST",
            "/v1/procedure/grow/call",
            Some("admin"),
            Some(json!({"args": [3]})),
        );
        assert_eq!(s, 200);
        let snap = b.kernel.snapshot();
        (
            snap.tables()
                .map(|(r, t)| (r.to_string(), t.rows().count()))
                .collect::<Vec<_>>(),
            b.kernel.log().unwrap(),
        )
    };
    let (b, srv) = start(&config);
    let snap = b.kernel.snapshot();
    let tables: Vec<_> = snap.tables().map(|(r, t)| (r.to_string(), t.rows().count())).collect();
    assert_eq!(tables, before.0);
    assert_eq!(b.kernel.log().unwrap(), before.1);
    let (s, body) = send(
        &srv.base_url(),
        "POST",
        "/v1/query",
        Some("admin"),
        Some(json!({"sql": "SELECT podId FROM compute.Nodes"})),
    );
    assert_eq!(s, 200);
    assert_eq!(serde_json::from_str::<Json>(&body).unwrap()["rows"], json!([[3]]));
    // Request ids keep increasing across restarts so provenance roots stay unique.
    let last_root = before.1.iter().map(|e| e.cause.ref_id).max().unwrap();
    assert!(b.kernel.next_request_id() > last_root);
}

#[test]
fn config_from_environment() {
    let c = Config::from_lookup(|_| None).unwrap();
    assert_eq!(c.addr.to_string(), "127.0.0.1:8484");
    assert_eq!(c.fleet_mode, FleetMode::InProc);
    assert!(c.journal.is_none());
    let c = Config::from_lookup(|k| match k {
        "DBNET_ADDR" => Some("0.0.0.0:9000".into()),
        "DBNET_JOURNAL" => Some("/tmp/j".into()),
        "DBNET_FLEET_MODE" => Some("http".into()),
        _ => None,
    })
    .unwrap();
    assert_eq!((c.addr.port(), c.fleet_mode), (9000, FleetMode::Http));
    assert_eq!(c.journal.unwrap().to_str(), Some("/tmp/j"));
    assert!(Config::from_lookup(|k| (k == "DBNET_FLEET_MODE").then(|| "carrier-pigeon".into())).is_err());
    assert!(Config::from_lookup(|k| (k == "DBNET_ADDR").then(|| "nowhere".into())).is_err());
}

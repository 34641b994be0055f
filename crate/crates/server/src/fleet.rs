// SPDX-License-Identifier: Apache-2.0

//! Loopback HTTP exposure of the simulated fleet, and a client for it.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dbnet_core::proxy::{DeviceClient, DeviceCommand, FailureRule, SimFleet};
use dbnet_core::store::DeviceKind;
use dbnet_core::{Cells, Error, Result, Value};
use serde_json::{json, Value as JsonValue};

fn fail(e: Error) -> Response {
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let detail = match &e {
        Error::DeviceError(m) | Error::UnknownDevice(m) | Error::UnknownExternal(m) => m.clone(),
        other => other.to_string(),
    };
    (
        status,
        Json(json!({"error_kind": e.kind(), "message": e.to_string(), "detail": detail})),
    )
        .into_response()
}

#[allow(clippy::result_large_err)]
fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> std::result::Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| fail(Error::Malformed(e.to_string())))
}

async fn call(State(f): State<Arc<SimFleet>>, Path(name): Path<String>, body: Bytes) -> Response {
    let args: Vec<Value> = match parse(&body) {
        Ok(a) => a,
        Err(r) => return r,
    };
    match tokio::task::spawn_blocking(move || f.call(&name, &args)).await {
        Ok(Ok(v)) => Json(json!(v)).into_response(),
        Ok(Err(e)) => fail(e),
        Err(e) => fail(Error::Internal(e.to_string())),
    }
}

async fn apply(State(f): State<Arc<SimFleet>>, body: Bytes) -> Response {
    let cmd: DeviceCommand = match parse(&body) {
        Ok(c) => c,
        Err(r) => return r,
    };
    match f.apply(&cmd) {
        Ok(()) => Json(json!({"ok": true})).into_response(),
        Err(e) => fail(e),
    }
}

async fn state(State(f): State<Arc<SimFleet>>, Path((kind, id)): Path<(String, i64)>) -> Response {
    let kind: DeviceKind = match serde_json::from_value(JsonValue::String(kind)) {
        Ok(k) => k,
        Err(e) => return fail(Error::Malformed(e.to_string())),
    };
    match f.state(kind, id) {
        Ok(cells) => Json(json!(cells)).into_response(),
        Err(e) => fail(e),
    }
}

async fn inject(State(f): State<Arc<SimFleet>>, body: Bytes) -> Response {
    match parse::<FailureRule>(&body) {
        Ok(rule) => {
            f.inject_failure(rule);
            Json(json!({"ok": true})).into_response()
        }
        Err(r) => r,
    }
}

/// Routes: `POST /fleet/call/{name}` (JSON array of values),
/// `POST /fleet/apply`, `GET /fleet/state/{kind}/{id}`, `POST /fleet/inject`.
pub fn fleet_router(fleet: Arc<SimFleet>) -> Router {
    Router::new()
        .route("/fleet/call/:name", post(call))
        .route("/fleet/apply", post(apply))
        .route("/fleet/state/:kind/:id", get(state))
        .route("/fleet/inject", post(inject))
        .with_state(fleet)
}

/// Device client that talks to a fleet served by [`fleet_router`].
pub struct HttpFleet {
    base: String,
    agent: ureq::Agent,
}

impl HttpFleet {
    pub fn new(base_url: &str) -> Self {
        HttpFleet {
            base: base_url.trim_end_matches('/').to_owned(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build(),
        }
    }

    fn send(&self, req: ureq::Request, body: Option<JsonValue>) -> Result<JsonValue> {
        let res = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        match res {
            Ok(r) => r
                .into_json()
                .map_err(|e| Error::DeviceError(format!("fleet response: {e}"))),
            Err(ureq::Error::Status(_, r)) => {
                let j: JsonValue = r.into_json().unwrap_or_default();
                let msg = j["detail"].as_str().unwrap_or("fleet error").to_owned();
                Err(match j["error_kind"].as_str() {
                    Some("UnknownDevice") => Error::UnknownDevice(msg),
                    Some("UnknownExternal") => Error::UnknownExternal(msg),
                    _ => Error::DeviceError(msg),
                })
            }
            Err(e) => Err(Error::DeviceError(format!("fleet transport: {e}"))),
        }
    }

    pub fn inject_failure(&self, rule: &FailureRule) -> Result<()> {
        let url = format!("{}/fleet/inject", self.base);
        self.send(self.agent.post(&url), Some(json!(rule))).map(drop)
    }
}

fn decode<T: serde::de::DeserializeOwned>(j: JsonValue) -> Result<T> {
    serde_json::from_value(j).map_err(|e| Error::DeviceError(format!("fleet response: {e}")))
}

impl DeviceClient for HttpFleet {
    fn call(&self, name: &str, args: &[Value]) -> Result<Vec<Value>> {
        let url = format!("{}/fleet/call/{name}", self.base);
        decode(self.send(self.agent.post(&url), Some(json!(args)))?)
    }

    fn apply(&self, cmd: &DeviceCommand) -> Result<()> {
        let url = format!("{}/fleet/apply", self.base);
        self.send(self.agent.post(&url), Some(json!(cmd))).map(drop)
    }

    fn state(&self, kind: DeviceKind, id: i64) -> Result<Cells> {
        let kind = serde_json::to_value(kind).map_err(|e| Error::Internal(e.to_string()))?;
        let url = format!("{}/fleet/state/{}/{id}", self.base, kind.as_str().unwrap_or_default());
        decode(self.send(self.agent.get(&url), None)?)
    }
}

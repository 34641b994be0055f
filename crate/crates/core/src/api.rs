// SPDX-License-Identifier: Apache-2.0

//! Client API: request decoding, access control and dispatch.
//!
//! Transport-agnostic. The HTTP server hands over method, path, decoded
//! query pairs, bearer identity and body; [`Service::handle`] returns a
//! status code and body.

use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::acl::{self, AclRule, Action, Object, UserIdentity};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::policy::{resolve_procedure, Procedure, TriggerDef};
use crate::provenance::{self, log_table_ref, Cause, LogFilter, LogKind};
use crate::store::{Database, TableDef, TableRef};
use crate::syntax::{parse_expr, parse_statement, SelectQuery, SqlStatement, TableName};
use crate::telemetry::{self, Span};
use crate::txn::{Command, CommandResult, Kernel, Origin};
use crate::value::{Cells, Value};

pub const API_PREFIX: &str = "/v1";

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Health,
    CreateSchema { name: String },
    CreateTable { def: TableDef },
    RegisterProcedure { source: String },
    RegisterTrigger { def: TriggerDef },
    Call { name: String, args: Vec<Value> },
    Txn { commands: Vec<Command> },
    Query { sql: String },
    IngestSpans { spans: Vec<Span> },
    Log { filter: LogFilter },
    Trace { log_id: u64 },
    Metrics { node_id: i64 },
    CreateUser { user: UserIdentity },
    Grant { rule: AclRule },
}

impl Request {
    pub fn name(&self) -> &'static str {
        match self {
            Request::Health => "health",
            Request::CreateSchema { .. } => "create_schema",
            Request::CreateTable { .. } => "create_table",
            Request::RegisterProcedure { .. } => "register_procedure",
            Request::RegisterTrigger { .. } => "register_trigger",
            Request::Call { .. } => "call",
            Request::Txn { .. } => "txn",
            Request::Query { .. } => "query",
            Request::IngestSpans { .. } => "ingest_spans",
            Request::Log { .. } => "log",
            Request::Trace { .. } => "trace",
            Request::Metrics { .. } => "metrics",
            Request::CreateUser { .. } => "create_user",
            Request::Grant { .. } => "grant",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RequestEnvelope {
    pub request_id: u64,
    pub user: String,
    pub request: Request,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Json(Json),
    /// Newline-delimited JSON.
    Ndjson(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Body,
}

impl Response {
    fn ok(body: Json) -> Self {
        Response {
            status: 200,
            body: Body::Json(body),
        }
    }

    pub fn error(e: &Error, request_id: u64) -> Self {
        Response {
            status: e.http_status(),
            body: Body::Json(json!({
                "error_kind": e.kind(),
                "message": e.to_string(),
                "detail": {"request_id": request_id},
            })),
        }
    }

    pub fn json(&self) -> Option<&Json> {
        match &self.body {
            Body::Json(j) => Some(j),
            Body::Ndjson(_) => None,
        }
    }

    pub fn body_string(&self) -> String {
        match &self.body {
            Body::Json(j) => j.to_string(),
            Body::Ndjson(s) => s.clone(),
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self.body {
            Body::Json(_) => "application/json",
            Body::Ndjson(_) => "application/x-ndjson",
        }
    }
}

// ---- decoding ---------------------------------------------------------------

fn malformed(msg: impl std::fmt::Display) -> Error {
    Error::Malformed(msg.to_string())
}

fn body_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(malformed)
}

fn values(json: &[Json]) -> Result<Vec<Value>> {
    json.iter().map(Value::from_json).collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NameBody {
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceBody {
    source: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArgsBody {
    #[serde(default)]
    args: Vec<Json>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SqlBody {
    sql: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TxnBody {
    ops: Vec<TxnOp>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UserBody {
    user_id: String,
    roles: Vec<String>,
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum TxnOp {
    Insert {
        table: String,
        cells: serde_json::Map<String, Json>,
    },
    Update {
        table: String,
        set: serde_json::Map<String, Json>,
        #[serde(rename = "where", default)]
        filter: Option<String>,
    },
    Delete {
        table: String,
        #[serde(rename = "where", default)]
        filter: Option<String>,
    },
    Select {
        sql: String,
    },
    Call {
        name: String,
        #[serde(default)]
        args: Vec<Json>,
    },
    Sql {
        sql: String,
    },
}

fn filter(src: Option<String>) -> Result<Option<Expr>> {
    src.map(|s| parse_expr(&s).map_err(Error::from)).transpose()
}

fn to_command(op: TxnOp) -> Result<Command> {
    Ok(match op {
        TxnOp::Insert { table, cells } => Command::Insert {
            table,
            cells: cells
                .iter()
                .map(|(k, v)| Ok((k.clone(), Value::from_json(v)?)))
                .collect::<Result<Cells>>()?,
        },
        TxnOp::Update { table, set, filter: f } => Command::Update {
            table,
            set: set
                .iter()
                .map(|(k, v)| Ok((k.clone(), Expr::Literal(Value::from_json(v)?))))
                .collect::<Result<_>>()?,
            filter: filter(f)?,
        },
        TxnOp::Delete { table, filter: f } => Command::Delete {
            table,
            filter: filter(f)?,
        },
        TxnOp::Select { sql } => match parse_statement(&sql)? {
            SqlStatement::Select(query) => Command::Select { query },
            _ => return Err(malformed("select op needs a SELECT statement")),
        },
        TxnOp::Call { name, args } => Command::Call {
            name,
            args: values(&args)?,
        },
        TxnOp::Sql { sql } => Command::Statement(parse_statement(&sql)?),
    })
}

/// Decodes the body of `POST /v1/txn` into commands.
pub fn decode_txn(body: &[u8]) -> Result<Vec<Command>> {
    let b: TxnBody = body_json(body)?;
    b.ops.into_iter().map(to_command).collect()
}

fn query_param<'a>(query: &'a [(String, String)], key: &str) -> Option<&'a str> {
    query.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn time_param(query: &[(String, String)], key: &str) -> Result<Option<i64>> {
    query_param(query, key)
        .map(|v| {
            v.parse::<i64>()
                .or_else(|_| provenance::parse_ts(v))
                .map_err(|_| malformed(format!("{key}: expected microseconds or an ISO-8601 time")))
        })
        .transpose()
}

/// Maps method, path, query pairs and body to a request.
pub fn decode_request(method: &str, path: &str, query: &[(String, String)], body: &[u8]) -> Result<Request> {
    let rest = path
        .strip_prefix(API_PREFIX)
        .ok_or_else(|| malformed(format!("unknown endpoint {path}")))?;
    let parts: Vec<&str> = rest.trim_matches('/').split('/').collect();
    let req = match (method, parts.as_slice()) {
        ("GET", ["health"]) => Request::Health,
        ("POST", ["schema"]) => Request::CreateSchema {
            name: body_json::<NameBody>(body)?.name,
        },
        ("POST", ["table"]) => Request::CreateTable { def: body_json(body)? },
        ("POST", ["procedure"]) => Request::RegisterProcedure {
            source: body_json::<SourceBody>(body)?.source,
        },
        ("POST", ["trigger"]) => Request::RegisterTrigger { def: body_json(body)? },
        ("POST", ["procedure", name, "call"]) => Request::Call {
            name: (*name).to_owned(),
            args: if body.is_empty() {
                Vec::new()
            } else {
                values(&body_json::<ArgsBody>(body)?.args)?
            },
        },
        ("POST", ["txn"]) => Request::Txn {
            commands: decode_txn(body)?,
        },
        ("POST", ["query"]) => Request::Query {
            sql: body_json::<SqlBody>(body)?.sql,
        },
        ("POST", ["telemetry", "spans"]) => Request::IngestSpans {
            spans: telemetry::decode_spans(body)?,
        },
        ("POST", ["users"]) => {
            let b: UserBody = body_json(body)?;
            if b.user_id.is_empty() || b.user_id.contains(char::is_whitespace) {
                return Err(malformed("user_id must be non-empty without whitespace"));
            }
            if b.roles.iter().any(|r| r.is_empty() || r.contains(',')) {
                return Err(malformed("role names must be non-empty without commas"));
            }
            Request::CreateUser {
                user: UserIdentity::new(&b.user_id, b.roles.iter().map(String::as_str)),
            }
        }
        ("POST", ["grants"]) => {
            let rule: AclRule = body_json(body)?;
            if rule.role.is_empty() || rule.object.is_empty() {
                return Err(malformed("role and object must be non-empty"));
            }
            Request::Grant { rule }
        }
        ("GET", ["log"]) => Request::Log {
            filter: LogFilter {
                user: query_param(query, "user").map(str::to_owned),
                table: query_param(query, "table").map(str::to_owned),
                kind: query_param(query, "kind").map(str::parse::<LogKind>).transpose()?,
                since: time_param(query, "since")?,
                until: time_param(query, "until")?,
            },
        },
        ("GET", ["provenance", "trace", id]) => Request::Trace {
            log_id: id.parse().map_err(|_| malformed(format!("bad log id {id:?}")))?,
        },
        ("GET", ["metrics", id]) => Request::Metrics {
            node_id: id.parse().map_err(|_| malformed(format!("bad node id {id:?}")))?,
        },
        _ => return Err(malformed(format!("unknown endpoint {method} {path}"))),
    };
    Ok(req)
}

/// Extracts the user id from an `Authorization: Bearer <user_id>` value.
pub fn bearer_user(header: Option<&str>) -> Option<&str> {
    let v = header?.trim();
    let (scheme, user) = v.split_once(' ')?;
    let user = user.trim();
    (scheme.eq_ignore_ascii_case("bearer") && !user.is_empty()).then_some(user)
}

// ---- authorization ----------------------------------------------------------

type Needs = Vec<(Object, Action)>;

fn table_obj(db: &Database, name: &TableName) -> Result<Object> {
    Ok(Object::Table(db.resolve(name)?))
}

fn table_obj_str(db: &Database, name: &str) -> Result<Object> {
    table_obj(db, &TableName::parse_ref(name))
}

fn select_needs(db: &Database, q: &SelectQuery, needs: &mut Needs) -> Result<()> {
    needs.push((table_obj(db, &q.from)?, Action::Read));
    if let Some(j) = &q.join {
        needs.push((table_obj(db, &j.table)?, Action::Read));
    }
    Ok(())
}

fn statement_needs(db: &Database, stmt: &SqlStatement, needs: &mut Needs) -> Result<()> {
    match stmt {
        SqlStatement::Select(q) => select_needs(db, q, needs),
        SqlStatement::Insert(i) => {
            needs.push((table_obj(db, &i.table)?, Action::Write));
            Ok(())
        }
        SqlStatement::Update(u) => {
            needs.push((table_obj(db, &u.table)?, Action::Write));
            Ok(())
        }
        SqlStatement::Delete(d) => {
            needs.push((table_obj(db, &d.table)?, Action::Write));
            Ok(())
        }
    }
}

fn command_needs(db: &Database, cmd: &Command, needs: &mut Needs) -> Result<()> {
    match cmd {
        Command::CreateSchema { name } => needs.push((Object::Schema(name.clone()), Action::Admin)),
        Command::CreateTable { def } => needs.push((Object::Schema(def.schema.clone()), Action::Admin)),
        Command::RegisterProcedure { source } => procedure_needs(db, source, needs)?,
        Command::RegisterTrigger { def } => trigger_needs(db, def, needs)?,
        Command::Insert { table, .. } | Command::Update { table, .. } | Command::Delete { table, .. } => {
            needs.push((table_obj_str(db, table)?, Action::Write))
        }
        Command::Select { query } => select_needs(db, query, needs)?,
        Command::Call { name, .. } => needs.push((Object::Procedure(name.clone()), Action::Execute)),
        Command::Statement(stmt) => statement_needs(db, stmt, needs)?,
    }
    Ok(())
}

/// Registering a procedure needs Admin on it plus the access its body uses.
fn procedure_needs(db: &Database, source: &str, needs: &mut Needs) -> Result<()> {
    let p = Procedure::parse(source)?;
    needs.push((Object::Procedure(p.name().to_owned()), Action::Admin));
    if db.procedure(p.name()).is_some() {
        return Ok(());
    }
    let refs = resolve_procedure(db, &p)?;
    needs.extend(refs.reads.into_iter().map(|t| (Object::Table(t), Action::Read)));
    needs.extend(refs.writes.into_iter().map(|t| (Object::Table(t), Action::Write)));
    Ok(())
}

fn trigger_needs(db: &Database, def: &TriggerDef, needs: &mut Needs) -> Result<()> {
    needs.push((table_obj_str(db, &def.table)?, Action::Admin));
    needs.push((Object::Procedure(def.procedure.clone()), Action::Execute));
    Ok(())
}

fn request_needs(db: &Database, req: &Request) -> Result<Needs> {
    let mut needs = Vec::new();
    match req {
        Request::Health => {}
        Request::CreateSchema { name } => needs.push((Object::Schema(name.clone()), Action::Admin)),
        Request::CreateTable { def } => needs.push((Object::Schema(def.schema.clone()), Action::Admin)),
        Request::RegisterProcedure { source } => procedure_needs(db, source, &mut needs)?,
        Request::RegisterTrigger { def } => trigger_needs(db, def, &mut needs)?,
        Request::Call { name, .. } => needs.push((Object::Procedure(name.clone()), Action::Execute)),
        Request::Txn { commands } => {
            for c in commands {
                command_needs(db, c, &mut needs)?;
            }
        }
        Request::Query { sql } => statement_needs(db, &parse_statement(sql)?, &mut needs)?,
        Request::IngestSpans { .. } => needs.push((Object::Table(telemetry::spans_ref()), Action::Write)),
        Request::Log { .. } | Request::Trace { .. } => needs.push((Object::Table(log_table_ref()), Action::Read)),
        Request::Metrics { .. } => needs.push((Object::Table(telemetry::metrics_ref()), Action::Read)),
        Request::CreateUser { .. } | Request::Grant { .. } => needs.push((Object::System, Action::Admin)),
    }
    Ok(needs)
}

// ---- service ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessRecord {
    pub request_id: u64,
    pub user: String,
    pub request: String,
    pub status: u16,
    pub micros: u64,
}

pub struct Service {
    kernel: Arc<Kernel>,
    access: Mutex<Vec<AccessRecord>>,
    drain_inline: bool,
}

impl Service {
    pub fn new(kernel: Arc<Kernel>) -> Self {
        Service {
            kernel,
            access: Mutex::new(Vec::new()),
            drain_inline: false,
        }
    }

    /// Delivers outbox commands before each mutating request returns,
    /// instead of leaving them to a background worker.
    pub fn with_inline_drain(mut self) -> Self {
        self.drain_inline = true;
        self
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.access.lock().clone()
    }

    /// Full request path: identity, decoding, access control, dispatch.
    pub fn handle(
        &self,
        method: &str,
        path: &str,
        query: &[(String, String)],
        authorization: Option<&str>,
        body: &[u8],
    ) -> Response {
        let started = Instant::now();
        let request_id = self.kernel.next_request_id();
        let user = bearer_user(authorization).unwrap_or("").to_owned();
        let (name, response) = match decode_request(method, path, query, body) {
            Ok(request) => {
                let name = request.name();
                let env = RequestEnvelope {
                    request_id,
                    user: user.clone(),
                    request,
                };
                (name, self.serve_inner(env))
            }
            Err(e) => ("invalid", Response::error(&e, request_id)),
        };
        self.record(request_id, &user, name, response.status, started);
        response
    }

    /// Runs an already decoded request.
    pub fn serve(&self, env: RequestEnvelope) -> Response {
        let started = Instant::now();
        let (id, user, name) = (env.request_id, env.user.clone(), env.request.name());
        let response = self.serve_inner(env);
        self.record(id, &user, name, response.status, started);
        response
    }

    fn record(&self, request_id: u64, user: &str, request: &str, status: u16, started: Instant) {
        let micros = started.elapsed().as_micros() as u64;
        tracing::info!(request_id, user, request, status, micros, "request");
        self.access.lock().push(AccessRecord {
            request_id,
            user: user.to_owned(),
            request: request.to_owned(),
            status,
            micros,
        });
    }

    fn serve_inner(&self, env: RequestEnvelope) -> Response {
        let id = env.request_id;
        match self.authorize_and_run(env) {
            Ok(body) => Response::ok(body),
            Err(e) => match e {
                ServeError::Plain(e) => Response::error(&e, id),
                ServeError::Ndjson(s) => Response {
                    status: 200,
                    body: Body::Ndjson(s),
                },
            },
        }
    }

    fn deny(&self, user: &str, cause: Cause, detail: String) {
        if let Err(e) = self.kernel.log_auth_deny(user, cause, detail) {
            tracing::error!(error = %e, "could not log access denial");
        }
    }

    fn authorize(&self, env: &RequestEnvelope) -> Result<()> {
        if matches!(env.request, Request::Health) {
            return Ok(());
        }
        let cause = Cause::request(env.request_id);
        let db = self.kernel.snapshot();
        let user = match acl::load_user(&db, &env.user) {
            Ok(u) => u,
            Err(e @ Error::UnknownUser(_)) => {
                self.deny(&env.user, cause, format!("unknown user; {}", env.request.name()));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let rules = acl::load_rules(&db)?;
        for (obj, action) in request_needs(&db, &env.request)? {
            if !acl::check_access(&user, &rules, &obj, action) {
                let detail = format!("{action} on {obj}");
                self.deny(&user.user_id, cause, format!("{}: {detail}", env.request.name()));
                return Err(Error::AccessDenied(detail));
            }
        }
        Ok(())
    }

    fn authorize_and_run(&self, env: RequestEnvelope) -> std::result::Result<Json, ServeError> {
        self.authorize(&env)?;
        let k = &*self.kernel;
        let origin = Origin::new(&env.user, Cause::request(env.request_id));
        let ack = json!({"ok": true, "request_id": env.request_id});
        let with_id = |mut j: Json| {
            if let Some(o) = j.as_object_mut() {
                o.insert("request_id".into(), json!(env.request_id));
            }
            j
        };
        let out = match env.request {
            Request::Health => json!({
                "status": "ok",
                "initialized": k.is_initialized(),
                "outbox_pending": k.outbox().len(),
            }),
            Request::CreateSchema { name } => {
                k.create_schema(&name, &origin, None)?;
                ack
            }
            Request::CreateTable { def } => {
                let r = k.create_table(def, &origin, None)?;
                with_id(json!({"table": r.to_string()}))
            }
            Request::RegisterProcedure { source } => {
                let refs = k.register_procedure(&source, &origin, None)?;
                let names =
                    |s: &std::collections::BTreeSet<TableRef>| s.iter().map(|t| t.to_string()).collect::<Vec<_>>();
                with_id(json!({
                    "reads": names(&refs.reads),
                    "writes": names(&refs.writes),
                    "calls": refs.calls,
                }))
            }
            Request::RegisterTrigger { def } => {
                k.register_trigger(def, &origin, None)?;
                ack
            }
            Request::Call { name, args } => {
                let vs = k.call_procedure(&name, args, &origin, None)?;
                self.after_write();
                with_id(CommandResult::Values(vs).to_json())
            }
            Request::Txn { commands } => {
                let results = k.execute_atomic(commands, &origin)?;
                self.after_write();
                json!({
                    "request_id": env.request_id,
                    "results": results.iter().map(CommandResult::to_json).collect::<Vec<_>>(),
                })
            }
            Request::Query { sql } => {
                let r = k.execute_sql(&sql, &origin, None)?;
                self.after_write();
                with_id(r.to_json())
            }
            Request::IngestSpans { spans } => {
                let r = telemetry::ingest_batch(k, &spans, &env.user, env.request_id)?;
                self.after_write();
                json!({"accepted_count": r.accepted, "batch_id": r.batch_id, "request_id": env.request_id})
            }
            Request::Log { filter } => {
                let entries = k.query_log(&filter)?;
                return Err(ServeError::Ndjson(provenance::export_ndjson(&entries)));
            }
            Request::Trace { log_id } => k.trace(log_id)?.to_json(),
            Request::Metrics { node_id } => telemetry::get_metrics(&k.snapshot(), node_id)?.to_json(),
            Request::CreateUser { user } => {
                k.execute_atomic(
                    vec![Command::Insert {
                        table: acl::users_ref().to_string(),
                        cells: acl::user_cells(&user),
                    }],
                    &origin,
                )?;
                ack
            }
            Request::Grant { rule } => {
                k.execute_atomic(
                    vec![Command::Insert {
                        table: acl::acl_ref().to_string(),
                        cells: acl::rule_cells(&rule),
                    }],
                    &origin,
                )?;
                ack
            }
        };
        Ok(out)
    }

    fn after_write(&self) {
        if self.drain_inline {
            self.kernel.drain_outbox();
        }
    }
}

/// Non-JSON success bodies ride the error channel out of the dispatcher.
enum ServeError {
    Plain(Error),
    Ndjson(String),
}

impl From<Error> for ServeError {
    fn from(e: Error) -> Self {
        ServeError::Plain(e)
    }
}

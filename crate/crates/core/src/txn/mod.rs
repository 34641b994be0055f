// SPDX-License-Identifier: Apache-2.0

//! Transaction kernel.
//!
//! One read-write transaction runs at a time; writers queue FIFO for the
//! slot. A transaction stages its work on a private copy of the committed
//! [`Database`] and publishes it on commit. Readers outside a transaction
//! always see the last committed copy.

mod exec;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub(crate) use exec::Exec;

use crate::acl;
use crate::error::{Error, Result};
use crate::expr::{EmptyScope, Expr};
use crate::journal::{self, Batch, Journal, JournalOp};
use crate::policy::{prepare_trigger, resolve_procedure, ProcRefs, Procedure, TriggerDef};
use crate::provenance::{self, log_table_def, log_table_ref, Cause, Clock, LogEntry, LogFilter, LogKind, TraceResult};
use crate::proxy::{DeviceClient, DeviceCommand, Outbox, RetryPolicy, SyncState};
use crate::store::{execute_select, Database, ResultSet, RowId, TableDef, TableRef};
use crate::syntax::{parse_statement, SelectQuery, SqlStatement, TableName};
use crate::value::{Cells, Value};

pub type TxnId = u64;

/// Who is acting and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub user: String,
    pub cause: Cause,
}

impl Origin {
    pub fn new(user: &str, cause: Cause) -> Self {
        Origin {
            user: user.to_owned(),
            cause,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnStatus {
    Open,
    Committed,
    RolledBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeKind {
    Insert,
    Update,
    Delete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeRecord {
    pub table: TableRef,
    pub kind: ChangeKind,
    pub row_id: RowId,
    pub old_cells: Option<Cells>,
    pub new_cells: Option<Cells>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ExternalAttempt {
    pub name: String,
    pub args: Vec<Value>,
}

pub struct TxnState {
    id: TxnId,
    origin: Origin,
    status: TxnStatus,
    working: Database,
    staged_changes: Vec<ChangeRecord>,
    staged_log: Vec<LogEntry>,
    staged_commands: Vec<DeviceCommand>,
    catalog: Vec<JournalOp>,
    externals: Vec<ExternalAttempt>,
}

impl TxnState {
    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn status(&self) -> TxnStatus {
        self.status
    }

    pub fn staged_changes(&self) -> &[ChangeRecord] {
        &self.staged_changes
    }

    pub fn staged_log(&self) -> &[LogEntry] {
        &self.staged_log
    }

    pub fn staged_commands(&self) -> &[DeviceCommand] {
        &self.staged_commands
    }

    fn footprint(&self) -> (usize, usize, usize, usize) {
        (
            self.staged_changes.len(),
            self.staged_log.len(),
            self.catalog.len(),
            self.externals.len(),
        )
    }
}

/// FIFO ticket lock. Ownership belongs to a transaction, not a thread.
#[derive(Default)]
struct WriterSlot {
    tickets: Mutex<(u64, u64)>,
    turn: Condvar,
}

impl WriterSlot {
    fn acquire(&self) {
        let mut g = self.tickets.lock();
        let mine = g.0;
        g.0 += 1;
        while g.1 != mine {
            self.turn.wait(&mut g);
        }
    }

    fn release(&self) {
        let mut g = self.tickets.lock();
        g.1 += 1;
        self.turn.notify_all();
    }
}

/// One command of an atomic batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    CreateSchema {
        name: String,
    },
    CreateTable {
        def: TableDef,
    },
    RegisterProcedure {
        source: String,
    },
    RegisterTrigger {
        def: TriggerDef,
    },
    Insert {
        table: String,
        cells: Cells,
    },
    Update {
        table: String,
        set: Vec<(String, Expr)>,
        filter: Option<Expr>,
    },
    Delete {
        table: String,
        filter: Option<Expr>,
    },
    Select {
        query: SelectQuery,
    },
    Call {
        name: String,
        args: Vec<Value>,
    },
    Statement(SqlStatement),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandResult {
    Ack,
    RowId(RowId),
    Count(u64),
    Rows(ResultSet),
    Values(Vec<Value>),
}

impl CommandResult {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CommandResult::Ack => serde_json::json!({"ack": true}),
            CommandResult::RowId(id) => serde_json::json!({"row_id": id}),
            CommandResult::Count(n) => serde_json::json!({"affected": n}),
            CommandResult::Rows(rs) => rs.to_json(),
            CommandResult::Values(vs) => {
                serde_json::json!({"values": vs.iter().map(Value::to_json).collect::<Vec<_>>()})
            }
        }
    }
}

pub struct Kernel {
    committed: RwLock<Arc<Database>>,
    slot: WriterSlot,
    active: Mutex<Option<TxnState>>,
    next_txn: AtomicU64,
    next_request: AtomicU64,
    clock: Clock,
    devices: Arc<dyn DeviceClient>,
    outbox: Outbox,
    retry: RetryPolicy,
    journal: Mutex<Option<Journal>>,
}

impl Kernel {
    pub fn new(devices: Arc<dyn DeviceClient>) -> Kernel {
        Kernel {
            committed: RwLock::new(Arc::new(Database::new())),
            slot: WriterSlot::default(),
            active: Mutex::new(None),
            next_txn: AtomicU64::new(1),
            next_request: AtomicU64::new(1),
            clock: Clock::default(),
            devices,
            outbox: Outbox::default(),
            retry: RetryPolicy::default(),
            journal: Mutex::new(None),
        }
    }

    /// Opens a kernel backed by a journal file, replaying what it holds.
    pub fn open(devices: Arc<dyn DeviceClient>, path: &Path) -> Result<Kernel> {
        let (journal, batches) = Journal::open(path)?;
        let db = journal::replay(&batches)?;
        let kernel = Kernel::new(devices);
        let max_txn = batches.iter().map(|b| b.txn).max().unwrap_or(0);
        let mut max_req = 0;
        let mut max_log_txn = 0;
        if let Ok(entries) = provenance::entries(&db) {
            for e in entries {
                max_log_txn = max_log_txn.max(e.txn);
                if e.cause.is_root() {
                    max_req = max_req.max(e.cause.ref_id);
                }
            }
        }
        kernel.next_txn.store(max_txn.max(max_log_txn) + 1, Ordering::SeqCst);
        kernel.next_request.store(max_req + 1, Ordering::SeqCst);
        *kernel.committed.write() = Arc::new(db);
        *kernel.journal.lock() = Some(journal);
        Ok(kernel)
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn devices(&self) -> &Arc<dyn DeviceClient> {
        &self.devices
    }

    pub fn outbox(&self) -> &Outbox {
        &self.outbox
    }

    /// Fresh id for an external request or telemetry batch.
    pub fn next_request_id(&self) -> u64 {
        self.next_request.fetch_add(1, Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> Arc<Database> {
        self.committed.read().clone()
    }

    pub fn is_initialized(&self) -> bool {
        self.snapshot().table(&log_table_ref()).is_ok()
    }

    /// Creates the log, user and ACL tables. A no-op when they exist.
    pub fn init_provenance(&self) -> Result<()> {
        self.slot.acquire();
        let result = (|| {
            let current = self.snapshot();
            if current.table(&log_table_ref()).is_ok() {
                return Ok(());
            }
            let mut ops = vec![
                JournalOp::CreateSchema {
                    name: provenance::SYS_SCHEMA.into(),
                },
                JournalOp::CreateTable { def: log_table_def() },
            ];
            ops.extend(acl::bootstrap_ops());
            let mut db = (*current).clone();
            for op in &ops {
                journal::apply(&mut db, op)?;
            }
            self.journal_append(&Batch { txn: 0, ops })?;
            *self.committed.write() = Arc::new(db);
            Ok(())
        })();
        self.slot.release();
        result
    }

    fn journal_append(&self, batch: &Batch) -> Result<()> {
        match self.journal.lock().as_mut() {
            Some(j) => j.append(batch),
            None => Ok(()),
        }
    }

    // ---- transaction lifecycle -------------------------------------------

    pub fn begin(&self, origin: &Origin) -> Result<TxnId> {
        if !self.is_initialized() {
            return Err(Error::NotInitialized);
        }
        self.slot.acquire();
        let id = self.next_txn.fetch_add(1, Ordering::SeqCst);
        let working = (*self.snapshot()).clone();
        *self.active.lock() = Some(TxnState {
            id,
            origin: origin.clone(),
            status: TxnStatus::Open,
            working,
            staged_changes: Vec::new(),
            staged_log: Vec::new(),
            staged_commands: Vec::new(),
            catalog: Vec::new(),
            externals: Vec::new(),
        });
        tracing::debug!(txn = id, user = %origin.user, "begin");
        Ok(id)
    }

    fn take_open(&self, slot: &mut Option<TxnState>, id: TxnId) -> Result<TxnState> {
        match slot.take() {
            Some(st) if st.id == id => Ok(st),
            other => {
                *slot = other;
                Err(self.closed_or_unknown(id))
            }
        }
    }

    fn closed_or_unknown(&self, id: TxnId) -> Error {
        if id > 0 && id < self.next_txn.load(Ordering::SeqCst) {
            Error::AlreadyClosed(id)
        } else {
            Error::UnknownTxn(id)
        }
    }

    pub fn commit(&self, id: TxnId) -> Result<()> {
        let mut slot = self.active.lock();
        let st = self.take_open(&mut slot, id)?;
        self.finish_commit(st)
    }

    pub fn rollback(&self, id: TxnId, reason: &str) -> Result<()> {
        let mut slot = self.active.lock();
        let st = self.take_open(&mut slot, id)?;
        self.finish_rollback(st, reason)
    }

    fn finish_commit(&self, mut st: TxnState) -> Result<()> {
        if !st.staged_log.is_empty() || !st.staged_changes.is_empty() {
            let cause = st.origin.cause;
            exec::stage_log(
                &mut st,
                &self.clock,
                LogKind::Commit,
                None,
                None,
                None,
                None,
                String::new(),
                cause,
            );
        }
        let mut ops = std::mem::take(&mut st.catalog);
        for c in &st.staged_changes {
            ops.push(match c.kind {
                ChangeKind::Insert => JournalOp::Insert {
                    table: c.table.clone(),
                    row_id: c.row_id,
                    cells: c.new_cells.clone().unwrap_or_default(),
                },
                ChangeKind::Update => JournalOp::Update {
                    table: c.table.clone(),
                    row_id: c.row_id,
                    cells: c.new_cells.clone().unwrap_or_default(),
                },
                ChangeKind::Delete => JournalOp::Delete {
                    table: c.table.clone(),
                    row_id: c.row_id,
                },
            });
        }
        ops.extend(st.staged_log.iter().map(log_op));
        if !ops.is_empty() {
            if let Err(e) = self.journal_append(&Batch { txn: st.id, ops }) {
                let reason = format!("journal write failed: {e}");
                self.finish_rollback(st, &reason)?;
                return Err(e);
            }
        }
        let id = st.id;
        let commands = std::mem::take(&mut st.staged_commands);
        st.status = TxnStatus::Committed;
        *self.committed.write() = Arc::new(st.working);
        self.outbox.release(commands);
        self.slot.release();
        tracing::debug!(txn = id, "commit");
        Ok(())
    }

    fn finish_rollback(&self, st: TxnState, reason: &str) -> Result<()> {
        let mut entries: Vec<(LogKind, String)> = st
            .externals
            .iter()
            .map(|x| {
                let args: Vec<String> = x.args.iter().map(Value::to_string).collect();
                (
                    LogKind::CompensationPending,
                    format!("{}({}) was not undone", x.name, args.join(", ")),
                )
            })
            .collect();
        entries.push((LogKind::Rollback, reason.to_owned()));
        let result = self.materialize(st.id, &st.origin, entries);
        self.slot.release();
        tracing::debug!(txn = st.id, reason, "rollback");
        result
    }

    /// Appends entries straight to committed state. Caller holds the slot.
    fn materialize(&self, txn: TxnId, origin: &Origin, entries: Vec<(LogKind, String)>) -> Result<()> {
        let mut db = (*self.snapshot()).clone();
        let log = db.table_mut(&log_table_ref())?;
        let mut ops = Vec::new();
        for (kind, detail) in entries {
            let e = LogEntry {
                log_id: log.next_row_id(),
                ts: self.clock.now(),
                user: origin.user.clone(),
                txn,
                kind,
                table: None,
                row_id: None,
                old_cells: None,
                new_cells: None,
                detail,
                cause: origin.cause,
            };
            log.put(e.log_id, e.to_cells());
            ops.push(log_op(&e));
        }
        self.journal_append(&Batch { txn, ops })?;
        *self.committed.write() = Arc::new(db);
        Ok(())
    }

    /// Appends log entries outside any user transaction (auth denials,
    /// outbox deliveries). Waits for the writer slot.
    pub fn append_system(&self, entries: Vec<LogEntry>) -> Result<Vec<u64>> {
        if !self.is_initialized() {
            return Err(Error::NotInitialized);
        }
        self.slot.acquire();
        let result = (|| {
            let mut db = (*self.snapshot()).clone();
            let log = db.table_mut(&log_table_ref())?;
            let mut ids = Vec::new();
            let mut ops = Vec::new();
            for mut e in entries {
                e.log_id = log.next_row_id();
                e.ts = self.clock.now();
                log.put(e.log_id, e.to_cells());
                ids.push(e.log_id);
                ops.push(log_op(&e));
            }
            self.journal_append(&Batch { txn: 0, ops })?;
            *self.committed.write() = Arc::new(db);
            Ok(ids)
        })();
        self.slot.release();
        result
    }

    pub fn log_auth_deny(&self, user: &str, cause: Cause, detail: String) -> Result<u64> {
        let ids = self.append_system(vec![LogEntry {
            log_id: 0,
            ts: 0,
            user: user.to_owned(),
            txn: 0,
            kind: LogKind::AuthDeny,
            table: None,
            row_id: None,
            old_cells: None,
            new_cells: None,
            detail,
            cause,
        }])?;
        Ok(ids[0])
    }

    /// Runs `f` against an open transaction. Errors abort the transaction
    /// unless they are validation errors that staged nothing.
    fn in_txn<T>(&self, id: TxnId, f: impl FnOnce(&mut Exec<'_>) -> Result<T>) -> Result<T> {
        let mut slot = self.active.lock();
        let mut st = self.take_open(&mut slot, id)?;
        let before = st.footprint();
        let result = f(&mut Exec {
            kernel: self,
            txn: &mut st,
        });
        match result {
            Ok(v) => {
                *slot = Some(st);
                Ok(v)
            }
            Err(e) if e.is_validation() && st.footprint() == before => {
                *slot = Some(st);
                Err(e)
            }
            Err(e) => {
                self.finish_rollback(st, &e.to_string())?;
                Err(e)
            }
        }
    }

    /// Runs `f` in the given transaction, or in a fresh one that commits on
    /// success and rolls back on error.
    fn with_txn<T>(
        &self,
        txn: Option<TxnId>,
        origin: &Origin,
        f: impl FnOnce(&mut Exec<'_>) -> Result<T>,
    ) -> Result<T> {
        match txn {
            Some(id) => self.in_txn(id, f),
            None => {
                let id = self.begin(origin)?;
                let out = self.in_txn(id, f);
                match out {
                    Ok(v) => {
                        self.commit(id)?;
                        Ok(v)
                    }
                    Err(e) => {
                        // Validation errors leave the txn open; close it.
                        if self.active.lock().as_ref().is_some_and(|s| s.id == id) {
                            self.rollback(id, &e.to_string())?;
                        }
                        Err(e)
                    }
                }
            }
        }
    }

    // ---- catalog ---------------------------------------------------------

    pub fn create_schema(&self, name: &str, origin: &Origin, txn: Option<TxnId>) -> Result<()> {
        self.with_txn(txn, origin, |x| x.create_schema(name))
    }

    pub fn create_table(&self, def: TableDef, origin: &Origin, txn: Option<TxnId>) -> Result<TableRef> {
        self.with_txn(txn, origin, |x| x.create_table(def))
    }

    pub fn register_procedure(&self, source: &str, origin: &Origin, txn: Option<TxnId>) -> Result<ProcRefs> {
        self.with_txn(txn, origin, |x| x.register_procedure(source))
    }

    pub fn register_trigger(&self, def: TriggerDef, origin: &Origin, txn: Option<TxnId>) -> Result<()> {
        self.with_txn(txn, origin, |x| x.register_trigger(def))
    }

    // ---- data ------------------------------------------------------------

    pub fn insert(&self, txn: TxnId, table: &str, cells: Cells) -> Result<RowId> {
        self.in_txn(txn, |x| x.insert_top(table, cells))
    }

    pub fn update(&self, txn: TxnId, table: &str, set: &[(String, Expr)], filter: Option<&Expr>) -> Result<u64> {
        self.in_txn(txn, |x| x.update_top(table, set, filter))
    }

    pub fn delete(&self, txn: TxnId, table: &str, filter: Option<&Expr>) -> Result<u64> {
        self.in_txn(txn, |x| x.delete_top(table, filter))
    }

    /// Inside a transaction reads its staged view; otherwise the last
    /// committed state.
    pub fn select(&self, txn: Option<TxnId>, q: &SelectQuery) -> Result<ResultSet> {
        match txn {
            Some(id) => self.in_txn(id, |x| execute_select(&x.txn.working, q, &EmptyScope)),
            None => execute_select(&self.snapshot(), q, &EmptyScope),
        }
    }

    pub fn call_procedure(
        &self,
        name: &str,
        args: Vec<Value>,
        origin: &Origin,
        txn: Option<TxnId>,
    ) -> Result<Vec<Value>> {
        // Validate before opening an implicit transaction, so a bad call
        // leaves no trace.
        if txn.is_none() {
            let snap = self.snapshot();
            let proc = snap
                .procedure(name)
                .ok_or_else(|| Error::UnknownProcedure(name.to_owned()))?;
            proc.bind_args(args.clone())?;
        }
        self.with_txn(txn, origin, |x| x.call_top(name, args))
    }

    /// Parses and runs one SQL statement.
    pub fn execute_sql(&self, sql: &str, origin: &Origin, txn: Option<TxnId>) -> Result<CommandResult> {
        let stmt = parse_statement(sql)?;
        if let (SqlStatement::Select(q), None) = (&stmt, txn) {
            return Ok(CommandResult::Rows(execute_select(&self.snapshot(), q, &EmptyScope)?));
        }
        self.with_txn(txn, origin, |x| x.statement(&stmt))
    }

    /// Runs commands in one transaction: all take effect or none do.
    pub fn execute_atomic(&self, commands: Vec<Command>, origin: &Origin) -> Result<Vec<CommandResult>> {
        if commands.is_empty() {
            return Ok(Vec::new());
        }
        let id = self.begin(origin)?;
        let mut results = Vec::with_capacity(commands.len());
        for cmd in commands {
            match self.in_txn(id, |x| x.command(cmd)) {
                Ok(r) => results.push(r),
                Err(e) => {
                    if self.active.lock().as_ref().is_some_and(|s| s.id == id) {
                        self.rollback(id, &e.to_string())?;
                    }
                    return Err(e);
                }
            }
        }
        self.commit(id)?;
        Ok(results)
    }

    /// Runs `f` with a transaction's executor; used by modules layered on
    /// the kernel (telemetry ingestion).
    pub(crate) fn run<T>(&self, origin: &Origin, f: impl FnOnce(&mut Exec<'_>) -> Result<T>) -> Result<T> {
        self.with_txn(None, origin, f)
    }

    // ---- provenance ------------------------------------------------------

    pub fn trace(&self, log_id: u64) -> Result<TraceResult> {
        provenance::trace(&self.snapshot(), log_id)
    }

    pub fn query_log(&self, filter: &LogFilter) -> Result<Vec<LogEntry>> {
        provenance::query_log(&self.snapshot(), filter)
    }

    pub fn log(&self) -> Result<Vec<LogEntry>> {
        provenance::entries(&self.snapshot())
    }

    // ---- outbox ----------------------------------------------------------

    /// Applies queued device commands in order, retrying with backoff.
    /// Returns how many were applied successfully.
    pub fn drain_outbox(&self) -> usize {
        let _one_drainer = self.outbox.drain_lock.lock();
        let mut applied = 0;
        while let Some(cmd) = self.outbox.pop() {
            let mut attempts = 0;
            let outcome = loop {
                attempts += 1;
                match self.devices.apply(&cmd) {
                    Ok(()) => break Ok(()),
                    Err(e) if attempts > self.retry.max_retries => break Err(e),
                    Err(e) => {
                        tracing::debug!(command = cmd.command_id, attempts, error = %e, "device command failed; retrying");
                        std::thread::sleep(self.retry.backoff(attempts));
                    }
                }
            };
            let detail = match &outcome {
                Ok(()) => format!(
                    "{:?} {:?} {} applied after {attempts} attempt(s)",
                    cmd.action, cmd.device_kind, cmd.device_id
                ),
                Err(e) => format!(
                    "{:?} {:?} {} failed after {attempts} attempt(s): {e}",
                    cmd.action, cmd.device_kind, cmd.device_id
                ),
            };
            match &outcome {
                Ok(()) => {
                    applied += 1;
                    self.outbox.record(&cmd, SyncState::InSync, attempts, None);
                }
                Err(e) => {
                    tracing::warn!(command = cmd.command_id, error = %e, "device command abandoned");
                    self.outbox
                        .record(&cmd, SyncState::Error, attempts, Some(e.to_string()));
                }
            }
            let entry = LogEntry {
                log_id: 0,
                ts: 0,
                user: cmd.user.clone(),
                txn: 0,
                kind: LogKind::ExternalCall,
                table: Some(cmd.table.clone()),
                row_id: Some(cmd.row_id),
                old_cells: None,
                new_cells: Some(cmd.payload.clone()),
                detail,
                cause: Cause::activation(cmd.origin_log_id),
            };
            if let Err(e) = self.append_system(vec![entry]) {
                tracing::error!(error = %e, "could not log device command");
            }
        }
        applied
    }

    /// Drains the outbox from a background thread until the kernel drops.
    pub fn spawn_outbox_worker(self: &Arc<Self>) -> std::thread::JoinHandle<()> {
        let weak: Weak<Kernel> = Arc::downgrade(self);
        std::thread::spawn(move || loop {
            let Some(k) = weak.upgrade() else { return };
            k.drain_outbox();
            k.outbox.wait(Duration::from_millis(200));
        })
    }
}

fn log_op(e: &LogEntry) -> JournalOp {
    JournalOp::Insert {
        table: log_table_ref(),
        row_id: e.log_id,
        cells: e.to_cells(),
    }
}

pub(crate) fn resolve_table(db: &Database, name: &str) -> Result<TableRef> {
    db.resolve(&TableName::parse_ref(name))
}

pub(crate) fn register_trigger_in(db: &mut Database, def: TriggerDef) -> Result<TriggerDef> {
    let t = prepare_trigger(db, def)?;
    let def = t.def().clone();
    db.push_trigger(Arc::new(t));
    Ok(def)
}

pub(crate) fn register_procedure_in(db: &mut Database, source: &str) -> Result<(Arc<Procedure>, ProcRefs)> {
    let p = Procedure::parse(source)?;
    if db.procedure(p.name()).is_some() {
        return Err(Error::DuplicateProcedure(p.name().to_owned()));
    }
    let refs = resolve_procedure(db, &p)?;
    let p = Arc::new(p);
    db.put_procedure(p.clone());
    Ok((p, refs))
}

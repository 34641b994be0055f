// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{EmptyScope, Expr, RowScope, Scope};
use crate::journal::JournalOp;
use crate::policy::{interp, Event, ProcRefs, Procedure, TriggerDef, TriggerEvent, MAX_CASCADE_DEPTH};
use crate::provenance::{log_table_ref, Cause, Clock, LogEntry, LogKind};
use crate::proxy::{DeviceAction, DeviceCommand};
use crate::store::{check_row_expr, execute_select, matching_rows, Database, RowId, TableDef, TableRef};
use crate::syntax::SqlStatement;
use crate::value::{Cells, Value};

use super::{
    register_procedure_in, register_trigger_in, resolve_table, ChangeKind, ChangeRecord, Command, CommandResult,
    ExternalAttempt, Kernel, TxnState,
};

/// Stages a log entry in the transaction's view; returns its log id.
#[allow(clippy::too_many_arguments)]
pub(super) fn stage_log(
    st: &mut TxnState,
    clock: &Clock,
    kind: LogKind,
    table: Option<TableRef>,
    row_id: Option<RowId>,
    old_cells: Option<Cells>,
    new_cells: Option<Cells>,
    detail: String,
    cause: Cause,
) -> u64 {
    let log = st
        .working
        .table_mut(&log_table_ref())
        .expect("transactions only begin after provenance init");
    let e = LogEntry {
        log_id: log.next_row_id(),
        ts: clock.now(),
        user: st.origin.user.clone(),
        txn: st.id,
        kind,
        table,
        row_id,
        old_cells,
        new_cells,
        detail,
        cause,
    };
    log.put(e.log_id, e.to_cells());
    let id = e.log_id;
    st.staged_log.push(e);
    id
}

/// Executes statements inside one open transaction.
pub(crate) struct Exec<'a> {
    pub(crate) kernel: &'a Kernel,
    pub(crate) txn: &'a mut TxnState,
}

impl Exec<'_> {
    pub(crate) fn db(&self) -> &Database {
        &self.txn.working
    }

    pub(crate) fn root_cause(&self) -> Cause {
        self.txn.origin.cause
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn log(
        &mut self,
        kind: LogKind,
        table: Option<TableRef>,
        row_id: Option<RowId>,
        old: Option<Cells>,
        new: Option<Cells>,
        detail: String,
        cause: Cause,
    ) -> u64 {
        stage_log(
            self.txn,
            &self.kernel.clock,
            kind,
            table,
            row_id,
            old,
            new,
            detail,
            cause,
        )
    }

    fn writable(&self, table: &TableRef) -> Result<&TableDef> {
        let def = self.db().table(table)?.def();
        if def.flags.cdc_exempt {
            return Err(Error::ReadOnlyTable(table.to_string()));
        }
        Ok(def)
    }

    // ---- catalog ---------------------------------------------------------

    pub(crate) fn create_schema(&mut self, name: &str) -> Result<()> {
        self.txn.working.create_schema(name)?;
        self.txn.catalog.push(JournalOp::CreateSchema { name: name.to_owned() });
        Ok(())
    }

    pub(crate) fn create_table(&mut self, def: TableDef) -> Result<TableRef> {
        if def.flags.cdc_exempt {
            return Err(Error::InvalidColumn(
                "only the provenance log may be exempt from change capture".into(),
            ));
        }
        let r = self.txn.working.create_table(def.clone())?;
        self.txn.catalog.push(JournalOp::CreateTable { def });
        Ok(r)
    }

    pub(crate) fn register_procedure(&mut self, source: &str) -> Result<ProcRefs> {
        let (p, refs) = register_procedure_in(&mut self.txn.working, source)?;
        self.txn.catalog.push(JournalOp::PutProcedure {
            source: source.to_owned(),
        });
        let cause = self.root_cause();
        self.log(
            LogKind::ProcRegister,
            None,
            None,
            None,
            None,
            p.name().to_owned(),
            cause,
        );
        Ok(refs)
    }

    pub(crate) fn register_trigger(&mut self, def: TriggerDef) -> Result<()> {
        let def = register_trigger_in(&mut self.txn.working, def)?;
        let table: TableRef = def.table.parse()?;
        let detail = def.to_string();
        self.txn.catalog.push(JournalOp::PutTrigger { def });
        let cause = self.root_cause();
        self.log(LogKind::TriggerRegister, Some(table), None, None, None, detail, cause);
        Ok(())
    }

    // ---- mutations -------------------------------------------------------

    pub(crate) fn insert(&mut self, table: &TableRef, cells: Cells, cause: Cause, depth: u32) -> Result<RowId> {
        self.writable(table)?;
        let t = self.txn.working.table_mut(table)?;
        let id = t.insert(cells)?;
        let new = t.get(id).cloned().expect("row just inserted");
        self.after_mutation(table, ChangeKind::Insert, id, None, Some(new), cause, depth)?;
        Ok(id)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn update(
        &mut self,
        table: &TableRef,
        set: &[(String, Expr)],
        filter: Option<&Expr>,
        outer: &dyn Scope,
        cause: Cause,
        depth: u32,
    ) -> Result<u64> {
        let def = self.writable(table)?;
        for (col, e) in set {
            if def.column(col).is_none() {
                return Err(Error::UnknownColumn(format!("{table}.{col}")));
            }
            check_row_expr(self.db().table(table)?, e, outer)?;
        }
        let ids = matching_rows(self.db().table(table)?, filter, outer)?;
        let quals = [table.name.as_str()];
        let mut count = 0;
        for id in ids {
            // Earlier rows' triggers may have changed or removed this one.
            let Some(current) = self.db().table(table)?.get(id).cloned() else {
                continue;
            };
            let scope = RowScope {
                qualifiers: &quals,
                cells: &current,
                outer,
            };
            let mut changes = Cells::new();
            for (col, e) in set {
                changes.insert(col.clone(), e.eval(&scope)?);
            }
            let (old, new) = self.txn.working.table_mut(table)?.update(id, changes)?;
            self.after_mutation(table, ChangeKind::Update, id, Some(old), Some(new), cause, depth)?;
            count += 1;
        }
        Ok(count)
    }

    pub(crate) fn delete(
        &mut self,
        table: &TableRef,
        filter: Option<&Expr>,
        outer: &dyn Scope,
        cause: Cause,
        depth: u32,
    ) -> Result<u64> {
        self.writable(table)?;
        let ids = matching_rows(self.db().table(table)?, filter, outer)?;
        let mut count = 0;
        for id in ids {
            let Some(old) = self.txn.working.table_mut(table)?.remove(id) else {
                continue;
            };
            self.after_mutation(table, ChangeKind::Delete, id, Some(old), None, cause, depth)?;
            count += 1;
        }
        Ok(count)
    }

    #[allow(clippy::too_many_arguments)]
    fn after_mutation(
        &mut self,
        table: &TableRef,
        kind: ChangeKind,
        row_id: RowId,
        old: Option<Cells>,
        new: Option<Cells>,
        cause: Cause,
        depth: u32,
    ) -> Result<()> {
        let log_kind = match kind {
            ChangeKind::Insert => LogKind::Insert,
            ChangeKind::Update => LogKind::Update,
            ChangeKind::Delete => LogKind::Delete,
        };
        let log_id = self.log(
            log_kind,
            Some(table.clone()),
            Some(row_id),
            old.clone(),
            new.clone(),
            String::new(),
            cause,
        );
        let def = self.db().table(table)?.def();
        if def.device_backed {
            if let (Some(device_kind), Some(pk)) = (def.device_kind, def.primary_key()) {
                let payload = new.clone().or_else(|| old.clone()).unwrap_or_default();
                let device_id = payload
                    .get(&pk.name)
                    .and_then(Value::as_i64)
                    .ok_or_else(|| Error::ConstraintViolation(format!("{table}: device key must be an integer")))?;
                let user = self.txn.origin.user.clone();
                self.txn.staged_commands.push(DeviceCommand {
                    command_id: 0,
                    device_kind,
                    device_id,
                    action: match kind {
                        ChangeKind::Insert => DeviceAction::Create,
                        ChangeKind::Update => DeviceAction::SetState,
                        ChangeKind::Delete => DeviceAction::Delete,
                    },
                    payload,
                    table: table.clone(),
                    row_id,
                    origin_log_id: log_id,
                    user,
                });
            }
        }
        self.txn.staged_changes.push(ChangeRecord {
            table: table.clone(),
            kind,
            row_id,
            old_cells: old.clone(),
            new_cells: new.clone(),
        });
        let event = Event {
            table: table.clone(),
            old,
            new,
        };
        let trigger_event = match kind {
            ChangeKind::Insert => TriggerEvent::AfterInsert,
            ChangeKind::Update => TriggerEvent::AfterUpdate,
            ChangeKind::Delete => TriggerEvent::AfterDelete,
        };
        self.dispatch(&event, trigger_event, row_id, log_id, depth)
    }

    /// Fires matching triggers in registration order.
    fn dispatch(
        &mut self,
        event: &Event,
        kind: TriggerEvent,
        row_id: RowId,
        mutation_log_id: u64,
        depth: u32,
    ) -> Result<()> {
        let triggers: Vec<_> = self
            .db()
            .triggers()
            .filter(|t| t.table() == &event.table && t.event() == kind)
            .cloned()
            .collect();
        for t in triggers {
            if let Some(w) = t.when() {
                if !w.holds(event)? {
                    continue;
                }
            }
            let fired_depth = depth + 1;
            if fired_depth > MAX_CASCADE_DEPTH {
                return Err(Error::CascadeDepthExceeded(fired_depth));
            }
            let fire_id = self.log(
                LogKind::TriggerFire,
                Some(event.table.clone()),
                Some(row_id),
                None,
                None,
                t.name().to_owned(),
                Cause::activation(mutation_log_id),
            );
            let args = t.args().iter().map(|a| a.eval(event)).collect::<Result<Vec<_>>>()?;
            let proc = self
                .db()
                .procedure(&t.def().procedure)
                .cloned()
                .ok_or_else(|| Error::UnknownProcedure(t.def().procedure.clone()))?;
            self.call(&proc, args, Cause::activation(fire_id), fired_depth, Some(event))?;
        }
        Ok(())
    }

    // ---- procedures and devices -------------------------------------------

    /// Logs a ProcCall and runs the body. The caller enforces depth.
    pub(crate) fn call(
        &mut self,
        proc: &Arc<Procedure>,
        args: Vec<Value>,
        cause: Cause,
        depth: u32,
        event: Option<&Event>,
    ) -> Result<Vec<Value>> {
        let args = proc.bind_args(args)?;
        let rendered: Vec<String> = args.iter().map(Value::to_string).collect();
        let call_id = self.log(
            LogKind::ProcCall,
            None,
            None,
            None,
            None,
            format!("{}({})", proc.name(), rendered.join(", ")),
            cause,
        );
        interp::invoke(self, proc, args, Cause::invocation(call_id), depth, event)
    }

    pub(crate) fn external(&mut self, name: &str, args: Vec<Value>, cause: Cause) -> Result<Vec<Value>> {
        self.txn.externals.push(ExternalAttempt {
            name: name.to_owned(),
            args: args.clone(),
        });
        let out = self.kernel.devices.call(name, &args)?;
        let a: Vec<String> = args.iter().map(Value::to_string).collect();
        let r: Vec<String> = out.iter().map(Value::to_string).collect();
        self.log(
            LogKind::ExternalCall,
            None,
            None,
            None,
            None,
            format!("{name}({}) -> [{}]", a.join(", "), r.join(", ")),
            cause,
        );
        Ok(out)
    }

    // ---- top-level entry points ------------------------------------------

    pub(crate) fn insert_top(&mut self, table: &str, cells: Cells) -> Result<RowId> {
        let r = resolve_table(self.db(), table)?;
        let cause = self.root_cause();
        self.insert(&r, cells, cause, 0)
    }

    pub(crate) fn update_top(&mut self, table: &str, set: &[(String, Expr)], filter: Option<&Expr>) -> Result<u64> {
        let r = resolve_table(self.db(), table)?;
        let cause = self.root_cause();
        self.update(&r, set, filter, &EmptyScope, cause, 0)
    }

    pub(crate) fn delete_top(&mut self, table: &str, filter: Option<&Expr>) -> Result<u64> {
        let r = resolve_table(self.db(), table)?;
        let cause = self.root_cause();
        self.delete(&r, filter, &EmptyScope, cause, 0)
    }

    pub(crate) fn call_top(&mut self, name: &str, args: Vec<Value>) -> Result<Vec<Value>> {
        let proc = self
            .db()
            .procedure(name)
            .cloned()
            .ok_or_else(|| Error::UnknownProcedure(name.to_owned()))?;
        proc.bind_args(args.clone())?;
        let cause = self.root_cause();
        self.call(&proc, args, cause, 0, None)
    }

    pub(crate) fn command(&mut self, cmd: Command) -> Result<CommandResult> {
        Ok(match cmd {
            Command::CreateSchema { name } => {
                self.create_schema(&name)?;
                CommandResult::Ack
            }
            Command::CreateTable { def } => {
                self.create_table(def)?;
                CommandResult::Ack
            }
            Command::RegisterProcedure { source } => {
                self.register_procedure(&source)?;
                CommandResult::Ack
            }
            Command::RegisterTrigger { def } => {
                self.register_trigger(def)?;
                CommandResult::Ack
            }
            Command::Insert { table, cells } => CommandResult::RowId(self.insert_top(&table, cells)?),
            Command::Update { table, set, filter } => {
                CommandResult::Count(self.update_top(&table, &set, filter.as_ref())?)
            }
            Command::Delete { table, filter } => CommandResult::Count(self.delete_top(&table, filter.as_ref())?),
            Command::Select { query } => CommandResult::Rows(execute_select(self.db(), &query, &EmptyScope)?),
            Command::Call { name, args } => CommandResult::Values(self.call_top(&name, args)?),
            Command::Statement(stmt) => self.statement(&stmt)?,
        })
    }

    /// Executes a parsed SQL statement at top level.
    pub(crate) fn statement(&mut self, stmt: &SqlStatement) -> Result<CommandResult> {
        let outer = EmptyScope;
        Ok(match stmt {
            SqlStatement::Select(q) => CommandResult::Rows(execute_select(self.db(), q, &outer)?),
            SqlStatement::Insert(ins) => {
                if ins.columns.len() != ins.values.len() {
                    return Err(Error::MalformedQuery(format!(
                        "{} columns but {} values",
                        ins.columns.len(),
                        ins.values.len()
                    )));
                }
                let mut cells = Cells::new();
                for (c, e) in ins.columns.iter().zip(&ins.values) {
                    cells.insert(c.clone(), e.eval(&outer)?);
                }
                let r = self.db().resolve(&ins.table)?;
                let cause = self.root_cause();
                CommandResult::RowId(self.insert(&r, cells, cause, 0)?)
            }
            SqlStatement::Update(up) => {
                let r = self.db().resolve(&up.table)?;
                let cause = self.root_cause();
                CommandResult::Count(self.update(&r, &up.assignments, up.filter.as_ref(), &outer, cause, 0)?)
            }
            SqlStatement::Delete(del) => {
                let r = self.db().resolve(&del.table)?;
                let cause = self.root_cause();
                CommandResult::Count(self.delete(&r, del.filter.as_ref(), &outer, cause, 0)?)
            }
        })
    }
}

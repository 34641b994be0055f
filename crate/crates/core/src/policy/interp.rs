// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{qualified_name, Scope};
use crate::provenance::Cause;
use crate::store::{execute_select, Database, TableRef};
use crate::syntax::{Stmt, TableName};
use crate::txn::Exec;
use crate::value::{Cells, Value, ValueKind};

use super::{is_image_qualifier, Event, Procedure, MAX_CASCADE_DEPTH};

/// Variables, loop records and the triggering event of one invocation.
struct Frame<'e> {
    vars: HashMap<String, (ValueKind, Value)>,
    records: HashMap<String, Cells>,
    event: Option<&'e Event>,
}

impl Scope for Frame<'_> {
    fn lookup(&self, qualifier: Option<&str>, name: &str) -> Result<Value> {
        match qualifier {
            None => self
                .vars
                .get(name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::UnknownColumn(name.to_owned())),
            Some(q) if is_image_qualifier(q) => match self.event {
                Some(ev) => ev.lookup(qualifier, name),
                None => Err(Error::Runtime(format!(
                    "{} is only available in trigger-invoked procedures",
                    qualified_name(qualifier, name)
                ))),
            },
            Some(q) => self
                .records
                .get(q)
                .and_then(|cells| cells.get(name).cloned())
                .ok_or_else(|| Error::UnknownColumn(qualified_name(qualifier, name))),
        }
    }
}

impl Frame<'_> {
    fn assign(&mut self, name: &str, value: Value) -> Result<()> {
        let (kind, slot) = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::Runtime(format!("undeclared variable {name}")))?;
        *slot = value.coerce_to(*kind)?;
        Ok(())
    }
}

enum Flow {
    Next,
    Return(Vec<Value>),
}

struct Run<'x, 'k, 'e> {
    exec: &'x mut Exec<'k>,
    cause: Cause,
    depth: u32,
    frame: Frame<'e>,
}

/// Runs a procedure body with already-bound arguments. `cause` is the
/// invocation cause for every entry the body produces.
pub(crate) fn invoke(
    exec: &mut Exec<'_>,
    proc: &Arc<Procedure>,
    args: Vec<Value>,
    cause: Cause,
    depth: u32,
    event: Option<&Event>,
) -> Result<Vec<Value>> {
    let vars = proc
        .params()
        .iter()
        .zip(args)
        .map(|(p, v)| (p.name.clone(), (p.kind, v)))
        .collect();
    let mut run = Run {
        exec,
        cause,
        depth,
        frame: Frame {
            vars,
            records: HashMap::new(),
            event,
        },
    };
    match run.block(proc.body())? {
        Flow::Return(values) => Ok(values),
        Flow::Next => Ok(Vec::new()),
    }
}

fn resolve(db: &Database, name: &TableName) -> Result<TableRef> {
    db.resolve(name)
}

impl Run<'_, '_, '_> {
    fn block(&mut self, body: &[Stmt]) -> Result<Flow> {
        for s in body {
            if let Flow::Return(v) = self.stmt(s)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Next)
    }

    fn stmt(&mut self, s: &Stmt) -> Result<Flow> {
        match s {
            Stmt::Declare { name, kind } => {
                self.frame.vars.insert(name.clone(), (*kind, Value::Null));
            }
            Stmt::Set { name, value } => {
                let v = value.eval(&self.frame)?;
                self.frame.assign(name, v)?;
            }
            Stmt::If { branches, otherwise } => {
                for (cond, body) in branches {
                    if cond.holds(&self.frame)? {
                        return self.block(body);
                    }
                }
                if let Some(body) = otherwise {
                    return self.block(body);
                }
            }
            Stmt::For { var, query, body } => {
                let rs = execute_select(self.exec.db(), query, &self.frame)?;
                let saved = self.frame.records.remove(var);
                let mut flow = Flow::Next;
                for row in rs.rows {
                    let cells: Cells = rs.columns.iter().cloned().zip(row).collect();
                    self.frame.records.insert(var.clone(), cells);
                    flow = self.block(body)?;
                    if matches!(flow, Flow::Return(_)) {
                        break;
                    }
                }
                self.frame.records.remove(var);
                if let Some(s) = saved {
                    self.frame.records.insert(var.clone(), s);
                }
                return Ok(flow);
            }
            Stmt::Insert(ins) => {
                let t = resolve(self.exec.db(), &ins.table)?;
                let mut cells = Cells::new();
                for (c, e) in ins.columns.iter().zip(&ins.values) {
                    cells.insert(c.clone(), e.eval(&self.frame)?);
                }
                self.exec.insert(&t, cells, self.cause, self.depth)?;
            }
            Stmt::Update(up) => {
                let t = resolve(self.exec.db(), &up.table)?;
                self.exec.update(
                    &t,
                    &up.assignments,
                    up.filter.as_ref(),
                    &self.frame,
                    self.cause,
                    self.depth,
                )?;
            }
            Stmt::Delete(del) => {
                let t = resolve(self.exec.db(), &del.table)?;
                self.exec
                    .delete(&t, del.filter.as_ref(), &self.frame, self.cause, self.depth)?;
            }
            Stmt::SelectInto { query, targets } => {
                let rs = execute_select(self.exec.db(), query, &self.frame)?;
                let row = match rs.rows.len() {
                    0 => vec![Value::Null; targets.len()],
                    1 => rs.rows.into_iter().next().expect("one row"),
                    n => return Err(Error::Runtime(format!("SELECT INTO returned {n} rows"))),
                };
                for (t, v) in targets.iter().zip(row) {
                    self.frame.assign(t, v)?;
                }
            }
            Stmt::Call { name, args } => {
                let proc = self
                    .exec
                    .db()
                    .procedure(name)
                    .cloned()
                    .ok_or_else(|| Error::UnknownProcedure(name.clone()))?;
                let depth = self.depth + 1;
                if depth > MAX_CASCADE_DEPTH {
                    return Err(Error::CascadeDepthExceeded(depth));
                }
                let values = args.iter().map(|a| a.eval(&self.frame)).collect::<Result<Vec<_>>>()?;
                self.exec.call(&proc, values, self.cause, depth, None)?;
            }
            Stmt::External { name, args, into } => {
                let values = args.iter().map(|a| a.eval(&self.frame)).collect::<Result<Vec<_>>>()?;
                let out = self.exec.external(name, values, self.cause)?;
                if let Some(var) = into {
                    let v = out.into_iter().next().unwrap_or(Value::Null);
                    self.frame.assign(var, v)?;
                }
            }
            Stmt::Return(values) => {
                let out = values.iter().map(|v| v.eval(&self.frame)).collect::<Result<Vec<_>>>()?;
                return Ok(Flow::Return(out));
            }
            Stmt::Raise(msg) => return Err(Error::Raised(msg.clone())),
        }
        Ok(Flow::Next)
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Stored procedures and row-level AFTER triggers.
//!
//! Procedures are parsed once, resolved against the catalog at registration,
//! and interpreted inside the caller's transaction (see [`interp`]).

pub(crate) mod interp;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{qualified_name, Expr, RowScope, Scope};
use crate::proxy::EXTERNAL_CALLS;
use crate::store::{check_select, Database, TableRef};
use crate::syntax::{parse_expr, parse_procedure, Param, ProcedureAst, SelectQuery, Stmt, TableName};
use crate::value::{Cells, Value, ValueKind};

/// Deepest trigger/call nesting a transaction may reach.
pub const MAX_CASCADE_DEPTH: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Procedure {
    ast: ProcedureAst,
    source: String,
}

impl Procedure {
    pub fn parse(source: &str) -> Result<Procedure> {
        let ast = parse_procedure(source)?;
        let mut seen = BTreeSet::new();
        for p in &ast.params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Resolution(format!(
                    "parameter {} declared twice in {}",
                    p.name, ast.name
                )));
            }
        }
        Ok(Procedure {
            ast,
            source: source.to_owned(),
        })
    }

    pub fn name(&self) -> &str {
        &self.ast.name
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn params(&self) -> &[Param] {
        &self.ast.params
    }

    pub fn body(&self) -> &[Stmt] {
        &self.ast.body
    }

    pub fn ast(&self) -> &ProcedureAst {
        &self.ast
    }

    /// Coerces call arguments to the declared parameter kinds.
    pub fn bind_args(&self, args: Vec<Value>) -> Result<Vec<Value>> {
        if args.len() != self.params().len() {
            return Err(Error::ArgMismatch(format!(
                "{} takes {} arguments, got {}",
                self.name(),
                self.params().len(),
                args.len()
            )));
        }
        args.into_iter()
            .zip(self.params())
            .map(|(v, p)| {
                let kind_name = v.kind_name();
                v.coerce_to(p.kind).map_err(|_| {
                    Error::ArgMismatch(format!(
                        "{}: parameter {} expects {}, got {}",
                        self.name(),
                        p.name,
                        p.kind,
                        kind_name
                    ))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerEvent {
    AfterInsert,
    AfterUpdate,
    AfterDelete,
}

impl TriggerEvent {
    fn has_old(self) -> bool {
        !matches!(self, TriggerEvent::AfterInsert)
    }

    fn has_new(self) -> bool {
        !matches!(self, TriggerEvent::AfterDelete)
    }
}

/// Trigger definition as submitted. `when` and `args` are expression
/// sources over `OLD.col` / `NEW.col`; `args` are passed to the procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerDef {
    pub name: String,
    pub table: String,
    pub event: TriggerEvent,
    #[serde(default)]
    pub when: Option<String>,
    pub procedure: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Creation sequence number, assigned at registration.
    #[serde(default)]
    pub order_key: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    def: TriggerDef,
    table: TableRef,
    when: Option<Expr>,
    args: Vec<Expr>,
}

impl Trigger {
    pub fn def(&self) -> &TriggerDef {
        &self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn table(&self) -> &TableRef {
        &self.table
    }

    pub fn event(&self) -> TriggerEvent {
        self.def.event
    }

    pub fn when(&self) -> Option<&Expr> {
        self.when.as_ref()
    }

    pub fn args(&self) -> &[Expr] {
        &self.args
    }
}

/// The OLD/NEW images a trigger or trigger-invoked procedure can read.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub table: TableRef,
    pub old: Option<Cells>,
    pub new: Option<Cells>,
}

impl Scope for Event {
    fn lookup(&self, qualifier: Option<&str>, name: &str) -> Result<Value> {
        let image = match qualifier {
            Some(q) if q.eq_ignore_ascii_case("OLD") => &self.old,
            Some(q) if q.eq_ignore_ascii_case("NEW") => &self.new,
            _ => return Err(Error::UnknownColumn(qualified_name(qualifier, name))),
        };
        match image {
            Some(cells) => cells
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnknownColumn(qualified_name(qualifier, name))),
            None => Err(Error::Runtime(format!(
                "{} is not available for this event",
                qualified_name(qualifier, name)
            ))),
        }
    }
}

pub fn is_image_qualifier(q: &str) -> bool {
    q.eq_ignore_ascii_case("OLD") || q.eq_ignore_ascii_case("NEW")
}

/// Tables and procedures a procedure touches, for access checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProcRefs {
    pub reads: BTreeSet<TableRef>,
    pub writes: BTreeSet<TableRef>,
    pub calls: BTreeSet<String>,
}

/// Resolves every table, column, variable, callee and external call of a
/// procedure against `db`.
pub fn resolve_procedure(db: &Database, proc: &Procedure) -> Result<ProcRefs> {
    let mut r = Resolver {
        db,
        proc,
        vars: proc.params().iter().map(|p| (p.name.clone(), p.kind)).collect(),
        records: HashMap::new(),
        refs: ProcRefs::default(),
    };
    r.block(proc.body())?;
    Ok(r.refs)
}

struct Resolver<'a> {
    db: &'a Database,
    proc: &'a Procedure,
    vars: HashMap<String, ValueKind>,
    records: HashMap<String, Vec<String>>,
    refs: ProcRefs,
}

/// Static stand-in for a running frame: known names evaluate to Null.
struct StaticScope<'a> {
    vars: &'a HashMap<String, ValueKind>,
    records: &'a HashMap<String, Vec<String>>,
}

impl Scope for StaticScope<'_> {
    fn lookup(&self, qualifier: Option<&str>, name: &str) -> Result<Value> {
        let known = match qualifier {
            None => self.vars.contains_key(name),
            Some(q) if is_image_qualifier(q) => true,
            Some(q) => self.records.get(q).is_some_and(|cols| cols.iter().any(|c| c == name)),
        };
        if known {
            Ok(Value::Null)
        } else {
            Err(Error::UnknownColumn(qualified_name(qualifier, name)))
        }
    }
}

fn resolution(proc: &str, e: Error) -> Error {
    match e {
        Error::UnknownColumn(c) => Error::Resolution(format!("{proc}: unknown column or variable {c}")),
        Error::UnknownTable(t) => Error::Resolution(format!("{proc}: unknown table {t}")),
        Error::MalformedQuery(m) => Error::Resolution(format!("{proc}: {m}")),
        other => other,
    }
}

impl Resolver<'_> {
    fn fail(&self, msg: String) -> Error {
        Error::Resolution(format!("{}: {msg}", self.proc.name()))
    }

    fn scope(&self) -> StaticScope<'_> {
        StaticScope {
            vars: &self.vars,
            records: &self.records,
        }
    }

    fn expr(&self, e: &Expr) -> Result<()> {
        if e.contains_aggregate() {
            return Err(self.fail(format!("aggregate outside a query: {e}")));
        }
        let scope = self.scope();
        let mut result = Ok(());
        e.for_each_column(&mut |q, n| {
            if result.is_ok() {
                result = scope.lookup(q, n).map(|_| ());
            }
        });
        result.map_err(|err| resolution(self.proc.name(), err))
    }

    fn var(&self, name: &str) -> Result<()> {
        if self.vars.contains_key(name) {
            Ok(())
        } else {
            Err(self.fail(format!("undeclared variable {name}")))
        }
    }

    fn table(&self, name: &TableName, writing: bool) -> Result<TableRef> {
        let r = self.db.resolve(name).map_err(|e| resolution(self.proc.name(), e))?;
        if writing && self.db.table(&r)?.def().flags.cdc_exempt {
            return Err(self.fail(format!("{r} is read-only")));
        }
        Ok(r)
    }

    fn select(&mut self, q: &SelectQuery) -> Result<Vec<String>> {
        let from = self.table(&q.from, false)?;
        self.refs.reads.insert(from);
        if let Some(j) = &q.join {
            let r = self.table(&j.table, false)?;
            self.refs.reads.insert(r);
        }
        check_select(self.db, q, &self.scope()).map_err(|e| resolution(self.proc.name(), e))
    }

    /// Checks a predicate or assignment evaluated against rows of `table`.
    fn row_expr(&self, table: &TableRef, e: &Expr) -> Result<()> {
        if e.contains_aggregate() {
            return Err(self.fail(format!("aggregate in row expression: {e}")));
        }
        let t = self.db.table(table)?;
        let nulls: Cells = t.def().columns.iter().map(|c| (c.name.clone(), Value::Null)).collect();
        let quals = [table.name.as_str()];
        let statics = self.scope();
        let scope = RowScope {
            qualifiers: &quals,
            cells: &nulls,
            outer: &statics,
        };
        let mut result = Ok(());
        e.for_each_column(&mut |q, n| {
            if result.is_ok() {
                result = scope.lookup(q, n).map(|_| ());
            }
        });
        result.map_err(|err| resolution(self.proc.name(), err))
    }

    fn columns_exist(&self, table: &TableRef, cols: impl Iterator<Item = impl AsRef<str>>) -> Result<()> {
        let def = self.db.table(table)?.def();
        for c in cols {
            if def.column(c.as_ref()).is_none() {
                return Err(self.fail(format!("unknown column {}.{}", table, c.as_ref())));
            }
        }
        Ok(())
    }

    fn block(&mut self, body: &[Stmt]) -> Result<()> {
        body.iter().try_for_each(|s| self.stmt(s))
    }

    fn stmt(&mut self, s: &Stmt) -> Result<()> {
        match s {
            Stmt::Declare { name, kind } => {
                if let Some(existing) = self.vars.get(name) {
                    if existing != kind {
                        return Err(self.fail(format!("{name} redeclared with another kind")));
                    }
                }
                self.vars.insert(name.clone(), *kind);
                Ok(())
            }
            Stmt::Set { name, value } => {
                self.var(name)?;
                self.expr(value)
            }
            Stmt::If { branches, otherwise } => {
                for (cond, body) in branches {
                    self.expr(cond)?;
                    self.block(body)?;
                }
                match otherwise {
                    Some(body) => self.block(body),
                    None => Ok(()),
                }
            }
            Stmt::For { var, query, body } => {
                let cols = self.select(query)?;
                let previous = self.records.insert(var.clone(), cols);
                let result = self.block(body);
                match previous {
                    Some(p) => self.records.insert(var.clone(), p),
                    None => self.records.remove(var),
                };
                result
            }
            Stmt::Insert(ins) => {
                let t = self.table(&ins.table, true)?;
                if ins.columns.len() != ins.values.len() {
                    return Err(self.fail(format!(
                        "INSERT INTO {} lists {} columns but {} values",
                        ins.table,
                        ins.columns.len(),
                        ins.values.len()
                    )));
                }
                self.columns_exist(&t, ins.columns.iter())?;
                ins.values.iter().try_for_each(|v| self.expr(v))?;
                self.refs.writes.insert(t);
                Ok(())
            }
            Stmt::Update(up) => {
                let t = self.table(&up.table, true)?;
                self.columns_exist(&t, up.assignments.iter().map(|(c, _)| c))?;
                for (_, e) in &up.assignments {
                    self.row_expr(&t, e)?;
                }
                if let Some(f) = &up.filter {
                    self.row_expr(&t, f)?;
                }
                self.refs.writes.insert(t);
                Ok(())
            }
            Stmt::Delete(del) => {
                let t = self.table(&del.table, true)?;
                if let Some(f) = &del.filter {
                    self.row_expr(&t, f)?;
                }
                self.refs.writes.insert(t);
                Ok(())
            }
            Stmt::SelectInto { query, targets } => {
                let cols = self.select(query)?;
                if cols.len() != targets.len() {
                    return Err(self.fail(format!(
                        "SELECT produces {} columns INTO {} variables",
                        cols.len(),
                        targets.len()
                    )));
                }
                targets.iter().try_for_each(|t| self.var(t))
            }
            Stmt::Call { name, args } => {
                let arity = if name == self.proc.name() {
                    self.proc.params().len()
                } else {
                    self.db
                        .procedure(name)
                        .ok_or_else(|| self.fail(format!("unknown procedure {name}")))?
                        .params()
                        .len()
                };
                if arity != args.len() {
                    return Err(Error::ArgMismatch(format!(
                        "{}: CALL {name} passes {} arguments, expected {arity}",
                        self.proc.name(),
                        args.len()
                    )));
                }
                args.iter().try_for_each(|a| self.expr(a))?;
                self.refs.calls.insert(name.clone());
                Ok(())
            }
            Stmt::External { name, args, into } => {
                if !EXTERNAL_CALLS.contains(&name.as_str()) {
                    return Err(Error::UnknownExternal(name.clone()));
                }
                args.iter().try_for_each(|a| self.expr(a))?;
                match into {
                    Some(v) => self.var(v),
                    None => Ok(()),
                }
            }
            Stmt::Return(values) => values.iter().try_for_each(|v| self.expr(v)),
            Stmt::Raise(_) => Ok(()),
        }
    }
}

/// Validates a trigger definition against the catalog.
pub fn prepare_trigger(db: &Database, mut def: TriggerDef) -> Result<Trigger> {
    crate::store::validate_identifier(&def.name)?;
    if db.triggers().any(|t| t.name() == def.name) {
        return Err(Error::DuplicateTrigger(def.name));
    }
    let table = db.resolve(&TableName::parse_ref(&def.table))?;
    let tdef = db.table(&table)?.def();
    if tdef.flags.cdc_exempt {
        return Err(Error::UnknownTable(format!("{table} does not accept triggers")));
    }
    let proc = db
        .procedure(&def.procedure)
        .ok_or_else(|| Error::UnknownProcedure(def.procedure.clone()))?;
    if proc.params().len() != def.args.len() {
        return Err(Error::ArgMismatch(format!(
            "trigger {} passes {} arguments to {}, which takes {}",
            def.name,
            def.args.len(),
            def.procedure,
            proc.params().len()
        )));
    }
    let check = |src: &str| -> Result<Expr> {
        let e = parse_expr(src)?;
        if e.contains_aggregate() {
            return Err(Error::Resolution(format!("aggregate in trigger expression {src}")));
        }
        let mut result = Ok(());
        e.for_each_column(&mut |q, n| {
            if result.is_err() {
                return;
            }
            let ok = match q {
                Some(q) if q.eq_ignore_ascii_case("OLD") => def.event.has_old(),
                Some(q) if q.eq_ignore_ascii_case("NEW") => def.event.has_new(),
                _ => false,
            } && tdef.column(n).is_some();
            if !ok {
                result = Err(Error::Resolution(format!(
                    "trigger {} cannot reference {} on {:?} of {}",
                    def.name,
                    qualified_name(q, n),
                    def.event,
                    table
                )));
            }
        });
        result.map(|_| e)
    };
    let when = def.when.as_deref().map(check).transpose()?;
    let args = def.args.iter().map(|a| check(a)).collect::<Result<Vec<_>>>()?;
    def.table = table.to_string();
    def.order_key = db.triggers().map(|t| t.def.order_key + 1).max().unwrap_or(1);
    Ok(Trigger { def, table, when, args })
}

impl fmt::Display for TriggerDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} ON {}", self.name, self.event, self.table)?;
        if let Some(w) = &self.when {
            write!(f, " WHEN {w}")?;
        }
        write!(f, " CALL {}({})", self.procedure, self.args.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ColumnDef, TableDef};

    fn db() -> Database {
        let mut db = Database::new();
        db.create_schema("net").unwrap();
        db.create_table(TableDef::new(
            "net",
            "Nodes",
            vec![
                ColumnDef::new("nodeId", ValueKind::Int).primary_key(),
                ColumnDef::new("podId", ValueKind::Int),
                ColumnDef::new("load", ValueKind::Float),
            ],
        ))
        .unwrap();
        db
    }

    fn register(db: &mut Database, src: &str) -> Result<ProcRefs> {
        let p = Procedure::parse(src)?;
        let refs = resolve_procedure(db, &p)?;
        db.put_procedure(std::sync::Arc::new(p));
        Ok(refs)
    }

    #[test]
    fn noop_has_empty_body() {
        let p = Procedure::parse("PROC noop() BEGIN END").unwrap();
        assert_eq!(p.name(), "noop");
        assert!(p.body().is_empty());
        assert_eq!(resolve_procedure(&db(), &p).unwrap(), ProcRefs::default());
    }

    #[test]
    fn resolution_collects_references() {
        let mut db = db();
        let refs = register(
            &mut db,
            "PROC bump(p: INT) BEGIN
                DECLARE total: FLOAT;
                SELECT SUM(load) INTO total FROM Nodes WHERE podId = p;
                FOR r IN (SELECT nodeId FROM Nodes WHERE podId = p) LOOP
                    UPDATE net.Nodes SET load = load + 1 WHERE nodeId = r.nodeId;
                END LOOP;
                IF total > 10 THEN CALL bump(p); END IF;
            END",
        )
        .unwrap();
        assert!(refs.reads.contains(&TableRef::new("net", "Nodes")));
        assert!(refs.writes.contains(&TableRef::new("net", "Nodes")));
        assert!(refs.calls.contains("bump"));
    }

    #[test]
    fn resolution_failures() {
        let mut db = db();
        for src in [
            "PROC a() BEGIN DELETE FROM Missing; END",
            "PROC a() BEGIN UPDATE Nodes SET bogus = 1; END",
            "PROC a() BEGIN SET x = 1; END",
            "PROC a(p: INT) BEGIN DELETE FROM Nodes WHERE nothere = p; END",
            "PROC a() BEGIN FOR r IN (SELECT nodeId FROM Nodes) LOOP SET r.podId = 1; END LOOP; END",
            "PROC a() BEGIN CALL nobody(); END",
        ] {
            let err = register(&mut db, src).unwrap_err();
            assert!(matches!(err, Error::Resolution(_) | Error::Parse(_)), "{src}: {err:?}");
        }
        assert!(matches!(
            register(&mut db, "PROC a() BEGIN EXTERNAL launch_missiles(); END"),
            Err(Error::UnknownExternal(_))
        ));
        assert!(matches!(
            Procedure::parse("PROC a(x: INT, x: INT) BEGIN END"),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn trigger_validation() {
        let mut db = db();
        register(&mut db, "PROC touch(p: INT) BEGIN END").unwrap();
        let def = |name: &str, when: Option<&str>, args: &[&str]| TriggerDef {
            name: name.into(),
            table: "Nodes".into(),
            event: TriggerEvent::AfterInsert,
            when: when.map(str::to_owned),
            procedure: "touch".into(),
            args: args.iter().map(|a| (*a).to_owned()).collect(),
            order_key: 0,
        };
        let t = prepare_trigger(&db, def("t1", Some("NEW.load > 1"), &["NEW.podId"])).unwrap();
        assert_eq!(t.table(), &TableRef::new("net", "Nodes"));
        assert_eq!(t.def().order_key, 1);
        db.push_trigger(std::sync::Arc::new(t));
        assert!(matches!(
            prepare_trigger(&db, def("t1", None, &["NEW.podId"])),
            Err(Error::DuplicateTrigger(_))
        ));
        assert!(matches!(
            prepare_trigger(&db, def("t2", Some("NEW.nope > 1"), &["NEW.podId"])),
            Err(Error::Resolution(_))
        ));
        assert!(matches!(
            prepare_trigger(&db, def("t2", Some("OLD.load > 1"), &["NEW.podId"])),
            Err(Error::Resolution(_))
        ));
        assert!(matches!(
            prepare_trigger(&db, def("t2", None, &[])),
            Err(Error::ArgMismatch(_))
        ));
        let mut missing = def("t2", None, &["NEW.podId"]);
        missing.procedure = "ghost".into();
        assert!(matches!(prepare_trigger(&db, missing), Err(Error::UnknownProcedure(_))));
        let t2 = prepare_trigger(&db, def("t2", None, &["NEW.podId"])).unwrap();
        assert_eq!(t2.def().order_key, 2);
    }

    #[test]
    fn bind_args_coerces_and_counts() {
        let p = Procedure::parse("PROC f(a: FLOAT, b: TEXT) BEGIN END").unwrap();
        assert_eq!(
            p.bind_args(vec![Value::Int(1), Value::from("x")]).unwrap(),
            vec![Value::Float(1.0), Value::from("x")]
        );
        assert!(matches!(p.bind_args(vec![]), Err(Error::ArgMismatch(_))));
        assert!(matches!(
            p.bind_args(vec![Value::from("x"), Value::from("y")]),
            Err(Error::ArgMismatch(_))
        ));
    }
}

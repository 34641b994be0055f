// SPDX-License-Identifier: Apache-2.0

//! Embedded relational substrate: schemas, typed tables, constraints.
//!
//! A [`Database`] is a cheap-to-clone value. Every clone shares structure
//! with its source, so a transaction stages its writes on a private clone of
//! the committed database and publishes it wholesale on commit.

mod query;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::{Expr, RowScope};
use crate::policy::{Procedure, Trigger};
use crate::syntax::{lexer::is_reserved, parse_expr, TableName};
use crate::value::{Cells, Value, ValueKind};

pub use query::{check_row_expr, check_select, execute_select, matching_rows, ResultSet};

pub type RowId = u64;

/// Kind of simulated device mirrored by a device-backed table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceKind {
    Node,
    AutoScaler,
    LoadBalancer,
}

pub fn validate_identifier(name: &str) -> Result<()> {
    let mut chars = name.chars();
    let ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_reserved(name);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidIdentifier(name.to_owned()))
    }
}

/// Fully qualified table reference, rendered `schema.name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TableRef {
    pub schema: String,
    pub name: String,
}

impl TableRef {
    pub fn new(schema: &str, name: &str) -> Self {
        TableRef {
            schema: schema.to_owned(),
            name: name.to_owned(),
        }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.schema, self.name)
    }
}

impl FromStr for TableRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('.') {
            Some((schema, name)) => Ok(TableRef::new(schema, name)),
            None => Err(Error::Malformed(format!("table reference {s:?} must be schema.name"))),
        }
    }
}

impl Serialize for TableRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TableRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A check constraint, kept as source text alongside its parsed form.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckExpr {
    pub source: String,
    pub expr: Expr,
}

impl CheckExpr {
    pub fn parse(source: &str) -> Result<Self> {
        Ok(CheckExpr {
            source: source.to_owned(),
            expr: parse_expr(source)?,
        })
    }
}

impl Serialize for CheckExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for CheckExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CheckExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "expr")]
pub enum Constraint {
    NotNull,
    PrimaryKey,
    Unique,
    Check(CheckExpr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "value_kind")]
    pub kind: ValueKind,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

impl ColumnDef {
    pub fn new(name: &str, kind: ValueKind) -> Self {
        ColumnDef {
            name: name.to_owned(),
            kind,
            constraints: Vec::new(),
        }
    }

    pub fn primary_key(mut self) -> Self {
        self.constraints.push(Constraint::PrimaryKey);
        self
    }

    pub fn not_null(mut self) -> Self {
        self.constraints.push(Constraint::NotNull);
        self
    }

    pub fn unique(mut self) -> Self {
        self.constraints.push(Constraint::Unique);
        self
    }

    /// Adds a check constraint. Panics on malformed source; use
    /// [`CheckExpr::parse`] for untrusted input.
    pub fn check(mut self, source: &str) -> Self {
        let check = CheckExpr::parse(source).expect("valid check expression");
        self.constraints.push(Constraint::Check(check));
        self
    }

    pub fn is_primary_key(&self) -> bool {
        self.constraints.contains(&Constraint::PrimaryKey)
    }

    pub fn is_not_null(&self) -> bool {
        self.is_primary_key() || self.constraints.contains(&Constraint::NotNull)
    }

    pub fn is_unique(&self) -> bool {
        self.is_primary_key() || self.constraints.contains(&Constraint::Unique)
    }

    pub fn checks(&self) -> impl Iterator<Item = &CheckExpr> {
        self.constraints.iter().filter_map(|c| match c {
            Constraint::Check(e) => Some(e),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableFlags {
    #[serde(default)]
    pub cdc_exempt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub schema: String,
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub device_backed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_kind: Option<DeviceKind>,
    #[serde(default)]
    pub flags: TableFlags,
}

impl TableDef {
    pub fn new(schema: &str, name: &str, columns: Vec<ColumnDef>) -> Self {
        TableDef {
            schema: schema.to_owned(),
            name: name.to_owned(),
            columns,
            device_backed: false,
            device_kind: None,
            flags: TableFlags::default(),
        }
    }

    pub fn device(mut self, kind: DeviceKind) -> Self {
        self.device_backed = true;
        self.device_kind = Some(kind);
        self
    }

    pub fn table_ref(&self) -> TableRef {
        TableRef::new(&self.schema, &self.name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn primary_key(&self) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.is_primary_key())
    }

    pub fn validate(&self) -> Result<()> {
        validate_identifier(&self.schema)?;
        validate_identifier(&self.name)?;
        if self.columns.is_empty() {
            return Err(Error::InvalidColumn(format!("{} has no columns", self.name)));
        }
        for (i, col) in self.columns.iter().enumerate() {
            validate_identifier(&col.name)
                .map_err(|_| Error::InvalidColumn(format!("invalid column name {:?}", col.name)))?;
            if self.columns[..i].iter().any(|c| c.name == col.name) {
                return Err(Error::InvalidColumn(format!("duplicate column {}", col.name)));
            }
            if col.constraints.iter().filter(|c| **c == Constraint::PrimaryKey).count() > 1 {
                return Err(Error::InvalidColumn(format!("{} declares PrimaryKey twice", col.name)));
            }
            for check in col.checks() {
                let mut bad = None;
                check.expr.for_each_column(&mut |q, name| {
                    let own = q.is_none_or(|q| q == self.name) && self.column(name).is_some();
                    if !own && bad.is_none() {
                        bad = Some(crate::expr::qualified_name(q, name));
                    }
                });
                if let Some(bad) = bad {
                    return Err(Error::InvalidColumn(format!(
                        "check on {} references {bad}, which is not a column of {}",
                        col.name, self.name
                    )));
                }
                if check.expr.contains_aggregate() {
                    return Err(Error::InvalidColumn(format!("check on {} uses an aggregate", col.name)));
                }
            }
        }
        if self.columns.iter().filter(|c| c.is_primary_key()).count() > 1 {
            return Err(Error::InvalidColumn(format!(
                "{} declares more than one primary key column",
                self.name
            )));
        }
        if self.device_backed && (self.device_kind.is_none() || self.primary_key().is_none()) {
            return Err(Error::InvalidColumn(format!(
                "device-backed table {} needs a device_kind and a primary key",
                self.name
            )));
        }
        Ok(())
    }
}

/// Hashable image of a non-null value, used by unique indexes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum IndexKey {
    Int(i64),
    Float(u64),
    Text(String),
    Bool(bool),
}

impl IndexKey {
    fn of(v: &Value) -> Option<IndexKey> {
        match v {
            Value::Null => None,
            Value::Int(i) | Value::Timestamp(i) => Some(IndexKey::Int(*i)),
            Value::Float(f) => Some(IndexKey::Float(if *f == 0.0 { 0 } else { f.to_bits() })),
            Value::Text(s) => Some(IndexKey::Text(s.clone())),
            Value::Bool(b) => Some(IndexKey::Bool(*b)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    def: Arc<TableDef>,
    rows: im::OrdMap<RowId, Arc<Cells>>,
    next_row_id: RowId,
    unique: im::HashMap<String, im::HashMap<IndexKey, RowId>>,
}

impl Table {
    pub fn new(def: TableDef) -> Self {
        let unique = def
            .columns
            .iter()
            .filter(|c| c.is_unique())
            .map(|c| (c.name.clone(), im::HashMap::new()))
            .collect();
        Table {
            def: Arc::new(def),
            rows: im::OrdMap::new(),
            next_row_id: 1,
            unique,
        }
    }

    pub fn def(&self) -> &TableDef {
        &self.def
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn next_row_id(&self) -> RowId {
        self.next_row_id
    }

    pub fn get(&self, id: RowId) -> Option<&Cells> {
        self.rows.get(&id).map(|c| &**c)
    }

    /// Rows in row-id order.
    pub fn rows(&self) -> impl Iterator<Item = (RowId, &Cells)> {
        self.rows.iter().map(|(id, c)| (*id, &**c))
    }

    /// Row holding `value` in a unique column, if that column is indexed.
    pub fn lookup_unique(&self, column: &str, value: &Value) -> Option<Option<RowId>> {
        let index = self.unique.get(column)?;
        Some(IndexKey::of(value).and_then(|k| index.get(&k).copied()))
    }

    /// Type-checks and completes a full row: unknown columns are rejected,
    /// values are coerced to their column kind, absent columns become Null.
    pub fn normalize(&self, input: Cells) -> Result<Cells> {
        for name in input.keys() {
            if self.def.column(name).is_none() {
                return Err(Error::UnknownColumn(format!("{}.{name}", self.def.name)));
            }
        }
        let mut input = input;
        let mut out = Cells::new();
        for col in &self.def.columns {
            let v = input.remove(&col.name).unwrap_or(Value::Null);
            let v = v.coerce_to(col.kind).map_err(|e| match e {
                Error::TypeMismatch(m) => Error::TypeMismatch(format!("{}: {m}", col.name)),
                e => e,
            })?;
            out.insert(col.name.clone(), v);
        }
        Ok(out)
    }

    /// Validates NotNull, Check and Unique constraints for a candidate row.
    /// `replacing` is the row being updated, which may keep its own keys.
    pub fn check_row(&self, cells: &Cells, replacing: Option<RowId>) -> Result<()> {
        let table = self.def.name.as_str();
        let quals = [table];
        for col in &self.def.columns {
            let v = cells.get(&col.name).unwrap_or(&Value::Null);
            if v.is_null() && col.is_not_null() {
                return Err(Error::ConstraintViolation(format!(
                    "{table}.{} must not be null",
                    col.name
                )));
            }
            for check in col.checks() {
                let scope = RowScope {
                    qualifiers: &quals,
                    cells,
                    outer: &crate::expr::EmptyScope,
                };
                let ok = match check.expr.eval(&scope)? {
                    Value::Bool(b) => b,
                    Value::Null => true,
                    other => {
                        return Err(Error::TypeMismatch(format!(
                            "check {} produced {}",
                            check.source,
                            other.kind_name()
                        )))
                    }
                };
                if !ok {
                    return Err(Error::ConstraintViolation(format!(
                        "{table}.{}: check ({}) failed for {}",
                        col.name, check.source, v
                    )));
                }
            }
            if let Some(Some(holder)) = self.lookup_unique(&col.name, v) {
                if Some(holder) != replacing {
                    return Err(Error::ConstraintViolation(format!(
                        "{table}.{} must be unique; {} already present",
                        col.name, v
                    )));
                }
            }
        }
        Ok(())
    }

    fn index(&mut self, id: RowId, cells: &Cells) {
        for (col, index) in self.unique.iter_mut() {
            if let Some(k) = cells.get(col).and_then(IndexKey::of) {
                index.insert(k, id);
            }
        }
    }

    fn unindex(&mut self, cells: &Cells) {
        for (col, index) in self.unique.iter_mut() {
            if let Some(k) = cells.get(col).and_then(IndexKey::of) {
                index.remove(&k);
            }
        }
    }

    /// Inserts a normalized, constraint-checked row under a fresh row id.
    pub fn insert(&mut self, cells: Cells) -> Result<RowId> {
        let cells = self.normalize(cells)?;
        self.check_row(&cells, None)?;
        let id = self.next_row_id;
        self.put(id, cells);
        Ok(id)
    }

    /// Stores a row under a caller-chosen id without constraint checks.
    /// Used by journal replay and log materialization, whose rows were
    /// validated when first written.
    pub fn put(&mut self, id: RowId, cells: Cells) {
        if let Some(old) = self.rows.get(&id).cloned() {
            self.unindex(&old);
        }
        self.index(id, &cells);
        self.rows.insert(id, Arc::new(cells));
        self.next_row_id = self.next_row_id.max(id + 1);
    }

    /// Replaces a row's cells, returning the previous ones.
    pub fn update(&mut self, id: RowId, changes: Cells) -> Result<(Cells, Cells)> {
        let old = self
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Internal(format!("row {id} vanished from {}", self.def.name)))?;
        let mut merged = old.clone();
        merged.extend(changes);
        let new = self.normalize(merged)?;
        self.check_row(&new, Some(id))?;
        self.unindex(&old);
        self.index(id, &new);
        self.rows.insert(id, Arc::new(new.clone()));
        Ok((old, new))
    }

    pub fn remove(&mut self, id: RowId) -> Option<Cells> {
        let old = self.rows.remove(&id)?;
        self.unindex(&old);
        Some(Arc::unwrap_or_clone(old))
    }
}

/// Catalog plus table contents. Cloning is O(1).
#[derive(Debug, Clone, Default)]
pub struct Database {
    schemas: im::OrdSet<String>,
    tables: im::OrdMap<TableRef, Table>,
    procedures: im::OrdMap<String, Arc<Procedure>>,
    triggers: im::Vector<Arc<Trigger>>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_schema(&mut self, name: &str) -> Result<()> {
        validate_identifier(name)?;
        if self.schemas.contains(name) {
            return Err(Error::DuplicateSchema(name.to_owned()));
        }
        self.schemas.insert(name.to_owned());
        Ok(())
    }

    pub fn create_table(&mut self, def: TableDef) -> Result<TableRef> {
        def.validate()?;
        if !self.schemas.contains(&def.schema) {
            return Err(Error::UnknownSchema(def.schema.clone()));
        }
        let r = def.table_ref();
        if self.tables.contains_key(&r) {
            return Err(Error::DuplicateTable(r.to_string()));
        }
        self.tables.insert(r.clone(), Table::new(def));
        Ok(r)
    }

    pub fn has_schema(&self, name: &str) -> bool {
        self.schemas.contains(name)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &String> {
        self.schemas.iter()
    }

    pub fn tables(&self) -> impl Iterator<Item = (&TableRef, &Table)> {
        self.tables.iter()
    }

    pub fn table(&self, r: &TableRef) -> Result<&Table> {
        self.tables.get(r).ok_or_else(|| Error::UnknownTable(r.to_string()))
    }

    pub fn table_mut(&mut self, r: &TableRef) -> Result<&mut Table> {
        self.tables.get_mut(r).ok_or_else(|| Error::UnknownTable(r.to_string()))
    }

    /// Resolves `schema.name`, or a bare `name` that is unique across schemas.
    pub fn resolve(&self, name: &TableName) -> Result<TableRef> {
        if let Some(schema) = &name.schema {
            let r = TableRef::new(schema, &name.name);
            return if self.tables.contains_key(&r) {
                Ok(r)
            } else {
                Err(Error::UnknownTable(r.to_string()))
            };
        }
        let mut found = self.tables.keys().filter(|r| r.name == name.name);
        match (found.next(), found.next()) {
            (Some(r), None) => Ok(r.clone()),
            (None, _) => Err(Error::UnknownTable(name.name.clone())),
            (Some(a), Some(b)) => Err(Error::UnknownTable(format!(
                "{} is ambiguous ({a}, {b}, ...)",
                name.name
            ))),
        }
    }

    pub fn procedure(&self, name: &str) -> Option<&Arc<Procedure>> {
        self.procedures.get(name)
    }

    pub fn procedures(&self) -> impl Iterator<Item = &Arc<Procedure>> {
        self.procedures.values()
    }

    pub(crate) fn put_procedure(&mut self, proc: Arc<Procedure>) {
        self.procedures.insert(proc.name().to_owned(), proc);
    }

    /// Triggers in registration order.
    pub fn triggers(&self) -> impl Iterator<Item = &Arc<Trigger>> {
        self.triggers.iter()
    }

    pub(crate) fn push_trigger(&mut self, trigger: Arc<Trigger>) {
        self.triggers.push_back(trigger);
    }

    /// Deterministic JSON image of the catalog and every row, used for
    /// equality checks across replays and runs.
    pub fn dump(&self) -> serde_json::Value {
        let tables: BTreeMap<String, serde_json::Value> = self
            .tables
            .iter()
            .map(|(r, t)| {
                let rows: Vec<serde_json::Value> = t.rows().map(|(id, cells)| serde_json::json!([id, cells])).collect();
                (
                    r.to_string(),
                    serde_json::json!({
                        "def": t.def(),
                        "next_row_id": t.next_row_id,
                        "rows": rows,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "schemas": self.schemas.iter().collect::<Vec<_>>(),
            "tables": tables,
            "procedures": self.procedures.values().map(|p| p.source()).collect::<Vec<_>>(),
            "triggers": self.triggers.iter().map(|t| t.def()).collect::<Vec<_>>(),
        })
    }
}

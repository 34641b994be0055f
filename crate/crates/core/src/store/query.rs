// SPDX-License-Identifier: Apache-2.0

//! SELECT evaluation: filter, inner equi-join, grouping and aggregates.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{qualified_name, AggFunc, BinaryOp, EmptyScope, Expr, Scope};
use crate::syntax::{Projection, SelectQuery};
use crate::value::{Cells, Value};

use super::{Database, RowId, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultSet {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "columns": self.columns,
            "rows": self
                .rows
                .iter()
                .map(|r| r.iter().map(Value::to_json).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        })
    }

    /// Value at `row` of the column called `name`.
    pub fn get(&self, row: usize, name: &str) -> Option<&Value> {
        let col = self.columns.iter().position(|c| c == name)?;
        self.rows.get(row)?.get(col)
    }

    pub fn column_values(&self, name: &str) -> Vec<Value> {
        match self.columns.iter().position(|c| c == name) {
            Some(col) => self.rows.iter().map(|r| r[col].clone()).collect(),
            None => Vec::new(),
        }
    }
}

struct Source<'a> {
    qualifiers: Vec<&'a str>,
    table: &'a Table,
}

impl Source<'_> {
    fn owns(&self, qualifier: Option<&str>, name: &str) -> bool {
        qualifier.is_none_or(|q| self.qualifiers.contains(&q)) && self.table.def().column(name).is_some()
    }
}

/// Scope over a single or joined row.
struct JoinScope<'a> {
    sources: &'a [Source<'a>],
    cells: [Option<&'a Cells>; 2],
    outer: &'a dyn Scope,
}

impl Scope for JoinScope<'_> {
    fn lookup(&self, qualifier: Option<&str>, name: &str) -> Result<Value> {
        match resolve(self.sources, qualifier, name)? {
            Some(i) => Ok(self.cells[i].and_then(|c| c.get(name)).cloned().unwrap_or(Value::Null)),
            None => self.outer.lookup(qualifier, name),
        }
    }
}

/// Finds which source a column reference binds to; `None` defers to the
/// enclosing scope.
fn resolve(sources: &[Source<'_>], qualifier: Option<&str>, name: &str) -> Result<Option<usize>> {
    if let Some(q) = qualifier {
        for (i, s) in sources.iter().enumerate() {
            if s.qualifiers.contains(&q) {
                return if s.table.def().column(name).is_some() {
                    Ok(Some(i))
                } else {
                    Err(Error::UnknownColumn(qualified_name(qualifier, name)))
                };
            }
        }
        return Ok(None);
    }
    let mut owners = sources
        .iter()
        .enumerate()
        .filter(|(_, s)| s.owns(None, name))
        .map(|(i, _)| i);
    match (owners.next(), owners.next()) {
        (Some(i), None) => Ok(Some(i)),
        (None, _) => Ok(None),
        (Some(_), Some(_)) => Err(Error::MalformedQuery(format!("column {name} is ambiguous; qualify it"))),
    }
}

/// Statically checks that every column reference binds to a source column or
/// to the enclosing scope, so errors surface even on empty tables.
fn validate_refs(expr: &Expr, sources: &[Source<'_>], outer: &dyn Scope) -> Result<()> {
    let mut result = Ok(());
    expr.for_each_column(&mut |q, name| {
        if result.is_err() {
            return;
        }
        result = match resolve(sources, q, name) {
            Ok(Some(_)) => Ok(()),
            Ok(None) => outer.lookup(q, name).map(|_| ()),
            Err(e) => Err(e),
        };
    });
    result
}

fn conjuncts(expr: &Expr) -> Vec<&Expr> {
    match expr {
        Expr::Binary {
            op: BinaryOp::And,
            left,
            right,
        } => {
            let mut v = conjuncts(left);
            v.extend(conjuncts(right));
            v
        }
        other => vec![other],
    }
}

/// Row ids a filter could match, narrowed through a unique index when the
/// filter pins a unique column to a row-independent value.
fn candidates(source: &Source<'_>, filter: Option<&Expr>, outer: &dyn Scope) -> Result<Vec<RowId>> {
    if let Some(filter) = filter {
        for c in conjuncts(filter) {
            let Expr::Binary {
                op: BinaryOp::Eq,
                left,
                right,
            } = c
            else {
                continue;
            };
            for (col, other) in [(left, right), (right, left)] {
                let Expr::Column { qualifier, name } = &**col else {
                    continue;
                };
                if !source.owns(qualifier.as_deref(), name) {
                    continue;
                }
                let mut independent = true;
                other.for_each_column(&mut |q, n| {
                    if source.owns(q, n) {
                        independent = false;
                    }
                });
                if !independent || other.contains_aggregate() {
                    continue;
                }
                let key = other.eval(outer)?;
                if let Some(hit) = source.table.lookup_unique(name, &key) {
                    return Ok(hit.into_iter().collect());
                }
            }
        }
    }
    Ok(source.table.rows().map(|(id, _)| id).collect())
}

/// Statically checks an expression evaluated against rows of `table`.
pub fn check_row_expr(table: &Table, expr: &Expr, outer: &dyn Scope) -> Result<()> {
    let sources = [Source {
        qualifiers: vec![table.def().name.as_str()],
        table,
    }];
    if expr.contains_aggregate() {
        return Err(Error::MalformedQuery(format!("aggregate in row expression {expr}")));
    }
    validate_refs(expr, &sources, outer)
}

/// Ids of rows in `table` satisfying `filter`, in row-id order.
pub fn matching_rows(table: &Table, filter: Option<&Expr>, outer: &dyn Scope) -> Result<Vec<RowId>> {
    let sources = [Source {
        qualifiers: vec![table.def().name.as_str()],
        table,
    }];
    if let Some(f) = filter {
        validate_refs(f, &sources, outer)?;
        if f.contains_aggregate() {
            return Err(Error::MalformedQuery("aggregate in WHERE".into()));
        }
    }
    let mut out = Vec::new();
    for id in candidates(&sources[0], filter, outer)? {
        let Some(cells) = table.get(id) else { continue };
        let keep = match filter {
            None => true,
            Some(f) => f.holds(&JoinScope {
                sources: &sources,
                cells: [Some(cells), None],
                outer,
            })?,
        };
        if keep {
            out.push(id);
        }
    }
    Ok(out)
}

/// Total order over value tuples, used for group keys.
#[derive(Debug, Clone)]
struct GroupKey(Vec<Value>);

impl PartialEq for GroupKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for GroupKey {}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

type JoinedRow<'a> = [Option<&'a Cells>; 2];

struct Plan<'a> {
    sources: Vec<Source<'a>>,
    join_cols: Option<(String, String)>,
    grouped_cols: Vec<(usize, String)>,
    aggregate_mode: bool,
    columns: Vec<String>,
}

/// Validates a query without reading any rows and returns its output
/// column names.
pub fn check_select(db: &Database, q: &SelectQuery, outer: &dyn Scope) -> Result<Vec<String>> {
    plan(db, q, outer).map(|p| p.columns)
}

pub fn execute_select(db: &Database, q: &SelectQuery, outer: &dyn Scope) -> Result<ResultSet> {
    let Plan {
        sources,
        join_cols,
        grouped_cols,
        aggregate_mode,
        columns,
    } = plan(db, q, outer)?;
    // Row production.
    let mut rows: Vec<JoinedRow<'_>> = Vec::new();
    let left_candidates = if q.join.is_none() {
        candidates(&sources[0], q.filter.as_ref(), outer)?
    } else {
        sources[0].table.rows().map(|(id, _)| id).collect()
    };
    for id in left_candidates {
        let Some(left) = sources[0].table.get(id) else {
            continue;
        };
        match &join_cols {
            None => rows.push([Some(left), None]),
            Some((lcol, rcol)) => {
                let lv = left.get(lcol).unwrap_or(&Value::Null);
                for (_, right) in sources[1].table.rows() {
                    let rv = right.get(rcol).unwrap_or(&Value::Null);
                    if lv.sql_cmp(rv)? == Some(Ordering::Equal) {
                        rows.push([Some(left), Some(right)]);
                    }
                }
            }
        }
    }
    if let Some(f) = &q.filter {
        let mut kept = Vec::with_capacity(rows.len());
        for r in rows {
            let scope = JoinScope {
                sources: &sources,
                cells: r,
                outer,
            };
            if f.holds(&scope)? {
                kept.push(r);
            }
        }
        rows = kept;
    }

    let mut out = Vec::new();
    if aggregate_mode {
        let mut groups: BTreeMap<GroupKey, Vec<JoinedRow<'_>>> = BTreeMap::new();
        for r in rows {
            let key = grouped_cols
                .iter()
                .map(|(i, name)| r[*i].and_then(|c| c.get(name)).cloned().unwrap_or(Value::Null))
                .collect();
            groups.entry(GroupKey(key)).or_default().push(r);
        }
        if groups.is_empty() && q.group_by.is_empty() {
            groups.insert(GroupKey(Vec::new()), Vec::new());
        }
        for members in groups.values() {
            let mut row = Vec::with_capacity(columns.len());
            for p in &q.projections {
                if let Projection::Expr { expr, .. } = p {
                    row.push(eval_grouped(expr, members, &sources, outer)?);
                }
            }
            out.push(row);
        }
    } else {
        for r in rows {
            let scope = JoinScope {
                sources: &sources,
                cells: r,
                outer,
            };
            let mut row = Vec::with_capacity(columns.len());
            for p in &q.projections {
                match p {
                    Projection::Star => {
                        for (i, s) in sources.iter().enumerate() {
                            for c in &s.table.def().columns {
                                row.push(
                                    r[i].and_then(|cells| cells.get(&c.name))
                                        .cloned()
                                        .unwrap_or(Value::Null),
                                );
                            }
                        }
                    }
                    Projection::Expr { expr, .. } => row.push(expr.eval(&scope)?),
                }
            }
            out.push(row);
        }
    }
    Ok(ResultSet { columns, rows: out })
}

fn plan<'a>(db: &'a Database, q: &'a SelectQuery, outer: &dyn Scope) -> Result<Plan<'a>> {
    let from_ref = db.resolve(&q.from)?;
    let from = db.table(&from_ref)?;
    let mut sources = vec![Source {
        qualifiers: match &q.alias {
            Some(a) => vec![a.as_str(), from.def().name.as_str()],
            None => vec![from.def().name.as_str()],
        },
        table: from,
    }];
    if let Some(j) = &q.join {
        let r = db.resolve(&j.table)?;
        let right = db.table(&r)?;
        sources.push(Source {
            qualifiers: match &j.alias {
                Some(a) => vec![a.as_str(), right.def().name.as_str()],
                None => vec![right.def().name.as_str()],
            },
            table: right,
        });
    }

    // Validation.
    if let Some(f) = &q.filter {
        validate_refs(f, &sources, outer)?;
        if f.contains_aggregate() {
            return Err(Error::MalformedQuery("aggregate in WHERE".into()));
        }
    }
    let mut join_cols = None;
    if let Some(j) = &q.join {
        let side = |e: &Expr| -> Result<(usize, String)> {
            let Expr::Column { qualifier, name } = e else {
                return Err(Error::MalformedQuery("join keys must be columns".into()));
            };
            match resolve(&sources, qualifier.as_deref(), name)? {
                Some(i) => Ok((i, name.clone())),
                None => Err(Error::UnknownColumn(qualified_name(qualifier.as_deref(), name))),
            }
        };
        let (li, lname) = side(&j.left)?;
        let (ri, rname) = side(&j.right)?;
        if li == ri {
            return Err(Error::MalformedQuery(
                "join condition must relate the two tables".into(),
            ));
        }
        join_cols = Some(if li == 0 { (lname, rname) } else { (rname, lname) });
    }
    let mut grouped_cols = Vec::new();
    for g in &q.group_by {
        let Expr::Column { qualifier, name } = g else {
            return Err(Error::MalformedQuery("GROUP BY takes column names".into()));
        };
        match resolve(&sources, qualifier.as_deref(), name)? {
            Some(i) => grouped_cols.push((i, name.clone())),
            None => return Err(Error::UnknownColumn(qualified_name(qualifier.as_deref(), name))),
        }
    }
    let aggregate_mode = !q.group_by.is_empty()
        || q.projections.iter().any(|p| match p {
            Projection::Expr { expr, .. } => expr.contains_aggregate(),
            Projection::Star => false,
        });
    for p in &q.projections {
        let Projection::Expr { expr, .. } = p else {
            if aggregate_mode {
                return Err(Error::MalformedQuery(
                    "* cannot be combined with grouping or aggregates".into(),
                ));
            }
            continue;
        };
        validate_refs(expr, &sources, outer)?;
        if aggregate_mode {
            check_grouped(expr, &sources, &grouped_cols)?;
        }
    }

    let columns = output_columns(q, &sources);
    Ok(Plan {
        sources,
        join_cols,
        grouped_cols,
        aggregate_mode,
        columns,
    })
}

fn output_columns(q: &SelectQuery, sources: &[Source<'_>]) -> Vec<String> {
    let mut cols = Vec::new();
    for p in &q.projections {
        match p {
            Projection::Star => {
                for s in sources {
                    for c in &s.table.def().columns {
                        if sources.len() > 1 {
                            cols.push(format!("{}.{}", s.qualifiers[0], c.name));
                        } else {
                            cols.push(c.name.clone());
                        }
                    }
                }
            }
            Projection::Expr { alias: Some(a), .. } => cols.push(a.clone()),
            Projection::Expr {
                expr: Expr::Column { name, .. },
                ..
            } => cols.push(name.clone()),
            Projection::Expr { expr, .. } => cols.push(expr.to_string()),
        }
    }
    cols
}

/// Outside aggregates, a grouped projection may only mention GROUP BY
/// columns (or variables of the enclosing scope).
fn check_grouped(expr: &Expr, sources: &[Source<'_>], grouped: &[(usize, String)]) -> Result<()> {
    match expr {
        Expr::Aggregate { arg, .. } => {
            if arg.as_deref().is_some_and(Expr::contains_aggregate) {
                return Err(Error::MalformedQuery("nested aggregate".into()));
            }
            Ok(())
        }
        Expr::Literal(_) => Ok(()),
        Expr::Column { qualifier, name } => match resolve(sources, qualifier.as_deref(), name)? {
            Some(i) if grouped.iter().any(|(gi, gn)| *gi == i && gn == name) => Ok(()),
            Some(_) => Err(Error::MalformedQuery(format!(
                "{} must appear in GROUP BY or inside an aggregate",
                qualified_name(qualifier.as_deref(), name)
            ))),
            None => Ok(()),
        },
        Expr::Unary { expr, .. } => check_grouped(expr, sources, grouped),
        Expr::Binary { left, right, .. } => {
            check_grouped(left, sources, grouped)?;
            check_grouped(right, sources, grouped)
        }
    }
}

fn eval_grouped(expr: &Expr, members: &[JoinedRow<'_>], sources: &[Source<'_>], outer: &dyn Scope) -> Result<Value> {
    match expr {
        Expr::Aggregate { func, arg } => aggregate(*func, arg.as_deref(), members, sources, outer),
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Column { .. } => match members.first() {
            Some(r) => expr.eval(&JoinScope {
                sources,
                cells: *r,
                outer,
            }),
            None => expr.eval(outer),
        },
        Expr::Unary { op, expr } => {
            let v = eval_grouped(expr, members, sources, outer)?;
            Expr::Unary {
                op: *op,
                expr: Box::new(Expr::Literal(v)),
            }
            .eval(&EmptyScope)
        }
        Expr::Binary { op, left, right } => {
            let l = eval_grouped(left, members, sources, outer)?;
            let r = eval_grouped(right, members, sources, outer)?;
            Expr::binary(*op, Expr::Literal(l), Expr::Literal(r)).eval(&EmptyScope)
        }
    }
}

fn aggregate(
    func: AggFunc,
    arg: Option<&Expr>,
    members: &[JoinedRow<'_>],
    sources: &[Source<'_>],
    outer: &dyn Scope,
) -> Result<Value> {
    let Some(arg) = arg else {
        return Ok(Value::Int(members.len() as i64));
    };
    let mut values = Vec::with_capacity(members.len());
    for r in members {
        let v = arg.eval(&JoinScope {
            sources,
            cells: *r,
            outer,
        })?;
        if !v.is_null() {
            values.push(v);
        }
    }
    match func {
        AggFunc::Count => Ok(Value::Int(values.len() as i64)),
        AggFunc::Sum | AggFunc::Avg => {
            if values.is_empty() {
                return Ok(Value::Null);
            }
            let mut int_sum: Option<i64> = Some(0);
            let mut float_sum = 0.0;
            for v in &values {
                match v {
                    Value::Int(i) => {
                        int_sum = int_sum.and_then(|s| s.checked_add(*i));
                        float_sum += *i as f64;
                    }
                    Value::Float(f) => {
                        int_sum = None;
                        float_sum += f;
                    }
                    other => {
                        return Err(Error::TypeMismatch(format!(
                            "{} over {}",
                            func.name(),
                            other.kind_name()
                        )))
                    }
                }
            }
            let all_int = values.iter().all(|v| matches!(v, Value::Int(_)));
            if func == AggFunc::Avg {
                return Ok(Value::Float(float_sum / values.len() as f64));
            }
            match (all_int, int_sum) {
                (true, Some(s)) => Ok(Value::Int(s)),
                (true, None) => Err(Error::Runtime("integer overflow in SUM".into())),
                (false, _) => Ok(Value::Float(float_sum)),
            }
        }
        AggFunc::Min | AggFunc::Max => {
            let mut best: Option<Value> = None;
            for v in values {
                best = Some(match best {
                    None => v,
                    Some(b) => {
                        let ord = v.sql_cmp(&b)?.unwrap_or(Ordering::Equal);
                        let better = if func == AggFunc::Min { ord.is_lt() } else { ord.is_gt() };
                        if better {
                            v
                        } else {
                            b
                        }
                    }
                });
            }
            Ok(best.unwrap_or(Value::Null))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ColumnDef, TableDef};
    use crate::syntax::parse_select;
    use crate::value::ValueKind;

    fn seeded() -> Database {
        let mut db = Database::new();
        db.create_schema("net").unwrap();
        db.create_table(TableDef::new(
            "net",
            "Nodes",
            vec![
                ColumnDef::new("nodeId", ValueKind::Int).primary_key(),
                ColumnDef::new("podId", ValueKind::Int).not_null(),
                ColumnDef::new("cpuUtil", ValueKind::Float),
                ColumnDef::new("ingressTraff", ValueKind::Float),
            ],
        ))
        .unwrap();
        db.create_table(TableDef::new(
            "net",
            "Pods",
            vec![
                ColumnDef::new("podId", ValueKind::Int).primary_key(),
                ColumnDef::new("name", ValueKind::Text),
            ],
        ))
        .unwrap();
        let nodes = db.table_mut(&"net.Nodes".parse().unwrap()).unwrap();
        for (n, p, c, i) in [(1, 1, 0.37, 221), (2, 1, 0.82, 382), (3, 2, 0.14, 67)] {
            let mut cells = Cells::new();
            cells.insert("nodeId".into(), Value::Int(n));
            cells.insert("podId".into(), Value::Int(p));
            cells.insert("cpuUtil".into(), Value::Float(c));
            cells.insert("ingressTraff".into(), Value::Int(i));
            nodes.insert(cells).unwrap();
        }
        let pods = db.table_mut(&"net.Pods".parse().unwrap()).unwrap();
        for (p, name) in [(1, "web"), (2, "db")] {
            let mut cells = Cells::new();
            cells.insert("podId".into(), Value::Int(p));
            cells.insert("name".into(), Value::from(name));
            pods.insert(cells).unwrap();
        }
        db
    }

    fn run(db: &Database, sql: &str) -> Result<ResultSet> {
        execute_select(db, &parse_select(sql).unwrap(), &EmptyScope)
    }

    fn approx(v: &Value, expected: f64) {
        let got = v.as_f64().expect("numeric");
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn table_one_cpu_average_per_pod() {
        let rs = run(&seeded(), "SELECT podId, AVG(cpuUtil) FROM Nodes GROUP BY podId").unwrap();
        assert_eq!(rs.rows.len(), 2);
        assert_eq!(rs.rows[0][0], Value::Int(1));
        approx(&rs.rows[0][1], 0.595);
        assert_eq!(rs.rows[1][0], Value::Int(2));
        approx(&rs.rows[1][1], 0.14);
    }

    #[test]
    fn table_one_ingress_average_per_pod() {
        let rs = run(&seeded(), "SELECT podId, AVG(ingressTraff) FROM Nodes GROUP BY podId").unwrap();
        approx(&rs.rows[0][1], 301.5);
        approx(&rs.rows[1][1], 67.0);
    }

    #[test]
    fn empty_aggregates() {
        let mut db = seeded();
        let r = "net.Nodes".parse().unwrap();
        let t = db.table_mut(&r).unwrap();
        for id in 1..=3 {
            t.remove(id);
        }
        let rs = run(
            &db,
            "SELECT AVG(cpuUtil), COUNT(*), COUNT(cpuUtil), SUM(cpuUtil) FROM Nodes",
        )
        .unwrap();
        assert_eq!(rs.rows.len(), 1);
        assert!(rs.rows[0][0].is_null());
        assert_eq!(rs.rows[0][1], Value::Int(0));
        assert_eq!(rs.rows[0][2], Value::Int(0));
        assert!(rs.rows[0][3].is_null());
        let grouped = run(&db, "SELECT podId, COUNT(*) FROM Nodes GROUP BY podId").unwrap();
        assert!(grouped.rows.is_empty());
    }

    #[test]
    fn ungrouped_rows_in_row_id_order_with_filter() {
        let rs = run(&seeded(), "SELECT nodeId FROM Nodes WHERE cpuUtil > 0.2").unwrap();
        assert_eq!(rs.rows, vec![vec![Value::Int(1)], vec![Value::Int(2)]]);
        let rs = run(&seeded(), "SELECT * FROM Nodes WHERE nodeId = 3").unwrap();
        assert_eq!(rs.columns, ["nodeId", "podId", "cpuUtil", "ingressTraff"]);
        assert_eq!(rs.rows.len(), 1);
    }

    #[test]
    fn join_on_pod() {
        let rs = run(
            &seeded(),
            "SELECT p.name, COUNT(*) AS n FROM Nodes JOIN Pods p ON Nodes.podId = p.podId GROUP BY p.name",
        )
        .unwrap();
        assert_eq!(rs.columns, ["name", "n"]);
        assert_eq!(
            rs.rows,
            vec![
                vec![Value::from("db"), Value::Int(1)],
                vec![Value::from("web"), Value::Int(2)]
            ]
        );
    }

    #[test]
    fn ambiguous_and_unknown_columns() {
        let db = seeded();
        assert!(matches!(
            run(&db, "SELECT podId FROM Nodes JOIN Pods ON Nodes.podId = Pods.podId"),
            Err(Error::MalformedQuery(_))
        ));
        assert!(matches!(
            run(&db, "SELECT bogus FROM Nodes"),
            Err(Error::UnknownColumn(_))
        ));
        assert!(matches!(
            run(&db, "SELECT nodeId, COUNT(*) FROM Nodes GROUP BY podId"),
            Err(Error::MalformedQuery(_))
        ));
        assert!(matches!(
            run(&db, "SELECT nodeId FROM Nowhere"),
            Err(Error::UnknownTable(_))
        ));
    }

    #[test]
    fn expressions_over_aggregates() {
        let rs = run(
            &seeded(),
            "SELECT podId, SUM(ingressTraff) / COUNT(*) AS mean FROM Nodes GROUP BY podId",
        )
        .unwrap();
        approx(&rs.rows[0][1], 301.5);
    }

    #[test]
    fn pk_fast_path_matches_scan() {
        let db = seeded();
        let t = db.table(&"net.Nodes".parse().unwrap()).unwrap();
        let f = crate::syntax::parse_expr("nodeId = 2 AND podId = 1").unwrap();
        assert_eq!(matching_rows(t, Some(&f), &EmptyScope).unwrap(), vec![2]);
        let f = crate::syntax::parse_expr("nodeId = 2 AND podId = 2").unwrap();
        assert!(matching_rows(t, Some(&f), &EmptyScope).unwrap().is_empty());
        let f = crate::syntax::parse_expr("nodeId = 99").unwrap();
        assert!(matching_rows(t, Some(&f), &EmptyScope).unwrap().is_empty());
    }
}

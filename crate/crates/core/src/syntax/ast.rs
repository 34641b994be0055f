// SPDX-License-Identifier: Apache-2.0

use crate::expr::Expr;
use crate::value::ValueKind;

/// A table reference as written: `name` or `schema.name`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableName {
    pub schema: Option<String>,
    pub name: String,
}

impl TableName {
    pub fn parse_ref(s: &str) -> TableName {
        match s.split_once('.') {
            Some((schema, name)) => TableName {
                schema: Some(schema.to_owned()),
                name: name.to_owned(),
            },
            None => TableName {
                schema: None,
                name: s.to_owned(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinClause {
    pub table: TableName,
    pub alias: Option<String>,
    pub left: Expr,
    pub right: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectQuery {
    pub projections: Vec<Projection>,
    pub from: TableName,
    pub alias: Option<String>,
    pub join: Option<JoinClause>,
    pub filter: Option<Expr>,
    pub group_by: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertStmt {
    pub table: TableName,
    pub columns: Vec<String>,
    pub values: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStmt {
    pub table: TableName,
    pub assignments: Vec<(String, Expr)>,
    pub filter: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeleteStmt {
    pub table: TableName,
    pub filter: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SqlStatement {
    Select(SelectQuery),
    Insert(InsertStmt),
    Update(UpdateStmt),
    Delete(DeleteStmt),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub kind: ValueKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureAst {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Declare {
        name: String,
        kind: ValueKind,
    },
    Set {
        name: String,
        value: Expr,
    },
    If {
        branches: Vec<(Expr, Vec<Stmt>)>,
        otherwise: Option<Vec<Stmt>>,
    },
    For {
        var: String,
        query: SelectQuery,
        body: Vec<Stmt>,
    },
    Insert(InsertStmt),
    Update(UpdateStmt),
    Delete(DeleteStmt),
    SelectInto {
        query: SelectQuery,
        targets: Vec<String>,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
    External {
        name: String,
        args: Vec<Expr>,
        into: Option<String>,
    },
    Return(Vec<Expr>),
    Raise(String),
}

impl Stmt {
    /// Visits this statement and every statement nested inside it.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        f(self);
        match self {
            Stmt::If { branches, otherwise } => {
                for (_, body) in branches {
                    body.iter().for_each(|s| s.walk(f));
                }
                if let Some(body) = otherwise {
                    body.iter().for_each(|s| s.walk(f));
                }
            }
            Stmt::For { body, .. } => body.iter().for_each(|s| s.walk(f)),
            _ => {}
        }
    }
}

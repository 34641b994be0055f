// SPDX-License-Identifier: Apache-2.0

//! Expressions shared by predicates, check constraints and the policy DSL.
//!
//! Evaluation follows SQL three-valued logic: a comparison with a Null
//! operand is unknown (represented as `Value::Null`), and a filter keeps a
//! row only when its predicate is definitely true.

use std::fmt;

use crate::error::{Error, Result};
use crate::value::{Cells, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::And => "AND",
            BinaryOp::Or => "OR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Avg,
    Sum,
    Count,
    Min,
    Max,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Avg => "AVG",
            AggFunc::Sum => "SUM",
            AggFunc::Count => "COUNT",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "AVG" => Some(AggFunc::Avg),
            "SUM" => Some(AggFunc::Sum),
            "COUNT" => Some(AggFunc::Count),
            "MIN" => Some(AggFunc::Min),
            "MAX" => Some(AggFunc::Max),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Column {
        qualifier: Option<String>,
        name: String,
    },
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    /// `arg` is `None` only for `COUNT(*)`.
    Aggregate {
        func: AggFunc,
        arg: Option<Box<Expr>>,
    },
}

impl Expr {
    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    pub fn col(name: &str) -> Expr {
        Expr::Column {
            qualifier: None,
            name: name.to_owned(),
        }
    }

    pub fn qcol(qualifier: &str, name: &str) -> Expr {
        Expr::Column {
            qualifier: Some(qualifier.to_owned()),
            name: name.to_owned(),
        }
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn eq(left: Expr, right: Expr) -> Expr {
        Expr::binary(BinaryOp::Eq, left, right)
    }

    pub fn and(left: Expr, right: Expr) -> Expr {
        Expr::binary(BinaryOp::And, left, right)
    }

    pub fn contains_aggregate(&self) -> bool {
        match self {
            Expr::Aggregate { .. } => true,
            Expr::Literal(_) | Expr::Column { .. } => false,
            Expr::Unary { expr, .. } => expr.contains_aggregate(),
            Expr::Binary { left, right, .. } => left.contains_aggregate() || right.contains_aggregate(),
        }
    }

    /// Visits every column reference in evaluation order.
    pub fn for_each_column<'a>(&'a self, f: &mut impl FnMut(Option<&'a str>, &'a str)) {
        match self {
            Expr::Literal(_) => {}
            Expr::Column { qualifier, name } => f(qualifier.as_deref(), name),
            Expr::Unary { expr, .. } => expr.for_each_column(f),
            Expr::Binary { left, right, .. } => {
                left.for_each_column(f);
                right.for_each_column(f);
            }
            Expr::Aggregate { arg, .. } => {
                if let Some(arg) = arg {
                    arg.for_each_column(f);
                }
            }
        }
    }

    pub fn eval(&self, scope: &dyn Scope) -> Result<Value> {
        match self {
            Expr::Literal(v) => Ok(v.clone()),
            Expr::Column { qualifier, name } => scope.lookup(qualifier.as_deref(), name),
            Expr::Unary { op, expr } => {
                let v = expr.eval(scope)?;
                match op {
                    UnaryOp::Not => Ok(match truth(&v)? {
                        Some(b) => Value::Bool(!b),
                        None => Value::Null,
                    }),
                    UnaryOp::Neg => negate(v),
                }
            }
            Expr::Binary { op, left, right } => match op {
                BinaryOp::And => {
                    let l = truth(&left.eval(scope)?)?;
                    if l == Some(false) {
                        return Ok(Value::Bool(false));
                    }
                    let r = truth(&right.eval(scope)?)?;
                    Ok(match (l, r) {
                        (_, Some(false)) => Value::Bool(false),
                        (Some(true), Some(true)) => Value::Bool(true),
                        _ => Value::Null,
                    })
                }
                BinaryOp::Or => {
                    let l = truth(&left.eval(scope)?)?;
                    if l == Some(true) {
                        return Ok(Value::Bool(true));
                    }
                    let r = truth(&right.eval(scope)?)?;
                    Ok(match (l, r) {
                        (_, Some(true)) => Value::Bool(true),
                        (Some(false), Some(false)) => Value::Bool(false),
                        _ => Value::Null,
                    })
                }
                _ => binary(*op, left.eval(scope)?, right.eval(scope)?),
            },
            Expr::Aggregate { func, .. } => Err(Error::MalformedQuery(format!(
                "aggregate {} is not allowed here",
                func.name()
            ))),
        }
    }

    /// Evaluates a predicate; unknown counts as false.
    pub fn holds(&self, scope: &dyn Scope) -> Result<bool> {
        Ok(truth(&self.eval(scope)?)? == Some(true))
    }
}

/// Interprets a value as a truth value: `None` is unknown.
pub fn truth(v: &Value) -> Result<Option<bool>> {
    match v {
        Value::Bool(b) => Ok(Some(*b)),
        Value::Null => Ok(None),
        other => Err(Error::TypeMismatch(format!("expected BOOL, got {}", other.kind_name()))),
    }
}

fn negate(v: Value) -> Result<Value> {
    match v {
        Value::Null => Ok(Value::Null),
        Value::Int(i) => i
            .checked_neg()
            .map(Value::Int)
            .ok_or_else(|| Error::Runtime("integer overflow".into())),
        Value::Float(f) => Ok(Value::Float(-f)),
        other => Err(Error::TypeMismatch(format!("cannot negate {}", other.kind_name()))),
    }
}

fn binary(op: BinaryOp, l: Value, r: Value) -> Result<Value> {
    use BinaryOp::*;
    match op {
        Eq | Ne | Lt | Le | Gt | Ge => {
            let Some(ord) = l.sql_cmp(&r)? else {
                return Ok(Value::Null);
            };
            let b = match op {
                Eq => ord.is_eq(),
                Ne => ord.is_ne(),
                Lt => ord.is_lt(),
                Le => ord.is_le(),
                Gt => ord.is_gt(),
                _ => ord.is_ge(),
            };
            Ok(Value::Bool(b))
        }
        Add | Sub | Mul | Div => arith(op, l, r),
        And | Or => unreachable!("short-circuit operators are evaluated by the caller"),
    }
}

fn overflow() -> Error {
    Error::Runtime("integer overflow".into())
}

fn arith(op: BinaryOp, l: Value, r: Value) -> Result<Value> {
    use BinaryOp::*;
    use Value::*;
    match (op, &l, &r) {
        (_, Null, _) | (_, _, Null) => Ok(Null),
        (Sub, Timestamp(a), Timestamp(b)) => a.checked_sub(*b).map(Int).ok_or_else(overflow),
        (Add, Timestamp(a), Int(b)) | (Add, Int(b), Timestamp(a)) => {
            a.checked_add(*b).map(Timestamp).ok_or_else(overflow)
        }
        (Sub, Timestamp(a), Int(b)) => a.checked_sub(*b).map(Timestamp).ok_or_else(overflow),
        (Div, Int(_) | Float(_), Int(_) | Float(_)) => {
            let (a, b) = (l.as_f64().unwrap(), r.as_f64().unwrap());
            if b == 0.0 {
                Err(Error::Runtime("division by zero".into()))
            } else {
                Ok(Float(a / b))
            }
        }
        (_, Int(a), Int(b)) => match op {
            Add => a.checked_add(*b),
            Sub => a.checked_sub(*b),
            _ => a.checked_mul(*b),
        }
        .map(Int)
        .ok_or_else(overflow),
        (_, Int(_) | Float(_), Int(_) | Float(_)) => {
            let (a, b) = (l.as_f64().unwrap(), r.as_f64().unwrap());
            Ok(Float(match op {
                Add => a + b,
                Sub => a - b,
                _ => a * b,
            }))
        }
        _ => Err(Error::TypeMismatch(format!(
            "cannot apply {} to {} and {}",
            op.symbol(),
            l.kind_name(),
            r.kind_name()
        ))),
    }
}

/// Name resolution for column references and variables.
pub trait Scope {
    fn lookup(&self, qualifier: Option<&str>, name: &str) -> Result<Value>;
}

pub struct EmptyScope;

impl Scope for EmptyScope {
    fn lookup(&self, qualifier: Option<&str>, name: &str) -> Result<Value> {
        Err(Error::UnknownColumn(qualified_name(qualifier, name)))
    }
}

pub(crate) fn qualified_name(qualifier: Option<&str>, name: &str) -> String {
    match qualifier {
        Some(q) => format!("{q}.{name}"),
        None => name.to_owned(),
    }
}

/// One row's cells visible under a set of qualifiers, falling back to an
/// enclosing scope for anything the row does not define.
pub struct RowScope<'a> {
    pub qualifiers: &'a [&'a str],
    pub cells: &'a Cells,
    pub outer: &'a dyn Scope,
}

impl Scope for RowScope<'_> {
    fn lookup(&self, qualifier: Option<&str>, name: &str) -> Result<Value> {
        match qualifier {
            None => match self.cells.get(name) {
                Some(v) => Ok(v.clone()),
                None => self.outer.lookup(None, name),
            },
            Some(q) if self.qualifiers.contains(&q) => self
                .cells
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnknownColumn(qualified_name(qualifier, name))),
            Some(_) => self.outer.lookup(qualifier, name),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Column {
                qualifier: Some(q),
                name,
            } => write!(f, "{q}.{name}"),
            Expr::Column { name, .. } => f.write_str(name),
            Expr::Unary { op: UnaryOp::Neg, expr } => write!(f, "(-{expr})"),
            Expr::Unary { op: UnaryOp::Not, expr } => write!(f, "(NOT {expr})"),
            Expr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            Expr::Aggregate { func, arg: None } => write!(f, "{}(*)", func.name()),
            Expr::Aggregate { func, arg: Some(arg) } => write!(f, "{}({arg})", func.name()),
        }
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Scalar values stored in table cells.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column name to value. Ordered so that every rendering of a row is stable.
pub type Cells = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValueKind {
    Int,
    Float,
    Text,
    Bool,
    Timestamp,
}

impl ValueKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ValueKind::Int => "INT",
            ValueKind::Float => "FLOAT",
            ValueKind::Text => "TEXT",
            ValueKind::Bool => "BOOL",
            ValueKind::Timestamp => "TS",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word.to_ascii_uppercase().as_str() {
            "INT" => Some(ValueKind::Int),
            "FLOAT" => Some(ValueKind::Float),
            "TEXT" => Some(ValueKind::Text),
            "BOOL" => Some(ValueKind::Bool),
            "TS" | "TIMESTAMP" => Some(ValueKind::Timestamp),
            _ => None,
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A single cell value. `Timestamp` holds UTC microseconds since the epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Timestamp(i64),
    Null,
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.total_cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Null, Into::into)
    }
}

impl Value {
    pub fn kind(&self) -> Option<ValueKind> {
        match self {
            Value::Int(_) => Some(ValueKind::Int),
            Value::Float(_) => Some(ValueKind::Float),
            Value::Text(_) => Some(ValueKind::Text),
            Value::Bool(_) => Some(ValueKind::Bool),
            Value::Timestamp(_) => Some(ValueKind::Timestamp),
            Value::Null => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) | Value::Timestamp(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Converts the value for storage in a column of `kind`.
    ///
    /// Int widens to Float, and Int is accepted as a Timestamp. Null passes
    /// through; NotNull is a constraint, not a type rule.
    pub fn coerce_to(self, kind: ValueKind) -> Result<Value> {
        match (self, kind) {
            (Value::Null, _) => Ok(Value::Null),
            (Value::Int(v), ValueKind::Float) => Ok(Value::Float(v as f64)),
            (Value::Int(v), ValueKind::Timestamp) => Ok(Value::Timestamp(v)),
            (v, k) if v.kind() == Some(k) => Ok(v),
            (v, k) => Err(Error::TypeMismatch(format!("expected {k}, got {}", v.kind_name()))),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        self.kind().map_or("NULL", ValueKind::keyword)
    }

    /// SQL comparison. `Ok(None)` is the unknown truth value produced by
    /// Null operands; comparing unrelated kinds is a type error.
    pub fn sql_cmp(&self, other: &Value) -> Result<Option<Ordering>> {
        use Value::*;
        let ord = match (self, other) {
            (Null, _) | (_, Null) => return Ok(None),
            (Int(a), Int(b)) => a.cmp(b),
            (Timestamp(a), Timestamp(b)) => a.cmp(b),
            (Timestamp(a), Int(b)) | (Int(a), Timestamp(b)) => a.cmp(b),
            (Int(_) | Float(_), Int(_) | Float(_)) => {
                let (a, b) = (self.as_f64().unwrap(), other.as_f64().unwrap());
                match a.partial_cmp(&b) {
                    Some(o) => o,
                    None => return Ok(None),
                }
            }
            (Text(a), Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Bool(a), Bool(b)) => a.cmp(b),
            (a, b) => {
                return Err(Error::TypeMismatch(format!(
                    "cannot compare {} with {}",
                    a.kind_name(),
                    b.kind_name()
                )))
            }
        };
        Ok(Some(ord))
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) | Value::Float(_) => 2,
            Value::Timestamp(_) => 3,
            Value::Text(_) => 4,
        }
    }

    /// Total order used for sorting group keys and for equality of stored
    /// values: Null < Bool < numbers < Timestamp < Text.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Int(a), Int(b)) => a.cmp(b),
            (Int(_) | Float(_), Int(_) | Float(_)) => {
                let (a, b) = (self.as_f64().unwrap(), other.as_f64().unwrap());
                a.total_cmp(&b)
            }
            (Timestamp(a), Timestamp(b)) => a.cmp(b),
            (Text(a), Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Bool(a), Bool(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }

    /// Plain JSON rendering used by the HTTP API and the log export.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Int(v) | Value::Timestamp(v) => serde_json::Value::from(*v),
            Value::Float(v) => {
                serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, serde_json::Value::Number)
            }
            Value::Text(s) => serde_json::Value::String(s.clone()),
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Null => serde_json::Value::Null,
        }
    }

    /// Reads a plain JSON scalar without a column kind to guide it.
    pub fn from_json(json: &serde_json::Value) -> Result<Value> {
        match json {
            serde_json::Value::Null => Ok(Value::Null),
            serde_json::Value::Bool(b) => Ok(Value::Bool(*b)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Int(i))
                } else if let Some(f) = n.as_f64() {
                    Ok(Value::Float(f))
                } else {
                    Err(Error::TypeMismatch(format!("number out of range: {n}")))
                }
            }
            serde_json::Value::String(s) => Ok(Value::Text(s.clone())),
            other => Err(Error::TypeMismatch(format!("expected a scalar, got {other}"))),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Value::Bool(true) => f.write_str("TRUE"),
            Value::Bool(false) => f.write_str("FALSE"),
            Value::Timestamp(v) => write!(f, "{v}"),
            Value::Null => f.write_str("NULL"),
        }
    }
}

/// Renders a cells map as a JSON object of plain scalars.
pub fn cells_to_json(cells: &Cells) -> serde_json::Value {
    serde_json::Value::Object(cells.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

/// Parses a JSON object into cells without kind information.
pub fn cells_from_json(json: &serde_json::Value) -> Result<Cells> {
    let obj = json
        .as_object()
        .ok_or_else(|| Error::TypeMismatch("expected a JSON object of cells".into()))?;
    obj.iter().map(|(k, v)| Ok((k.clone(), Value::from_json(v)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_float_compare_coerces() {
        let ord = Value::Int(2).sql_cmp(&Value::Float(2.5)).unwrap();
        assert_eq!(ord, Some(Ordering::Less));
        assert_eq!(Value::Int(3), Value::Float(3.0));
    }

    #[test]
    fn null_compare_is_unknown() {
        assert_eq!(Value::Null.sql_cmp(&Value::Int(1)).unwrap(), None);
        assert_eq!(Value::Text("a".into()).sql_cmp(&Value::Null).unwrap(), None);
    }

    #[test]
    fn text_compares_bytewise() {
        let ord = Value::from("Z").sql_cmp(&Value::from("a")).unwrap();
        assert_eq!(ord, Some(Ordering::Less));
    }

    #[test]
    fn mismatched_kinds_are_an_error() {
        assert!(Value::from("1").sql_cmp(&Value::Int(1)).is_err());
    }

    #[test]
    fn coercion_rules() {
        assert!(matches!(
            Value::Int(221).coerce_to(ValueKind::Float).unwrap(),
            Value::Float(f) if f == 221.0
        ));
        assert!(Value::Float(1.5).coerce_to(ValueKind::Int).is_err());
        assert!(Value::Null.coerce_to(ValueKind::Text).unwrap().is_null());
    }

    #[test]
    fn display_quotes_text() {
        assert_eq!(Value::from("it's").to_string(), "'it''s'");
        assert_eq!(Value::Float(2.0).to_string(), "2.0");
    }
}

//! Scalar values, types and schemas shared by every layer.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Column/scalar type. Numbers are always 64-bit floats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Number,
    String,
    Boolean,
}

impl ScalarType {
    pub fn name(self) -> &'static str {
        match self {
            ScalarType::Number => "number",
            ScalarType::String => "string",
            ScalarType::Boolean => "boolean",
        }
    }

    pub fn parse(s: &str) -> Option<ScalarType> {
        match s {
            "number" => Some(ScalarType::Number),
            "string" => Some(ScalarType::String),
            "boolean" => Some(ScalarType::Boolean),
            _ => None,
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ScalarType,
    #[serde(default = "default_nullable")]
    pub nullable: bool,
}

fn default_nullable() -> bool {
    true
}

impl Field {
    pub fn new(name: impl Into<String>, ty: ScalarType) -> Self {
        Field {
            name: name.into(),
            ty,
            nullable: true,
        }
    }
}

/// Ordered list of uniquely named fields.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub Vec<Field>);

impl Schema {
    pub fn new(fields: Vec<Field>) -> Self {
        Schema(fields)
    }

    pub fn fields(&self) -> &[Field] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|f| f.name == name)
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.0.iter().find(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|f| f.name.clone()).collect()
    }

    /// Name of the first duplicated field, if any.
    pub fn duplicate_name(&self) -> Option<&str> {
        for (i, f) in self.0.iter().enumerate() {
            if self.0[..i].iter().any(|g| g.name == f.name) {
                return Some(&f.name);
            }
        }
        None
    }

    /// Replace the field in place when the name exists, otherwise append.
    pub fn upsert(&mut self, field: Field) {
        match self.index_of(&field.name) {
            Some(i) => self.0[i] = field,
            None => self.0.push(field),
        }
    }
}

/// A single cell or signal value. `Null` propagates like SQL NULL.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Null,
    Number(f64),
    String(Arc<str>),
    Boolean(bool),
}

impl Value {
    pub fn string(s: impl AsRef<str>) -> Value {
        Value::String(Arc::from(s.as_ref()))
    }

    /// Numbers are normalised so that NaN never escapes: it becomes `Null`.
    pub fn number(v: f64) -> Value {
        if v.is_nan() {
            Value::Null
        } else {
            Value::Number(v)
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    pub fn scalar_type(&self) -> Option<ScalarType> {
        match self {
            Value::Null => None,
            Value::Number(_) => Some(ScalarType::Number),
            Value::String(_) => Some(ScalarType::String),
            Value::Boolean(_) => Some(ScalarType::Boolean),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Number(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::String(s) => serde_json::Value::String(s.to_string()),
            Value::Boolean(b) => serde_json::Value::Bool(*b),
        }
    }

    /// Scalars only; arrays and objects yield `None`.
    pub fn from_json(v: &serde_json::Value) -> Option<Value> {
        match v {
            serde_json::Value::Null => Some(Value::Null),
            serde_json::Value::Bool(b) => Some(Value::Boolean(*b)),
            serde_json::Value::Number(n) => n.as_f64().map(Value::number),
            serde_json::Value::String(s) => Some(Value::string(s)),
            _ => None,
        }
    }

    /// Total order used by sorts: same-typed values compare naturally,
    /// nulls compare greater than everything (placed last when ascending).
    pub fn sort_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) => Ordering::Greater,
            (_, Value::Null) => Ordering::Less,
            // NaN never reaches a Value, so partial_cmp is total here.
            (Value::Number(a), Value::Number(b)) => a.partial_cmp(b).unwrap_or(Ordering::Equal),
            (Value::String(a), Value::String(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Value::Boolean(a), Value::Boolean(b)) => a.cmp(b),
            (a, b) => type_rank(a).cmp(&type_rank(b)),
        }
    }
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Boolean(_) => 0,
        Value::Number(_) => 1,
        Value::String(_) => 2,
        Value::Null => 3,
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Number(v) => f.write_str(&format_number(*v)),
            Value::String(s) => f.write_str(s),
            Value::Boolean(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Value::from_json(&v).ok_or_else(|| serde::de::Error::custom("expected a scalar value"))
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::number(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::string(v)
    }
}

/// Shortest round-trip text for a float; integral values print without a
/// fractional part.
pub fn format_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// Hashable wrapper giving SQL GROUP BY equality (NULL groups with NULL,
/// -0.0 with 0.0).
#[derive(Clone, Debug)]
pub struct GroupValue(pub Value);

impl PartialEq for GroupValue {
    fn eq(&self, other: &Self) -> bool {
        match (&self.0, &other.0) {
            (Value::Null, Value::Null) => true,
            (Value::Number(a), Value::Number(b)) => a == b,
            (a, b) => a == b,
        }
    }
}

impl Eq for GroupValue {}

impl Hash for GroupValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match &self.0 {
            Value::Null => 0u8.hash(state),
            Value::Number(v) => {
                1u8.hash(state);
                let v = if *v == 0.0 { 0.0f64 } else { *v };
                v.to_bits().hash(state);
            }
            Value::String(s) => {
                2u8.hash(state);
                s.hash(state);
            }
            Value::Boolean(b) => {
                3u8.hash(state);
                b.hash(state);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting_is_shortest() {
        assert_eq!(format_number(10.0), "10");
        assert_eq!(format_number(0.1), "0.1");
        assert_eq!(format_number(-2.5), "-2.5");
        assert_eq!(format_number(1e21), "1e21");
        assert_eq!("1e-7".parse::<f64>().unwrap(), 1e-7);
        assert_eq!(format_number(1e-7).parse::<f64>().unwrap(), 1e-7);
    }

    #[test]
    fn nulls_sort_last() {
        let mut v = [Value::Null, Value::Number(2.0), Value::Number(-1.0)];
        v.sort_by(|a, b| a.sort_cmp(b));
        assert_eq!(v[0], Value::Number(-1.0));
        assert!(v[2].is_null());
    }

    #[test]
    fn nan_becomes_null() {
        assert!(Value::number(f64::NAN).is_null());
    }
}

//! Scalar sensor values with canonical equality.
//!
//! Shadow values are JSON scalars: numbers, strings or booleans. Numbers are
//! canonicalized on construction so that integers and integral floats compare
//! equal (`60` == `60.0`); strings compare byte-wise. Canonical form also
//! keeps the wire encoding byte-stable: an integral value always encodes
//! without a fraction.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScalarError {
    #[error("non-finite number {0} is not a valid scalar")]
    NonFinite(f64),
}

/// A single sensor reading or desired value.
///
/// `Float` holds only finite, non-integral values; everything integral is
/// normalized into `Int` so equality and encoding stay canonical.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

// Float never holds NaN (construction rejects non-finite values), so the
// derived PartialEq is total on the values that can exist.
impl Eq for Scalar {}

impl Scalar {
    /// Canonicalizes a float: integral values in i64 range collapse to `Int`.
    /// Non-finite input is rejected; it has no JSON representation.
    pub fn try_from_f64(v: f64) -> Result<Self, ScalarError> {
        if !v.is_finite() {
            return Err(ScalarError::NonFinite(v));
        }
        if v.fract() == 0.0 && v >= i64::MIN as f64 && v <= i64::MAX as f64 {
            Ok(Scalar::Int(v as i64))
        } else {
            Ok(Scalar::Float(v))
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(f) => Some(*f),
            Scalar::Bool(_) | Scalar::Str(_) => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Scalar::Int(_) | Scalar::Float(_))
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Scalar::Bool(b) => serde_json::Value::Bool(*b),
            Scalar::Int(i) => serde_json::Value::from(*i),
            Scalar::Float(f) => serde_json::Value::from(*f),
            Scalar::Str(s) => serde_json::Value::String(s.clone()),
        }
    }

    /// Reads a scalar out of a JSON value. `None` when the value is not a
    /// scalar (object, array or null); callers decide what that means.
    pub fn from_json(v: &serde_json::Value) -> Option<Self> {
        match v {
            serde_json::Value::Bool(b) => Some(Scalar::Bool(*b)),
            serde_json::Value::String(s) => Some(Scalar::Str(s.clone())),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Some(Scalar::Int(i))
                } else {
                    // u64 beyond i64 range or a fractional float; canonicalize.
                    n.as_f64().and_then(|f| Scalar::try_from_f64(f).ok())
                }
            }
            _ => None,
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<i32> for Scalar {
    fn from(v: i32) -> Self {
        Scalar::Int(v as i64)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_owned())
    }
}

impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Str(v)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x}"),
            Scalar::Str(s) => write!(f, "{s}"),
        }
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Bool(b) => serializer.serialize_bool(*b),
            Scalar::Int(i) => serializer.serialize_i64(*i),
            Scalar::Float(f) => serializer.serialize_f64(*f),
            Scalar::Str(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        Scalar::from_json(&v)
            .ok_or_else(|| de::Error::custom(format!("expected scalar, got {v}")))
    }
}

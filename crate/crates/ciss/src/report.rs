//! JSON reports with two-decimal numbers plus a full-precision copy.

use serde_json::{Map, Number, Value};

/// Renders `x` with exactly two decimals; non-finite values become null.
pub fn two_decimals(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let mut s = format!("{x:.2}");
    if s == "-0.00" {
        s = "0.00".into();
    }
    Value::Number(s.parse::<Number>().expect("decimal literal"))
}

fn is_float(n: &Number) -> bool {
    n.as_u64().is_none() && n.as_i64().is_none()
}

/// Copy of `value` with every float rendered to two decimals.
pub fn rounded(value: &Value) -> Value {
    match value {
        Value::Number(n) if is_float(n) => two_decimals(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), rounded(v))).collect()),
        other => other.clone(),
    }
}

/// A report object: the rounded fields plus `precise`, the same fields at
/// full precision.
pub fn finish(fields: Value) -> Value {
    let mut out = match rounded(&fields) {
        Value::Object(o) => o,
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    };
    out.insert("precise".into(), fields);
    Value::Object(out)
}

/// `f64` as a JSON number, null when non-finite.
pub fn num(x: f64) -> Value {
    Number::from_f64(x).map_or(Value::Null, Value::Number)
}

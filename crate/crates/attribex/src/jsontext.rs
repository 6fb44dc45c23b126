//! JSON helpers: writers emit decimal floats with 17 significant digits so
//! that every value round-trips bit-exactly; readers wrap `serde_json` with
//! schema-checking accessors that produce precise error messages.

use crate::error::{Error, Result};
use serde_json::Value;

/// 17 significant decimal digits: enough to reconstruct any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

pub fn push_f64_array(buf: &mut String, vals: &[f64]) {
    buf.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        buf.push_str(&fmt_f64(*v));
    }
    buf.push(']');
}

pub fn push_usize_array(buf: &mut String, vals: &[usize]) {
    buf.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        buf.push_str(&v.to_string());
    }
    buf.push(']');
}

pub fn push_str_array(buf: &mut String, vals: &[String]) {
    buf.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            buf.push(',');
        }
        buf.push_str(&Value::String(v.clone()).to_string());
    }
    buf.push(']');
}

pub fn parse(text: &str, what: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::DataFormat(format!("{what}: invalid JSON: {e}")))
}

pub fn get<'a>(obj: &'a Value, key: &str, ctx: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::DataFormat(format!("{ctx}: missing field `{key}`")))
}

pub fn as_f64(v: &Value, ctx: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::DataFormat(format!("{ctx}: expected a number")))
}

pub fn as_usize(v: &Value, ctx: &str) -> Result<usize> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| Error::DataFormat(format!("{ctx}: expected a non-negative integer")))
}

pub fn as_f64_array(v: &Value, ctx: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::DataFormat(format!("{ctx}: expected an array")))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{ctx}[{i}]")))
        .collect()
}

pub fn as_usize_array(v: &Value, ctx: &str) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::DataFormat(format!("{ctx}: expected an array")))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| as_usize(x, &format!("{ctx}[{i}]")))
        .collect()
}

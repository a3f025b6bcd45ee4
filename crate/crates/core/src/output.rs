//! Numeric serialization with 17 significant digits, so reruns can be
//! diffed byte for byte.

use std::io::Write;
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// `{:.16e}` rendering; non-finite values become `null` in JSON.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `serialize_with` helper for `f64` fields.
pub fn sig17<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if !v.is_finite() {
        return s.serialize_none();
    }
    let n: serde_json::Number = fmt17(*v)
        .parse()
        .map_err(|e| serde::ser::Error::custom(format!("{e}")))?;
    n.serialize(s)
}

pub fn sig17_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => sig17(x, s),
        None => s.serialize_none(),
    }
}

/// Wrapper for ad-hoc values built with `serde_json::json!`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sig17(pub f64);

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        sig17(&self.0, s)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One compact JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

//! Canonical JSON and JSON Pointer helpers.
//!
//! Canonical form: UTF-8, object keys sorted lexicographically, two-space
//! indent, trailing newline. `serde_json::Map` is a `BTreeMap` unless the
//! `preserve_order` feature is enabled somewhere in the build, so keys are
//! re-sorted explicitly rather than relying on feature unification.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

/// Serialize any value to canonical JSON text.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&sort_keys(v))?;
    out.push('\n');
    Ok(out)
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut sorted = Map::new();
            for (k, v) in entries {
                sorted.insert(k, sort_keys(v));
            }
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Write canonical JSON atomically: a sibling temp file is renamed over `path`.
pub fn write_canonical_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let text = to_canonical_string(value).map_err(io::Error::other)?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", crate::uid::generate()));
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn read_json(path: &Path) -> io::Result<Value> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Splits a JSON Pointer into unescaped reference tokens.
/// Returns `None` for strings that are not pointers (non-empty, not starting with `/`).
pub fn pointer_tokens(pointer: &str) -> Option<Vec<String>> {
    if pointer.is_empty() {
        return Some(Vec::new());
    }
    let rest = pointer.strip_prefix('/')?;
    Some(
        rest.split('/')
            .map(|t| t.replace("~1", "/").replace("~0", "~"))
            .collect(),
    )
}

/// Set the value at `pointer`, creating intermediate objects as needed.
/// Fails if a non-object value sits on the path.
pub fn pointer_set(root: &mut Value, pointer: &str, value: Value) -> Result<(), String> {
    let tokens = pointer_tokens(pointer).ok_or_else(|| format!("invalid JSON pointer `{pointer}`"))?;
    let Some((last, parents)) = tokens.split_last() else {
        *root = value;
        return Ok(());
    };
    let mut cur = root;
    for t in parents {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("`{pointer}` traverses a non-object value"))?;
        cur = obj.entry(t.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| format!("`{pointer}` traverses a non-object value"))?;
    obj.insert(last.clone(), value);
    Ok(())
}

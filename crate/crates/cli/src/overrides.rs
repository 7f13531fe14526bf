//! `key=value` overrides and TOML config files layered over a default config.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::UsageError;

/// Dotted paths of every leaf in `v` (arrays count as leaves).
fn leaf_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_paths(child, &p, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

pub fn valid_keys<T: Serialize>(cfg: &T) -> Vec<String> {
    let mut out = Vec::new();
    leaf_paths(&serde_json::to_value(cfg).expect("config serializes"), "", &mut out);
    out
}

/// Full dotted path for `key`, which may also be a unique leaf name.
fn resolve(key: &str, keys: &[String]) -> Option<String> {
    if keys.iter().any(|k| k == key) {
        return Some(key.to_string());
    }
    let mut hits = keys.iter().filter(|k| k.rsplit('.').next() == Some(key));
    match (hits.next(), hits.next()) {
        (Some(k), None) => Some(k.clone()),
        _ => None,
    }
}

fn slot<'a>(root: &'a mut Value, path: &str) -> &'a mut Value {
    path.split('.').fold(root, |v, k| &mut v[k])
}

fn parse_scalar(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

/// Value for `text`, shaped like `current` (comma lists for arrays).
fn parse_value(text: &str, current: &Value) -> Value {
    match current {
        Value::Array(_) if !text.trim_start().starts_with('[') => {
            if text.trim().is_empty() {
                Value::Array(Vec::new())
            } else {
                Value::Array(text.split(',').map(|t| parse_scalar(t.trim())).collect())
            }
        }
        _ => parse_scalar(text),
    }
}

fn rebuild<T: DeserializeOwned>(v: Value, what: &str) -> Result<T, UsageError> {
    serde_json::from_value(v).map_err(|e| UsageError(format!("invalid {what}: {e}")))
}

fn unknown_key(key: &str, keys: &[String]) -> UsageError {
    UsageError(format!("unknown config key `{key}`; valid keys: {}", keys.join(", ")))
}

fn merge(base: &mut Value, file: &Map<String, Value>, prefix: &str, keys: &[String]) -> Result<(), UsageError> {
    for (k, v) in file {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, &mut base[k.as_str()]) {
            (Value::Object(m), target @ Value::Object(_)) => merge(target, m, &path, keys)?,
            (_, target) => {
                if !keys.contains(&path) {
                    return Err(unknown_key(&path, keys));
                }
                *target = v.clone();
            }
        }
    }
    Ok(())
}

/// `base`, then the TOML file (if any), then each `key=value` in order.
pub fn layer<T: Serialize + DeserializeOwned>(base: &T, file: Option<&str>, sets: &[String]) -> Result<T, UsageError> {
    let keys = valid_keys(base);
    let mut v = serde_json::to_value(base).expect("config serializes");
    if let Some(text) = file {
        let parsed: Value = toml::from_str(text).map_err(|e| UsageError(format!("config file: {e}")))?;
        let Value::Object(m) = parsed else {
            return Err(UsageError("config file must be a table".into()));
        };
        merge(&mut v, &m, "", &keys)?;
    }
    for s in sets {
        let (key, text) = s
            .split_once('=')
            .ok_or_else(|| UsageError(format!("override `{s}` is not key=value")))?;
        let path = resolve(key.trim(), &keys).ok_or_else(|| unknown_key(key.trim(), &keys))?;
        let target = slot(&mut v, &path);
        let new = parse_value(text.trim(), target);
        *target = new;
    }
    rebuild(v, "config override")
}

//! Flat `key=value` config text shared by the head and training configs.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{invalid, Result};

/// Parses a flat `key=value` text (one pair per line, `#` comments).
pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(crate::error::Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            });
        };
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(crate::error::Error::Parse {
                line: i + 1,
                message: format!("key `{}` given twice", k.trim()),
            });
        }
    }
    Ok(out)
}

pub(crate) fn kv_usize(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    match map.get(key) {
        Some(v) => v
            .parse()
            .map_or_else(|_| invalid(format!("`{key}` must be a non-negative integer, got `{v}`")), Ok),
        None => invalid(format!("missing `{key}`")),
    }
}


/// Optional typed value: `Ok(None)` when the key is absent.
pub(crate) fn kv_opt<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_or_else(|_| invalid(format!("`{key}` has an invalid value `{v}`")), Ok),
    }
}

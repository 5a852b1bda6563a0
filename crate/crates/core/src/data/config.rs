use std::collections::BTreeMap;

use super::{DataError, Result};

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys are an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Config { line: i + 1, msg };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(err(format!("duplicate key '{k}'")));
        }
    }
    Ok(out)
}

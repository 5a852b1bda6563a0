//! `key = value` files as flag defaults, and the resolved-config record each
//! command leaves next to its output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use asr_bridge::data::parse_kv;
use serde::Serialize;

/// Finds `--config <path>` (or `--config=<path>`) after the subcommand.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(2);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Inserts the config file's entries as flags right after the subcommand, so
/// anything given on the command line overrides them.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let kv = parse_kv(&text).with_context(|| format!("in config {}", path.display()))?;
    let mut out: Vec<OsString> = args[..2].to_vec();
    for (k, v) in kv {
        let flag = format!("--{}", k.replace('_', "-"));
        match v.as_str() {
            "true" => out.push(flag.into()),
            "false" => {}
            _ => {
                out.push(flag.into());
                out.push(v.into());
            }
        }
    }
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

/// Renders flags as `key = value` lines that [`expand`] reads back.
pub fn render<A: Serialize>(command: &str, args: &A) -> Result<String> {
    let value = serde_json::to_value(args)?;
    let mut out = format!("# asrbridge {command}\n");
    let obj = value.as_object().context("arguments serialize to an object")?;
    for (k, v) in obj {
        let text = match v {
            serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Array(items) if items.is_empty() => continue,
            serde_json::Value::Array(items) => items
                .iter()
                .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        out.push_str(&format!("{} = {text}\n", k.replace('_', "-")));
    }
    Ok(out)
}

pub fn write<A: Serialize>(path: &Path, command: &str, args: &A) -> Result<()> {
    fs::write(path, render(command, args)?).with_context(|| format!("writing {}", path.display()))
}

//! Line-oriented `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be in
//! the caller's allowed list and may appear once.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn parse_config(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !allowed.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

/// Parses a comma-separated `key=value` list such as `P=768,D=768,C=100`.
pub fn parse_pairs(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    parse_config(&text.replace(',', "\n"), allowed)
}

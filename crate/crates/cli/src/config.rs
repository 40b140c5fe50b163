//! Flat `key = value` config files.

use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys are case-sensitive and may use `-` or `_`.
pub fn parse(text: &str) -> Result<Vec<Entry>, String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, found {line:?}", i + 1))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        if !seen.insert(key.clone()) {
            return Err(format!("line {}: duplicate key {key:?}", i + 1));
        }
        out.push(Entry {
            line: i + 1,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

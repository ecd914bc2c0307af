//! Flat `key = value` text with dotted keys, `#` comments and optional
//! `[section]` headers that prefix the keys below them.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Text before the first `#` outside double quotes.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: invalid key `{k}`", i + 1)));
            }
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
            if kv.entries.insert(key.clone(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sorted `key = value` lines; parses back to the same map.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            if v.contains('#') || v != v.trim() {
                out.push_str(&format!("{k} = \"{v}\"\n"));
            } else {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_quotes() {
        let kv = KeyValues::parse("seed = 4 # fixed\n\n[data]\npath = a.csv\ncovariates = \"x, z\"\n[bart]\ntrees=20\n").unwrap();
        assert_eq!(kv.get("seed"), Some("4"));
        assert_eq!(kv.get("data.path"), Some("a.csv"));
        assert_eq!(kv.get("data.covariates"), Some("x, z"));
        assert_eq!(kv.get("bart.trees"), Some("20"));
        assert_eq!(KeyValues::parse(&kv.render()).unwrap(), kv);
    }

    #[test]
    fn malformed_lines() {
        assert!(KeyValues::parse("seed 4").is_err());
        let mut kv = KeyValues::new();
        kv.set("out", "dir #2");
        assert_eq!(KeyValues::parse(&kv.render()).unwrap().get("out"), Some("dir #2"));
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("bad key = 1").is_err());
    }
}

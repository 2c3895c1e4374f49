//! Flat `key = value` configuration files.
//!
//! One entry per line; blank lines and lines starting with `#` are ignored.
//! Later duplicates override earlier ones.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, found '{line}'"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'"))),
        }
    }

    /// Fails on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.keys() {
            if !allowed.contains(&k) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
        }
        Ok(())
    }

    /// Entries of `other` replace ours.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.entries
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let c = KvConfig::parse("# comment\n a = 1 \n\nb=x y\na=2\n").unwrap();
        assert_eq!(c.get("a"), Some("2"));
        assert_eq!(c.get("b"), Some("x y"));
        assert_eq!(c.get_parsed::<u32>("a").unwrap(), Some(2));
        assert!(c.get_parsed::<u32>("b").is_err());
        assert_eq!(KvConfig::parse(&c.to_text()).unwrap(), c);
        assert!(KvConfig::parse("novalue\n").is_err());
        assert!(KvConfig::parse("=1\n").is_err());
        assert!(c.check_keys(&["a"]).is_err());
        assert!(c.check_keys(&["a", "b"]).is_ok());
    }

    #[test]
    fn merge_prefers_other() {
        let mut a = KvConfig::parse("x=1\ny=2").unwrap();
        a.merge(&KvConfig::parse("y=3\nz=4").unwrap());
        assert_eq!(a.to_text(), "x = 1\ny = 3\nz = 4\n");
    }
}

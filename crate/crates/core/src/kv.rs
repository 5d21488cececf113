//! Flat `key = value` text files. `#` starts a comment; blank lines are
//! ignored; keys are unique.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: IndexMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::Config(format!("{key} = {v}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V>
    where
        V::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Rejects keys outside `known`, catching typos in config files.
    pub fn ensure_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let kv = KeyValues::parse("# header\nc0 = 4  # stem\n\nname=toy\n").unwrap();
        assert_eq!(kv.get::<usize>("c0").unwrap(), Some(4));
        assert_eq!(kv.raw("name"), Some("toy"));
        assert_eq!(kv.get_or("missing", 7usize).unwrap(), 7);
        assert!(kv.get::<usize>("name").is_err());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KeyValues::parse("c0 4").is_err());
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("= 1").is_err());
        let kv = KeyValues::parse("typo = 1").unwrap();
        assert!(kv.ensure_known(&["c0"]).is_err());
    }

    #[test]
    fn render_round_trips() {
        let kv = KeyValues::parse("a = 1\nb = x, y").unwrap();
        assert_eq!(KeyValues::parse(&kv.render()).unwrap(), kv);
    }
}

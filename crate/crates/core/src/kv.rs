//! Flat `key = value` text files: one pair per line, `#` starts a comment.

use std::path::Path;

use crate::error::{Error, Result};

/// Parsed pairs in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvFile {
    pub entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", no + 1))
            })?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.iter().any(|(e, _)| *e == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
            entries.push((k, v.trim().to_string()));
        }
        Ok(KvFile { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Parses a value with a descriptive error.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

/// Parses a whitespace-separated list.
pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split_whitespace()
        .map(|v| parse_value(key, v))
        .collect()
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_duplicates() {
        let f = KvFile::parse("# header\na = 1\n\nb=two # trailing\n").unwrap();
        assert_eq!(f.get("a"), Some("1"));
        assert_eq!(f.get("b"), Some("two"));
        assert!(KvFile::parse("a = 1\na = 2\n").is_err());
        assert!(KvFile::parse("novalue\n").is_err());
        assert_eq!(KvFile::parse(&f.render()).unwrap(), f);
    }
}

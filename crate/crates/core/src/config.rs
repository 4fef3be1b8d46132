//! Flat `key = value` configuration text.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Readers consume keys as they go; [`KvReader::finish`] rejects whatever
//! was left over, so a misspelled key is an error rather than a silent no-op.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed assignments, in key order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvConfig {
    source: PathBuf,
    entries: BTreeMap<String, Entry>,
}

impl KvConfig {
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            let entry = Entry {
                value: v.trim().to_string(),
                line: i + 1,
            };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    msg: format!("duplicate key `{key}` (first on line {})", prev.line),
                });
            }
        }
        Ok(Self { source, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn reader(&self) -> KvReader<'_> {
        KvReader {
            cfg: self,
            used: Default::default(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Inserts or replaces a value (for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: 0,
            },
        );
    }
}

/// Tracks which keys were consumed.
pub struct KvReader<'a> {
    cfg: &'a KvConfig,
    used: std::collections::BTreeSet<String>,
}

impl KvReader<'_> {
    fn err(&self, key: &str, msg: String) -> Error {
        let line = self.cfg.entries.get(key).map_or(0, |e| e.line);
        Error::Parse {
            path: self.cfg.source.clone(),
            line,
            msg: format!("`{key}`: {msg}"),
        }
    }

    pub fn raw(&mut self, key: &str) -> Option<&str> {
        let e = self.cfg.entries.get(key)?;
        self.used.insert(key.to_string());
        Some(e.value.as_str())
    }

    /// Parses `key` into `target` when present.
    pub fn set<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.raw(key).map(str::to_owned) {
            *target = v.parse().map_err(|e: T::Err| self.err(key, e.to_string()))?;
        }
        Ok(())
    }

    pub fn set_with<T>(&mut self, key: &str, target: &mut T, parse: impl FnOnce(&str) -> std::result::Result<T, String>) -> Result<()> {
        if let Some(v) = self.raw(key).map(str::to_owned) {
            *target = parse(&v).map_err(|e| self.err(key, e))?;
        }
        Ok(())
    }

    /// Keys starting with `prefix` that have not been consumed yet.
    pub fn remaining_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.cfg
            .entries
            .keys()
            .filter(|k| k.starts_with(prefix) && !self.used.contains(*k))
            .cloned()
            .collect()
    }

    pub fn finish(self) -> Result<()> {
        if let Some(k) = self.cfg.entries.keys().find(|k| !self.used.contains(*k)) {
            return Err(self.err(k, "unknown key".into()));
        }
        Ok(())
    }
}

/// Parses a comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

/// Serializes `key = value` lines in the given order.
pub fn write_kv(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let cfg = KvConfig::parse("# comment\nalpha = 5\n\nbeta=2.5 # trailing\n", "t.cfg").unwrap();
        let mut r = cfg.reader();
        let mut alpha = 0usize;
        r.set("alpha", &mut alpha).unwrap();
        assert_eq!(alpha, 5);
        let err = r.finish().unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
        assert!(err.to_string().contains(":4:"), "{err}");
    }

    #[test]
    fn reports_line_of_bad_values() {
        let cfg = KvConfig::parse("a = 1\nb = x\n", "t.cfg").unwrap();
        let mut r = cfg.reader();
        let mut b = 0.0f64;
        let err = r.set("b", &mut b).unwrap_err();
        assert!(err.to_string().starts_with("t.cfg:2:"), "{err}");
        assert!(KvConfig::parse("novalue\n", "t.cfg").is_err());
        assert!(KvConfig::parse("a = 1\na = 2\n", "t.cfg").is_err());
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<f64>("1, 2.5,3").unwrap(), vec![1.0, 2.5, 3.0]);
        assert!(parse_list::<f64>("1, x").is_err());
    }
}

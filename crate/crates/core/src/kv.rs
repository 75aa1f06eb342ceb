//! Flat `key = value` text with dotted section prefixes.
//!
//! ```text
//! # comment
//! scenario.clients = 3
//! algorithm.family = elastic-transfer
//! ```
//!
//! Lists are comma separated; a table is rows of lists separated by `;`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::error::{FclError, Result};

#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FclError::Parse {
                line: idx + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(FclError::Parse {
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.to_string(), (idx + 1, value.trim().to_string())).is_some() {
                return Err(FclError::Parse {
                    line: idx + 1,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| FclError::Parse {
                line: self.line(key),
                message: format!("{key}: '{v}': {e}"),
            }),
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some).map_err(|message| FclError::Parse {
                line: self.line(key),
                message: format!("{key}: {message}"),
            }),
        }
    }

    pub fn require_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get_list(key)?
            .ok_or_else(|| FclError::config(format!("missing key '{key}'")))
    }

    pub fn get_table<T: FromStr>(&self, key: &str) -> Result<Option<Vec<Vec<T>>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(';')
                .map(parse_list)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|message| FclError::Parse {
                    line: self.line(key),
                    message: format!("{key}: {message}"),
                }),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on the first key no accessor asked for.
    pub fn reject_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, (line, _))) => Err(FclError::Parse {
                line: *line,
                message: format!("unknown key '{k}'"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| format!("'{}': {e}", s.trim())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_lists_tables() {
        let kv = KeyValues::parse("# header\na.b = 3 # trailing\nlist = 1, 2,3\ntable = 1,2;3,4\n\n").unwrap();
        assert_eq!(kv.get::<u32>("a.b").unwrap(), Some(3));
        assert_eq!(kv.get_list::<u32>("list").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(kv.get_table::<u32>("table").unwrap(), Some(vec![vec![1, 2], vec![3, 4]]));
        assert_eq!(kv.get::<u32>("missing").unwrap(), None);
        kv.reject_unused().unwrap();
    }

    #[test]
    fn errors_carry_lines() {
        assert!(matches!(KeyValues::parse("a = 1\nnot a pair\n"), Err(FclError::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2\n"), Err(FclError::Parse { line: 2, .. })));
        let kv = KeyValues::parse("x = 1\ny = abc\n").unwrap();
        assert!(matches!(kv.get::<f64>("y"), Err(FclError::Parse { line: 2, .. })));
        assert!(matches!(kv.reject_unused(), Err(FclError::Parse { line: 1, .. })));
    }
}

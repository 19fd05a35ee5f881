//! Plain-text `key = value` files. `#` starts a comment; keys may repeat.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<(usize, String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            entries.push((i + 1, k.to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, k, _)| k.as_str())
    }

    /// Last value for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter(move |(_, k, _)| k == key).map(|(_, _, v)| v.as_str())
    }

    pub fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((line, _, v)) = self.entries.iter().rev().find(|(_, k, _)| k == key) else {
            return Ok(None);
        };
        v.parse().map(Some).map_err(|e| Error::Parse {
            line: *line,
            message: format!("{key}: {e}"),
        })
    }

    /// Errors on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(_, k, _)| !known.contains(&k.as_str())) {
            Some((line, k, _)) => Err(Error::Parse {
                line: *line,
                message: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

/// Parses `true/false/yes/no/1/0`.
pub fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

/// Parses `HxW` (or a single number for a square).
pub fn parse_size(v: &str) -> Option<(usize, usize)> {
    match v.split_once(['x', 'X']) {
        Some((h, w)) => Some((h.trim().parse().ok()?, w.trim().parse().ok()?)),
        None => {
            let s = v.trim().parse().ok()?;
            Some((s, s))
        }
    }
}

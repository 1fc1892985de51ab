//! Plain-text `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Tuple
//! values are comma separated (`velocity = 2, -1`).

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {v:?}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing required key {key:?}")))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated tuple of exactly `N` values.
    pub fn get_tuple<T: FromStr + Copy + Default, const N: usize>(&self, key: &str) -> Result<Option<[T; N]>> {
        let Some(raw) = self.entries.get(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(Error::InvalidConfig(format!(
                "{key} expects {N} comma-separated values, got {raw:?}"
            )));
        }
        let mut out = [T::default(); N];
        for (slot, p) in out.iter_mut().zip(parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {raw:?}")))?;
        }
        Ok(Some(out))
    }

    /// Largest `N` such that some key starts with `prefix.N.`, plus one.
    pub fn indexed_count(&self, prefix: &str) -> usize {
        let head = format!("{prefix}.");
        self.entries
            .keys()
            .filter_map(|k| k.strip_prefix(&head))
            .filter_map(|rest| rest.split('.').next()?.parse::<usize>().ok())
            .map(|i| i + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub(crate) fn fmt_tuple<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

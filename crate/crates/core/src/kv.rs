//! Sectionless `key = value` text files.
//!
//! `#` starts a comment line, blank lines are ignored, keys may contain dots. Consumers
//! `take` the keys they understand and then call `finish`, which rejects leftovers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KvMap {
    entries: BTreeMap<String, (String, usize)>,
    origin: String,
}

impl KvMap {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Usage(format!(
                    "{origin}:{}: expected `key = value`, found `{line}`",
                    i + 1
                )));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Usage(format!("{origin}:{}: empty key", i + 1)));
            }
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::Usage(format!("{origin}:{}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(KvMap {
            entries,
            origin: origin.to_string(),
        })
    }

    /// Where a key came from: `file:line`, or `override` for inserted keys.
    fn at(&self, line: usize) -> String {
        if line == 0 {
            "override".into()
        } else {
            format!("{}:{line}", self.origin)
        }
    }

    /// Adds or replaces a key, as a command-line override would.
    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Usage(format!("{}: bad value `{v}` for `{key}`: {e}", self.at(line)))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.take(key)?
            .ok_or_else(|| Error::Usage(format!("{}: missing key `{key}`", self.origin)))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => parse_list(&v)
                .map(Some)
                .map_err(|e| Error::Usage(format!("{}: `{key}`: {e}", self.at(line)))),
        }
    }

    /// Fails on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            None => Ok(()),
            Some((k, (_, line))) => Err(Error::Usage(format!("{}: unknown key `{k}`", self.at(*line)))),
        }
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("bad item `{p}`: {e}")))
        .collect()
}

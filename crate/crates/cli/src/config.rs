//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, keys may carry dotted section
//! prefixes (`drift.kappa = 1.0`). Lists are comma-separated.

use std::collections::BTreeMap;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::field(format!("line {}", lineno + 1), format!("expected key = value, got `{line}`"))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::field(format!("line {}", lineno + 1), "empty key"));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::field(k, "given more than once"));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// SHA-256 of the normalised entries (sorted, trimmed), hex, first 16 digits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.entries {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn str_opt(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn str(&self, key: &str) -> CliResult<&str> {
        self.str_opt(key).ok_or_else(|| CliError::field(key, "missing"))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.str_opt(key).unwrap_or(default)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let s = self.str(key)?;
        s.parse()
            .map_err(|_| CliError::field(key, format!("cannot parse `{s}`")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.str_opt(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.get_opt(key)?.unwrap_or(default))
    }

    pub fn list(&self, key: &str) -> CliResult<Vec<f64>> {
        let s = self.str(key)?;
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::field(key, format!("cannot parse list item `{}`", p.trim())))
            })
            .collect()
    }

    pub fn list_opt(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        match self.str_opt(key) {
            None => Ok(None),
            Some(_) => self.list(key).map(Some),
        }
    }

    pub fn usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        self.str(key)?
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::field(key, format!("cannot parse list item `{}`", p.trim())))
            })
            .collect()
    }
}

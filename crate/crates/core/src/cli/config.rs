//! Flag / config-file resolution.
//!
//! A config file is plain text with one `key = value` per line; keys are the
//! long flag names without dashes prefix (`block-size = 2`). Blank lines and
//! lines starting with `#` are ignored. Flags override the file, the file
//! overrides built-in defaults, and a key the subcommand does not know is an
//! error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", k + 1)))?;
        let key = key.trim().trim_start_matches("--").to_string();
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("config line {}: duplicate key {key:?}", k + 1)));
        }
    }
    Ok(out)
}

/// Resolves settings one key at a time and records the outcome.
pub struct Resolver {
    file: BTreeMap<String, String>,
    known: BTreeSet<&'static str>,
    resolved: Vec<(&'static str, String)>,
}

impl Resolver {
    pub fn new(config: Option<&str>) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(Path::new(path), e))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file, known: BTreeSet::new(), resolved: Vec::new() })
    }

    pub fn from_map(file: BTreeMap<String, String>) -> Self {
        Self { file, known: BTreeSet::new(), resolved: Vec::new() }
    }

    /// Flag, else file, else `default`; `None` if none of them is set.
    pub fn opt<T>(&mut self, key: &'static str, flag: Option<T>, default: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.known.insert(key);
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(text) => Some(
                    text.parse::<T>().map_err(|e| Error::Config(format!("config key {key:?}: {e}")))?,
                ),
                None => default,
            },
        };
        if let Some(v) = &value {
            self.resolved.push((key, v.to_string()));
        }
        Ok(value)
    }

    pub fn get<T>(&mut self, key: &'static str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self.opt(key, flag, Some(default))?.expect("default supplied"))
    }

    pub fn require<T>(&mut self, key: &'static str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.opt(key, flag, None)?.ok_or_else(|| Error::Config(format!("--{key} is required")))
    }

    /// Boolean switch: on if the flag is given or the file says `true`.
    pub fn switch(&mut self, key: &'static str, flag: bool) -> Result<bool> {
        let v = self.get(key, flag.then_some(true), false)?;
        Ok(v)
    }

    /// Fails on config keys this subcommand never asked for.
    pub fn finish(&self) -> Result<()> {
        if let Some(key) = self.file.keys().find(|k| !self.known.contains(k.as_str())) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        Ok(())
    }

    /// `key = value` lines in resolution order.
    pub fn render(&self, subcommand: &str) -> String {
        let mut out = format!("# resolved configuration for `{subcommand}`\n");
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Comma-separated list of unsigned integers, e.g. `10,20,40`.
pub fn parse_list(key: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Config(format!("--{key}: {t:?}: {e}"))))
        .collect()
}

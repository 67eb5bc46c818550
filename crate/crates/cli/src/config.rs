//! Flat `key = value` configuration files and the flag/file/default overlay.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Error that maps to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `key = value` lines. Blank lines and `#` comments (whole-line or
/// trailing) are ignored; keys outside `allowed` are rejected.
pub fn parse(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('-', "_");
        if !allowed.contains(&key.as_str()) {
            return Err(UsageError(format!("config line {}: unknown key `{key}`", i + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(UsageError(format!("config line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

pub fn load(path: &Path, allowed: &[&str]) -> anyhow::Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
    Ok(parse(&text, allowed)?)
}

/// Resolved settings: flags over file over defaults.
#[derive(Debug, Clone, Default)]
pub struct Resolved(pub BTreeMap<String, String>);

impl Resolved {
    pub fn layer(defaults: &[(&str, &str)], file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Self {
        let mut map: BTreeMap<String, String> = defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        map.extend(file);
        map.extend(flags);
        Resolved(map)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn str(&self, key: &str) -> anyhow::Result<&str> {
        self.get(key).ok_or_else(|| usage(format!("missing setting `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> anyhow::Result<T> {
        let v = self.str(key)?;
        v.parse()
            .map_err(|_| usage(format!("invalid value `{v}` for `{key}`")))
    }

    pub fn opt<T: std::str::FromStr>(&self, key: &str) -> anyhow::Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    pub fn bool(&self, key: &str) -> anyhow::Result<bool> {
        match self.str(key)?.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            v => Err(usage(format!("invalid boolean `{v}` for `{key}`"))),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }
}

/// Collects the flags that were actually given.
#[derive(Default)]
pub struct Flags(pub BTreeMap<String, String>);

impl Flags {
    pub fn put<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.insert(key.to_string(), v.to_string());
        }
    }
}

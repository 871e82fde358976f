//! `key = value` settings: a config file merged with `--set` overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

/// Raised for malformed settings; mapped to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn split_pair(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then(|| (k.to_string(), v.trim().to_string()))
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).ok_or_else(|| UsageError(format!("config line {}: expected key = value", i + 1)))?;
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = split_pair(o).ok_or_else(|| UsageError(format!("--set `{o}`: expected key=value")))?;
            self.values.insert(k, v);
        }
        Ok(())
    }

    pub fn set_default(&mut self, key: &str, value: impl ToString) {
        self.values.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    /// Typed value for `key`, recording `default` when unset so that the
    /// effective configuration is complete.
    pub fn get<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + ToString,
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            Some(v) => v.parse().map_err(|e| anyhow!(UsageError(format!("setting `{key}` = `{v}`: {e}")))),
            None => {
                self.values.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.values).expect("string map")
    }
}

/// `1:200,2:1300` → `[(1, 200), (2, 1300)]`.
pub fn parse_plan(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (l, c) = p.split_once(':').ok_or_else(|| UsageError(format!("plan entry `{p}`: expected length:count")))?;
            Ok((
                l.trim().parse().map_err(|e| UsageError(format!("plan entry `{p}`: {e}")))?,
                c.trim().parse().map_err(|e| UsageError(format!("plan entry `{p}`: {e}")))?,
            ))
        })
        .collect()
}

pub fn format_plan(plan: &[(usize, usize)]) -> String {
    plan.iter().map(|(l, c)| format!("{l}:{c}")).collect::<Vec<_>>().join(",")
}

/// `1..5` or `3` → inclusive range.
pub fn parse_k_range(s: &str) -> Result<(usize, usize)> {
    let bad = || anyhow!(UsageError(format!("--k `{s}`: expected a..b or a single k")));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().trim_start_matches('=').parse().map_err(|_| bad())?),
        None => {
            let k = s.trim().parse().map_err(|_| bad())?;
            (k, k)
        }
    };
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

//! Run configuration: flags override a key=value file, which overrides defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use choquard_core::quadrature::QuadratureSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const WORKERS_ENV: &str = "CHOQUARD_WORKERS";

/// Values read from a `key = value` file. Blank lines and `#` comments are skipped.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("config line {}: expected key = value", lineno + 1)))?;
            entries.insert(k.trim().replace('_', "-"), v.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Resolves parameters and records every resolved value for the report.
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    pub params: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Resolver {
            file,
            params: BTreeMap::new(),
        }
    }

    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(
                    s.parse::<T>()
                        .map_err(|e| CliError::Validation(format!("config key '{key}': {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.params.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.params.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + ToString,
        T::Err: std::fmt::Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::Validation(format!("missing required parameter --{key}")))
    }

    pub fn flag(&mut self, key: &str, set: bool) -> Result<bool, CliError> {
        let v = set || self.opt::<bool>(key, None)?.unwrap_or(false);
        self.params.insert(key.to_string(), v.to_string());
        Ok(v)
    }
}

/// Comma-separated numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct NumList(pub Vec<f64>);

impl FromStr for NumList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(NumList)
    }
}

impl std::fmt::Display for NumList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Points separated by ';', coordinates by ','.
#[derive(Debug, Clone, PartialEq)]
pub struct PointList(pub Vec<Vec<f64>>);

impl FromStr for PointList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let pts = s
            .split(';')
            .filter(|t| !t.trim().is_empty())
            .map(|p| NumList::from_str(p).map(|l| l.0))
            .collect::<Result<Vec<_>, _>>()?;
        if pts.iter().any(|p| p.len() != 3) {
            return Err("points need three coordinates".into());
        }
        Ok(PointList(pts))
    }
}

impl std::fmt::Display for PointList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| NumList(p.clone()).to_string()).collect();
        f.write_str(&parts.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub domain: String,
    pub h: f64,
    pub mu: f64,
    pub n: usize,
    pub output_dir: PathBuf,
    /// Subcommand parameters as resolved.
    pub params: BTreeMap<String, String>,
    pub quadrature: QuadratureSpec,
    pub seed: u64,
    pub workers: usize,
}

/// Worker count from the flag/file value or the environment, else all cores.
pub fn default_workers(resolved: Option<usize>) -> Result<usize, CliError> {
    if let Some(w) = resolved {
        return Ok(w);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|e| CliError::Validation(format!("{WORKERS_ENV}: {e}"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

//! Loading, validating and hashing run configurations.
//!
//! A configuration is a TOML file whose tables mirror
//! [`SimulationConfig`]. Errors carry `path:line:` prefixes: parse errors use
//! the span reported by the TOML parser, validation errors point at the line
//! that sets the offending field (or its table header when the field was
//! defaulted).

use std::path::{Path, PathBuf};

use byzasync::scheduler::{parse_trace, ScheduleKind};
use byzasync::sim::{attach_trace, SimulationConfig};
use byzasync::Error;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

/// A parsed configuration together with the text it came from, kept for
/// anchoring later validation errors.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub source: String,
    pub config: SimulationConfig,
}

impl LoadedConfig {
    /// Validates the configuration and loads a replay trace if the schedule
    /// asks for one. Call after applying command-line overrides.
    pub fn finish(&mut self) -> CliResult<()> {
        if self.config.schedule.kind == ScheduleKind::TraceFile && self.config.schedule.replay.is_none() {
            if let Some(file) = self.config.schedule.trace_file.clone() {
                let resolved = self.path.parent().unwrap_or(Path::new(".")).join(&file);
                let text = std::fs::read_to_string(&resolved).map_err(|e| {
                    self.anchored("schedule.trace_file", &format!("cannot read {}: {e}", resolved.display()))
                })?;
                let events = parse_trace(&text)
                    .map_err(|e| CliError::input(format!("{}: {e}", resolved.display())))?;
                attach_trace(&mut self.config.schedule, events);
            }
        }
        self.config.validate().map_err(|e| self.validation_error(e))
    }

    fn validation_error(&self, err: Error) -> CliError {
        match err {
            Error::Config { field, message } => self.anchored(&field, &message),
            other => CliError::input(format!("{}: {other}", self.path.display())),
        }
    }

    fn anchored(&self, field: &str, message: &str) -> CliError {
        let prefix = match locate_field(&self.source, field) {
            Some(line) => format!("{}:{line}", self.path.display()),
            None => self.path.display().to_string(),
        };
        CliError::input(format!("{prefix}: {field}: {message}"))
    }
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: cannot read config: {e}", path.display())))?;
    let config = parse(&source).map_err(|(line, col, msg)| {
        CliError::input(match line {
            Some(line) => format!("{}:{line}:{col}: {msg}", path.display()),
            None => format!("{}: {msg}", path.display()),
        })
    })?;
    Ok(LoadedConfig {
        path: path.to_path_buf(),
        source,
        config,
    })
}

/// Parses TOML text; on failure returns the 1-based line and column of the
/// error when the parser reports one.
pub fn parse(source: &str) -> Result<SimulationConfig, (Option<usize>, usize, String)> {
    toml::from_str(source).map_err(|e: toml::de::Error| {
        let message = e.message().trim().to_string();
        match e.span() {
            Some(span) => {
                let (line, col) = line_col(source, span.start);
                (Some(line), col, message)
            }
            None => (None, 0, message),
        }
    })
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// 1-based line that assigns the dotted `field`, else the line opening its
/// table, else `None`.
pub fn locate_field(source: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", field),
    };
    let mut current = String::new();
    let mut header = None;
    for (n, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == table {
                header = Some(n + 1);
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let full = if current.is_empty() {
            lhs.to_string()
        } else {
            format!("{current}.{lhs}")
        };
        if full == field || (current == table && lhs == key) {
            return Some(n + 1);
        }
    }
    header
}

/// Canonical JSON form: object keys sorted, defaults filled in.
pub fn canonical_json(config: &SimulationConfig) -> String {
    // serde_json's map is ordered by key, so serialising a `Value` sorts.
    let value: Value = serde_json::to_value(config).expect("configs serialise");
    serde_json::to_string(&value).expect("values serialise")
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Content hash of the canonical configuration.
pub fn config_hash(config: &SimulationConfig) -> String {
    sha256_hex(&canonical_json(config))
}

/// Hash of the configuration with the seed, trial count and assertion level
/// removed. Runs sharing it sample the same distribution and can be pooled.
pub fn setting_hash(config: &SimulationConfig) -> String {
    let mut value: Value = serde_json::to_value(config).expect("configs serialise");
    if let Value::Object(map) = &mut value {
        for key in ["seed", "trials", "assert_level"] {
            map.remove(key);
        }
    }
    sha256_hex(&serde_json::to_string(&value).expect("values serialise"))
}

//! Optional `key = value` configuration file.
//!
//! Grammar, one setting per line:
//!
//! ```text
//! # comment              blank lines and lines starting with '#' are ignored
//! registry = ./registry  value runs to end of line, surrounding whitespace trimmed
//! trust = "trust.cbor"   one pair of double quotes around a value is stripped
//! base_domain = wm.test
//! resolve = wm.test=127.0.0.1:8080   repeatable
//! format = json          json | cbor
//! ```
//!
//! Keys are case-sensitive. Unknown keys and repeated single-valued keys are
//! errors. Command-line flags and environment variables take precedence.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },
    #[error("{0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Json,
    Cbor,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileConfig {
    pub registry: Option<PathBuf>,
    pub trust: Option<PathBuf>,
    pub base_domain: Option<String>,
    pub resolve: Vec<(String, SocketAddr)>,
    pub format: Option<OutputFormat>,
}

/// Parses `DOMAIN=ADDR`.
pub fn parse_resolve(s: &str) -> Result<(String, SocketAddr), String> {
    let (domain, addr) = s.split_once('=').ok_or_else(|| format!("expected DOMAIN=ADDR, got '{s}'"))?;
    let addr = addr.trim().parse().map_err(|e| format!("bad address '{addr}': {e}"))?;
    let domain = domain.trim().trim_end_matches('.').to_ascii_lowercase();
    if domain.is_empty() {
        return Err(format!("empty domain in '{s}'"));
    }
    Ok((domain, addr))
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = FileConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| ConfigError::Syntax { path: origin.to_string(), line: i + 1, msg };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let key = key.trim();
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            fn set<T>(slot: &mut Option<T>, v: T, key: &str) -> Result<(), String> {
                if slot.is_some() {
                    return Err(format!("'{key}' is set twice"));
                }
                *slot = Some(v);
                Ok(())
            }
            match key {
                "registry" => set(&mut cfg.registry, PathBuf::from(value), key),
                "trust" => set(&mut cfg.trust, PathBuf::from(value), key),
                "base_domain" => set(&mut cfg.base_domain, value.to_ascii_lowercase(), key),
                "resolve" => parse_resolve(value).map(|r| cfg.resolve.push(r)),
                "format" => match value {
                    "json" => set(&mut cfg.format, OutputFormat::Json, key),
                    "cbor" => set(&mut cfg.format, OutputFormat::Cbor, key),
                    other => Err(format!("format must be json or cbor, got '{other}'")),
                },
                other => Err(format!("unknown key '{other}'")),
            }
            .map_err(err)?;
        }
        Ok(cfg)
    }
}

//! Flat `key = value` configuration file. Flags always win over file
//! entries; file entries win over built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const DEFAULT_CONFIG_FILE: &str = "usersim.conf";

/// Keys the file may set. Anything else is rejected so typos surface.
pub const KNOWN_KEYS: &[&str] = &[
    "server", "cache", "jobs", "seed", "backend", "base-url", "model-id", "format", "mode",
    "split",
];

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    /// Parse a config file body. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(format!("line {}: unknown key {key:?}", i + 1));
            }
            if value.is_empty() {
                return Err(format!("line {}: empty value for {key:?}", i + 1));
            }
            entries.insert(key.to_string(), value.to_string());
        }
        Ok(FileConfig { entries })
    }

    /// Load from an explicit path (missing file is an error) or from the
    /// default location (missing file is an empty config).
    pub fn load(explicit: Option<&Path>) -> Result<Self, String> {
        let (path, required) = match explicit {
            Some(path) => (path.to_path_buf(), true),
            None => (PathBuf::from(DEFAULT_CONFIG_FILE), false),
        };
        match std::fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text)
                .map_err(|e| format!("{}: {e}", path.display())),
            Err(_) if !required => Ok(FileConfig::default()),
            Err(e) => Err(format!("{}: {e}", path.display())),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(value) => value
                .parse()
                .map(Some)
                .map_err(|_| format!("config key {key:?}: cannot parse {value:?}")),
        }
    }
}

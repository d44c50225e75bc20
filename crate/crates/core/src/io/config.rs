//! Plain `key = value` config files with optional `[section]` headers.
//!
//! Keys inside a section are addressed as `section.key`. `#` and `;` start
//! comments. Later assignments override earlier ones.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use super::seed::content_hash;
use super::IoError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    IoError::Config(format!("line {}: unterminated section header", i + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                IoError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(IoError::Config(format!("line {}: empty key", i + 1)));
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            entries.insert(full, v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Parse `key` if present; `default` otherwise.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, IoError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| IoError::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn get_list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    /// Entries under `[name]`, with the prefix stripped.
    pub fn section(&self, name: &str) -> Config {
        let prefix = format!("{name}.");
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|k| (k.to_string(), v.clone())))
            .collect();
        Config { entries }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Canonical text form (sorted `key = value` lines).
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        content_hash(self.canonical().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_comments_and_overrides() {
        let c = Config::parse(
            "seed = 3\n# comment\n[train]\nsteps = 100 ; trailing\nlr=1e-3\n[eval]\nepisodes=50\nsteps = 7\n",
        )
        .unwrap();
        assert_eq!(c.get("seed"), Some("3"));
        assert_eq!(c.get_or("train.steps", 0usize).unwrap(), 100);
        assert_eq!(c.get_or("train.lr", 0.0f64).unwrap(), 1e-3);
        assert_eq!(c.get_or("eval.steps", 0u32).unwrap(), 7);
        assert_eq!(c.get_or("missing", 5u32).unwrap(), 5);
        assert!(c.get_or::<u32>("train.lr", 0).is_err());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(Config::parse("[oops\n").is_err());
        assert!(Config::parse("novalue\n").is_err());
        assert!(Config::parse(" = 3\n").is_err());
    }

    #[test]
    fn section_strips_prefix() {
        let c = Config::parse("seed = 1\n[task]\nmax_steps = 40\n[train]\nlr = 1\n").unwrap();
        let t = c.section("task");
        assert_eq!(t.get("max_steps"), Some("40"));
        assert_eq!(t.keys().count(), 1);
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = Config::parse("a=1\nb = 2\n").unwrap();
        let b = Config::parse("b=2   # x\n\na =1").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.get_list("a"), vec!["1"]);
    }
}

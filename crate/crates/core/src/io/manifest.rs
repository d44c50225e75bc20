//! Run manifests written next to every generated output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::seed::content_hash;
use super::IoError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub records: usize,
    pub hash: String,
}

/// Timing is kept out of the hashed section so that identical runs produce
/// identical [`Manifest::outputs_hash`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub global_seed: u64,
    pub config_hash: Option<String>,
    pub outputs: Vec<OutputEntry>,
    pub counters: BTreeMap<String, u64>,
    pub elapsed_ms: u64,
}

impl Manifest {
    pub fn new(command: Vec<String>, global_seed: u64) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command,
            global_seed,
            config_hash: None,
            outputs: Vec::new(),
            counters: BTreeMap::new(),
            elapsed_ms: 0,
        }
    }

    /// Register an emitted file from its bytes. `records` counts lines.
    pub fn add_output(&mut self, path: impl AsRef<Path>, bytes: &[u8]) {
        let records = bytes.iter().filter(|b| **b == b'\n').count();
        self.outputs.push(OutputEntry {
            path: path.as_ref().display().to_string(),
            records,
            hash: content_hash(bytes),
        });
    }

    pub fn count(&mut self, key: &str, n: u64) {
        *self.counters.entry(key.to_string()).or_default() += n;
    }

    /// Hash over every output hash, in registration order.
    pub fn outputs_hash(&self) -> String {
        let joined: Vec<&str> = self.outputs.iter().map(|o| o.hash.as_str()).collect();
        content_hash(joined.join(",").as_bytes())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| IoError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| IoError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Re-hash every listed output on disk and compare against the recorded
    /// hashes and record counts. Returns the mismatching paths.
    pub fn verify(&self, base: impl AsRef<Path>) -> Result<Vec<String>, IoError> {
        let mut bad = Vec::new();
        for o in &self.outputs {
            let p = base.as_ref().join(&o.path);
            let p = if p.exists() { p } else { Path::new(&o.path).to_path_buf() };
            let bytes = fs::read(&p).map_err(|e| IoError::io(&p, e))?;
            let lines = bytes.iter().filter(|b| **b == b'\n').count();
            if content_hash(&bytes) != o.hash || lines != o.records {
                bad.push(o.path.clone());
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_hashes_match_files() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.jsonl");
        let bytes = b"{\"x\":1}\n{\"x\":2}\n".to_vec();
        fs::write(&file, &bytes).unwrap();
        let mut m = Manifest::new(vec!["forge".into()], 3);
        m.add_output("a.jsonl", &bytes);
        assert_eq!(m.outputs[0].records, 2);
        assert!(m.verify(dir.path()).unwrap().is_empty());
        fs::write(&file, b"{\"x\":1}\n").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["a.jsonl".to_string()]);
    }

    #[test]
    fn outputs_hash_ignores_timing() {
        let mut a = Manifest::new(vec![], 1);
        a.add_output("f", b"x\n");
        let mut b = a.clone();
        b.elapsed_ms = 999;
        assert_eq!(a.outputs_hash(), b.outputs_hash());
    }
}

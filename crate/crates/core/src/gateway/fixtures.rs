//! Recorded request/response pairs for offline, deterministic runs. The
//! store is a JSONL file with one `{prompt_hash, request, response}` object
//! per line, keyed by a hash of the full request body.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How the client combines the fixture store with the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureMode {
    /// Serve cached responses only; uncached requests fail without any
    /// network activity.
    Replay,
    /// Serve cached responses, send uncached requests, and append the new
    /// pairs to the store.
    Record,
    /// Ignore fixtures entirely.
    Off,
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureLine {
    prompt_hash: String,
    request: serde_json::Value,
    response: serde_json::Value,
}

/// Content hash identifying one request. The request JSON serializes with
/// sorted keys, so equal requests always map to equal hashes.
pub fn fixture_key(request: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.to_string().as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[derive(Debug)]
pub struct FixtureStore {
    path: PathBuf,
    entries: HashMap<String, serde_json::Value>,
}

impl FixtureStore {
    /// Loads an existing store. The file must exist; use
    /// [`FixtureStore::load_or_empty`] when recording from scratch.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad fixture line: {e}"),
            })?;
            entries.insert(parsed.prompt_hash, parsed.response);
        }
        Ok(Self { path: path.to_path_buf(), entries })
    }

    pub fn load_or_empty(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self { path: path.to_path_buf(), entries: HashMap::new() })
        }
    }

    pub fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds one pair to the in-memory map and appends it to the file.
    pub fn append(
        &mut self,
        key: String,
        request: serde_json::Value,
        response: serde_json::Value,
    ) -> Result<()> {
        let line = FixtureLine {
            prompt_hash: key.clone(),
            request,
            response: response.clone(),
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let mut body = serde_json::to_string(&line)?;
        body.push('\n');
        file.write_all(body.as_bytes())?;
        self.entries.insert(key, response);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn equal_requests_hash_equal_and_different_requests_differ() {
        let a = json!({"model": "m", "input": ["text"]});
        let b = json!({"model": "m", "input": ["text"]});
        let c = json!({"model": "m", "input": ["other"]});
        assert_eq!(fixture_key(&a), fixture_key(&b));
        assert_ne!(fixture_key(&a), fixture_key(&c));
        assert_eq!(fixture_key(&a).len(), 64);
    }

    #[test]
    fn recorded_entries_survive_a_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        let mut store = FixtureStore::load_or_empty(&path).unwrap();
        assert!(store.is_empty());
        let request = json!({"model": "m", "messages": [{"role": "user", "content": "hi"}]});
        let key = fixture_key(&request);
        store
            .append(key.clone(), request.clone(), json!({"ok": 1}))
            .unwrap();
        store
            .append("other".into(), json!({"x": 2}), json!({"ok": 2}))
            .unwrap();

        let reloaded = FixtureStore::load(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get(&key), Some(&json!({"ok": 1})));
        assert_eq!(reloaded.get("missing"), None);

        let raw = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
        assert!(first.get("prompt_hash").is_some());
        assert!(first.get("request").is_some());
        assert!(first.get("response").is_some());
    }

    #[test]
    fn loading_a_missing_file_is_an_error() {
        assert!(FixtureStore::load(Path::new("/nonexistent/fixtures.jsonl")).is_err());
    }

    #[test]
    fn malformed_lines_are_reported_with_their_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        std::fs::write(
            &path,
            "{\"prompt_hash\":\"a\",\"request\":{},\"response\":{}}\nnot json\n",
        )
        .unwrap();
        let err = FixtureStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}

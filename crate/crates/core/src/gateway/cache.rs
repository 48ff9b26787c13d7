//! Append-only, content-addressed fixture store.
//!
//! One JSON-lines file per service kind (`chat.jsonl`, `embed.jsonl`,
//! `search.jsonl`). Each line holds `key`, `service`, `request`,
//! `response` and `captured_at`. Existing entries are loaded once into an
//! immutable snapshot; entries recorded during the run go to a side map and
//! are appended to disk through a single writer lock.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CacheKey, ServiceKind};
use crate::digest::{canonical_json, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub service: ServiceKind,
    pub request: Value,
    pub response: Value,
    pub captured_at: String,
}

#[derive(Debug)]
pub struct FixtureCache {
    dir: PathBuf,
    snapshot: HashMap<String, Value>,
    recorded: RwLock<HashMap<String, Value>>,
    writer: Mutex<()>,
    digest: String,
}

fn file_for(dir: &Path, kind: ServiceKind) -> PathBuf {
    dir.join(format!("{}.jsonl", kind.as_str()))
}

impl FixtureCache {
    /// Load every entry under `dir`, creating the directory if needed.
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut snapshot = HashMap::new();
        let mut digest_input = Vec::new();
        for kind in ServiceKind::ALL {
            let path = file_for(dir, kind);
            if !path.exists() {
                continue;
            }
            let bytes = fs::read(&path)?;
            digest_input.extend_from_slice(kind.as_str().as_bytes());
            digest_input.extend_from_slice(&bytes);
            for (n, line) in BufReader::new(bytes.as_slice()).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                if entry.service != kind {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}:{}: {} entry in the {kind} file", path.display(), n + 1, entry.service),
                    ));
                }
                // first write wins; later duplicates are identical by construction
                snapshot.entry(entry.key).or_insert(entry.response);
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            snapshot,
            recorded: RwLock::new(HashMap::new()),
            writer: Mutex::new(()),
            digest: sha256_hex(digest_input),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Digest of the cache files as they were when opened.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.snapshot.len() + self.recorded.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        if let Some(v) = self.snapshot.get(key) {
            return Some(v.clone());
        }
        self.recorded.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn put(&self, key: &CacheKey, response: Value) -> io::Result<()> {
        let _guard = self.writer.lock().expect("cache writer poisoned");
        if self.get(&key.digest).is_some() {
            return Ok(());
        }
        let entry = CacheEntry {
            key: key.digest.clone(),
            service: key.kind,
            request: key.payload.clone(),
            response: response.clone(),
            captured_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let line = canonical_json(&serde_json::to_value(&entry).expect("cache entries serialize"));
        let mut file: File = OpenOptions::new().create(true).append(true).open(file_for(&self.dir, key.kind))?;
        writeln!(file, "{line}")?;
        file.flush()?;
        self.recorded.write().expect("cache lock poisoned").insert(key.digest.clone(), response);
        Ok(())
    }
}

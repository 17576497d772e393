//! Append-only response cache.
//!
//! One JSON record per line: `{"key", "digest", "response"}`. The key is a
//! SHA-256 over everything that determines a response; the digest guards the
//! response body. Records that fail to parse or verify are skipped on load
//! and rewritten the next time that call is made.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::http::{BackendSpec, SamplingParams};
use super::prompt::ChatMessage;
use crate::error::{BackendError, ConfigError};

pub const CACHE_FILE: &str = "responses.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    key: String,
    digest: String,
    response: String,
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Content key of one backend call.
pub fn cache_key(spec: &BackendSpec, messages: &[ChatMessage], params: &SamplingParams) -> String {
    let material = json!({
        "kind": spec.kind,
        "endpoint": spec.endpoint,
        "model": spec.model_name,
        "messages": messages,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "seq": params.seq,
    });
    digest(&material.to_string())
}

#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (or creates) `dir/responses.jsonl`, loading every valid record.
    pub fn open(dir: &Path) -> Result<Self, ConfigError> {
        std::fs::create_dir_all(dir).map_err(|e| ConfigError::io(dir, e))?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| ConfigError::io(&path, e))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| ConfigError::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Record>(&line) {
                    Ok(rec) if digest(&rec.response) == rec.digest => {
                        entries.insert(rec.key, rec.response);
                    }
                    _ => log::warn!(
                        "{}:{}: corrupt cache record ignored",
                        path.display(),
                        lineno + 1
                    ),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ConfigError::io(&path, e))?;
        // a torn last line must not swallow the next record
        let bytes = std::fs::read(&path).map_err(|e| ConfigError::io(&path, e))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n")
                .map_err(|e| ConfigError::io(&path, e))?;
        }
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn put(&self, key: &str, response: &str) -> std::io::Result<()> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let Some(file) = writer.as_mut() {
            let rec = Record {
                key: key.to_string(),
                digest: digest(response),
                response: response.to_string(),
            };
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(key.to_string(), response.to_string());
        Ok(())
    }

    /// Returns the cached response for `key`, or runs `call` and persists
    /// its result before returning it.
    pub fn get_or_call<F>(&self, key: &str, call: F) -> Result<String, BackendError>
    where
        F: FnOnce() -> Result<String, BackendError>,
    {
        if let Some(hit) = self.get(key) {
            return Ok(hit);
        }
        let response = call()?;
        if let Err(e) = self.put(key, &response) {
            log::warn!("cache write failed: {e}");
        }
        Ok(response)
    }
}

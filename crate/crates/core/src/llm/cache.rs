//! Append-only store of raw label probabilities keyed by request fingerprint.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 over model name, prompt bytes and constraint description.
pub fn cache_key(model: &str, prompt: &str, constraint: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [model, prompt, constraint] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize().as_slice())
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    raw: [f64; 4],
}

pub struct AnnotationCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, [f64; 4]>>,
    file: Mutex<File>,
}

impl AnnotationCache {
    /// Opens (or creates) the cache file. Lines that fail to parse, such as a
    /// write cut short by an interruption, are skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.raw);
                    }
                    Err(e) => warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), n + 1),
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        // start fresh entries on their own line after a torn write
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(AnnotationCache {
            path,
            entries: Mutex::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn get(&self, key: &str) -> Option<[f64; 4]> {
        self.entries.lock().expect("cache lock").get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one entry and flushes it to disk.
    pub fn put(&self, key: &str, raw: [f64; 4]) -> Result<()> {
        let mut line = serde_json::to_string(&Entry { key: key.to_string(), raw })?;
        line.push('\n');
        {
            let mut file = self.file.lock().expect("cache lock");
            file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
            file.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        self.entries.lock().expect("cache lock").insert(key.to_string(), raw);
        Ok(())
    }
}

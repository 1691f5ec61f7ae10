//! Append-only on-disk completion cache.
//!
//! One JSON record per line: `{"key": <hex>, "text": ..., "timestamp": <unix secs>}`.
//! Records are only ever appended, so a crash can at worst leave a torn last
//! line, which is skipped on load.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use promptgrad_core::gateway::{CacheKey, CompletionCache};
use promptgrad_core::hash::ContentHash;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CACHE_FILE: &str = "completions.jsonl";

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    text: String,
    timestamp: u64,
}

struct Inner {
    entries: BTreeMap<CacheKey, String>,
    file: File,
    write_errors: usize,
}

pub struct FileCache {
    path: PathBuf,
    inner: Mutex<Inner>,
    skipped: usize,
}

fn parse_key(hex_key: &str) -> Option<CacheKey> {
    let bytes = hex::decode(hex_key).ok()?;
    let arr: [u8; 32] = bytes.try_into().ok()?;
    Some(CacheKey(ContentHash(arr)))
}

impl FileCache {
    /// Open `dir/completions.jsonl`, creating the directory and file.
    pub fn open_dir(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Self::open(&dir.join(CACHE_FILE))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut skipped = 0;
        let mut torn_tail = false;
        if path.exists() {
            let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            torn_tail = !raw.is_empty() && !raw.ends_with('\n');
            for line in raw.lines().filter(|l| !l.trim().is_empty()) {
                match serde_json::from_str::<Record>(line)
                    .ok()
                    .and_then(|r| Some((parse_key(&r.key)?, r.text)))
                {
                    Some((k, text)) => {
                        entries.entry(k).or_insert(text);
                    }
                    None => skipped += 1,
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if torn_tail {
            // Start appends on a fresh line.
            file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                entries,
                file,
                write_errors: 0,
            }),
            skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unreadable lines ignored at load time.
    pub fn skipped_lines(&self) -> usize {
        self.skipped
    }

    /// Appends that failed; the entry is still served from memory.
    pub fn write_errors(&self) -> usize {
        self.inner.lock().unwrap().write_errors
    }
}

impl CompletionCache for FileCache {
    fn get(&self, key: &CacheKey) -> Option<String> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    fn put(&self, key: &CacheKey, text: &str) {
        let mut inner = self.inner.lock().unwrap();
        if inner.entries.contains_key(key) {
            return;
        }
        inner.entries.insert(*key, text.to_string());
        let record = Record {
            key: key.to_string(),
            text: text.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        if inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.flush())
            .is_err()
        {
            inner.write_errors += 1;
        }
    }
}

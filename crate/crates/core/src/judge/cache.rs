//! Append-only verdict cache keyed by content digests.
//!
//! One JSONL line per judged exchange. Loading tolerates torn or corrupt
//! trailing lines (a killed process mid-append) by warning and skipping;
//! everything intact before the damage stays usable.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::judge::{JudgeError, JudgeRequest};

/// One cached judge exchange. `label` is the parsed final-line value
/// (`Correct`/`Wrong` for correctness calls, a state label otherwise);
/// `raw` is the full endpoint text it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: String,
    pub label: String,
    pub judge_model: String,
    pub raw: String,
}

impl CacheRecord {
    pub fn new(
        digest: impl Into<String>,
        label: impl Into<String>,
        judge_model: impl Into<String>,
        raw: impl Into<String>,
    ) -> Self {
        CacheRecord {
            digest: digest.into(),
            label: label.into(),
            judge_model: judge_model.into(),
            raw: raw.into(),
        }
    }
}

/// Digest-keyed cache backed by an append-only JSONL file.
#[derive(Debug)]
pub struct VerdictCache {
    path: PathBuf,
    entries: HashMap<String, CacheRecord>,
    file: File,
}

impl VerdictCache {
    /// Opens or creates the cache file and loads every intact record.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JudgeError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(record) => {
                        entries.insert(record.digest.clone(), record);
                    }
                    Err(e) => {
                        log::warn!(
                            "skipping corrupt cache line {} in {}: {e}",
                            lineno + 1,
                            path.display()
                        );
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(VerdictCache { path, entries, file })
    }

    /// Content key for one judge exchange: the judge model, the rubric
    /// version, and every request field that shapes the reply. A bump to
    /// any of them misses the cache instead of serving a stale verdict.
    pub fn digest(model: &str, rubric_version: &str, req: &JudgeRequest) -> String {
        let status = match req.status {
            None => "none",
            Some(true) => "correct",
            Some(false) => "wrong",
        };
        let mut hasher = Sha256::new();
        for field in [
            model,
            rubric_version,
            &req.question,
            &req.ground_truth,
            &req.response,
            status,
        ] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        format!("{:x}", hasher.finalize())
    }

    pub fn get(&self, digest: &str) -> Option<&CacheRecord> {
        self.entries.get(digest)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and indexes it. The line is flushed before the
    /// map updates so a crash never leaves an indexed-but-unwritten entry.
    pub fn put(&mut self, record: CacheRecord) -> Result<(), JudgeError> {
        let line = serde_json::to_string(&record)?;
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        self.entries.insert(record.digest.clone(), record);
        Ok(())
    }

    /// Returns the cached record for `digest`, or computes, persists, and
    /// returns it. The closure runs only on a miss, so cache hits perform
    /// zero network calls.
    pub fn get_or_insert_with<F>(&mut self, digest: &str, call: F) -> Result<CacheRecord, JudgeError>
    where
        F: FnOnce() -> Result<CacheRecord, JudgeError>,
    {
        if let Some(hit) = self.entries.get(digest) {
            return Ok(hit.clone());
        }
        let record = call()?;
        self.put(record.clone())?;
        Ok(record)
    }
}

//! On-disk response cache, one JSON file per key.
//!
//! Entries are written to a temporary file in the cache directory and then
//! linked into place without replacing an existing file, so concurrent
//! writers of the same entry never observe partial content.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{CacheError, ResponseCache};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub raw_response: String,
    pub created_at: String,
}

#[derive(Debug)]
pub struct FileCache {
    dir: PathBuf,
}

impl FileCache {
    /// Creates `dir` if needed and checks that it is writable.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| CacheError::Io(format!("cannot create {}: {e}", dir.display())))?;
        tempfile::NamedTempFile::new_in(&dir)
            .map_err(|e| CacheError::Io(format!("{} is not writable: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> Result<PathBuf, CacheError> {
        if key.is_empty() || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(CacheError::Corrupt {
                key: key.to_string(),
                message: "cache keys are hex digests".into(),
            });
        }
        Ok(self.dir.join(format!("{key}.json")))
    }

    fn read_entry(key: &str, path: &Path) -> Result<Option<CacheEntry>, CacheError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(CacheError::Io(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| CacheError::Corrupt {
            key: key.to_string(),
            message: e.to_string(),
        })?;
        if entry.key != key {
            return Err(CacheError::Corrupt {
                key: key.to_string(),
                message: format!("file holds key {}", entry.key),
            });
        }
        Ok(Some(entry))
    }

    /// Every entry, sorted by key. Fails on the first unreadable entry.
    pub fn entries(&self) -> Result<Vec<CacheEntry>, CacheError> {
        let read = std::fs::read_dir(&self.dir)
            .map_err(|e| CacheError::Io(format!("{}: {e}", self.dir.display())))?;
        let mut out = Vec::new();
        for item in read {
            let item = item.map_err(|e| CacheError::Io(e.to_string()))?;
            let path = item.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if let Some(entry) = Self::read_entry(key, &path)? {
                out.push(entry);
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }
}

impl ResponseCache for FileCache {
    fn get(&self, key: &str) -> Result<Option<String>, CacheError> {
        let path = self.path_for(key)?;
        Ok(Self::read_entry(key, &path)?.map(|e| e.raw_response))
    }

    fn put(&self, key: &str, raw_response: &str) -> Result<(), CacheError> {
        let path = self.path_for(key)?;
        let check_existing = || match Self::read_entry(key, &path)? {
            Some(e) if e.raw_response == raw_response => Ok(true),
            Some(_) => Err(CacheError::Integrity {
                key: key.to_string(),
            }),
            None => Ok(false),
        };
        if check_existing()? {
            return Ok(());
        }
        let entry = CacheEntry {
            key: key.to_string(),
            raw_response: raw_response.to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let io = |e: std::io::Error| CacheError::Io(format!("{}: {e}", path.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        let body = serde_json::to_string_pretty(&entry).expect("entry serializes");
        tmp.write_all(body.as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(()),
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => {
                if check_existing()? {
                    Ok(())
                } else {
                    Err(CacheError::Io(format!("{} vanished", path.display())))
                }
            }
            Err(e) => Err(io(e.error)),
        }
    }
}

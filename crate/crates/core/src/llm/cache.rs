use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LlmError, Role, RoleConfig};

/// One cached response, stored as `<dir>/<digest[..2]>/<digest>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub digest: String,
    pub role: Role,
    pub model: String,
    #[serde(default)]
    pub backend: String,
    #[serde(default)]
    pub temperature: f64,
    pub prompt: String,
    pub response: String,
    pub created_at: String,
}

impl CacheEntry {
    pub fn new(config: &RoleConfig, digest: &str, prompt: &str, response: &str) -> Self {
        CacheEntry {
            digest: digest.to_string(),
            role: config.role,
            model: config.backend.model().to_string(),
            backend: config.backend.identity(),
            temperature: config.temperature,
            prompt: prompt.to_string(),
            response: response.to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> LlmError {
    LlmError::Cache(format!("{}: {e}", path.display()))
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DiskCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("__");
        self.dir.join(shard).join(format!("{digest}.json"))
    }

    /// Returns the stored entry, ignoring files whose recorded digest differs.
    pub fn get(&self, digest: &str) -> Result<Option<CacheEntry>, LlmError> {
        let path = self.path_for(digest);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.digest == digest => Ok(Some(entry)),
            _ => Ok(None),
        }
    }

    /// Writes through a temp file in the shard directory, then renames.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), LlmError> {
        let path = self.path_for(&entry.digest);
        let shard = path.parent().expect("cache path has a shard dir");
        fs::create_dir_all(shard).map_err(|e| io_err(shard, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(shard).map_err(|e| io_err(shard, e))?;
        let body = serde_json::to_vec_pretty(entry).map_err(|e| io_err(&path, e))?;
        tmp.write_all(&body).map_err(|e| io_err(&path, e))?;
        tmp.persist(&path).map_err(|e| io_err(&path, e.error))?;
        Ok(())
    }

    fn files(&self) -> Result<Vec<PathBuf>, LlmError> {
        let mut out = Vec::new();
        let shards = match fs::read_dir(&self.dir) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(&self.dir, e)),
        };
        for shard in shards {
            let shard = shard.map_err(|e| io_err(&self.dir, e))?.path();
            if !shard.is_dir() {
                continue;
            }
            for f in fs::read_dir(&shard).map_err(|e| io_err(&shard, e))? {
                let f = f.map_err(|e| io_err(&shard, e))?.path();
                if f.extension().is_some_and(|x| x == "json") {
                    out.push(f);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// All readable entries, ordered by digest.
    pub fn entries(&self) -> Result<Vec<CacheEntry>, LlmError> {
        let mut entries = Vec::new();
        for f in self.files()? {
            let bytes = fs::read(&f).map_err(|e| io_err(&f, e))?;
            if let Ok(e) = serde_json::from_slice::<CacheEntry>(&bytes) {
                entries.push(e);
            }
        }
        entries.sort_by(|a, b| a.digest.cmp(&b.digest));
        Ok(entries)
    }

    pub fn stats(&self) -> Result<CacheStats, LlmError> {
        let mut stats = CacheStats::default();
        for f in self.files()? {
            stats.entries += 1;
            stats.bytes += fs::metadata(&f).map(|m| m.len()).unwrap_or(0);
        }
        Ok(stats)
    }

    /// Removes every cache file; returns how many were deleted.
    pub fn clear(&self) -> Result<usize, LlmError> {
        let files = self.files()?;
        for f in &files {
            fs::remove_file(f).map_err(|e| io_err(f, e))?;
            if let Some(shard) = f.parent() {
                let _ = fs::remove_dir(shard);
            }
        }
        Ok(files.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let cfg = RoleConfig::mock(Role::Poster, "s.json");
        let digest = super::super::cache_key(&cfg, "prompt");
        assert_eq!(cache.get(&digest).unwrap(), None);
        let entry = CacheEntry::new(&cfg, &digest, "prompt", "response");
        cache.put(&entry).unwrap();
        let path = dir.path().join(&digest[..2]).join(format!("{digest}.json"));
        assert!(path.is_file());
        let stored: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        for field in [
            "digest",
            "role",
            "model",
            "prompt",
            "response",
            "created_at",
        ] {
            assert!(stored.get(field).is_some(), "missing {field}");
        }
        assert_eq!(cache.get(&digest).unwrap(), Some(entry));
        assert_eq!(cache.stats().unwrap().entries, 1);
        assert_eq!(cache.clear().unwrap(), 1);
        assert_eq!(cache.stats().unwrap().entries, 0);
    }

    #[test]
    fn mismatched_digest_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let cfg = RoleConfig::mock(Role::Poster, "s.json");
        let real = "ab".to_string() + &"0".repeat(62);
        let other = "ab".to_string() + &"1".repeat(62);
        let mut entry = CacheEntry::new(&cfg, &other, "p", "wrong");
        cache.put(&entry).unwrap();
        // plant the other entry's contents under the real digest's file name
        entry.digest = other.clone();
        let planted = dir.path().join("ab").join(format!("{real}.json"));
        fs::write(&planted, serde_json::to_vec(&entry).unwrap()).unwrap();
        assert_eq!(cache.get(&real).unwrap(), None);
    }

    #[test]
    fn concurrent_writers_same_key() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let cfg = RoleConfig::mock(Role::Analysis, "s.json");
        let digest = super::super::cache_key(&cfg, "p");
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    cache
                        .put(&CacheEntry::new(&cfg, &digest, "p", "same"))
                        .unwrap()
                });
            }
        });
        assert_eq!(cache.get(&digest).unwrap().unwrap().response, "same");
        assert_eq!(cache.stats().unwrap().entries, 1);
    }
}

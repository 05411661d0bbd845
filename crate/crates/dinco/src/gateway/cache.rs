//! Content-addressed response cache: one JSON file per request hash.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::GatewayError;

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    request: Value,
    response: Value,
    digest: String,
}

pub struct ResponseCache {
    dir: PathBuf,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn hit_rate(&self) -> Option<f64> {
        let total = self.hits + self.misses;
        (total > 0).then(|| self.hits as f64 / total as f64)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Key for a request: SHA-256 over the canonical JSON of
/// `(provider, endpoint, request)`.
pub fn cache_key(provider: &str, endpoint: &str, request: &Value) -> String {
    let canonical = serde_json::json!({
        "provider": provider,
        "endpoint": endpoint,
        "request": request,
    });
    sha256_hex(canonical.to_string().as_bytes())
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache {
            dir,
            key_locks: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn lock_for(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().unwrap();
        locks.entry(key.to_string()).or_default().clone()
    }

    fn read(&self, key: &str) -> Option<Value> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        let entry: Entry = serde_json::from_slice(&bytes).ok()?;
        if entry.key != key || entry.digest != sha256_hex(entry.response.to_string().as_bytes()) {
            return None;
        }
        Some(entry.response)
    }

    fn write(&self, key: &str, request: &Value, response: Value) -> Result<(), GatewayError> {
        let entry = Entry {
            key: key.to_string(),
            request: request.clone(),
            digest: sha256_hex(response.to_string().as_bytes()),
            response,
        };
        let path = self.path_for(key);
        let tmp = path.with_extension("json.tmp");
        let body =
            serde_json::to_vec_pretty(&entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))
    }

    /// Returns the cached response for `request`, or computes, stores and
    /// returns it. Unreadable or tampered entries count as misses and are
    /// overwritten. Concurrent callers with the same key serialize.
    pub fn get_or_compute<T, F>(
        &self,
        provider: &str,
        endpoint: &str,
        request: &Value,
        compute: F,
    ) -> Result<(T, bool), GatewayError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, GatewayError>,
    {
        let key = cache_key(provider, endpoint, request);
        let lock = self.lock_for(&key);
        let _guard = lock.lock().unwrap();
        if let Some(v) = self.read(&key) {
            if let Ok(t) = serde_json::from_value(v) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok((t, true));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let fresh = compute()?;
        let v = serde_json::to_value(&fresh).map_err(|e| GatewayError::Cache(e.to_string()))?;
        self.write(&key, request, v)?;
        Ok((fresh, false))
    }
}

//! Content-addressed call cache: `<root>/<2-hex prefix>/<key>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::{AdapterError, CallRecord, DecodingParams, Message};

/// sha256 over the canonical JSON of everything that determines a reply.
pub fn cache_key(
    model_id: &str,
    template_id: &str,
    messages: &[Message],
    params: &DecodingParams,
    attempt: u32,
) -> String {
    let mut key = serde_json::json!({
        "model": model_id,
        "template": template_id,
        "messages": messages,
        "params": params,
    });
    if attempt > 0 {
        key["attempt"] = attempt.into();
    }
    let mut hasher = Sha256::new();
    hasher.update(key.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug)]
pub struct CallCache {
    root: PathBuf,
    tmp_counter: AtomicU64,
}

impl CallCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, AdapterError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| AdapterError::Cache(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CallRecord> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Stores `record` unless the key already exists; the first writer wins.
    pub fn put(&self, record: &CallRecord) -> Result<(), AdapterError> {
        let path = self.path(&record.cache_key);
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("cache path has a parent");
        let err = |e: std::io::Error| AdapterError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(dir).map_err(err)?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            record.cache_key,
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let body = serde_json::to_vec_pretty(record).expect("call records serialize");
        let mut f = fs::File::create(&tmp).map_err(err)?;
        f.write_all(&body).map_err(err)?;
        f.sync_all().map_err(err)?;
        drop(f);
        if path.exists() {
            let _ = fs::remove_file(&tmp);
            return Ok(());
        }
        fs::rename(&tmp, &path).map_err(err)
    }

    pub fn len(&self) -> usize {
        let Ok(dirs) = fs::read_dir(&self.root) else {
            return 0;
        };
        dirs.filter_map(Result::ok)
            .filter_map(|d| fs::read_dir(d.path()).ok())
            .flat_map(|entries| entries.filter_map(Result::ok))
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

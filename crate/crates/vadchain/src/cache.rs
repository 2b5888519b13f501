//! Content-addressed reply store: `{root}/{model}/{key[..2]}/{key}`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Model names become one path component.
fn model_dir(model: &str) -> String {
    let s: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        "_".into()
    } else {
        s
    }
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, model: &str, key: &str) -> PathBuf {
        let prefix: String = key.chars().take(2).collect();
        self.root.join(model_dir(model)).join(prefix).join(key)
    }

    /// A missing entry is a miss; an unreadable or non-UTF-8 one is a miss
    /// with a warning.
    pub fn get(&self, model: &str, key: &str) -> Option<String> {
        let path = self.entry_path(model, key);
        match fs::read(&path) {
            Ok(bytes) => match String::from_utf8(bytes) {
                Ok(s) => Some(s),
                Err(_) => {
                    log::warn!("cache entry {} is not UTF-8; ignoring it", path.display());
                    None
                }
            },
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => {
                log::warn!("cache entry {} unreadable ({e}); ignoring it", path.display());
                None
            }
        }
    }

    /// Writes via a temporary file and rename so readers never see a
    /// partial entry.
    pub fn put(&self, model: &str, key: &str, value: &str) -> io::Result<()> {
        let path = self.entry_path(model, key);
        let dir = path.parent().expect("entry has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(value.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }

    pub fn remove(&self, model: &str, key: &str) -> io::Result<()> {
        fs::remove_file(self.entry_path(model, key))
    }

    /// Stored value for `key`, or the producer's result, persisted.
    pub fn cached_call<E>(
        &self,
        model: &str,
        key: &str,
        producer: impl FnOnce() -> Result<String, E>,
    ) -> Result<String, E> {
        if let Some(v) = self.get(model, key) {
            return Ok(v);
        }
        let value = producer()?;
        if let Err(e) = self.put(model, key, &value) {
            log::warn!("cannot persist cache entry {key}: {e}");
        }
        Ok(value)
    }
}

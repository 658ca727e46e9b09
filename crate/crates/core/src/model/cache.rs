//! Content-addressed transcript cache: one JSON file per cache key, written atomically.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::hashing::{sha256_hex, StableHasher};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenUsage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// Decoding parameters that take part in the cache key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub cache_key: String,
    /// `completion` or `embedding`.
    pub kind: String,
    pub model_id: String,
    pub prompt: String,
    pub params: Option<DecodingParams>,
    pub completion: String,
    pub completion_sha256: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub token_usage: Option<TokenUsage>,
}

pub fn completion_key(model_id: &str, prompt: &str, params: DecodingParams) -> String {
    StableHasher::new("completion")
        .str(model_id)
        .str(prompt)
        .f64(params.temperature)
        .u64(params.max_output_tokens as u64)
        .finish_hex()
}

pub fn embedding_key(model_id: &str, text: &str) -> String {
    StableHasher::new("embedding")
        .str(model_id)
        .str(text)
        .finish_hex()
}

impl Transcript {
    pub fn completion(
        model_id: &str,
        prompt: &str,
        params: DecodingParams,
        completion: String,
        token_usage: Option<TokenUsage>,
    ) -> Self {
        Transcript {
            cache_key: completion_key(model_id, prompt, params),
            kind: "completion".into(),
            model_id: model_id.into(),
            prompt: prompt.into(),
            params: Some(params),
            completion_sha256: sha256_hex(completion.as_bytes()),
            completion,
            timestamp: now_secs(),
            token_usage,
        }
    }

    pub fn embedding(model_id: &str, text: &str, vector: &[f64]) -> Self {
        let completion = serde_json::to_string(vector).expect("vector serialises");
        Transcript {
            cache_key: embedding_key(model_id, text),
            kind: "embedding".into(),
            model_id: model_id.into(),
            prompt: text.into(),
            params: None,
            completion_sha256: sha256_hex(completion.as_bytes()),
            completion,
            timestamp: now_secs(),
            token_usage: None,
        }
    }

    fn expected_key(&self) -> Option<String> {
        match (self.kind.as_str(), self.params) {
            ("completion", Some(p)) => Some(completion_key(&self.model_id, &self.prompt, p)),
            ("embedding", None) => Some(embedding_key(&self.model_id, &self.prompt)),
            _ => None,
        }
    }

    /// True if the stored key and digest agree with the stored content.
    pub fn is_consistent(&self) -> bool {
        self.expected_key().as_deref() == Some(self.cache_key.as_str())
            && sha256_hex(self.completion.as_bytes()) == self.completion_sha256
    }
}

fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Directory of transcripts laid out as `<root>/<key[0..2]>/<key>.json`.
#[derive(Debug, Clone)]
pub struct TranscriptCache {
    root: PathBuf,
    in_flight: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

impl TranscriptCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(TranscriptCache {
            root,
            in_flight: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Returns the transcript for `key`, or `None` if absent. A corrupt entry is logged and
    /// treated as absent.
    pub fn get(&self, key: &str) -> Option<Transcript> {
        let path = self.path_for(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<Transcript>(&bytes) {
            Ok(t) if t.cache_key == key && t.is_consistent() => Some(t),
            Ok(_) => {
                warn!(path = %path.display(), "cache entry digest mismatch, ignoring");
                None
            }
            Err(e) => {
                warn!(path = %path.display(), error = %e, "unreadable cache entry, ignoring");
                None
            }
        }
    }

    /// Writes via a temporary file in the target directory and renames it into place.
    pub fn put(&self, t: &Transcript) -> Result<()> {
        let path = self.path_for(&t.cache_key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = serde_json::to_vec_pretty(t)?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }

    /// Runs `produce` at most once per key at a time within this process; callers that
    /// race on the same key wait and then read the winner's transcript.
    pub fn get_or_insert_with<F>(&self, key: &str, produce: F) -> Result<(Transcript, bool)>
    where
        F: FnOnce() -> Result<Transcript>,
    {
        if let Some(t) = self.get(key) {
            return Ok((t, true));
        }
        let slot = {
            let mut map = self.in_flight.lock().expect("cache lock poisoned");
            map.entry(key.to_owned()).or_default().clone()
        };
        let guard = slot.lock().expect("cache slot poisoned");
        let result = match self.get(key) {
            Some(t) => Ok((t, true)),
            None => produce().and_then(|t| {
                debug_assert_eq!(t.cache_key, key);
                self.put(&t)?;
                Ok((t, false))
            }),
        };
        drop(guard);
        self.in_flight
            .lock()
            .expect("cache lock poisoned")
            .remove(key);
        result
    }

    /// Number of transcript files on disk.
    pub fn len(&self) -> usize {
        let Ok(dirs) = fs::read_dir(&self.root) else {
            return 0;
        };
        dirs.flatten()
            .filter_map(|d| fs::read_dir(d.path()).ok())
            .flat_map(|d| d.flatten())
            .filter(|f| f.path().extension().is_some_and(|e| e == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: DecodingParams = DecodingParams {
        temperature: 0.0,
        max_output_tokens: 128,
    };

    #[test]
    fn key_is_sensitive_to_every_input() {
        let base = completion_key("m", "prompt", P);
        assert_ne!(base, completion_key("m2", "prompt", P));
        assert_ne!(base, completion_key("m", "prompt ", P));
        assert_ne!(
            base,
            completion_key(
                "m",
                "prompt",
                DecodingParams {
                    max_output_tokens: 64,
                    ..P
                }
            )
        );
        assert_ne!(base, embedding_key("m", "prompt"));
    }

    #[test]
    fn put_get_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TranscriptCache::open(dir.path()).unwrap();
        let t = Transcript::completion("m", "p", P, "joy".into(), None);
        assert!(cache.get(&t.cache_key).is_none());
        cache.put(&t).unwrap();
        assert_eq!(cache.get(&t.cache_key).unwrap(), t);
        assert_eq!(cache.len(), 1);

        let mut bad = t.clone();
        bad.completion = "anger".into();
        let path = cache.path_for(&t.cache_key);
        fs::write(&path, serde_json::to_vec(&bad).unwrap()).unwrap();
        assert!(cache.get(&t.cache_key).is_none());
        fs::write(&path, b"{not json").unwrap();
        assert!(cache.get(&t.cache_key).is_none());
    }

    #[test]
    fn single_flight() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let dir = tempfile::tempdir().unwrap();
        let cache = TranscriptCache::open(dir.path()).unwrap();
        let calls = AtomicUsize::new(0);
        let key = completion_key("m", "p", P);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let (t, _) = cache
                        .get_or_insert_with(&key, || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            Ok(Transcript::completion("m", "p", P, "joy".into(), None))
                        })
                        .unwrap();
                    assert_eq!(t.completion, "joy");
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.len(), 1);
    }
}

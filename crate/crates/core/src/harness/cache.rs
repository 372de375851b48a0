//! Content-addressed cache for pipeline stages.
//!
//! A stage's key is the SHA-256 of everything that determines its output,
//! including the keys of the stages it consumes. Changing any input changes
//! the key, so a stale entry can never be returned.

use std::any::Any;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

type Slot = Arc<Mutex<Option<Arc<dyn Any + Send + Sync>>>>;

#[derive(Default)]
pub struct StageCache {
    slots: Mutex<HashMap<String, Slot>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    disabled: bool,
}

impl StageCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache that always recomputes.
    pub fn disabled() -> Self {
        Self {
            disabled: true,
            ..Self::default()
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// Returns the cached value for `key`, computing it at most once.
    /// Concurrent callers with the same key wait for the first computation.
    pub fn get_or_try<T, F>(&self, key: &str, compute: F) -> Result<Arc<T>>
    where
        T: Any + Send + Sync,
        F: FnOnce() -> Result<T>,
    {
        if self.disabled {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return compute().map(Arc::new);
        }
        let slot = self
            .slots
            .lock()
            .unwrap()
            .entry(key.to_owned())
            .or_default()
            .clone();
        let mut guard = slot.lock().unwrap();
        if let Some(v) = guard.as_ref() {
            if let Ok(v) = v.clone().downcast::<T>() {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(v);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = Arc::new(compute()?);
        *guard = Some(value.clone() as Arc<dyn Any + Send + Sync>);
        Ok(value)
    }
}

/// Hex SHA-256 of a tag and a serializable description of a stage's inputs.
pub fn stage_key(tag: &str, inputs: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(inputs).expect("stage inputs serialize"));
    h.finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

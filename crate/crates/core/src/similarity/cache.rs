use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::frame_io::GrayImage;
use crate::orb::{extract, DescriptorSet, OrbConfig};

pub type ContentKey = [u8; 32];

/// SHA-256 over the dimensions and raster.
pub fn content_key(img: &GrayImage) -> ContentKey {
    let mut hasher = Sha256::new();
    hasher.update((img.width() as u64).to_le_bytes());
    hasher.update((img.height() as u64).to_le_bytes());
    hasher.update(img.data());
    hasher.finalize().into()
}

#[derive(Default)]
struct Entries {
    map: HashMap<ContentKey, Arc<DescriptorSet>>,
    order: VecDeque<ContentKey>,
}

/// Bounded FIFO cache of extracted features keyed by image content. All
/// entries are produced with the same [`OrbConfig`], so dropping one only
/// costs a recomputation.
pub struct FeatureCache {
    config: OrbConfig,
    capacity: usize,
    entries: RwLock<Entries>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl FeatureCache {
    pub fn new(config: OrbConfig, capacity: usize) -> Self {
        Self {
            config,
            capacity: capacity.max(1),
            entries: RwLock::new(Entries::default()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &OrbConfig {
        &self.config
    }

    pub fn get_or_extract(&self, img: &GrayImage) -> Result<Arc<DescriptorSet>> {
        let key = content_key(img);
        if let Some(hit) = self.entries.read().expect("cache lock").map.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Arc::clone(hit));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let features = Arc::new(extract(img, &self.config)?);
        let mut entries = self.entries.write().expect("cache lock");
        if !entries.map.contains_key(&key) {
            while entries.order.len() >= self.capacity {
                if let Some(old) = entries.order.pop_front() {
                    entries.map.remove(&old);
                }
            }
            entries.order.push_back(key);
            entries.map.insert(key, Arc::clone(&features));
        }
        Ok(features)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        let mut e = self.entries.write().expect("cache lock");
        e.map.clear();
        e.order.clear();
    }

    /// `(hits, misses)` since construction.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }
}

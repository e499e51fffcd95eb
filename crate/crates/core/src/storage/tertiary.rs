use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::time::Duration;

use super::StorageError;
use crate::time::Timestamp;

const GIB: f64 = (1u64 << 30) as f64;

/// Fetch time = `base + size * per_gib`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyModel {
    pub base: Duration,
    pub per_gib: Duration,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            base: Duration::ZERO,
            per_gib: Duration::from_secs(2),
        }
    }
}

impl LatencyModel {
    pub fn fetch_time(&self, size: u64) -> Duration {
        self.base + self.per_gib.mul_f64(size as f64 / GIB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Staging {
    pub file_id: u64,
    pub completion: Timestamp,
}

/// Archival tier: immutable images plus in-flight fetches.
#[derive(Debug, Clone, Default)]
pub struct TertiaryStore {
    latency: LatencyModel,
    files: BTreeMap<u64, Vec<u8>>,
    in_flight: BTreeMap<u64, Timestamp>,
}

impl TertiaryStore {
    pub fn new(latency: LatencyModel) -> Self {
        Self {
            latency,
            ..Self::default()
        }
    }

    pub fn latency(&self) -> LatencyModel {
        self.latency
    }

    /// Archives an image. Contents are immutable: re-inserting an existing
    /// id is ignored.
    pub fn insert(&mut self, file_id: u64, image: Vec<u8>) {
        self.files.entry(file_id).or_insert(image);
    }

    pub fn contains(&self, file_id: u64) -> bool {
        self.files.contains_key(&file_id)
    }

    pub fn image(&self, file_id: u64) -> Option<&[u8]> {
        self.files.get(&file_id).map(Vec::as_slice)
    }

    pub fn size(&self, file_id: u64) -> Option<u64> {
        self.files.get(&file_id).map(|i| i.len() as u64)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Starts (or joins) a fetch. Concurrent fetches of one file share a
    /// single staging and completion time.
    pub fn fetch(&mut self, file_id: u64, now: Timestamp) -> Result<Staging, StorageError> {
        let size = self.size(file_id).ok_or(StorageError::NotInTertiary(file_id))?;
        let completion = *self
            .in_flight
            .entry(file_id)
            .or_insert_with(|| now + self.latency.fetch_time(size));
        Ok(Staging { file_id, completion })
    }

    /// Fetches completed by `now`, removed from the in-flight set.
    pub fn collect_ready(&mut self, now: Timestamp) -> Vec<(u64, Vec<u8>)> {
        let ready: Vec<u64> = self
            .in_flight
            .iter()
            .filter(|(_, &done)| done <= now)
            .map(|(&id, _)| id)
            .collect();
        ready
            .into_iter()
            .map(|id| {
                self.in_flight.remove(&id);
                (id, self.files[&id].clone())
            })
            .collect()
    }
}

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// Locates a payload blob: segment file plus byte offset of its frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PayloadRef {
    pub file_id: u64,
    pub offset: u64,
}

pub const DEFAULT_SEGMENT_BYTES: usize = 1 << 20;

/// Append-only payload segments. Each blob is framed as
/// `len(4, big-endian) | bytes`; segments roll over at a size threshold.
#[derive(Debug, Clone)]
pub struct PayloadArena {
    segments: BTreeMap<u64, Vec<u8>>,
    current: u64,
    segment_bytes: usize,
}

impl Default for PayloadArena {
    fn default() -> Self {
        Self::new(DEFAULT_SEGMENT_BYTES)
    }
}

impl PayloadArena {
    pub fn new(segment_bytes: usize) -> Self {
        Self {
            segments: BTreeMap::new(),
            current: 1,
            segment_bytes,
        }
    }

    pub fn put(&mut self, blob: &[u8]) -> PayloadRef {
        let seg = self.segments.entry(self.current).or_default();
        if !seg.is_empty() && seg.len() + 4 + blob.len() > self.segment_bytes {
            self.current += 1;
        }
        let file_id = self.current;
        let seg = self.segments.entry(file_id).or_default();
        let offset = seg.len() as u64;
        seg.extend_from_slice(&(blob.len() as u32).to_be_bytes());
        seg.extend_from_slice(blob);
        PayloadRef { file_id, offset }
    }

    pub fn get(&self, r: PayloadRef) -> Option<&[u8]> {
        let seg = self.segments.get(&r.file_id)?;
        let at = usize::try_from(r.offset).ok()?;
        let len_bytes = seg.get(at..at.checked_add(4)?)?;
        let len = u32::from_be_bytes(len_bytes.try_into().ok()?) as usize;
        seg.get(at + 4..at + 4 + len)
    }

    /// Total framed bytes across all segments.
    pub fn total_bytes(&self) -> u64 {
        self.segments.values().map(|s| s.len() as u64).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.segments.iter().map(|(&id, s)| (id, s.as_slice()))
    }

    /// Restores a segment read back from storage.
    pub fn load_segment(&mut self, file_id: u64, bytes: Vec<u8>) {
        self.current = self.current.max(file_id);
        self.segments.insert(file_id, bytes);
    }
}

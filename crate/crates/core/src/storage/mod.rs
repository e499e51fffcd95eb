//! Checksummed block storage with client-side decompression and a
//! simulated tertiary (tape) tier.
//!
//! Files are cut into fixed-size logical blocks that are compressed
//! independently, so a random read only touches the frames covering it.
//! Servers ship frames verbatim ([`Disk::read_blocks`]); clients verify
//! checksums and inflate them ([`client_decompress`]).

pub mod codec;
pub mod format;
pub mod tertiary;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

pub use codec::{BlockCodec, CodecId, CodecRegistry, Deflate, Identity};
pub use format::{encode_file, parse_image, BlockEntry, StoredFile, DEFAULT_BLOCK_SIZE};
pub use tertiary::{LatencyModel, Staging, TertiaryStore};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("CODEC_UNAVAILABLE: {0}")]
    CodecUnavailable(CodecId),
    #[error("cannot store an empty file")]
    Empty,
    #[error("NOT_RESIDENT: file {0}")]
    NotResident(u64),
    #[error("RANGE: {offset}+{len} exceeds {size}")]
    Range { offset: u64, len: u64, size: u64 },
    #[error("CHECKSUM_MISMATCH (block {block:?})")]
    ChecksumMismatch { block: Option<u32> },
    #[error("malformed stored file: {0}")]
    Malformed(&'static str),
    #[error("NOT_IN_TERTIARY: file {0}")]
    NotInTertiary(u64),
}

impl StorageError {
    pub fn code(&self) -> &'static str {
        match self {
            StorageError::CodecUnavailable(_) => "CODEC_UNAVAILABLE",
            StorageError::Empty => "EMPTY",
            StorageError::NotResident(_) => "NOT_RESIDENT",
            StorageError::Range { .. } => "RANGE",
            StorageError::ChecksumMismatch { .. } => "CHECKSUM_MISMATCH",
            StorageError::Malformed(_) => "MALFORMED",
            StorageError::NotInTertiary(_) => "NOT_IN_TERTIARY",
        }
    }

    /// Whether the error means the bytes on disk cannot be trusted.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            StorageError::ChecksumMismatch { .. } | StorageError::Malformed(_)
        )
    }
}

/// One compressed block as shipped by a server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: u32,
    pub entry: BlockEntry,
    pub logical_len: u32,
    pub bytes: Vec<u8>,
}

/// The covering frames for a requested range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockFrames {
    pub file_id: u64,
    pub codec: CodecId,
    pub frames: Vec<Frame>,
}

impl BlockFrames {
    pub fn wire_len(&self) -> usize {
        self.frames.iter().map(|f| f.bytes.len()).sum()
    }
}

/// Verifies and inflates `frames`, returning exactly `len` bytes starting at
/// logical `offset`. Never returns bytes from a frame whose checksum fails.
pub fn client_decompress(
    frames: &BlockFrames,
    codecs: &CodecRegistry,
    offset: u64,
    len: u64,
) -> Result<Vec<u8>, StorageError> {
    if len == 0 {
        return Ok(Vec::new());
    }
    let codec = codecs
        .get(frames.codec)
        .ok_or(StorageError::CodecUnavailable(frames.codec))?;
    let first = frames
        .frames
        .first()
        .ok_or(StorageError::Malformed("no frames for a non-empty range"))?;
    let start = first.entry.logical_offset;
    if offset < start {
        return Err(StorageError::Malformed("frames start after the range"));
    }
    let mut out = Vec::new();
    let mut expect = start;
    for f in &frames.frames {
        let bad = Err(StorageError::ChecksumMismatch { block: Some(f.index) });
        if f.entry.logical_offset != expect
            || f.bytes.len() != f.entry.compressed_len as usize
            || crc32fast::hash(&f.bytes) != f.entry.crc32
        {
            return bad;
        }
        match codec.decompress(&f.bytes, f.logical_len as usize) {
            Ok(block) => out.extend_from_slice(&block),
            Err(_) => return bad,
        }
        expect += u64::from(f.logical_len);
    }
    let from = (offset - start) as usize;
    let to = from + len as usize;
    if to > out.len() {
        return Err(StorageError::Malformed("frames do not cover the range"));
    }
    out.truncate(to);
    out.drain(..from);
    Ok(out)
}

/// A server's resident file images.
#[derive(Debug, Clone, Default)]
pub struct Disk {
    images: BTreeMap<u64, Vec<u8>>,
}

impl Disk {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install(&mut self, file_id: u64, image: Vec<u8>) {
        self.images.insert(file_id, image);
    }

    pub fn remove(&mut self, file_id: u64) -> bool {
        self.images.remove(&file_id).is_some()
    }

    pub fn is_resident(&self, file_id: u64) -> bool {
        self.images.contains_key(&file_id)
    }

    pub fn image(&self, file_id: u64) -> Option<&[u8]> {
        self.images.get(&file_id).map(Vec::as_slice)
    }

    pub fn resident(&self) -> impl Iterator<Item = u64> + '_ {
        self.images.keys().copied()
    }

    pub fn bytes_used(&self) -> u64 {
        self.images.values().map(|i| i.len() as u64).sum()
    }

    pub fn stat(&self, file_id: u64) -> Result<StoredFile, StorageError> {
        let image = self
            .images
            .get(&file_id)
            .ok_or(StorageError::NotResident(file_id))?;
        parse_image(file_id, image)
    }

    /// The minimal run of frames covering `[offset, offset + len)`, copied
    /// verbatim. No decompression happens here.
    pub fn read_blocks(&self, file_id: u64, offset: u64, len: u64) -> Result<BlockFrames, StorageError> {
        let image = self
            .images
            .get(&file_id)
            .ok_or(StorageError::NotResident(file_id))?;
        let file = parse_image(file_id, image)?;
        let end = offset.checked_add(len);
        if end.is_none_or(|e| e > file.logical_size) {
            return Err(StorageError::Range {
                offset,
                len,
                size: file.logical_size,
            });
        }
        let mut frames = Vec::new();
        if len > 0 {
            let bs = u64::from(file.block_size);
            let first = (offset / bs) as usize;
            let last = ((offset + len - 1) / bs) as usize;
            for i in first..=last {
                let e = file.blocks[i];
                let at = e.physical_offset as usize;
                frames.push(Frame {
                    index: i as u32,
                    entry: e,
                    logical_len: file.block_logical_len(i),
                    bytes: image[at..at + e.compressed_len as usize].to_vec(),
                });
            }
        }
        Ok(BlockFrames {
            file_id,
            codec: file.codec,
            frames,
        })
    }

    /// Garbles the second half of block `block_no`'s frame, the way a write
    /// torn by a close/reopen race would. No-op for non-resident files or
    /// out-of-range blocks.
    pub fn inject_torn_write(&mut self, file_id: u64, block_no: u32) {
        let Some(image) = self.images.get_mut(&file_id) else {
            return;
        };
        let Ok(file) = parse_image(file_id, image) else {
            return;
        };
        let Some(e) = file.blocks.get(block_no as usize) else {
            return;
        };
        let start = e.physical_offset as usize;
        let len = e.compressed_len as usize;
        for b in &mut image[start + len / 2..start + len] {
            *b ^= 0xA5;
        }
    }

    /// Flips a single bit of the image; for corruption-detection tests.
    pub fn flip_bit(&mut self, file_id: u64, bit: usize) {
        if let Some(image) = self.images.get_mut(&file_id) {
            if let Some(b) = image.get_mut(bit / 8) {
                *b ^= 1 << (bit % 8);
            }
        }
    }
}

/// A single-node file store: one disk backed by the tertiary tier.
#[derive(Debug)]
pub struct FileStore {
    pub codecs: CodecRegistry,
    pub block_size: u32,
    pub disk: Disk,
    pub tertiary: TertiaryStore,
    next_id: u64,
}

impl Default for FileStore {
    fn default() -> Self {
        Self::new(
            CodecRegistry::default(),
            DEFAULT_BLOCK_SIZE,
            LatencyModel::default(),
        )
    }
}

impl FileStore {
    pub fn new(codecs: CodecRegistry, block_size: u32, latency: LatencyModel) -> Self {
        Self {
            codecs,
            block_size,
            disk: Disk::new(),
            tertiary: TertiaryStore::new(latency),
            next_id: 1,
        }
    }

    /// Stores `bytes` on disk and in tertiary under a fresh file id.
    pub fn put_file(&mut self, bytes: &[u8], codec: CodecId) -> Result<StoredFile, StorageError> {
        let id = self.next_id;
        let (file, image) = encode_file(id, bytes, codec, self.block_size, &self.codecs)?;
        self.next_id += 1;
        self.tertiary.insert(id, image.clone());
        self.disk.install(id, image);
        Ok(file)
    }

    pub fn read_blocks(&self, file_id: u64, offset: u64, len: u64) -> Result<BlockFrames, StorageError> {
        self.disk.read_blocks(file_id, offset, len)
    }

    /// Convenience: server read followed by client decompression.
    pub fn read(&self, file_id: u64, offset: u64, len: u64) -> Result<Vec<u8>, StorageError> {
        let frames = self.read_blocks(file_id, offset, len)?;
        client_decompress(&frames, &self.codecs, offset, len)
    }

    pub fn fetch_from_tertiary(
        &mut self,
        file_id: u64,
        now: Timestamp,
    ) -> Result<(StoredFile, Timestamp), StorageError> {
        let staging = self.tertiary.fetch(file_id, now)?;
        let file = parse_image(file_id, self.tertiary.image(file_id).expect("fetched"))?;
        Ok((file, staging.completion))
    }

    /// Installs every staging that has completed by `now`.
    pub fn poll(&mut self, now: Timestamp) -> Vec<u64> {
        let ready = self.tertiary.collect_ready(now);
        let ids = ready.iter().map(|(id, _)| *id).collect();
        for (id, image) in ready {
            self.disk.install(id, image);
        }
        ids
    }

    pub fn inject_torn_write(&mut self, file_id: u64, block_no: u32) {
        self.disk.inject_torn_write(file_id, block_no);
    }
}

#[cfg(test)]
mod tests;

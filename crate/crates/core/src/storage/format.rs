//! Stored-file image layout.
//!
//! ```text
//! magic(4) | version(1) | codec(1) | block_size(4) | logical_size(8) | index_count(4)
//! index_count × { logical_offset(8) | physical_offset(8) | compressed_len(4) | crc32(4) }
//! digest(32)    SHA-256 over every byte before it
//! frames
//! ```
//!
//! Integers are big-endian. Each frame's CRC-32 covers its compressed
//! bytes, and the digest covers the header and the index (and therefore
//! every frame checksum).

use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use super::codec::{CodecId, CodecRegistry};
use super::StorageError;

pub const MAGIC: [u8; 4] = *b"PSTF";
pub const VERSION: u8 = 1;
pub const FIXED_HEADER: usize = 22;
pub const INDEX_ENTRY: usize = 24;
pub const DIGEST_LEN: usize = 32;
pub const DEFAULT_BLOCK_SIZE: u32 = 32 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEntry {
    pub logical_offset: u64,
    /// Offset of the frame from the start of the image.
    pub physical_offset: u64,
    pub compressed_len: u32,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredFile {
    pub file_id: u64,
    pub codec: CodecId,
    pub block_size: u32,
    pub logical_size: u64,
    pub physical_size: u64,
    pub blocks: Vec<BlockEntry>,
    pub digest: [u8; 32],
}

impl StoredFile {
    pub fn header_len(&self) -> usize {
        header_len(self.blocks.len())
    }

    /// Uncompressed length of block `i`.
    pub fn block_logical_len(&self, i: usize) -> u32 {
        let start = self.blocks[i].logical_offset;
        let end = (start + u64::from(self.block_size)).min(self.logical_size);
        (end - start) as u32
    }

    pub fn compression_ratio(&self) -> f64 {
        self.logical_size as f64 / self.physical_size as f64
    }
}

pub fn header_len(blocks: usize) -> usize {
    FIXED_HEADER + INDEX_ENTRY * blocks + DIGEST_LEN
}

/// Splits `bytes` into blocks, compresses each independently and lays out
/// the image.
pub fn encode_file(
    file_id: u64,
    bytes: &[u8],
    codec: CodecId,
    block_size: u32,
    codecs: &CodecRegistry,
) -> Result<(StoredFile, Vec<u8>), StorageError> {
    if bytes.is_empty() {
        return Err(StorageError::Empty);
    }
    if block_size == 0 {
        return Err(StorageError::Malformed("zero block size"));
    }
    let c = codecs.get(codec).ok_or(StorageError::CodecUnavailable(codec))?;
    let frames: Vec<Vec<u8>> = bytes.chunks(block_size as usize).map(|b| c.compress(b)).collect();
    let head = header_len(frames.len());
    let mut blocks = Vec::with_capacity(frames.len());
    let mut physical = head as u64;
    for (i, f) in frames.iter().enumerate() {
        blocks.push(BlockEntry {
            logical_offset: i as u64 * u64::from(block_size),
            physical_offset: physical,
            compressed_len: u32::try_from(f.len()).expect("frame exceeds 4 GiB"),
            crc32: crc32fast::hash(f),
        });
        physical += f.len() as u64;
    }

    let mut image = Vec::with_capacity(physical as usize);
    image.extend_from_slice(&MAGIC);
    image.push(VERSION);
    image.push(codec.0);
    image.extend_from_slice(&block_size.to_be_bytes());
    image.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
    image.extend_from_slice(&(blocks.len() as u32).to_be_bytes());
    for b in &blocks {
        image.extend_from_slice(&b.logical_offset.to_be_bytes());
        image.extend_from_slice(&b.physical_offset.to_be_bytes());
        image.extend_from_slice(&b.compressed_len.to_be_bytes());
        image.extend_from_slice(&b.crc32.to_be_bytes());
    }
    let digest: [u8; 32] = Sha256::digest(&image).into();
    image.extend_from_slice(&digest);
    for f in &frames {
        image.extend_from_slice(f);
    }
    debug_assert_eq!(image.len() as u64, physical);

    let file = StoredFile {
        file_id,
        codec,
        block_size,
        logical_size: bytes.len() as u64,
        physical_size: physical,
        blocks,
        digest,
    };
    Ok((file, image))
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn be_u64(b: &[u8], at: usize) -> u64 {
    u64::from_be_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Parses and verifies an image's header and index. Frames are not read.
pub fn parse_image(file_id: u64, image: &[u8]) -> Result<StoredFile, StorageError> {
    if image.len() < FIXED_HEADER + DIGEST_LEN {
        return Err(StorageError::Malformed("truncated header"));
    }
    if image[..4] != MAGIC {
        return Err(StorageError::Malformed("bad magic"));
    }
    if image[4] != VERSION {
        return Err(StorageError::Malformed("unsupported version"));
    }
    let codec = CodecId(image[5]);
    let block_size = be_u32(image, 6);
    let logical_size = be_u64(image, 10);
    let count = be_u32(image, 18) as usize;
    let head = count
        .checked_mul(INDEX_ENTRY)
        .and_then(|n| n.checked_add(FIXED_HEADER + DIGEST_LEN))
        .filter(|&h| h <= image.len())
        .ok_or(StorageError::Malformed("index runs past end of file"))?;
    let digest_at = head - DIGEST_LEN;
    let stored_digest: [u8; 32] = image[digest_at..head].try_into().expect("32 bytes");
    let computed: [u8; 32] = Sha256::digest(&image[..digest_at]).into();
    if stored_digest != computed {
        return Err(StorageError::ChecksumMismatch { block: None });
    }

    // The digest matched, so from here on inconsistencies are encoder bugs
    // or deliberate forgeries; still refuse them rather than trust them.
    if block_size == 0 || logical_size == 0 {
        return Err(StorageError::Malformed("empty geometry"));
    }
    if logical_size.div_ceil(u64::from(block_size)) != count as u64 {
        return Err(StorageError::Malformed("index does not tile the file"));
    }
    let mut blocks = Vec::with_capacity(count);
    let mut physical = head as u64;
    for i in 0..count {
        let at = FIXED_HEADER + i * INDEX_ENTRY;
        let e = BlockEntry {
            logical_offset: be_u64(image, at),
            physical_offset: be_u64(image, at + 8),
            compressed_len: be_u32(image, at + 16),
            crc32: be_u32(image, at + 20),
        };
        if e.logical_offset != i as u64 * u64::from(block_size) || e.physical_offset != physical {
            return Err(StorageError::Malformed("index does not tile the file"));
        }
        physical += u64::from(e.compressed_len);
        blocks.push(e);
    }
    if physical != image.len() as u64 {
        return Err(StorageError::Malformed("frame area length mismatch"));
    }
    Ok(StoredFile {
        file_id,
        codec,
        block_size,
        logical_size,
        physical_size: physical,
        blocks,
        digest: stored_digest,
    })
}

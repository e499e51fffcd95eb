//! Pluggable per-block codecs.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodecId(pub u8);

impl CodecId {
    pub const NONE: CodecId = CodecId(0);
    pub const REFERENCE_LZ: CodecId = CodecId(1);
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CodecId::NONE => f.write_str("NONE"),
            CodecId::REFERENCE_LZ => f.write_str("REFERENCE_LZ"),
            CodecId(n) => write!(f, "codec#{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("block failed to decode")]
pub struct DecodeFailed;

pub trait BlockCodec: Send + Sync {
    fn id(&self) -> CodecId;
    fn compress(&self, block: &[u8]) -> Vec<u8>;
    /// Must return exactly `logical_len` bytes or fail.
    fn decompress(&self, frame: &[u8], logical_len: usize) -> Result<Vec<u8>, DecodeFailed>;
}

/// Stores blocks verbatim.
#[derive(Debug, Default, Clone, Copy)]
pub struct Identity;

impl BlockCodec for Identity {
    fn id(&self) -> CodecId {
        CodecId::NONE
    }

    fn compress(&self, block: &[u8]) -> Vec<u8> {
        block.to_vec()
    }

    fn decompress(&self, frame: &[u8], logical_len: usize) -> Result<Vec<u8>, DecodeFailed> {
        if frame.len() == logical_len {
            Ok(frame.to_vec())
        } else {
            Err(DecodeFailed)
        }
    }
}

/// The reference general-purpose codec: raw DEFLATE (LZ77 + Huffman).
#[derive(Debug, Clone, Copy)]
pub struct Deflate {
    pub level: u8,
}

impl Default for Deflate {
    fn default() -> Self {
        Self { level: 6 }
    }
}

impl BlockCodec for Deflate {
    fn id(&self) -> CodecId {
        CodecId::REFERENCE_LZ
    }

    fn compress(&self, block: &[u8]) -> Vec<u8> {
        miniz_oxide::deflate::compress_to_vec(block, self.level)
    }

    fn decompress(&self, frame: &[u8], logical_len: usize) -> Result<Vec<u8>, DecodeFailed> {
        let out = miniz_oxide::inflate::decompress_to_vec_with_limit(frame, logical_len)
            .map_err(|_| DecodeFailed)?;
        if out.len() == logical_len {
            Ok(out)
        } else {
            Err(DecodeFailed)
        }
    }
}

pub struct CodecRegistry {
    codecs: BTreeMap<CodecId, Box<dyn BlockCodec>>,
}

impl fmt::Debug for CodecRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.codecs.keys()).finish()
    }
}

impl Default for CodecRegistry {
    /// `NONE` and `REFERENCE_LZ`.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Identity));
        r.register(Box::new(Deflate::default()));
        r
    }
}

impl CodecRegistry {
    pub fn empty() -> Self {
        Self {
            codecs: BTreeMap::new(),
        }
    }

    /// Adds or replaces the codec under its own id.
    pub fn register(&mut self, codec: Box<dyn BlockCodec>) {
        self.codecs.insert(codec.id(), codec);
    }

    pub fn get(&self, id: CodecId) -> Option<&dyn BlockCodec> {
        self.codecs.get(&id).map(|c| c.as_ref())
    }
}

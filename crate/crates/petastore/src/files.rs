//! Stored-file images on a real filesystem.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use petastore_core::storage::{
    client_decompress, encode_file, CodecId, CodecRegistry, Disk, StoredFile, DEFAULT_BLOCK_SIZE,
};

/// Writes `bytes` to `path` via a temporary sibling and a rename, so a crash
/// never leaves a half-written file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

/// Encodes `bytes` as a stored-file image.
pub fn pack(bytes: &[u8], codec: CodecId) -> Result<(StoredFile, Vec<u8>)> {
    if bytes.is_empty() {
        bail!("cannot store an empty file");
    }
    Ok(encode_file(
        0,
        bytes,
        codec,
        DEFAULT_BLOCK_SIZE,
        &CodecRegistry::default(),
    )?)
}

/// Verifies and decodes a whole stored-file image.
pub fn unpack(image: &[u8]) -> Result<Vec<u8>> {
    let mut disk = Disk::new();
    disk.install(0, image.to_vec());
    let file = disk.stat(0)?;
    let frames = disk.read_blocks(0, 0, file.logical_size)?;
    Ok(client_decompress(
        &frames,
        &CodecRegistry::default(),
        0,
        file.logical_size,
    )?)
}

pub fn write_packed(path: &Path, bytes: &[u8], codec: CodecId) -> Result<StoredFile> {
    let (file, image) = pack(bytes, codec)?;
    write_atomic(path, &image)?;
    Ok(file)
}

pub fn read_packed(path: &Path) -> Result<Vec<u8>> {
    let image = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    unpack(&image).with_context(|| format!("decoding {}", path.display()))
}

//! On-disk layout of a chunked scene: `manifest.json` plus one
//! `chunk_NNNNN.bin` per chunk.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{ChunkError, ChunkManifest, EncodedChunk};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Chunk(#[from] ChunkError),
}

pub fn chunk_file_name(index: usize) -> String {
    format!("chunk_{index:05}.bin")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

pub fn write_chunk_dir(dir: &Path, manifest: &ChunkManifest, chunks: &[EncodedChunk]) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, c) in chunks.iter().enumerate() {
        let path = dir.join(chunk_file_name(i));
        fs::write(&path, &c.bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(io_err(&path))
}

/// Reads a manifest and all its chunk files, verifying every checksum.
pub fn read_chunk_dir(dir: &Path) -> Result<(ChunkManifest, Vec<Vec<u8>>), StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest = ChunkManifest::from_json(&text)?;
    manifest.validate()?;
    let chunks = manifest
        .chunks
        .iter()
        .map(|d| {
            let path = dir.join(chunk_file_name(d.index));
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if bytes.len() != d.byte_size || crc32fast::hash(&bytes) != d.checksum {
                return Err(ChunkError::ChecksumMismatch { index: d.index }.into());
            }
            Ok(bytes)
        })
        .collect::<Result<_, StoreError>>()?;
    Ok((manifest, chunks))
}

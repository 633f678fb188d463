//! Progressive chunking of an ordered scene.
//!
//! Chunk `j` holds ordering positions `[sum(sizes[..j]), sum(sizes[..=j]))`.
//! Decoding any prefix of chunks yields the matching prefix of the ordered
//! scene, bit-exact for float32 and within half a quantization step otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::model::{Gaussian, Scene};
use crate::ordering::{Ordering, Strategy};

mod format;
mod quant;
mod store;

pub use format::{
    attribute_offset, payload_index, Chunk, Encoding, Payload, ATTRIBUTES, CHUNK_MAGIC, CHUNK_VERSION, COMPONENTS,
    HEADER_LEN,
};
pub use quant::{dequantize_chunk, dequantized_values, quantize_chunk};
pub use store::{chunk_file_name, read_chunk_dir, write_chunk_dir, StoreError, MANIFEST_FILE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChunkError {
    #[error("chunk sizes do not match the ordering: {0}")]
    SizesMismatch(String),
    #[error("chunk {0} would be empty")]
    EmptyChunk(usize),
    #[error("cannot quantize non-finite values")]
    NonFiniteValue,
    #[error("quantized chunk lacks its min/max table")]
    MissingHeader,
    #[error("checksum mismatch for chunk {index}")]
    ChecksumMismatch { index: usize },
    #[error("chunk prefix has a gap: expected chunk {expected}, got {found}")]
    GapInPrefix { expected: usize, found: usize },
    #[error("malformed chunk: {0}")]
    Malformed(String),
}

/// Default schedule in percent of the scene.
pub const DEFAULT_SCHEDULE_PERCENT: [f64; 8] = [0.2, 0.3, 0.5, 1.0, 3.0, 5.0, 10.0, 80.0];

#[derive(Debug, Clone, PartialEq)]
pub enum ChunkSizes {
    /// Absolute splat counts; must sum to the ordering length.
    Counts(Vec<usize>),
    /// Relative weights, normalized to the ordering length. Boundaries are
    /// rounded cumulatively, so the last chunk absorbs the remainder.
    Fractions(Vec<f64>),
}

impl ChunkSizes {
    pub fn default_schedule() -> Self {
        ChunkSizes::Fractions(DEFAULT_SCHEDULE_PERCENT.to_vec())
    }

    pub fn resolve(&self, total: usize) -> Result<Vec<usize>, ChunkError> {
        let counts = match self {
            ChunkSizes::Counts(c) => {
                let sum: usize = c.iter().sum();
                if sum != total {
                    return Err(ChunkError::SizesMismatch(format!("counts sum to {sum}, ordering has {total}")));
                }
                c.clone()
            }
            ChunkSizes::Fractions(f) => {
                if f.is_empty() || f.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(ChunkError::SizesMismatch("fractions must be positive and finite".into()));
                }
                let sum: f64 = f.iter().sum();
                let mut acc = 0.0;
                let mut prev = 0usize;
                let last = f.len() - 1;
                f.iter()
                    .enumerate()
                    .map(|(j, w)| {
                        acc += w;
                        let boundary = if j == last { total } else { ((acc / sum) * total as f64).round() as usize };
                        let boundary = boundary.min(total);
                        let n = boundary.saturating_sub(prev);
                        prev = prev.max(boundary);
                        n
                    })
                    .collect()
            }
        };
        if let Some(j) = counts.iter().position(|&n| n == 0) {
            return Err(ChunkError::EmptyChunk(j));
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkDescriptor {
    pub index: usize,
    pub count: usize,
    pub byte_size: usize,
    pub encoding: Encoding,
    /// CRC-32 (IEEE) of the chunk bytes.
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkManifest {
    pub scene_id: String,
    pub total_count: usize,
    pub strategy: Strategy,
    /// SH degree of the source scene, needed to write decoded prefixes back to PLY.
    #[serde(default = "default_sh_degree")]
    pub sh_degree: u8,
    pub chunks: Vec<ChunkDescriptor>,
    /// For re-prioritized streams: the position, in the base stream, of every
    /// splat of this stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<u32>>,
    /// URL path prefix of the chunks when they are not under the scene's own
    /// `chunks/` route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_path: Option<String>,
}

fn default_sh_degree() -> u8 {
    3
}

impl ChunkManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ChunkError> {
        serde_json::from_str(text).map_err(|e| ChunkError::Malformed(e.to_string()))
    }

    /// Checks the structural invariants: consecutive indices and counts
    /// summing to the total.
    pub fn validate(&self) -> Result<(), ChunkError> {
        if let Some((j, d)) = self.chunks.iter().enumerate().find(|(j, d)| d.index != *j) {
            return Err(ChunkError::Malformed(format!("chunk {j} carries index {}", d.index)));
        }
        let sum: usize = self.chunks.iter().map(|d| d.count).sum();
        if sum != self.total_count {
            return Err(ChunkError::Malformed(format!("chunk counts sum to {sum}, total is {}", self.total_count)));
        }
        if let Some(order) = &self.order {
            if order.len() != self.total_count {
                return Err(ChunkError::Malformed("order length differs from total".into()));
            }
        }
        Ok(())
    }

    /// Splats contained in the first `m` chunks.
    pub fn prefix_count(&self, m: usize) -> usize {
        self.chunks.iter().take(m).map(|d| d.count).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkOptions {
    pub encoding: Encoding,
    /// Sort splats inside each chunk along a Morton curve. Does not change
    /// which splats land in which chunk.
    pub morton: bool,
    pub exec: Exec,
}

impl Default for ChunkOptions {
    fn default() -> Self {
        Self { encoding: Encoding::Float32, morton: false, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedChunk {
    pub chunk: Chunk,
    pub bytes: Vec<u8>,
}

pub fn make_chunks(
    scene_id: &str,
    scene: &Scene,
    ordering: &Ordering,
    sizes: &ChunkSizes,
    opts: &ChunkOptions,
) -> Result<(ChunkManifest, Vec<EncodedChunk>), ChunkError> {
    crate::ply::validate_indices(&ordering.permutation, scene.count())
        .map_err(|e| ChunkError::SizesMismatch(e.to_string()))?;
    let counts = sizes.resolve(ordering.len())?;
    let mut ranges = Vec::with_capacity(counts.len());
    let mut start = 0;
    for &n in &counts {
        ranges.push(start..start + n);
        start += n;
    }
    let bounds = opts.morton.then(|| morton_bounds(scene, &ordering.permutation));

    let encoded = opts.exec.map(&ranges, |range| {
        let mut splats: Vec<Gaussian> =
            ordering.permutation[range.clone()].iter().map(|&i| scene.splats[i as usize]).collect();
        if let Some(b) = &bounds {
            // stable: equal codes keep priority order
            splats.sort_by_key(|g| morton_code(g.position, b));
        }
        let chunk = Chunk::from_splats(&splats);
        let chunk = match opts.encoding.bits() {
            Some(bits) => quantize_chunk(&chunk, bits)?,
            None => chunk,
        };
        let bytes = chunk.to_bytes();
        Ok(EncodedChunk { chunk, bytes })
    });
    let encoded: Vec<EncodedChunk> = encoded.into_iter().collect::<Result<_, ChunkError>>()?;

    let chunks = encoded
        .iter()
        .enumerate()
        .map(|(index, e)| ChunkDescriptor {
            index,
            count: e.chunk.count as usize,
            byte_size: e.bytes.len(),
            encoding: opts.encoding,
            checksum: crc32fast::hash(&e.bytes),
        })
        .collect();
    let manifest = ChunkManifest {
        scene_id: scene_id.to_string(),
        total_count: ordering.len(),
        strategy: ordering.strategy,
        sh_degree: scene.sh_degree,
        chunks,
        order: None,
        chunk_path: None,
    };
    Ok((manifest, encoded))
}

/// Decodes one chunk on its own.
pub fn decode_chunk(bytes: &[u8]) -> Result<Vec<Gaussian>, ChunkError> {
    let chunk = Chunk::from_bytes(bytes)?;
    match chunk.encoding() {
        Encoding::Float32 => chunk.to_splats(),
        _ => dequantize_chunk(&chunk)?.to_splats(),
    }
}

/// Decodes chunks `0..m` given as `(index, bytes)` in stream order.
pub fn decode_stream(manifest: &ChunkManifest, chunks: &[(usize, &[u8])]) -> Result<Scene, ChunkError> {
    let mut splats = Vec::with_capacity(manifest.prefix_count(chunks.len()));
    for (expected, &(index, bytes)) in chunks.iter().enumerate() {
        if index != expected {
            return Err(ChunkError::GapInPrefix { expected, found: index });
        }
        let desc = manifest
            .chunks
            .get(index)
            .ok_or_else(|| ChunkError::Malformed(format!("chunk {index} is not in the manifest")))?;
        if crc32fast::hash(bytes) != desc.checksum || bytes.len() != desc.byte_size {
            return Err(ChunkError::ChecksumMismatch { index });
        }
        let decoded = decode_chunk(bytes)?;
        if decoded.len() != desc.count {
            return Err(ChunkError::Malformed(format!(
                "chunk {index} holds {} splats, manifest says {}",
                decoded.len(),
                desc.count
            )));
        }
        splats.extend(decoded);
    }
    Ok(Scene { splats, sh_degree: manifest.sh_degree, has_normals: false, comments: Vec::new() })
}

/// Splits the concatenation of chunks `0..m` using the manifest byte sizes
/// and decodes it.
pub fn decode_concatenated(manifest: &ChunkManifest, bytes: &[u8]) -> Result<Scene, ChunkError> {
    let mut parts = Vec::new();
    let mut offset = 0;
    for desc in &manifest.chunks {
        if offset == bytes.len() {
            break;
        }
        let end = offset + desc.byte_size;
        if end > bytes.len() {
            return Err(ChunkError::Malformed(format!("stream ends inside chunk {}", desc.index)));
        }
        parts.push((desc.index, &bytes[offset..end]));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(ChunkError::Malformed("bytes beyond the last manifest chunk".into()));
    }
    decode_stream(manifest, &parts)
}

type Bounds = ([f32; 3], [f32; 3]);

fn morton_bounds(scene: &Scene, order: &[u32]) -> Bounds {
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for &i in order {
        for a in 0..3 {
            let p = scene.splats[i as usize].position[a];
            if p.is_finite() {
                lo[a] = lo[a].min(p);
                hi[a] = hi[a].max(p);
            }
        }
    }
    (lo, hi)
}

/// 30-bit Morton code of a position quantized to 10 bits per axis.
pub fn morton_code(p: [f32; 3], (lo, hi): &Bounds) -> u32 {
    let mut code = 0u32;
    let cells: [u32; 3] = std::array::from_fn(|a| {
        let extent = hi[a] - lo[a];
        if extent > 0.0 {
            (((p[a] - lo[a]) / extent * 1023.0) as u32).min(1023)
        } else {
            0
        }
    });
    for bit in 0..10 {
        for (a, c) in cells.iter().enumerate() {
            code |= ((c >> bit) & 1) << (3 * bit + a as u32);
        }
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_scene;
    use crate::ordering::{order_by_contribution, ContributionTally};

    fn ordered(n: usize) -> (Scene, Ordering) {
        let scene = random_scene(9, n);
        let scores = (0..n).map(|i| ((i * 7919) % 101) as f64).collect();
        let tally = ContributionTally { scores, views_used: 1, k_used: 20 };
        (scene, order_by_contribution(&tally))
    }

    #[test]
    fn fractions_resolve() {
        let sizes = ChunkSizes::Fractions(vec![0.2, 0.3, 0.5]);
        assert_eq!(sizes.resolve(10).unwrap(), vec![2, 3, 5]);
        assert_eq!(ChunkSizes::Fractions(vec![20.0, 30.0, 50.0]).resolve(10).unwrap(), vec![2, 3, 5]);
        assert_eq!(ChunkSizes::default_schedule().resolve(1000).unwrap(), vec![2, 3, 5, 10, 30, 50, 100, 800]);
        assert_eq!(ChunkSizes::default_schedule().resolve(100), Err(ChunkError::EmptyChunk(0)));
        assert!(matches!(ChunkSizes::Counts(vec![3, 3]).resolve(5), Err(ChunkError::SizesMismatch(_))));
        assert_eq!(ChunkSizes::Counts(vec![3, 0, 2]).resolve(5), Err(ChunkError::EmptyChunk(1)));
    }

    #[test]
    fn single_full_chunk_is_exact() {
        let (scene, order) = ordered(25);
        let (manifest, chunks) =
            make_chunks("s", &scene, &order, &ChunkSizes::Counts(vec![25]), &ChunkOptions::default()).unwrap();
        manifest.validate().unwrap();
        let decoded = decode_stream(&manifest, &[(0, &chunks[0].bytes)]).unwrap();
        assert!(decoded.bits_eq(&scene.select(&order.permutation)));
    }

    #[test]
    fn first_chunk_holds_top_splat() {
        let (scene, order) = ordered(12);
        let (manifest, chunks) =
            make_chunks("s", &scene, &order, &ChunkSizes::Counts(vec![1, 11]), &ChunkOptions::default()).unwrap();
        let first = decode_stream(&manifest, &[(0, &chunks[0].bytes)]).unwrap();
        assert_eq!(first.count(), 1);
        assert!(first.splats[0].bits_eq(&scene.splats[order.permutation[0] as usize]));
    }

    #[test]
    fn prefixes_decode_to_ordered_prefixes() {
        let (scene, order) = ordered(40);
        let opts = ChunkOptions { exec: Exec::Sequential, ..Default::default() };
        let sizes = ChunkSizes::Counts(vec![3, 7, 10, 20]);
        let (manifest, chunks) = make_chunks("s", &scene, &order, &sizes, &opts).unwrap();
        let all: Vec<(usize, &[u8])> = chunks.iter().enumerate().map(|(i, c)| (i, c.bytes.as_slice())).collect();
        for m in 0..=4 {
            let prefix = decode_stream(&manifest, &all[..m]).unwrap();
            let n = manifest.prefix_count(m);
            assert!(prefix.bits_eq(&scene.select(&order.permutation[..n])));
        }
        let concat: Vec<u8> = chunks.iter().take(3).flat_map(|c| c.bytes.clone()).collect();
        assert!(decode_concatenated(&manifest, &concat).unwrap().bits_eq(&decode_stream(&manifest, &all[..3]).unwrap()));
    }

    #[test]
    fn stream_errors() {
        let (scene, order) = ordered(10);
        let sizes = ChunkSizes::Counts(vec![5, 5]);
        let (manifest, chunks) = make_chunks("s", &scene, &order, &sizes, &ChunkOptions::default()).unwrap();
        assert_eq!(
            decode_stream(&manifest, &[(1, &chunks[1].bytes)]).unwrap_err(),
            ChunkError::GapInPrefix { expected: 0, found: 1 }
        );
        let mut corrupt = chunks[0].bytes.clone();
        corrupt[20] ^= 1;
        assert_eq!(decode_stream(&manifest, &[(0, &corrupt)]).unwrap_err(), ChunkError::ChecksumMismatch { index: 0 });
    }

    #[test]
    fn manifest_json_round_trip() {
        let (scene, order) = ordered(10);
        let opts = ChunkOptions { encoding: Encoding::Quant16, ..Default::default() };
        let (manifest, _) = make_chunks("room", &scene, &order, &ChunkSizes::Counts(vec![4, 6]), &opts).unwrap();
        let text = manifest.to_json();
        assert!(text.contains("\"quant16\""));
        assert!(text.contains("\"contribution\""));
        assert_eq!(ChunkManifest::from_json(&text).unwrap(), manifest);
    }

    #[test]
    fn morton_keeps_chunk_membership() {
        let (scene, order) = ordered(30);
        let sizes = ChunkSizes::Counts(vec![10, 20]);
        let opts = ChunkOptions { morton: true, ..Default::default() };
        let (manifest, chunks) = make_chunks("s", &scene, &order, &sizes, &opts).unwrap();
        let first = decode_stream(&manifest, &[(0, &chunks[0].bytes)]).unwrap();
        let key = |g: &Gaussian| g.position.map(f32::to_bits);
        let mut got: Vec<_> = first.splats.iter().map(key).collect();
        let mut want: Vec<_> = order.permutation[..10].iter().map(|&i| key(&scene.splats[i as usize])).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn morton_interleaves_axes() {
        let b = ([0.0; 3], [1023.0; 3]);
        assert_eq!(morton_code([1.0, 0.0, 0.0], &b), 0b001);
        assert_eq!(morton_code([0.0, 1.0, 0.0], &b), 0b010);
        assert_eq!(morton_code([0.0, 0.0, 1.0], &b), 0b100);
        assert_eq!(morton_code([2.0, 0.0, 0.0], &b), 0b001_000);
    }
}

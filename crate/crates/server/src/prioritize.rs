//! Pose-prioritized streams.
//!
//! Splats of the chunks a client already holds are kept; the remaining
//! splats are reordered so that those inside the client's (margin-expanded)
//! frustum come first, then re-chunked with the base stream's remaining
//! chunk sizes and encoding.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use progsplat::cameras::CameraRecord;
use progsplat::chunk::{make_chunks, ChunkError, ChunkManifest, ChunkOptions, ChunkSizes};
use progsplat::exec::Exec;
use progsplat::ordering::{prioritize_frustum, FrustumParams, Ordering, DEFAULT_IN_FRACTION, DEFAULT_MARGIN};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::registry::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrioritizeRequest {
    pub camera: CameraRecord,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_in_fraction")]
    pub in_fraction: f64,
    /// Chunks of the base stream the client already decoded.
    #[serde(default)]
    pub received: usize,
    /// Base stream; the scene default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    /// Block length for the in/out mix; defaults to the first remaining chunk size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<usize>,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_in_fraction() -> f64 {
    DEFAULT_IN_FRACTION
}

impl PrioritizeRequest {
    pub fn validate(&self) -> Result<(), String> {
        self.camera.to_camera().map_err(|e| e.to_string())?;
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err("margin must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.in_fraction) {
            return Err("in_fraction must lie in [0, 1]".into());
        }
        if self.granularity == Some(0) {
            return Err("granularity must be positive".into());
        }
        Ok(())
    }

    /// Stable cache key over the scene, the resolved base strategy and every
    /// request parameter.
    pub fn cache_key(&self, scene: &str, strategy: &str) -> String {
        let mut h = Sha256::new();
        h.update(scene.as_bytes());
        h.update([0]);
        h.update(strategy.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("request serializes"));
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug)]
pub struct VirtualStream {
    pub key: String,
    pub manifest: ChunkManifest,
    pub chunks: Vec<Bytes>,
}

pub fn build_virtual_stream(
    scene_id: &str,
    base: &Stream,
    req: &PrioritizeRequest,
    key: &str,
) -> Result<VirtualStream, String> {
    let camera = req.camera.to_camera().map_err(|e| e.to_string())?;
    let base_chunks = &base.manifest.chunks;
    if req.received > base_chunks.len() {
        return Err(format!("received {} chunks but the stream has {}", req.received, base_chunks.len()));
    }
    let offset = base.manifest.prefix_count(req.received);
    let sizes: Vec<usize> = base_chunks[req.received..].iter().map(|d| d.count).collect();
    let remaining = base.splats.select(&(offset as u32..base.manifest.total_count as u32).collect::<Vec<_>>());

    let mut manifest = ChunkManifest {
        scene_id: scene_id.to_string(),
        total_count: remaining.count(),
        strategy: base.manifest.strategy.with_frustum(),
        sh_degree: base.manifest.sh_degree,
        chunks: Vec::new(),
        order: Some(Vec::new()),
        chunk_path: Some(format!("/scenes/{scene_id}/virtual/{key}/chunks")),
    };
    if sizes.is_empty() {
        return Ok(VirtualStream { key: key.to_string(), manifest, chunks: Vec::new() });
    }

    let identity = Ordering {
        strategy: base.manifest.strategy,
        permutation: (0..remaining.count() as u32).collect(),
        scores: vec![0.0; remaining.count()],
    };
    let params = FrustumParams {
        margin: req.margin,
        in_fraction: req.in_fraction,
        granularity: req.granularity.unwrap_or(sizes[0]),
    };
    let ordering = prioritize_frustum(&identity, &remaining, &camera, params);
    let opts = ChunkOptions { encoding: base_chunks[0].encoding, morton: false, exec: Exec::default() };
    let (chunked, encoded) = make_chunks(scene_id, &remaining, &ordering, &ChunkSizes::Counts(sizes), &opts)
        .map_err(|e: ChunkError| e.to_string())?;

    manifest.chunks = chunked.chunks;
    manifest.order = Some(ordering.permutation.iter().map(|&j| j + offset as u32).collect());
    Ok(VirtualStream { key: key.to_string(), manifest, chunks: encoded.into_iter().map(|e| Bytes::from(e.bytes)).collect() })
}

/// Bounded map of virtual streams; the oldest entry is evicted first.
#[derive(Debug)]
pub struct StreamCache {
    capacity: usize,
    inner: Mutex<(HashMap<String, Arc<VirtualStream>>, VecDeque<String>)>,
}

impl StreamCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), inner: Mutex::new((HashMap::new(), VecDeque::new())) }
    }

    pub fn get(&self, key: &str) -> Option<Arc<VirtualStream>> {
        self.inner.lock().unwrap().0.get(key).cloned()
    }

    /// Inserts unless another request got there first; returns the cached entry.
    pub fn insert(&self, stream: VirtualStream) -> Arc<VirtualStream> {
        let mut guard = self.inner.lock().unwrap();
        let (map, order) = &mut *guard;
        if let Some(existing) = map.get(&stream.key) {
            return existing.clone();
        }
        while map.len() >= self.capacity {
            match order.pop_front() {
                Some(old) => {
                    map.remove(&old);
                }
                None => break,
            }
        }
        let key = stream.key.clone();
        let stream = Arc::new(stream);
        map.insert(key.clone(), stream.clone());
        order.push_back(key);
        stream
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

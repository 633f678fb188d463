//! Scenes available for streaming, loaded once at startup.
//!
//! Layout under the scene root:
//!
//! ```text
//! <root>/<scene-id>/manifest.json              a single stream, or
//! <root>/<scene-id>/<any-name>/manifest.json   one stream per strategy
//! ```
//!
//! Each stream directory holds its `chunk_NNNNN.bin` files next to the
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use axum::body::Bytes;
use progsplat::chunk::{decode_stream, read_chunk_dir, ChunkError, ChunkManifest, StoreError, MANIFEST_FILE};
use progsplat::model::Scene;
use progsplat::ordering::{BaseStrategy, Strategy};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Store { path: String, source: StoreError },
    #[error("{path}: {source}")]
    Decode { path: String, source: ChunkError },
    #[error("scene `{scene}` has two streams for strategy `{strategy}`")]
    DuplicateStrategy { scene: String, strategy: Strategy },
}

/// One chunked ordering of a scene.
#[derive(Debug)]
pub struct Stream {
    pub manifest: ChunkManifest,
    pub chunks: Vec<Bytes>,
    /// All splats in stream order, used to build pose-prioritized streams.
    pub splats: Scene,
}

#[derive(Debug)]
pub struct SceneEntry {
    pub id: String,
    pub streams: BTreeMap<String, Stream>,
    pub default_strategy: String,
}

impl SceneEntry {
    pub fn stream(&self, strategy: Option<&str>) -> Option<&Stream> {
        let key = match strategy {
            Some(s) => s.parse::<Strategy>().ok()?.to_string(),
            None => self.default_strategy.clone(),
        };
        self.streams.get(&key)
    }

    pub fn splat_count(&self) -> usize {
        self.streams.values().map(|s| s.manifest.total_count).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneSummary {
    pub id: String,
    pub splat_count: usize,
    pub strategies: Vec<String>,
    pub default_strategy: String,
}

#[derive(Debug, Default)]
pub struct Registry {
    scenes: BTreeMap<String, SceneEntry>,
}

impl Registry {
    /// Loads every scene below `root`. Every chunk is checksum-verified and
    /// decoded once; a bad chunk fails the whole load.
    pub fn load(root: &Path) -> Result<Self, RegistryError> {
        let mut registry = Registry::default();
        for dir in subdirs(root)? {
            let id = dir.file_name().unwrap().to_string_lossy().into_owned();
            let mut stream_dirs = Vec::new();
            if dir.join(MANIFEST_FILE).is_file() {
                stream_dirs.push(dir.clone());
            }
            stream_dirs.extend(subdirs(&dir)?.into_iter().filter(|d| d.join(MANIFEST_FILE).is_file()));
            if stream_dirs.is_empty() {
                continue;
            }
            let mut streams = BTreeMap::new();
            for sd in stream_dirs {
                let stream = load_stream(&sd)?;
                let key = stream.manifest.strategy.to_string();
                if streams.contains_key(&key) {
                    return Err(RegistryError::DuplicateStrategy { scene: id, strategy: stream.manifest.strategy });
                }
                tracing::info!(scene = %id, strategy = %key, chunks = stream.chunks.len(), "registered stream");
                streams.insert(key, stream);
            }
            registry.insert(&id, streams);
        }
        Ok(registry)
    }

    pub fn insert(&mut self, id: &str, streams: BTreeMap<String, Stream>) {
        let default_strategy = default_strategy(&streams);
        self.scenes.insert(id.to_string(), SceneEntry { id: id.to_string(), streams, default_strategy });
    }

    pub fn get(&self, id: &str) -> Option<&SceneEntry> {
        self.scenes.get(id)
    }

    pub fn summaries(&self) -> Vec<SceneSummary> {
        self.scenes
            .values()
            .map(|s| SceneSummary {
                id: s.id.clone(),
                splat_count: s.splat_count(),
                strategies: s.streams.keys().cloned().collect(),
                default_strategy: s.default_strategy.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>, RegistryError> {
    let io = |source| RegistryError::Io { path: dir.display().to_string(), source };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_stream(dir: &Path) -> Result<Stream, RegistryError> {
    let path = dir.display().to_string();
    let (manifest, chunks) =
        read_chunk_dir(dir).map_err(|source| RegistryError::Store { path: path.clone(), source })?;
    let parts: Vec<(usize, &[u8])> = chunks.iter().enumerate().map(|(i, c)| (i, c.as_slice())).collect();
    let splats = decode_stream(&manifest, &parts).map_err(|source| RegistryError::Decode { path, source })?;
    Ok(Stream { manifest, chunks: chunks.into_iter().map(Bytes::from).collect(), splats })
}

fn default_strategy(streams: &BTreeMap<String, Stream>) -> String {
    let rank = |s: &Stream| match (s.manifest.strategy.base, s.manifest.strategy.frustum) {
        (BaseStrategy::Contribution, false) => 0,
        (BaseStrategy::ContributionOctree, false) => 1,
        _ => 2,
    };
    streams.iter().min_by_key(|(k, s)| (rank(s), (*k).clone())).map(|(k, _)| k.clone()).unwrap_or_default()
}

//! Ordering files: a flat little-endian binary form and JSON.
//!
//! Binary layout: magic `PORD`, strategy tag `u8`, count `u32`, then `count`
//! `u32` splat indices followed by `count` `f32` scores.

use super::{Ordering, OrderingError, Strategy};

pub const ORDERING_MAGIC: &[u8; 4] = b"PORD";

impl Ordering {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 8 * self.len());
        out.extend_from_slice(ORDERING_MAGIC);
        out.push(self.strategy.tag());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for &i in &self.permutation {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for &s in &self.scores {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OrderingError> {
        let fmt = |m: &str| OrderingError::Format(m.to_string());
        if bytes.len() < 9 || &bytes[..4] != ORDERING_MAGIC {
            return Err(fmt("missing PORD header"));
        }
        let strategy = Strategy::from_tag(bytes[4]).ok_or_else(|| fmt("unknown strategy tag"))?;
        let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let body = &bytes[9..];
        if body.len() != 8 * count {
            return Err(fmt(&format!("expected {} payload bytes, found {}", 8 * count, body.len())));
        }
        let (idx, scores) = body.split_at(4 * count);
        Ok(Self {
            strategy,
            permutation: idx.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect(),
            scores: scores.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ordering serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OrderingError> {
        serde_json::from_str(text).map_err(|e| OrderingError::Format(e.to_string()))
    }

    /// Detects binary or JSON by the magic bytes.
    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, OrderingError> {
        if bytes.starts_with(ORDERING_MAGIC) {
            Self::from_bytes(bytes)
        } else {
            let text = std::str::from_utf8(bytes).map_err(|_| OrderingError::Format("not UTF-8 JSON".into()))?;
            Self::from_json(text)
        }
    }
}

/// Object mask: a JSON array of indices or newline-separated indices
/// (blank lines and `#` comments ignored).
pub fn read_mask(text: &str) -> Result<Vec<u32>, OrderingError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| OrderingError::Format(e.to_string()));
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<u32>().map_err(|_| OrderingError::Format(format!("bad mask line `{l}`"))))
        .collect()
}

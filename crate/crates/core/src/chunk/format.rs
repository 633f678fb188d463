//! In-memory chunk representation and its binary encoding.
//!
//! ```text
//! magic     "PRGS"
//! version   u16   (1)
//! encoding  u8    0 = float32, 1 = quant8, 2 = quant16
//! count     u32   splats in this chunk
//! ranges    59 x (min f32, max f32)      quantized encodings only
//! payload   attribute-major arrays:
//!           position[3] log_scale[3] rotation[4] opacity_logit[1] sh_dc[3] sh_rest[45]
//!           each stored as count x width values (f32, u8 or u16)
//! ```
//!
//! All multi-byte fields are little-endian. A chunk carries everything
//! needed to decode it, including the dequantization ranges.

use serde::{Deserialize, Serialize};

use super::ChunkError;
use crate::model::{Gaussian, SH_REST_LEN};

pub const CHUNK_MAGIC: &[u8; 4] = b"PRGS";
pub const CHUNK_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 11;

/// Attribute name and number of float components, in payload order.
pub const ATTRIBUTES: [(&str, usize); 6] = [
    ("position", 3),
    ("log_scale", 3),
    ("rotation", 4),
    ("opacity_logit", 1),
    ("sh_dc", 3),
    ("sh_rest", SH_REST_LEN),
];

/// Float components per splat across all attributes.
pub const COMPONENTS: usize = 59;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Float32,
    Quant8,
    Quant16,
}

impl Encoding {
    pub fn code(self) -> u8 {
        match self {
            Encoding::Float32 => 0,
            Encoding::Quant8 => 1,
            Encoding::Quant16 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Encoding::Float32,
            1 => Encoding::Quant8,
            2 => Encoding::Quant16,
            _ => return None,
        })
    }

    /// Quantization bit width, `None` for float32.
    pub fn bits(self) -> Option<u32> {
        match self {
            Encoding::Float32 => None,
            Encoding::Quant8 => Some(8),
            Encoding::Quant16 => Some(16),
        }
    }

    fn value_size(self) -> usize {
        match self {
            Encoding::Float32 => 4,
            Encoding::Quant8 => 1,
            Encoding::Quant16 => 2,
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float32" | "f32" => Ok(Encoding::Float32),
            "quant8" | "q8" => Ok(Encoding::Quant8),
            "quant16" | "q16" => Ok(Encoding::Quant16),
            _ => Err(format!("unknown encoding `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    Q8(Vec<u8>),
    Q16(Vec<u16>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::Q8(v) => v.len(),
            Payload::Q16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One independently decodable group of splats.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub count: u32,
    /// Per-component `[min, max]`, present for quantized payloads.
    pub ranges: Option<Vec<[f32; 2]>>,
    /// Attribute-major values, `COMPONENTS * count` in total.
    pub payload: Payload,
}

/// Offset of the first value of attribute `a` in an attribute-major payload.
pub fn attribute_offset(a: usize, count: usize) -> usize {
    count * ATTRIBUTES[..a].iter().map(|(_, w)| w).sum::<usize>()
}

/// Index into the attribute-major payload of component `c` (0..59) of splat `s`.
pub fn payload_index(c: usize, s: usize, count: usize) -> usize {
    let mut base = 0;
    let mut first = 0;
    for (_, w) in ATTRIBUTES {
        if c < first + w {
            return base + s * w + (c - first);
        }
        first += w;
        base += count * w;
    }
    panic!("component {c} out of range")
}

fn components(g: &Gaussian) -> [f32; COMPONENTS] {
    let mut out = [0.0f32; COMPONENTS];
    for (slot, v) in out.iter_mut().zip(g.params()) {
        *slot = v;
    }
    out
}

impl Chunk {
    pub fn encoding(&self) -> Encoding {
        match self.payload {
            Payload::F32(_) => Encoding::Float32,
            Payload::Q8(_) => Encoding::Quant8,
            Payload::Q16(_) => Encoding::Quant16,
        }
    }

    pub fn from_splats(splats: &[Gaussian]) -> Self {
        let count = splats.len();
        let mut values = vec![0.0f32; COMPONENTS * count];
        for (s, g) in splats.iter().enumerate() {
            for (c, v) in components(g).into_iter().enumerate() {
                values[payload_index(c, s, count)] = v;
            }
        }
        Self { count: count as u32, ranges: None, payload: Payload::F32(values) }
    }

    /// Splats of a float32 chunk.
    pub fn to_splats(&self) -> Result<Vec<Gaussian>, ChunkError> {
        let Payload::F32(values) = &self.payload else {
            return Err(ChunkError::Malformed("quantized chunk must be dequantized first".into()));
        };
        let count = self.count as usize;
        if values.len() != COMPONENTS * count {
            return Err(ChunkError::Malformed("payload length does not match count".into()));
        }
        Ok((0..count)
            .map(|s| {
                let v = |c: usize| values[payload_index(c, s, count)];
                let mut g = Gaussian {
                    position: [v(0), v(1), v(2)],
                    log_scale: [v(3), v(4), v(5)],
                    rotation: [v(6), v(7), v(8), v(9)],
                    opacity_logit: v(10),
                    sh_dc: [v(11), v(12), v(13)],
                    ..Default::default()
                };
                for (k, slot) in g.sh_rest.iter_mut().enumerate() {
                    *slot = v(14 + k);
                }
                g
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let encoding = self.encoding();
        let ranges_len = self.ranges.as_ref().map_or(0, |r| 8 * r.len());
        let mut out = Vec::with_capacity(HEADER_LEN + ranges_len + encoding.value_size() * self.payload.len());
        out.extend_from_slice(CHUNK_MAGIC);
        out.extend_from_slice(&CHUNK_VERSION.to_le_bytes());
        out.push(encoding.code());
        out.extend_from_slice(&self.count.to_le_bytes());
        if encoding != Encoding::Float32 {
            for [lo, hi] in self.ranges.iter().flatten() {
                out.extend_from_slice(&lo.to_le_bytes());
                out.extend_from_slice(&hi.to_le_bytes());
            }
        }
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Q8(v) => out.extend_from_slice(v),
            Payload::Q16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChunkError> {
        let malformed = |m: String| ChunkError::Malformed(m);
        if bytes.len() < HEADER_LEN || &bytes[..4] != CHUNK_MAGIC {
            return Err(malformed("missing PRGS header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHUNK_VERSION {
            return Err(malformed(format!("unsupported chunk version {version}")));
        }
        let encoding = Encoding::from_code(bytes[6]).ok_or_else(|| malformed(format!("unknown encoding {}", bytes[6])))?;
        let count = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
        let mut rest = &bytes[HEADER_LEN..];

        let ranges = if encoding == Encoding::Float32 {
            None
        } else {
            if rest.len() < 8 * COMPONENTS {
                return Err(ChunkError::MissingHeader);
            }
            let (table, tail) = rest.split_at(8 * COMPONENTS);
            rest = tail;
            Some(
                table
                    .chunks_exact(8)
                    .map(|p| {
                        [
                            f32::from_le_bytes(p[..4].try_into().unwrap()),
                            f32::from_le_bytes(p[4..].try_into().unwrap()),
                        ]
                    })
                    .collect(),
            )
        };

        let values = COMPONENTS * count as usize;
        let expected = values * encoding.value_size();
        if rest.len() != expected {
            return Err(malformed(format!("expected {expected} payload bytes, found {}", rest.len())));
        }
        let payload = match encoding {
            Encoding::Float32 => {
                Payload::F32(rest.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
            }
            Encoding::Quant8 => Payload::Q8(rest.to_vec()),
            Encoding::Quant16 => {
                Payload::Q16(rest.chunks_exact(2).map(|b| u16::from_le_bytes(b.try_into().unwrap())).collect())
            }
        };
        Ok(Self { count, ranges, payload })
    }
}

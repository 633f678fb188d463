//! Per-chunk scalar min/max quantization.
//!
//! Every component gets its own `[min, max]` range stored in the chunk
//! header, so a quantized chunk dequantizes without any other chunk.

use super::format::{Chunk, Encoding, Payload, COMPONENTS};
use super::ChunkError;

fn levels(bits: u32) -> f64 {
    ((1u64 << bits) - 1) as f64
}

/// Component of each attribute-major payload slot, given the splat count.
fn slot_components(count: usize) -> impl Iterator<Item = usize> {
    super::format::ATTRIBUTES
        .iter()
        .scan(0usize, |first, &(_, w)| {
            let start = *first;
            *first += w;
            Some((start, w))
        })
        .flat_map(move |(start, w)| (0..count).flat_map(move |_| start..start + w))
}

pub fn quantize_chunk(chunk: &Chunk, bits: u32) -> Result<Chunk, ChunkError> {
    let encoding = match bits {
        8 => Encoding::Quant8,
        16 => Encoding::Quant16,
        _ => return Err(ChunkError::Malformed(format!("unsupported bit width {bits}"))),
    };
    let Payload::F32(values) = &chunk.payload else {
        return Err(ChunkError::Malformed("chunk is already quantized".into()));
    };
    if chunk.count == 0 {
        return Err(ChunkError::EmptyChunk(0));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ChunkError::NonFiniteValue);
    }
    let count = chunk.count as usize;

    let mut ranges = vec![[f32::INFINITY, f32::NEG_INFINITY]; COMPONENTS];
    for (v, c) in values.iter().zip(slot_components(count)) {
        ranges[c][0] = ranges[c][0].min(*v);
        ranges[c][1] = ranges[c][1].max(*v);
    }

    let top = levels(bits);
    let codes = values.iter().zip(slot_components(count)).map(|(&v, c)| encode_value(v, ranges[c], top));
    let payload = match encoding {
        Encoding::Quant8 => Payload::Q8(codes.map(|q| q as u8).collect()),
        _ => Payload::Q16(codes.map(|q| q as u16).collect()),
    };
    Ok(Chunk { count: chunk.count, ranges: Some(ranges), payload })
}

/// `round((v - lo) / (hi - lo) * top)`, rounded exactly: for `f32` inputs
/// of moderate dynamic range the products below are exact in `f64`, so
/// values near a half step are never rounded the wrong way.
fn encode_value(v: f32, [lo, hi]: [f32; 2], top: f64) -> u32 {
    if hi <= lo {
        return 0;
    }
    let n = (v as f64 - lo as f64) * top;
    let d = hi as f64 - lo as f64;
    let mut q = (n / d).floor();
    if q * d > n {
        q -= 1.0;
    } else if (q + 1.0) * d <= n {
        q += 1.0;
    }
    if 2.0 * (n - q * d) >= d {
        q += 1.0;
    }
    q.clamp(0.0, top) as u32
}

pub fn dequantize_chunk(chunk: &Chunk) -> Result<Chunk, ChunkError> {
    let values = dequantized_values(chunk)?.into_iter().map(|v| v as f32).collect();
    Ok(Chunk { count: chunk.count, ranges: None, payload: Payload::F32(values) })
}

/// Reconstructed values `min + q / (2^bits - 1) * (max - min)` before they
/// are stored as `f32`, in payload order. Storing adds up to half an `f32`
/// ulp on top of the quantization error.
pub fn dequantized_values(chunk: &Chunk) -> Result<Vec<f64>, ChunkError> {
    let bits = match chunk.encoding().bits() {
        Some(b) => b,
        None => return Err(ChunkError::Malformed("chunk is not quantized".into())),
    };
    let ranges = chunk.ranges.as_ref().ok_or(ChunkError::MissingHeader)?;
    if ranges.len() != COMPONENTS {
        return Err(ChunkError::MissingHeader);
    }
    let top = levels(bits);
    let count = chunk.count as usize;
    let codes: Vec<u32> = match &chunk.payload {
        Payload::Q8(v) => v.iter().map(|&q| q as u32).collect(),
        Payload::Q16(v) => v.iter().map(|&q| q as u32).collect(),
        Payload::F32(_) => unreachable!(),
    };
    Ok(codes.iter().zip(slot_components(count)).map(|(&q, c)| dequantize_value(q, ranges[c], top)).collect())
}

fn dequantize_value(q: u32, [lo, hi]: [f32; 2], top: f64) -> f64 {
    if q == 0 {
        lo as f64
    } else if q as f64 >= top {
        hi as f64
    } else {
        lo as f64 + q as f64 / top * (hi as f64 - lo as f64)
    }
}

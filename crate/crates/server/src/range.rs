//! Single byte-range requests (`Range: bytes=...`).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteRange {
    pub start: u64,
    /// Inclusive.
    pub end: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeError {
    /// Syntactically valid but outside the resource.
    Unsatisfiable,
    /// Not a single `bytes` range; the header is ignored.
    Unsupported,
}

pub fn parse_range(header: &str, len: u64) -> Result<ByteRange, RangeError> {
    let spec = header.trim().strip_prefix("bytes=").ok_or(RangeError::Unsupported)?;
    if spec.contains(',') {
        return Err(RangeError::Unsupported);
    }
    let (a, b) = spec.trim().split_once('-').ok_or(RangeError::Unsupported)?;
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| RangeError::Unsupported);
    let (start, end) = match (a.trim().is_empty(), b.trim().is_empty()) {
        (true, true) => return Err(RangeError::Unsupported),
        (true, false) => {
            let suffix = num(b)?;
            if suffix == 0 || len == 0 {
                return Err(RangeError::Unsatisfiable);
            }
            (len.saturating_sub(suffix), len - 1)
        }
        (false, true) => (num(a)?, len.saturating_sub(1)),
        (false, false) => {
            let (s, e) = (num(a)?, num(b)?);
            if e < s {
                return Err(RangeError::Unsupported);
            }
            (s, e.min(len.saturating_sub(1)))
        }
    };
    if start >= len {
        return Err(RangeError::Unsatisfiable);
    }
    Ok(ByteRange { start, end })
}

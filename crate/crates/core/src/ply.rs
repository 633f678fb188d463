//! Binary little-endian PLY reader/writer for the standard splat vertex layout:
//!
//! ```text
//! x y z [nx ny nz] f_dc_0..2 [f_rest_0..N-1] opacity scale_0..2 rot_0..3
//! ```
//!
//! all `float`, with N in {0, 9, 24, 45}. Reading is by property name, so any
//! property order is accepted; writing always emits the order above, which
//! is what the common exporters produce, so conforming files round-trip
//! byte-for-byte.

use thiserror::Error;

use crate::model::{Gaussian, Scene, SH_REST_PER_CHANNEL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlyError {
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("missing PLY property `{0}`")]
    MissingProperty(String),
    #[error("truncated PLY body: expected {expected} bytes, found {actual}")]
    TruncatedBody { expected: usize, actual: usize },
    #[error("unsupported PLY format `{0}`")]
    UnsupportedFormat(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Property {
    name: String,
    ty: String,
    size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

impl Element {
    fn stride(&self) -> usize {
        self.properties.iter().map(|p| p.size).sum()
    }
}

/// Property names of the vertex element, in file order, plus its element count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyLayout {
    pub properties: Vec<String>,
    pub count: usize,
}

impl PlyLayout {
    /// The canonical layout written by [`write_ply`].
    pub fn canonical(count: usize, sh_degree: u8, normals: bool) -> Self {
        let mut properties: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        if normals {
            properties.extend(["nx", "ny", "nz"].iter().map(|s| s.to_string()));
        }
        properties.extend((0..3).map(|i| format!("f_dc_{i}")));
        properties.extend((0..3 * rest_per_channel(sh_degree)).map(|i| format!("f_rest_{i}")));
        properties.push("opacity".into());
        properties.extend((0..3).map(|i| format!("scale_{i}")));
        properties.extend((0..4).map(|i| format!("rot_{i}")));
        Self { properties, count }
    }

    pub fn stride(&self) -> usize {
        4 * self.properties.len()
    }
}

/// Number of non-DC SH coefficients per channel for a degree.
pub fn rest_per_channel(sh_degree: u8) -> usize {
    let d = sh_degree.min(3) as usize;
    (d + 1) * (d + 1) - 1
}

fn scalar_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

struct Header {
    elements: Vec<Element>,
    comments: Vec<String>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    const END: &[u8] = b"end_header";
    if !bytes.starts_with(b"ply") {
        return Err(PlyError::MalformedHeader("missing `ply` magic".into()));
    }
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| PlyError::MalformedHeader("no end_header line".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| PlyError::MalformedHeader("header is not UTF-8".into()))?
            .trim_end_matches('\r');
        pos += nl + 1;
        if line.as_bytes() == END {
            break;
        }
        lines.push(line.to_string());
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    let mut format_seen = false;
    for line in lines.iter().skip(1) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] => comments.push(line.trim_start_matches("comment").trim().to_string()),
            ["obj_info", ..] => {}
            ["format", fmt, version] => {
                if *fmt != "binary_little_endian" || *version != "1.0" {
                    return Err(PlyError::UnsupportedFormat(format!("{fmt} {version}")));
                }
                format_seen = true;
            }
            ["format", ..] => return Err(PlyError::MalformedHeader(format!("bad format line `{line}`"))),
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| PlyError::MalformedHeader(format!("bad element count `{count}`")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            ["property", "list", ..] => {
                return Err(PlyError::MalformedHeader("list properties are not supported".into()))
            }
            ["property", ty, name] => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::MalformedHeader("property before any element".into()))?;
                let size = scalar_size(ty)
                    .ok_or_else(|| PlyError::MalformedHeader(format!("unknown property type `{ty}`")))?;
                element.properties.push(Property { name: name.to_string(), ty: ty.to_string(), size });
            }
            _ => return Err(PlyError::MalformedHeader(format!("unrecognized header line `{line}`"))),
        }
    }
    if !format_seen {
        return Err(PlyError::MalformedHeader("missing format line".into()));
    }
    Ok(Header { elements, comments, body_offset: pos })
}

/// Parses a splat PLY. Stored values are kept verbatim (no activation).
pub fn load_ply(bytes: &[u8]) -> Result<Scene, PlyError> {
    let header = parse_header(bytes)?;
    let mut offset = header.body_offset;
    let mut vertex = None;
    for element in &header.elements {
        if element.name == "vertex" {
            vertex = Some(element);
            break;
        }
        offset += element.count * element.stride();
    }
    let vertex = vertex.ok_or_else(|| PlyError::MissingProperty("element vertex".into()))?;

    let find = |name: &str| -> Result<Option<usize>, PlyError> {
        let mut matches = vertex.properties.iter().enumerate().filter(|(_, p)| p.name == name);
        let Some((idx, prop)) = matches.next() else { return Ok(None) };
        if matches.next().is_some() {
            return Err(PlyError::MalformedHeader(format!("duplicate property `{name}`")));
        }
        if prop.ty != "float" && prop.ty != "float32" {
            return Err(PlyError::MalformedHeader(format!("property `{name}` must be float, got {}", prop.ty)));
        }
        Ok(Some(vertex.properties[..idx].iter().map(|p| p.size).sum()))
    };
    let require = |name: &str| find(name)?.ok_or_else(|| PlyError::MissingProperty(name.to_string()));
    let require_all = |names: &[&str]| names.iter().map(|n| require(n)).collect::<Result<Vec<_>, _>>();

    let pos = require_all(&["x", "y", "z"])?;
    let dc = require_all(&["f_dc_0", "f_dc_1", "f_dc_2"])?;
    let opacity = require("opacity")?;
    let scale = require_all(&["scale_0", "scale_1", "scale_2"])?;
    let rot = require_all(&["rot_0", "rot_1", "rot_2", "rot_3"])?;

    let normals = {
        let found: Vec<Option<usize>> = ["nx", "ny", "nz"].iter().map(|n| find(n)).collect::<Result<_, _>>()?;
        match found.as_slice() {
            [Some(a), Some(b), Some(c)] => Some([*a, *b, *c]),
            [None, None, None] => None,
            _ => return Err(PlyError::MalformedHeader("partial normal properties".into())),
        }
    };

    let rest_total = vertex.properties.iter().filter(|p| p.name.starts_with("f_rest_")).count();
    let sh_degree = match rest_total {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        n => return Err(PlyError::MalformedHeader(format!("unsupported f_rest count {n}"))),
    };
    let rest: Vec<usize> = (0..rest_total)
        .map(|i| require(&format!("f_rest_{i}")))
        .collect::<Result<_, _>>()
        .map_err(|e| match e {
            PlyError::MissingProperty(n) => PlyError::MalformedHeader(format!("f_rest properties not contiguous, missing {n}")),
            e => e,
        })?;
    let per_channel = rest_per_channel(sh_degree);

    let stride = vertex.stride();
    let expected = vertex.count * stride;
    let available = bytes.len().saturating_sub(offset);
    if available < expected {
        return Err(PlyError::TruncatedBody { expected, actual: available });
    }
    let trailing = available - expected;
    let later_elements = header.elements.iter().skip_while(|e| e.name != "vertex").skip(1).count();
    if trailing > 0 && later_elements == 0 {
        log::warn!("ignoring {trailing} trailing bytes after PLY payload");
    }

    let body = &bytes[offset..offset + expected];
    let splats = body
        .chunks_exact(stride.max(1))
        .take(vertex.count)
        .map(|rec| {
            let f = |off: usize| f32::from_le_bytes(rec[off..off + 4].try_into().unwrap());
            let mut g = Gaussian {
                position: [f(pos[0]), f(pos[1]), f(pos[2])],
                log_scale: [f(scale[0]), f(scale[1]), f(scale[2])],
                rotation: [f(rot[0]), f(rot[1]), f(rot[2]), f(rot[3])],
                opacity_logit: f(opacity),
                sh_dc: [f(dc[0]), f(dc[1]), f(dc[2])],
                ..Default::default()
            };
            if let Some(n) = normals {
                g.normal = [f(n[0]), f(n[1]), f(n[2])];
            }
            for c in 0..3 {
                for k in 0..per_channel {
                    g.sh_rest[c * SH_REST_PER_CHANNEL + k] = f(rest[c * per_channel + k]);
                }
            }
            g
        })
        .collect();

    Ok(Scene { splats, sh_degree, has_normals: normals.is_some(), comments: header.comments })
}

/// Checks that `order` holds distinct indices below `count`.
pub fn validate_indices(order: &[u32], count: usize) -> Result<(), PlyError> {
    let mut seen = vec![false; count];
    for &i in order {
        let slot = seen
            .get_mut(i as usize)
            .ok_or_else(|| PlyError::InvalidPermutation(format!("index {i} out of range for {count} splats")))?;
        if std::mem::replace(slot, true) {
            return Err(PlyError::InvalidPermutation(format!("index {i} repeated")));
        }
    }
    Ok(())
}

/// Serializes the first `limit` splats of `order` (identity when absent).
pub fn write_ply(scene: &Scene, order: Option<&[u32]>, limit: Option<usize>) -> Result<Vec<u8>, PlyError> {
    let identity: Vec<u32>;
    let order = match order {
        Some(o) => {
            validate_indices(o, scene.count())?;
            o
        }
        None => {
            identity = (0..scene.count() as u32).collect();
            &identity
        }
    };
    let limit = limit.unwrap_or(order.len());
    if limit > order.len() {
        return Err(PlyError::InvalidPermutation(format!(
            "limit {limit} exceeds {} available splats",
            order.len()
        )));
    }

    let layout = PlyLayout::canonical(limit, scene.sh_degree, scene.has_normals);
    let mut out = Vec::with_capacity(256 + 24 * layout.properties.len() + limit * layout.stride());
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {limit}\n").as_bytes());
    for p in &layout.properties {
        out.extend_from_slice(format!("property float {p}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");

    let per_channel = rest_per_channel(scene.sh_degree);
    let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for &i in &order[..limit] {
        let g = &scene.splats[i as usize];
        g.position.iter().for_each(|&v| put(v));
        if scene.has_normals {
            g.normal.iter().for_each(|&v| put(v));
        }
        g.sh_dc.iter().for_each(|&v| put(v));
        for c in 0..3 {
            for k in 0..per_channel {
                put(g.sh_rest[c * SH_REST_PER_CHANNEL + k]);
            }
        }
        put(g.opacity_logit);
        g.log_scale.iter().for_each(|&v| put(v));
        g.rotation.iter().for_each(|&v| put(v));
    }
    Ok(out)
}

//! Camera files.
//!
//! The JSON form follows the `cameras.json` written by common Gaussian
//! splatting trainers: one object per view with `width`, `height`, `fx`,
//! `fy`, the camera center `position` and a camera-to-world `rotation`
//! (row-major 3x3). `cx`, `cy`, `near` and `far` are optional extensions.
//! A COLMAP text model (`cameras.txt` + `images.txt`) converts to the same
//! records.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Camera, ModelError, DEFAULT_FAR, DEFAULT_NEAR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("camera JSON: {0}")]
    Json(String),
    #[error("COLMAP {file} line {line}: {message}")]
    Colmap { file: &'static str, line: usize, message: String },
    #[error("camera `{name}`: {source}")]
    Invalid { name: String, source: ModelError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    #[serde(default)]
    pub id: u64,
    #[serde(default)]
    pub img_name: String,
    pub width: u32,
    pub height: u32,
    /// Camera center in world space.
    pub position: [f64; 3],
    /// Camera-to-world rotation, rows.
    pub rotation: [[f64; 3]; 3],
    pub fx: f64,
    pub fy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera, CameraError> {
        let c2w = Matrix3::from_fn(|r, c| self.rotation[r][c]);
        let rotation = c2w.transpose();
        let cam = Camera {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx.unwrap_or(self.width as f64 / 2.0),
            cy: self.cy.unwrap_or(self.height as f64 / 2.0),
            rotation,
            translation: -(rotation * Vector3::from(self.position)),
            near: self.near.unwrap_or(DEFAULT_NEAR),
            far: self.far.unwrap_or(DEFAULT_FAR),
        };
        cam.validate().map_err(|source| CameraError::Invalid { name: self.img_name.clone(), source })?;
        Ok(cam)
    }

    pub fn from_camera(id: u64, img_name: &str, cam: &Camera) -> Self {
        let c2w = cam.rotation.transpose();
        let center = cam.center();
        Self {
            id,
            img_name: img_name.to_string(),
            width: cam.width,
            height: cam.height,
            position: [center.x, center.y, center.z],
            rotation: std::array::from_fn(|r| std::array::from_fn(|c| c2w[(r, c)])),
            fx: cam.fx,
            fy: cam.fy,
            cx: Some(cam.cx),
            cy: Some(cam.cy),
            near: Some(cam.near),
            far: Some(cam.far),
        }
    }
}

/// Parses a JSON array of records, or a single record object.
pub fn parse_camera_records(text: &str) -> Result<Vec<CameraRecord>, CameraError> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map(|r| vec![r]).map_err(|e| CameraError::Json(e.to_string()));
    }
    serde_json::from_str(text).map_err(|e| CameraError::Json(e.to_string()))
}

pub fn load_cameras_json(text: &str) -> Result<Vec<Camera>, CameraError> {
    parse_camera_records(text)?.iter().map(CameraRecord::to_camera).collect()
}

pub fn cameras_to_json(records: &[CameraRecord]) -> String {
    serde_json::to_string_pretty(records).expect("camera records serialize")
}

/// Keeps the records whose image name appears in `split` (one name per
/// line, `#` comments allowed). Names match with or without extension.
pub fn apply_split(records: &[CameraRecord], split: &str) -> Vec<CameraRecord> {
    let stem = |s: &str| s.rsplit_once('.').map_or(s, |(a, _)| a).to_string();
    let names: std::collections::HashSet<String> =
        split.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(stem).collect();
    records.iter().filter(|r| names.contains(&stem(&r.img_name))).cloned().collect()
}

struct Intrinsics {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.starts_with('#'))
}

fn parse_colmap_cameras(text: &str) -> Result<std::collections::HashMap<u64, Intrinsics>, CameraError> {
    let mut out = std::collections::HashMap::new();
    for (line, l) in content_lines(text).filter(|(_, l)| !l.is_empty()) {
        let err = |message: String| CameraError::Colmap { file: "cameras.txt", line, message };
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 5 {
            return Err(err("expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
        let id = f[0].parse::<u64>().map_err(|_| err(format!("bad camera id `{}`", f[0])))?;
        let (width, height) = (num(f[2])? as u32, num(f[3])? as u32);
        let p = f[4..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        let (fx, fy, cx, cy, needed) = match f[1] {
            "SIMPLE_PINHOLE" | "SIMPLE_RADIAL" | "RADIAL" | "SIMPLE_RADIAL_FISHEYE" | "RADIAL_FISHEYE" => {
                (p.first(), p.first(), p.get(1), p.get(2), 3)
            }
            "PINHOLE" | "OPENCV" | "OPENCV_FISHEYE" | "FULL_OPENCV" | "FOV" | "THIN_PRISM_FISHEYE" => {
                (p.first(), p.get(1), p.get(2), p.get(3), 4)
            }
            other => return Err(err(format!("unsupported camera model {other}"))),
        };
        let (Some(&fx), Some(&fy), Some(&cx), Some(&cy)) = (fx, fy, cx, cy) else {
            return Err(err(format!("{} needs at least {needed} parameters", f[1])));
        };
        if p.len() > needed {
            log::warn!("cameras.txt line {line}: ignoring distortion parameters of {}", f[1]);
        }
        out.insert(id, Intrinsics { width, height, fx, fy, cx, cy });
    }
    Ok(out)
}

/// Converts a COLMAP text model to camera records sorted by image name.
/// Distortion parameters are dropped.
pub fn colmap_to_records(cameras_txt: &str, images_txt: &str) -> Result<Vec<CameraRecord>, CameraError> {
    let intrinsics = parse_colmap_cameras(cameras_txt)?;
    let mut records = Vec::new();
    // each image takes two lines; the second (2D points) may be empty
    let mut lines = content_lines(images_txt).skip_while(|(_, l)| l.is_empty());
    while let Some((line, l)) = lines.next() {
        if l.is_empty() {
            continue;
        }
        lines.next();
        let err = |message: String| CameraError::Colmap { file: "images.txt", line, message };
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() < 10 {
            return Err(err("expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
        let id = f[0].parse::<u64>().map_err(|_| err(format!("bad image id `{}`", f[0])))?;
        let q = Quaternion::new(num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?);
        let t = Vector3::new(num(f[5])?, num(f[6])?, num(f[7])?);
        let cam_id = f[8].parse::<u64>().map_err(|_| err(format!("bad camera id `{}`", f[8])))?;
        let k = intrinsics.get(&cam_id).ok_or_else(|| err(format!("unknown camera id {cam_id}")))?;
        let w2c = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        let cam = Camera {
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            rotation: w2c,
            translation: t,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        };
        records.push(CameraRecord::from_camera(id, &f[9..].join(" "), &cam));
    }
    records.sort_by(|a, b| a.img_name.cmp(&b.img_name));
    Ok(records)
}

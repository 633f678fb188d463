//! Float RGB images, PNG export and a raw float dump.

use std::io::{self, Read, Write};
use std::path::Path;

/// Row-major, top-left origin, three `f32` channels per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

const RAW_MAGIC: &[u8; 4] = b"RGBF";

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(3 * n);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// 8-bit RGB, straight clamp and scale.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        image::save_buffer(path, &self.to_rgb8(), self.width, self.height, image::ColorType::Rgb8)
    }

    pub fn load_png(path: &Path) -> image::ImageResult<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    /// `RGBF`, width u32, height u32, then little-endian f32 RGB triples.
    pub fn write_raw<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(RAW_MAGIC)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * self.data.len());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_raw<R: Read>(mut r: R) -> io::Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != RAW_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "not a raw float image"));
        }
        let width = u32::from_le_bytes(head[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(head[8..12].try_into().unwrap());
        let mut buf = vec![0u8; 12 * width as usize * height as usize];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Self { width, height, data })
    }

    /// Bitwise equality of the float payloads.
    pub fn bits_eq(&self, other: &Image) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

//! Tile-based CPU forward renderer with per-pixel top-K contribution tracking.
//!
//! Splats are projected with the EWA approximation, sorted front-to-back by the
//! view-space depth of their mean (ties by index), binned into 16x16 tiles and
//! alpha-composited per pixel. The contribution of a splat at a pixel is the
//! weight `T * alpha` it receives in the compositing sum.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use thiserror::Error;

use crate::exec::Exec;
use crate::image::Image;
use crate::model::{activate, sh_to_rgb, ActivatedGaussian, Camera, ModelError, Scene};

pub const DEFAULT_TOP_K: usize = 20;
pub const TILE_SIZE: u32 = 16;
/// Added to both diagonal entries of the screen-space covariance.
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const ALPHA_MAX: f64 = 0.99;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Means projecting further than this fraction of the image size outside the
/// image are culled.
pub const DEFAULT_CULL_MARGIN: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("top-K tracking needs K >= 1")]
    InvalidK,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub splat_index: u32,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub rgb: [f64; 3],
    pub opacity: f64,
}

impl ProjectedGaussian {
    /// Upper-triangle of the inverse covariance `(a, b, c)`.
    fn conic(&self) -> [f64; 3] {
        let (a, b, c) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }

    /// Radius in pixels outside of which alpha is guaranteed below [`ALPHA_MIN`].
    fn support_radius(&self) -> f64 {
        let (a, b, c) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let mahalanobis_sq = 2.0 * (self.opacity / ALPHA_MIN).ln().max(0.0);
        (lambda_max * mahalanobis_sq).sqrt() + 1.0
    }
}

/// Projects an activated splat. `None` when its mean is not in front of the
/// near plane or projects outside the image grown by `cull_margin`.
pub fn project(g: &ActivatedGaussian, splat_index: u32, cam: &Camera, cull_margin: f64) -> Option<ProjectedGaussian> {
    if !cam.in_frustum(&g.position, cull_margin) {
        return None;
    }
    let v = cam.to_view(&g.position);
    let (u, w) = cam.view_to_pixel(&v);
    let z2 = v.z * v.z;
    let jacobian = Matrix2x3::new(
        cam.fx / v.z,
        0.0,
        -cam.fx * v.x / z2,
        0.0,
        cam.fy / v.z,
        -cam.fy * v.y / z2,
    );
    let t = jacobian * cam.rotation;
    let mut cov2d = t * g.covariance * t.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;

    let dir = g.position - cam.center();
    let dir = if dir.norm() > 0.0 { dir.normalize() } else { Vector3::z() };
    Some(ProjectedGaussian {
        splat_index,
        mean2d: Vector2::new(u, w),
        cov2d,
        depth: v.z,
        rgb: sh_to_rgb(g, &dir),
        opacity: g.opacity,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelContribution {
    pub x: u32,
    pub y: u32,
    /// `(splat_index, T * alpha)`, weight descending, at most K entries.
    pub entries: Vec<(u32, f64)>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    /// Transmittance left after compositing, per pixel (row-major).
    pub final_transmittance: Vec<f64>,
    /// One entry per pixel, row-major; present when tracking was requested.
    pub contributions: Option<Vec<PixelContribution>>,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Record the K largest contributions per pixel. `usize::MAX` keeps all.
    pub top_k: Option<usize>,
    pub background: [f32; 3],
    pub cull_margin: f64,
    pub exec: Exec,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { top_k: None, background: [0.0; 3], cull_margin: DEFAULT_CULL_MARGIN, exec: Exec::default() }
    }
}

/// Activated splats of a scene, reusable across views.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub splats: Vec<ActivatedGaussian>,
}

impl PreparedScene {
    pub fn new(scene: &Scene) -> Result<Self, ModelError> {
        let splats = scene.splats.iter().map(activate).collect::<Result<_, _>>()?;
        Ok(Self { splats })
    }
}

pub fn render(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput, RenderError> {
    render_prepared(&PreparedScene::new(scene)?, cam, opts)
}

pub fn render_prepared(scene: &PreparedScene, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput, RenderError> {
    let track = match opts.top_k {
        Some(0) => return Err(RenderError::InvalidK),
        Some(k) => Track::Full(k),
        None => Track::None,
    };
    let frame = Frame::build(scene, cam, opts)?;
    let tiles = opts.exec.map_range(frame.tile_count(), |t| frame.composite_tile(t, track, opts.background));

    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut image = Image::filled(cam.width, cam.height, [0.0; 3]);
    let mut final_transmittance = vec![0.0; w * h];
    let mut contributions = matches!(track, Track::Full(_)).then(|| {
        (0..w * h)
            .map(|i| PixelContribution { x: (i % w) as u32, y: (i / w) as u32, entries: Vec::new() })
            .collect::<Vec<_>>()
    });
    for (t, tile) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, y1) = frame.tile_rect(t);
        let mut local = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y as usize * w + x as usize;
                image.data[3 * p..3 * p + 3].copy_from_slice(&tile.colors[local]);
                final_transmittance[p] = tile.transmittance[local];
                if let (Some(all), Some(entries)) = (contributions.as_mut(), tile.entries.as_ref()) {
                    all[p].entries = entries[local].clone();
                }
                local += 1;
            }
        }
    }
    if let Some(all) = contributions.as_mut() {
        all.shrink_to_fit();
    }
    Ok(RenderOutput { image, final_transmittance, contributions })
}

/// Sum of recorded top-K weights per splat over every pixel of one view,
/// sorted by splat index. Summation order is fixed (tile-major, then
/// row-major inside a tile) regardless of `exec`.
pub fn view_contribution_sums(
    scene: &PreparedScene,
    cam: &Camera,
    top_k: usize,
    cull_margin: f64,
    exec: Exec,
) -> Result<Vec<(u32, f64)>, RenderError> {
    if top_k == 0 {
        return Err(RenderError::InvalidK);
    }
    let opts = RenderOptions { top_k: Some(top_k), cull_margin, exec, ..Default::default() };
    let frame = Frame::build(scene, cam, &opts)?;
    let tiles = exec.map_range(frame.tile_count(), |t| {
        frame.composite_tile(t, Track::Sum(top_k), opts.background).sums
    });
    let mut all: Vec<(u32, f64)> = Vec::new();
    for sums in tiles {
        all.extend(sums);
    }
    // stable: equal indices keep tile order
    all.sort_by_key(|&(i, _)| i);
    Ok(merge_runs(all))
}

fn merge_runs(sorted: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(sorted.len());
    for (i, w) in sorted {
        match out.last_mut() {
            Some((j, acc)) if *j == i => *acc += w,
            _ => out.push((i, w)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum Track {
    None,
    Full(usize),
    Sum(usize),
}

struct TileOutput {
    colors: Vec<[f32; 3]>,
    transmittance: Vec<f64>,
    entries: Option<Vec<Vec<(u32, f64)>>>,
    sums: Vec<(u32, f64)>,
}

struct Splat2d {
    index: u32,
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    rgb: [f64; 3],
}

struct Frame {
    width: u32,
    height: u32,
    tiles_x: u32,
    tiles_y: u32,
    splats: Vec<Splat2d>,
    /// Per tile, positions into `splats` in front-to-back order.
    bins: Vec<Vec<u32>>,
}

impl Frame {
    fn build(scene: &PreparedScene, cam: &Camera, opts: &RenderOptions) -> Result<Self, RenderError> {
        cam.validate()?;
        let mut projected: Vec<ProjectedGaussian> = opts
            .exec
            .map_range(scene.splats.len(), |i| project(&scene.splats[i], i as u32, cam, opts.cull_margin))
            .into_iter()
            .flatten()
            .collect();
        projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.splat_index.cmp(&b.splat_index)));

        let tiles_x = cam.width.div_ceil(TILE_SIZE);
        let tiles_y = cam.height.div_ceil(TILE_SIZE);
        let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        let mut splats = Vec::with_capacity(projected.len());
        for p in &projected {
            let r = p.support_radius();
            let (mx, my) = (p.mean2d.x, p.mean2d.y);
            // pixels whose centers (i + 0.5) fall in [m - r, m + r]
            let Some((x0, x1)) = pixel_span(mx, r, cam.width) else { continue };
            let Some((y0, y1)) = pixel_span(my, r, cam.height) else { continue };
            let slot = splats.len() as u32;
            for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                    bins[(ty * tiles_x + tx) as usize].push(slot);
                }
            }
            splats.push(Splat2d {
                index: p.splat_index,
                mean: [mx, my],
                conic: p.conic(),
                opacity: p.opacity,
                rgb: p.rgb,
            });
        }
        Ok(Self { width: cam.width, height: cam.height, tiles_x, tiles_y, splats, bins })
    }

    fn tile_count(&self) -> usize {
        (self.tiles_x * self.tiles_y) as usize
    }

    fn tile_rect(&self, t: usize) -> (u32, u32, u32, u32) {
        let tx = t as u32 % self.tiles_x;
        let ty = t as u32 / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(self.width), (y0 + TILE_SIZE).min(self.height))
    }

    fn composite_tile(&self, t: usize, track: Track, background: [f32; 3]) -> TileOutput {
        let (x0, y0, x1, y1) = self.tile_rect(t);
        let n = ((x1 - x0) * (y1 - y0)) as usize;
        let mut out = TileOutput {
            colors: Vec::with_capacity(n),
            transmittance: Vec::with_capacity(n),
            entries: matches!(track, Track::Full(_)).then(|| Vec::with_capacity(n)),
            sums: Vec::new(),
        };
        let bin = &self.bins[t];
        let k = match track {
            Track::None => 0,
            Track::Full(k) | Track::Sum(k) => k,
        };
        let mut top: Vec<(u32, f64)> = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut transmittance = 1.0f64;
                let mut color = [0.0f64; 3];
                top.clear();
                for &slot in bin {
                    let s = &self.splats[slot as usize];
                    let dx = px - s.mean[0];
                    let dy = py - s.mean[1];
                    let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
                    let alpha = (s.opacity * power.exp()).min(ALPHA_MAX);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    let next = transmittance * (1.0 - alpha);
                    if next < TRANSMITTANCE_MIN {
                        break;
                    }
                    let weight = transmittance * alpha;
                    for c in 0..3 {
                        color[c] += weight * s.rgb[c];
                    }
                    if k > 0 {
                        push_top_k(&mut top, k, s.index, weight);
                    }
                    transmittance = next;
                }
                let mut rgb = [0.0f32; 3];
                for c in 0..3 {
                    rgb[c] = (color[c] + transmittance * background[c] as f64).clamp(0.0, 1.0) as f32;
                }
                out.colors.push(rgb);
                out.transmittance.push(transmittance);
                match track {
                    Track::None => {}
                    Track::Full(_) => out.entries.as_mut().unwrap().push(top.clone()),
                    Track::Sum(_) => out.sums.extend_from_slice(&top),
                }
            }
        }
        if matches!(track, Track::Sum(_)) {
            let sums = std::mem::take(&mut out.sums);
            let mut sums = sums;
            sums.sort_by_key(|&(i, _)| i);
            out.sums = merge_runs(sums);
        }
        out
    }
}

fn pixel_span(center: f64, radius: f64, size: u32) -> Option<(u32, u32)> {
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
    (lo <= hi).then_some((lo as u32, hi as u32))
}

/// Inserts keeping weight-descending order; equal weights keep arrival order.
fn push_top_k(top: &mut Vec<(u32, f64)>, k: usize, index: u32, weight: f64) {
    if top.len() == k && top.last().is_some_and(|&(_, w)| w >= weight) {
        return;
    }
    let pos = top.partition_point(|&(_, w)| w >= weight);
    if top.len() == k {
        top.pop();
    }
    top.insert(pos, (index, weight));
}

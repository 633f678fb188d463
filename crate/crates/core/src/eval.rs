//! Image metrics and quality-per-prefix curves.
//!
//! Partial scenes are compared with the render of the full scene from the
//! same camera, so no ground-truth photos are needed. LPIPS is not computed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{decode_stream, make_chunks, ChunkError, ChunkOptions, ChunkSizes, Encoding};
use crate::exec::Exec;
use crate::image::Image;
use crate::model::{Camera, ModelError, Scene};
use crate::ordering::{Ordering, Strategy};
use crate::raster::{render_prepared, PreparedScene, RenderError, RenderOptions};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall,
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("invalid percents: {0}")]
    InvalidPercents(String),
    #[error("no evaluation cameras")]
    NoCameras,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
}

fn check_dims(a: &Image, b: &Image) -> Result<(), EvalError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(EvalError::DimensionMismatch((a.width, a.height), (b.width, b.height)));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, cap: f64) -> f64 {
    if mse <= 0.0 {
        return cap;
    }
    (10.0 * (1.0 / mse).log10()).min(cap)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64, EvalError> {
    psnr_capped(a, b, PSNR_CAP)
}

pub fn psnr_capped(a: &Image, b: &Image, cap: f64) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    if a.data.is_empty() {
        return Ok(cap);
    }
    let sse: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(psnr_from_mse(sse / a.data.len() as f64, cap))
}

/// PSNR over the pixels where `mask` is set (row-major, one flag per pixel).
pub fn masked_psnr(a: &Image, b: &Image, mask: &[bool]) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    if mask.len() != a.pixel_count() {
        return Err(EvalError::DimensionMismatch((a.width, a.height), (mask.len() as u32, 1)));
    }
    let mut sse = 0.0;
    let mut n = 0usize;
    for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..3 {
            sse += (a.data[3 * p + c] as f64 - b.data[3 * p + c] as f64).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok(psnr_from_mse(sse / n as f64, PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable "valid" convolution of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM, Gaussian window, valid region only, averaged over the
/// three channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall);
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let y: Vec<f64> = b.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_x = filter_valid(&x, w, h, &k);
        let mu_y = filter_valid(&y, w, h, &k);
        let xx = filter_valid(&prod(&x, &x), w, h, &k);
        let yy = filter_valid(&prod(&y, &y), w, h, &k);
        let xy = filter_valid(&prod(&x, &y), w, h, &k);
        let n = mu_x.len();
        let sum: f64 = (0..n)
            .map(|i| {
                let (mx, my) = (mu_x[i], mu_y[i]);
                let sx = xx[i] - mx * mx;
                let sy = yy[i] - my * my;
                let sxy = xy[i] - mx * my;
                ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2))
            })
            .sum();
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub strategy: Strategy,
    pub percents: Vec<f64>,
    /// Mean over the evaluation cameras, per percent.
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub encoding: Encoding,
    pub render: RenderOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { encoding: Encoding::Float32, render: RenderOptions::default() }
    }
}

/// Number of splats shown at `percent` of an ordering of length `len`.
pub fn prefix_len(percent: f64, len: usize) -> usize {
    ((percent / 100.0 * len as f64).ceil() as usize).min(len)
}

fn check_percents(percents: &[f64]) -> Result<(), EvalError> {
    let bad = |m: &str| Err(EvalError::InvalidPercents(m.to_string()));
    if percents.is_empty() {
        return bad("empty list");
    }
    if percents.iter().any(|p| !(0.0..=100.0).contains(p)) {
        return bad("values must lie in [0, 100]");
    }
    if percents.windows(2).any(|w| w[0] >= w[1]) {
        return bad("values must be strictly ascending");
    }
    if *percents.last().unwrap() != 100.0 {
        return bad("last value must be 100");
    }
    Ok(())
}

/// Prefix scenes of one ordering, produced by chunking at the percent
/// boundaries and decoding growing chunk prefixes.
fn decoded_prefixes(
    scene: &Scene,
    ordering: &Ordering,
    percents: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<Scene>, EvalError> {
    let len = ordering.len();
    let bounds: Vec<usize> = percents.iter().map(|&p| prefix_len(p, len)).collect();
    let mut cuts: Vec<usize> = bounds.iter().copied().filter(|&n| n > 0).collect();
    cuts.dedup();
    let sizes: Vec<usize> = cuts.iter().scan(0, |prev, &c| Some(c - std::mem::replace(prev, c))).collect();
    if sizes.is_empty() {
        return Ok(vec![Scene { sh_degree: scene.sh_degree, ..Scene::new(Vec::new()) }; percents.len()]);
    }
    let chunk_opts = ChunkOptions { encoding: opts.encoding, morton: false, exec: Exec::Sequential };
    let (manifest, chunks) = make_chunks("eval", scene, ordering, &ChunkSizes::Counts(sizes), &chunk_opts)?;
    let parts: Vec<(usize, &[u8])> = chunks.iter().enumerate().map(|(i, c)| (i, c.bytes.as_slice())).collect();
    bounds
        .iter()
        .map(|&n| {
            let m = cuts.iter().take_while(|&&c| c <= n).count();
            Ok(decode_stream(&manifest, &parts[..m])?)
        })
        .collect()
}

/// Quality of every ordering prefix at the given percents, against full-scene
/// renders from the same cameras. Deterministic regardless of `exec`.
pub fn evaluate_curve(
    scene: &Scene,
    orderings: &[Ordering],
    cameras: &[Camera],
    percents: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<MetricCurve>, EvalError> {
    check_percents(percents)?;
    if cameras.is_empty() {
        return Err(EvalError::NoCameras);
    }
    let exec = opts.render.exec;
    let inner = RenderOptions { top_k: None, exec: Exec::Sequential, ..opts.render };

    let full = PreparedScene::new(scene)?;
    let references = exec
        .map(cameras, |cam| render_prepared(&full, cam, &inner).map(|o| o.image))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut prefixes = Vec::new();
    for ordering in orderings {
        for s in decoded_prefixes(scene, ordering, percents, opts)? {
            prefixes.push(PreparedScene::new(&s)?);
        }
    }

    let tasks: Vec<(usize, usize)> =
        (0..prefixes.len()).flat_map(|p| (0..cameras.len()).map(move |c| (p, c))).collect();
    let metrics = exec
        .map(&tasks, |&(p, c)| {
            let img = render_prepared(&prefixes[p], &cameras[c], &inner)?.image;
            Ok((psnr(&img, &references[c])?, ssim(&img, &references[c])?))
        })
        .into_iter()
        .collect::<Result<Vec<_>, EvalError>>()?;

    let ncam = cameras.len() as f64;
    Ok(orderings
        .iter()
        .enumerate()
        .map(|(o, ordering)| {
            let mut curve = MetricCurve {
                strategy: ordering.strategy,
                percents: percents.to_vec(),
                psnr: Vec::with_capacity(percents.len()),
                ssim: Vec::with_capacity(percents.len()),
            };
            for k in 0..percents.len() {
                let p = o * percents.len() + k;
                let per_cam = &metrics[p * cameras.len()..(p + 1) * cameras.len()];
                curve.psnr.push(per_cam.iter().map(|m| m.0).sum::<f64>() / ncam);
                curve.ssim.push(per_cam.iter().map(|m| m.1).sum::<f64>() / ncam);
            }
            curve
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub encoding: Encoding,
    pub cameras: usize,
    pub curves: Vec<MetricCurve>,
    /// Always `"not computed"`.
    pub lpips: String,
}

impl EvalReport {
    pub fn new(encoding: Encoding, cameras: usize, curves: Vec<MetricCurve>) -> Self {
        Self { encoding, cameras, curves, lpips: "not computed".into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,percent,psnr,ssim,lpips\n");
        for c in &self.curves {
            for ((p, psnr), ssim) in c.percents.iter().zip(&c.psnr).zip(&c.ssim) {
                let _ = writeln!(out, "{},{p},{psnr:.6},{ssim:.6},", c.strategy);
            }
        }
        out
    }

    /// One data block per strategy, separated by two blank lines, for
    /// `plot ... index i`.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.curves.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "# {}\n# percent psnr ssim", c.strategy);
            for ((p, psnr), ssim) in c.percents.iter().zip(&c.psnr).zip(&c.ssim) {
                let _ = writeln!(out, "{p} {psnr:.6} {ssim:.6}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_cameras, random_scene};
    use crate::ordering::{order_antimatter, order_center_distance};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, w: u32, h: u32) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::filled(w, h, [0.0; 3]);
        img.data.iter_mut().for_each(|v| *v = rng.random());
        img
    }

    /// Direct evaluation of the SSIM formula at one window position.
    fn ssim_at(a: &[f64], b: &[f64], w: usize, x0: usize, y0: usize) -> f64 {
        let k = gaussian_window();
        let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..SSIM_WINDOW {
            for i in 0..SSIM_WINDOW {
                let wt = k[i] * k[j];
                let (u, v) = (a[(y0 + j) * w + x0 + i], b[(y0 + j) * w + x0 + i]);
                mx += wt * u;
                my += wt * v;
                sxx += wt * u * u;
                syy += wt * v * v;
                sxy += wt * u * v;
            }
        }
        let (c1, c2) = (SSIM_K1.powi(2), SSIM_K2.powi(2));
        let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
        ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    }

    #[test]
    fn psnr_examples() {
        let zero = Image::filled(4, 4, [0.0; 3]);
        assert_eq!(psnr(&zero, &zero).unwrap(), 100.0);
        assert_abs_diff_eq!(psnr(&zero, &Image::filled(4, 4, [0.1; 3])).unwrap(), 20.0, epsilon = 1e-5);
        assert_abs_diff_eq!(psnr(&zero, &Image::filled(4, 4, [1.0; 3])).unwrap(), 0.0, epsilon = 1e-12);
        assert!(matches!(psnr(&zero, &Image::filled(4, 5, [0.0; 3])), Err(EvalError::DimensionMismatch(..))));
        assert_eq!(psnr_capped(&zero, &Image::filled(4, 4, [1e-9; 3]), 60.0).unwrap(), 60.0);
    }

    #[test]
    fn masked_psnr_uses_only_masked_pixels() {
        let a = Image::filled(2, 1, [0.0; 3]);
        let mut b = a.clone();
        b.data[3..].fill(0.5);
        assert_eq!(masked_psnr(&a, &b, &[true, false]).unwrap(), 100.0);
        assert_abs_diff_eq!(masked_psnr(&a, &b, &[false, true]).unwrap(), 10.0 * 4f64.log10(), epsilon = 1e-12);
        assert_eq!(masked_psnr(&a, &b, &[false, false]), Err(EvalError::EmptyMask));
    }

    #[test]
    fn ssim_identity_and_errors() {
        let a = noise(1, 16, 12);
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(ssim(&Image::filled(10, 20, [0.0; 3]), &Image::filled(10, 20, [0.0; 3])), Err(EvalError::TooSmall));
    }

    #[test]
    fn ssim_matches_direct_window_formula() {
        let (a, b) = (noise(2, 14, 13), noise(3, 14, 13));
        let mut want = 0.0;
        for c in 0..3 {
            let pa: Vec<f64> = a.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
            let pb: Vec<f64> = b.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
            let mut s = 0.0;
            for y in 0..3 {
                for x in 0..4 {
                    s += ssim_at(&pa, &pb, 14, x, y);
                }
            }
            want += s / 12.0;
        }
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), want / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_inverted_binary_is_negative() {
        let mut a = Image::filled(16, 16, [0.0; 3]);
        for y in 0..16 {
            for x in 0..16 {
                if (x / 2 + y / 3) % 2 == 0 {
                    a.data[3 * (y * 16 + x)..3 * (y * 16 + x) + 3].fill(1.0);
                }
            }
        }
        let mut inv = a.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_small_perturbation_of_constant() {
        let a = Image::filled(16, 16, [0.4; 3]);
        let mut b = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        b.data.iter_mut().for_each(|v| *v += rng.random_range(-1e-3..1e-3));
        assert!(ssim(&a, &b).unwrap() >= 0.99);
    }

    #[test]
    fn prefix_lengths_round_up() {
        assert_eq!(prefix_len(10.0, 200), 20);
        assert_eq!(prefix_len(0.2, 1000), 2);
        assert_eq!(prefix_len(0.1, 15), 1);
        assert_eq!(prefix_len(0.0, 15), 0);
        assert_eq!(prefix_len(100.0, 15), 15);
    }

    #[test]
    fn percents_are_validated() {
        let scene = random_scene(1, 5);
        let cams = random_cameras(1, 1, 12, 12);
        let o = [order_antimatter(&scene)];
        let opts = EvalOptions::default();
        for bad in [vec![], vec![50.0], vec![50.0, 10.0, 100.0], vec![10.0, 10.0, 100.0], vec![-1.0, 100.0]] {
            assert!(matches!(evaluate_curve(&scene, &o, &cams, &bad, &opts), Err(EvalError::InvalidPercents(_))));
        }
        assert_eq!(evaluate_curve(&scene, &o, &[], &[100.0], &opts), Err(EvalError::NoCameras));
    }

    #[test]
    fn curve_ends_at_cap_and_is_deterministic() {
        let scene = random_scene(8, 40);
        let cams = random_cameras(8, 3, 16, 16);
        let orderings = [order_antimatter(&scene), order_center_distance(&scene, [0.0; 3])];
        let percents = [0.0, 1.0, 10.0, 50.0, 100.0];
        let seq = EvalOptions { render: RenderOptions { exec: Exec::Sequential, ..Default::default() }, ..Default::default() };
        let par = EvalOptions { render: RenderOptions { exec: Exec::Parallel, ..Default::default() }, ..Default::default() };
        let a = evaluate_curve(&scene, &orderings, &cams, &percents, &seq).unwrap();
        let b = evaluate_curve(&scene, &orderings, &cams, &percents, &par).unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert_eq!(*c.psnr.last().unwrap(), 100.0);
            assert_eq!(*c.ssim.last().unwrap(), 1.0);
            assert!(c.ssim.iter().all(|s| (-1.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn report_formats() {
        let curve = MetricCurve { strategy: Strategy::ANTIMATTER, percents: vec![50.0, 100.0], psnr: vec![21.5, 100.0], ssim: vec![0.5, 1.0] };
        let report = EvalReport::new(Encoding::Float32, 2, vec![curve.clone(), curve]);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().nth(1).unwrap(), "antimatter,50,21.500000,0.500000,");
        assert!(report.to_json().contains("\"lpips\": \"not computed\""));
        assert_eq!(report.to_gnuplot().matches("\n\n\n").count(), 1);
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}

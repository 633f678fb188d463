//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Reference values come from the oracles in this file, not from the library.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3x4, Vector3, Vector4};
use num_bigint::BigInt;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use progsplat::chunk::{dequantize_chunk, dequantized_values, payload_index, quantize_chunk, Chunk, Payload, COMPONENTS};
use progsplat::eval::{evaluate_curve, EvalOptions};
use progsplat::fixtures::{dominant_splat_scene, occluded_giants_scene, random_cameras, random_scene};
use progsplat::model::{Camera, Gaussian, Scene};
use progsplat::ordering::{
    in_frustum, order_antimatter, order_by_contribution, order_center_distance, prioritize_frustum, refine_octree,
    tally_contributions, FrustumParams, Octree, Ordering, DEFAULT_MARGIN, DEFAULT_OCTREE_DEPTH,
};
use progsplat::raster::{render, RenderOptions, DEFAULT_TOP_K};
use progsplat::{load_ply, write_ply, Exec};

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Naive renderer: every splat tested at every pixel, exact depth order.
mod oracle {
    use progsplat::model::{Camera, Gaussian, Scene};
    use std::f64::consts::PI;

    pub const MARGIN: f64 = 0.3;
    const LOW_PASS: f64 = 0.3;

    pub struct Splat {
        mean: [f64; 3],
        cov: [[f64; 3]; 3],
        opacity: f64,
        sh: [[f64; 3]; 16],
    }

    pub fn splat(g: &Gaussian) -> Splat {
        let f = |v: f32| v as f64;
        let opacity = 1.0 / (1.0 + (-f(g.opacity_logit)).exp());
        let s = g.log_scale.map(|v| f(v).exp());
        let [w, x, y, z] = g.rotation.map(f);
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        let r = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = (0..3).map(|k| r[i][k] * r[j][k] * s[k] * s[k]).sum();
            }
        }
        let mut sh = [[0.0; 3]; 16];
        for c in 0..3 {
            sh[0][c] = f(g.sh_dc[c]);
            for k in 0..15 {
                sh[k + 1][c] = f(g.sh_rest[c * 15 + k]);
            }
        }
        Splat { mean: g.position.map(f), cov, opacity, sh }
    }

    /// Real SH basis in closed form, degrees 0 to 3.
    fn sh_basis(d: [f64; 3]) -> [f64; 16] {
        let [x, y, z] = d;
        let sp = PI.sqrt();
        let c0 = 1.0 / (2.0 * sp);
        let c1 = 3f64.sqrt() / (2.0 * sp);
        let (c2a, c2b, c2c) = (15f64.sqrt() / (2.0 * sp), 5f64.sqrt() / (4.0 * sp), 15f64.sqrt() / (4.0 * sp));
        let c3a = 17.5f64.sqrt() / (4.0 * sp);
        let c3b = 105f64.sqrt() / (2.0 * sp);
        let c3c = 10.5f64.sqrt() / (4.0 * sp);
        let c3d = 7f64.sqrt() / (4.0 * sp);
        let c3e = 105f64.sqrt() / (4.0 * sp);
        [
            c0,
            -c1 * y,
            c1 * z,
            -c1 * x,
            c2a * x * y,
            -c2a * y * z,
            c2b * (2.0 * z * z - x * x - y * y),
            -c2a * x * z,
            c2c * (x * x - y * y),
            -c3a * y * (3.0 * x * x - y * y),
            c3b * x * y * z,
            -c3c * y * (4.0 * z * z - x * x - y * y),
            c3d * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y),
            -c3c * x * (4.0 * z * z - x * x - y * y),
            c3e * z * (x * x - y * y),
            -c3a * x * (x * x - 3.0 * y * y),
        ]
    }

    struct Projected {
        index: u32,
        depth: f64,
        mean: [f64; 2],
        /// Inverse of the screen covariance (upper triangle).
        inv: [f64; 3],
        rgb: [f64; 3],
        opacity: f64,
    }

    fn project(s: &Splat, index: u32, cam: &Camera) -> Option<Projected> {
        let r = |i: usize, j: usize| cam.rotation[(i, j)];
        let t = cam.translation;
        let v: Vec<f64> = (0..3).map(|i| (0..3).map(|j| r(i, j) * s.mean[j]).sum::<f64>() + t[i]).collect();
        if !(v[2] > cam.near) {
            return None;
        }
        let u = cam.fx * v[0] / v[2] + cam.cx;
        let w = cam.fy * v[1] / v[2] + cam.cy;
        let (width, height) = (cam.width as f64, cam.height as f64);
        if u < -MARGIN * width || u > (1.0 + MARGIN) * width || w < -MARGIN * height || w > (1.0 + MARGIN) * height {
            return None;
        }
        let z2 = v[2] * v[2];
        let jac = [[cam.fx / v[2], 0.0, -cam.fx * v[0] / z2], [0.0, cam.fy / v[2], -cam.fy * v[1] / z2]];
        let mut m = [[0.0; 3]; 2];
        for a in 0..2 {
            for j in 0..3 {
                m[a][j] = (0..3).map(|k| jac[a][k] * r(k, j)).sum();
            }
        }
        let mut c2 = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                c2[a][b] = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| m[a][i] * s.cov[i][j] * m[b][j]).sum();
            }
        }
        let (a, b, c) = (c2[0][0] + LOW_PASS, c2[0][1], c2[1][1] + LOW_PASS);
        let det = a * c - b * b;

        let center: Vec<f64> = (0..3).map(|j| -(0..3).map(|i| r(i, j) * t[i]).sum::<f64>()).collect();
        let d: Vec<f64> = (0..3).map(|i| s.mean[i] - center[i]).collect();
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let basis = sh_basis([d[0] / len, d[1] / len, d[2] / len]);
        let mut rgb = [0.5; 3];
        for (k, bk) in basis.iter().enumerate() {
            for ch in 0..3 {
                rgb[ch] += bk * s.sh[k][ch];
            }
        }
        Some(Projected {
            index,
            depth: v[2],
            mean: [u, w],
            inv: [c / det, -b / det, a / det],
            rgb: rgb.map(|x| x.clamp(0.0, 1.0)),
            opacity: s.opacity,
        })
    }

    pub struct Pixel {
        pub rgb: [f64; 3],
        pub transmittance: f64,
        /// `(splat, T * alpha)` in compositing order.
        pub weights: Vec<(u32, f64)>,
    }

    pub fn render(scene: &Scene, cam: &Camera, background: [f32; 3]) -> Vec<Pixel> {
        let splats: Vec<Splat> = scene.splats.iter().map(splat).collect();
        let mut list: Vec<Projected> =
            splats.iter().enumerate().filter_map(|(i, s)| project(s, i as u32, cam)).collect();
        list.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
        let mut out = Vec::with_capacity((cam.width * cam.height) as usize);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t = 1.0;
                let mut rgb = [0.0; 3];
                let mut weights = Vec::new();
                for p in &list {
                    let (dx, dy) = (px - p.mean[0], py - p.mean[1]);
                    let q = p.inv[0] * dx * dx + 2.0 * p.inv[1] * dx * dy + p.inv[2] * dy * dy;
                    let alpha = (p.opacity * (-0.5 * q).exp()).min(0.99);
                    if alpha < 1.0 / 255.0 {
                        continue;
                    }
                    if t * (1.0 - alpha) < 1e-4 {
                        break;
                    }
                    for ch in 0..3 {
                        rgb[ch] += t * alpha * p.rgb[ch];
                    }
                    weights.push((p.index, t * alpha));
                    t *= 1.0 - alpha;
                }
                for ch in 0..3 {
                    rgb[ch] = (rgb[ch] + t * background[ch] as f64).clamp(0.0, 1.0);
                }
                out.push(Pixel { rgb, transmittance: t, weights });
            }
        }
        out
    }

    /// Sum of every compositing weight per splat over all views.
    pub fn tally(scene: &Scene, cameras: &[Camera]) -> Vec<f64> {
        let mut scores = vec![0.0; scene.count()];
        for cam in cameras {
            for px in render(scene, cam, [0.0; 3]) {
                for (i, w) in px.weights {
                    scores[i as usize] += w;
                }
            }
        }
        scores
    }
}

struct OracleCase {
    scene: Scene,
    cameras: Vec<Camera>,
    background: [f32; 3],
}

const ORACLE_SCENES: u64 = 120;

fn oracle_cases() -> Vec<OracleCase> {
    (0..ORACLE_SCENES)
        .map(|s| {
            let count = 1 + (s * 37 % 50) as usize;
            let views = 1 + (s % 4) as usize;
            let background = [(s % 3) as f32 * 0.4, 0.25, if s % 2 == 0 { 0.0 } else { 1.0 }];
            OracleCase {
                scene: random_scene(1000 + s, count),
                cameras: random_cameras(1000 + s, views, 16, 16),
                background,
            }
        })
        .collect()
}

fn oracle_equivalence() -> Verdict {
    let started = Instant::now();
    let (mut max_image, mut max_weight, mut max_t, mut max_tally) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut views, mut weights) = (0, 0usize);
    for (n, case) in oracle_cases().iter().enumerate() {
        let mut expected_tally = vec![0.0; case.scene.count()];
        for cam in &case.cameras {
            views += 1;
            let opts = RenderOptions { top_k: Some(usize::MAX), background: case.background, ..Default::default() };
            let out = render(&case.scene, cam, &opts).map_err(|e| e.to_string())?;
            let contributions = out.contributions.as_ref().ok_or("no contributions recorded")?;
            for (p, px) in oracle::render(&case.scene, cam, case.background).iter().enumerate() {
                for ch in 0..3 {
                    max_image = max_image.max((out.image.data[3 * p + ch] as f64 - px.rgb[ch]).abs());
                }
                max_t = max_t.max((out.final_transmittance[p] - px.transmittance).abs());
                let mut got = contributions[p].entries.clone();
                let mut want = px.weights.clone();
                ensure!(got.len() == want.len(), "scene {n} pixel {p}: {} weights, oracle has {}", got.len(), want.len());
                got.sort_by_key(|e| e.0);
                want.sort_by_key(|e| e.0);
                for ((gi, gw), (wi, ww)) in got.iter().zip(&want) {
                    ensure!(gi == wi, "scene {n} pixel {p}: splat {gi} recorded, oracle has {wi}");
                    max_weight = max_weight.max((gw - ww).abs());
                    expected_tally[*wi as usize] += ww;
                }
                weights += want.len();
            }
        }
        let tally = tally_contributions(&case.scene, &case.cameras, usize::MAX, Exec::Parallel).map_err(|e| e.to_string())?;
        for (a, b) in tally.scores.iter().zip(&expected_tally) {
            max_tally = max_tally.max((a - b).abs());
        }
    }
    let elapsed = started.elapsed();
    let worst = max_image.max(max_weight).max(max_t).max(max_tally);
    ensure!(weights > 10_000, "only {weights} nonzero weights, scenes too sparse to be meaningful");
    ensure!(worst <= 1e-5, "max |diff| image {max_image:e}, weight {max_weight:e}, T {max_t:e}, tally {max_tally:e}");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}");
    Ok(format!(
        "{ORACLE_SCENES} scenes, {views} views, {weights} weights; max |diff| image {max_image:.1e}, \
         weight {max_weight:.1e}, tally {max_tally:.1e}; {elapsed:.1?}"
    ))
}

fn conservation() -> Verdict {
    let (mut oracle_err, mut render_err, mut pixels) = (0.0f64, 0.0f64, 0);
    for case in oracle_cases() {
        for cam in &case.cameras {
            let opts = RenderOptions { top_k: Some(usize::MAX), ..Default::default() };
            let out = render(&case.scene, cam, &opts).map_err(|e| e.to_string())?;
            let contributions = out.contributions.unwrap();
            for (p, px) in oracle::render(&case.scene, cam, [0.0; 3]).iter().enumerate() {
                let sum: f64 = px.weights.iter().map(|w| w.1).sum();
                oracle_err = oracle_err.max((sum + px.transmittance - 1.0).abs());
                let sum: f64 = contributions[p].entries.iter().map(|w| w.1).sum();
                render_err = render_err.max((sum + out.final_transmittance[p] - 1.0).abs());
                pixels += 1;
            }
        }
    }
    ensure!(oracle_err <= 1e-5 && render_err <= 1e-5, "max |sum + T - 1| oracle {oracle_err:e}, renderer {render_err:e}");
    Ok(format!("{pixels} pixels; max |sum w + T - 1| renderer {render_err:.1e}, oracle {oracle_err:.1e}"))
}

fn all_orderings(scene: &Scene, cameras: &[Camera]) -> Result<Vec<Ordering>, String> {
    let tally = tally_contributions(scene, cameras, DEFAULT_TOP_K, Exec::Parallel).map_err(|e| e.to_string())?;
    let base = vec![
        order_by_contribution(&tally),
        refine_octree(scene, &tally, DEFAULT_OCTREE_DEPTH),
        order_antimatter(scene),
        order_center_distance(scene, [0.0; 3]),
    ];
    let granularity = (scene.count() / 10).max(1);
    let framed: Vec<Ordering> = base
        .iter()
        .map(|o| prioritize_frustum(o, scene, &cameras[0], FrustumParams::with_granularity(granularity)))
        .collect();
    Ok(base.into_iter().chain(framed).collect())
}

fn order_invariance() -> Verdict {
    let mut renders = 0;
    let mut names = Vec::new();
    for seed in 0..4u64 {
        let scene = random_scene(50 + seed, 300);
        let cameras = random_cameras(50 + seed, 3, 48, 32);
        let orderings = all_orderings(&scene, &cameras)?;
        for o in &orderings {
            o.validate(scene.count()).map_err(|e| e.to_string())?;
            let permuted = scene.select(&o.permutation);
            for cam in &cameras {
                let a = render(&scene, cam, &RenderOptions::default()).map_err(|e| e.to_string())?;
                let b = render(&permuted, cam, &RenderOptions::default()).map_err(|e| e.to_string())?;
                ensure!(a.image.bits_eq(&b.image), "{} seed {seed}: permuted render differs", o.strategy);
                renders += 1;
            }
            if seed == 0 {
                names.push(o.strategy.to_string());
            }
        }
        let curves = evaluate_curve(&scene, &orderings, &cameras, &[10.0, 50.0, 100.0], &EvalOptions::default())
            .map_err(|e| e.to_string())?;
        for c in &curves {
            let (psnr, ssim) = (c.psnr[2], c.ssim[2]);
            ensure!(psnr == 100.0 && ssim == 1.0, "{} seed {seed}: PSNR {psnr}, SSIM {ssim} at 100%", c.strategy);
        }
    }
    Ok(format!("{renders} bit-identical renders; PSNR 100 / SSIM 1 at 100% for {}", names.join(", ")))
}

fn curve_at_10(scene: &Scene, cameras: &[Camera], orderings: &[Ordering]) -> Result<Vec<f64>, String> {
    let curves =
        evaluate_curve(scene, orderings, cameras, &[10.0, 100.0], &EvalOptions::default()).map_err(|e| e.to_string())?;
    Ok(curves.iter().map(|c| c.psnr[0]).collect())
}

fn dominance() -> Verdict {
    let (scene, cameras) = dominant_splat_scene(7, 200, 5);
    let scores = oracle::tally(&scene, &cameras);
    let total: f64 = scores.iter().sum();
    let fraction = scores[..5].iter().sum::<f64>() / total;
    ensure!(fraction > 0.9, "dominant splats carry {:.1}% of oracle contribution", 100.0 * fraction);
    let dist = |g: &Gaussian| g.position.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let near_dominant = scene.splats[..5].iter().map(dist).fold(f64::INFINITY, f64::min);
    let far_speck = scene.splats[5..].iter().map(dist).fold(0.0, f64::max);
    ensure!(near_dominant > far_speck, "dominant splats not farther from the origin than the rest");

    let tally = tally_contributions(&scene, &cameras, DEFAULT_TOP_K, Exec::Parallel).map_err(|e| e.to_string())?;
    let at10 = curve_at_10(&scene, &cameras, &[order_by_contribution(&tally), order_center_distance(&scene, [0.0; 3])])?;
    let gap = at10[0] - at10[1];
    ensure!(gap >= 5.0, "contribution {:.2} dB vs center {:.2} dB at 10%", at10[0], at10[1]);

    let (scene, cameras) = occluded_giants_scene(7, 200, 16);
    let tally = tally_contributions(&scene, &cameras, DEFAULT_TOP_K, Exec::Parallel).map_err(|e| e.to_string())?;
    let oracle_scores = oracle::tally(&scene, &cameras);
    let best: f64 = oracle_scores[..16].iter().sum::<f64>() / oracle_scores.iter().sum::<f64>();
    let giants = curve_at_10(&scene, &cameras, &[order_by_contribution(&tally), order_antimatter(&scene)])?;
    ensure!(giants[0] > giants[1], "occluded variant: contribution {:.2} dB vs antimatter {:.2} dB", giants[0], giants[1]);
    Ok(format!(
        "5/200 carry {:.1}%; PSNR@10% contribution {:.2} vs center {:.2} (+{gap:.1} dB); \
         small-front variant ({:.0}% of contribution) contribution {:.2} vs antimatter {:.2}",
        100.0 * fraction,
        at10[0],
        at10[1],
        100.0 * best,
        giants[0],
        giants[1]
    ))
}

fn octree_properties() -> Verdict {
    let scene = random_scene(77, 3000);
    let cameras = random_cameras(77, 4, 32, 32);
    let tally = tally_contributions(&scene, &cameras, DEFAULT_TOP_K, Exec::Parallel).map_err(|e| e.to_string())?;
    let mut rounds_checked = 0;
    for depth in 0..=5u32 {
        let tree = Octree::build(&scene, depth);
        let mut leaf_of = vec![usize::MAX; scene.count()];
        for (l, leaf) in tree.leaves.iter().enumerate() {
            let (lo, hi) = tree.leaf_bounds(leaf);
            for &m in &leaf.members {
                ensure!(leaf_of[m as usize] == usize::MAX, "depth {depth}: splat {m} in two leaves");
                leaf_of[m as usize] = l;
                let p = scene.splats[m as usize].position;
                for a in 0..3 {
                    let v = p[a] as f64;
                    ensure!(v >= lo[a] - 1e-9 && v <= hi[a] + 1e-9, "depth {depth}: splat {m} outside its leaf");
                }
            }
        }
        ensure!(leaf_of.iter().all(|&l| l != usize::MAX), "depth {depth}: splat without a leaf");

        let order = refine_octree(&scene, &tally, depth);
        order.validate(scene.count()).map_err(|e| e.to_string())?;
        let pops: Vec<usize> = tree.leaves.iter().map(|l| l.members.len()).collect();
        let mut seen = vec![0usize; pops.len()];
        let mut prefix = 0;
        for r in 1..=pops.iter().copied().max().unwrap_or(0) {
            let end: usize = pops.iter().map(|&p| p.min(r)).sum();
            for &i in &order.permutation[prefix..end] {
                seen[leaf_of[i as usize]] += 1;
            }
            prefix = end;
            for (l, &p) in pops.iter().enumerate() {
                ensure!(seen[l] == p.min(r), "depth {depth}, round {r}: leaf {l} has {} splats in the prefix", seen[l]);
            }
            rounds_checked += 1;
        }
    }
    let mut expected: Vec<u32> = (0..scene.count() as u32).collect();
    expected.sort_by(|&a, &b| tally.scores[b as usize].partial_cmp(&tally.scores[a as usize]).unwrap().then(a.cmp(&b)));
    let flat = refine_octree(&scene, &tally, 0).permutation;
    ensure!(flat == expected, "depth 0 differs from descending-score order");
    ensure!(order_by_contribution(&tally).permutation == expected, "contribution order differs from descending-score order");
    Ok(format!("3000 splats, depths 0-5: unique leaves, depth 0 = contribution order, {rounds_checked} rounds spread-checked"))
}

fn frustum_classification() -> Verdict {
    const PAIRS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xf5);
    let (mut inside, mut mismatches) = (0, 0);
    for _ in 0..PAIRS {
        let eye = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let target = eye + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0f64));
        if (target - eye).norm() < 1e-3 {
            continue;
        }
        let up = Vector3::new(rng.random_range(-1.0..1.0), 1.0, rng.random_range(-1.0..1.0));
        if (target - eye).normalize().cross(&up.normalize()).norm() < 1e-3 {
            continue;
        }
        let (w, h) = (rng.random_range(8..2000u32), rng.random_range(8..2000u32));
        let mut cam = Camera::look_at(eye, target, up, w, h, rng.random_range(0.3..3.0) * w as f64);
        cam.fy = cam.fx * rng.random_range(0.8..1.25);
        cam.cx += rng.random_range(-0.1..0.1) * w as f64;
        cam.cy += rng.random_range(-0.1..0.1) * h as f64;
        cam.near = rng.random_range(0.01..1.0);

        // half the points aimed near the image, half anywhere
        let p: [f32; 3] = if rng.random_bool(0.5) {
            let (u, v) = (rng.random_range(-0.6..1.6) * w as f64, rng.random_range(-0.6..1.6) * h as f64);
            let depth = rng.random_range(-1.0..20.0);
            let view = Vector3::new((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
            let world = cam.rotation.transpose() * (view - cam.translation);
            [world.x as f32, world.y as f32, world.z as f32]
        } else {
            [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]
        };

        let k = nalgebra::Matrix3::new(cam.fx, 0.0, cam.cx, 0.0, cam.fy, cam.cy, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.rotation);
        rt.set_column(3, &cam.translation);
        let x = k * rt * Vector4::new(p[0] as f64, p[1] as f64, p[2] as f64, 1.0);
        let m = DEFAULT_MARGIN;
        let expected = x.z > cam.near && {
            let (u, v) = (x.x / x.z, x.y / x.z);
            let (wf, hf) = (w as f64, h as f64);
            u >= -m * wf && u <= (1.0 + m) * wf && v >= -m * hf && v <= (1.0 + m) * hf
        };
        let got = in_frustum(p, &cam, m);
        inside += got as usize;
        mismatches += (got != expected) as usize;
    }
    ensure!(mismatches == 0, "{mismatches} mismatches");
    ensure!(inside > PAIRS / 10 && inside < PAIRS * 9 / 10, "degenerate sample: {inside} inside");
    Ok(format!("{PAIRS} pairs ({inside} inside, margin {m}), 0 mismatches", m = DEFAULT_MARGIN))
}

fn property_names(degree: u8, normals: bool) -> Vec<String> {
    let rest = (degree as usize + 1).pow(2) - 1;
    let mut names: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
    if normals {
        names.extend(["nx", "ny", "nz"].map(String::from));
    }
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn ply_file(names: &[String], count: usize, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for n in names {
        out.push_str(&format!("property float {n}\n"));
    }
    out.push_str("end_header\n");
    let mut out = out.into_bytes();
    out.extend_from_slice(payload);
    out
}

fn same_splats(a: &Scene, b: &Scene) -> bool {
    a.count() == b.count()
        && a.sh_degree == b.sh_degree
        && a.has_normals == b.has_normals
        && a.splats.iter().zip(&b.splats).all(|(x, y)| x.bits_eq(y))
}

fn ply_round_trip() -> Verdict {
    let mut fixtures = 0;
    for scene in [random_scene(5, 500), dominant_splat_scene(5, 200, 5).0, occluded_giants_scene(5, 200, 16).0] {
        let bytes = write_ply(&scene, None, None).map_err(|e| e.to_string())?;
        let loaded = load_ply(&bytes).map_err(|e| e.to_string())?;
        ensure!(same_splats(&scene, &loaded), "fixture splats changed");
        ensure!(write_ply(&loaded, None, None).unwrap() == bytes, "fixture bytes changed");
        fixtures += 1;
    }

    let cases = 256;
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    let strategy = (0usize..24, 0u8..=3, any::<bool>()).prop_flat_map(|(count, degree, normals)| {
        let stride = 4 * property_names(degree, normals).len();
        (Just(count), Just(degree), Just(normals), vec(any::<u8>(), count * stride))
    });
    runner
        .run(&strategy, |(count, degree, normals, payload)| {
            let names = property_names(degree, normals);
            let file = ply_file(&names, count, &payload);
            let first = load_ply(&file).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let written = write_ply(&first, None, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&written, &file);
            let second = load_ply(&written).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(same_splats(&first, &second));

            // same payload under a reversed property order
            let reversed: Vec<String> = names.iter().rev().cloned().collect();
            let first = load_ply(&ply_file(&reversed, count, &payload)).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let written = write_ply(&first, None, None).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let second = load_ply(&written).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(same_splats(&first, &second));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{fixtures} fixture files and {cases} random-payload files bit-exact"))
}

fn gaussian_from(c: &[f32]) -> Gaussian {
    let mut g = Gaussian {
        position: [c[0], c[1], c[2]],
        log_scale: [c[3], c[4], c[5]],
        rotation: [c[6], c[7], c[8], c[9]],
        opacity_logit: c[10],
        sh_dc: [c[11], c[12], c[13]],
        ..Default::default()
    };
    g.sh_rest.copy_from_slice(&c[14..59]);
    g
}

/// `m * 2^e` with integer `m`.
fn f32_parts(x: f32) -> (i64, i32) {
    let bits = x.to_bits();
    let sign = if bits >> 31 == 1 { -1 } else { 1 };
    let exp = ((bits >> 23) & 0xff) as i32;
    let frac = (bits & 0x7f_ffff) as i64;
    if exp == 0 {
        (sign * frac, -149)
    } else {
        (sign * (frac | 0x80_0000), exp - 150)
    }
}

/// `|lo + q/top * (hi - lo) - v| <= (hi - lo) / (2 * top)`, decided exactly.
fn within_half_step(v: f32, lo: f32, hi: f32, q: u32, top: u32) -> (bool, bool) {
    let d = hi as f64 - lo as f64;
    let approx = (2.0 * q as f64 * d - 2.0 * top as f64 * (v as f64 - lo as f64)).abs() - d;
    if approx.abs() > 1e-9 * top as f64 * d.max(f64::MIN_POSITIVE) {
        return (approx <= 0.0, false);
    }
    let parts = [f32_parts(v), f32_parts(lo), f32_parts(hi)];
    let emin = parts.iter().map(|p| p.1).min().unwrap();
    let [bv, blo, bhi] = parts.map(|(m, e)| BigInt::from(m) << (e - emin) as usize);
    let span = &bhi - &blo;
    let lhs = BigInt::from(2 * q) * &span - BigInt::from(2 * top) * (bv - &blo);
    let lhs = if lhs < BigInt::from(0) { -lhs } else { lhs };
    (lhs <= span, true)
}

fn quantization_bound() -> Verdict {
    const VALUES: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a);
    let spans: Vec<(f32, f32)> = (0..COMPONENTS)
        .map(|_| (rng.random_range(-50.0..50.0), 10f32.powf(rng.random_range(-3.0..2.0))))
        .collect();
    let values: Vec<Vec<f32>> = (0..VALUES)
        .map(|_| spans.iter().map(|&(c, h)| rng.random_range(c - h..=c + h)).collect())
        .collect();
    let splats: Vec<Gaussian> = values.iter().map(|c| gaussian_from(c)).collect();
    let source = Chunk::from_splats(&splats);

    let mut report = Vec::new();
    for bits in [8u32, 16] {
        let top = (1u32 << bits) - 1;
        let quantized = quantize_chunk(&source, bits).map_err(|e| e.to_string())?;
        let wire = Chunk::from_bytes(&quantized.to_bytes()).map_err(|e| e.to_string())?;
        ensure!(wire == quantized, "q{bits}: chunk bytes do not round-trip");
        let codes: Vec<u32> = match &wire.payload {
            Payload::Q8(v) => v.iter().map(|&q| q as u32).collect(),
            Payload::Q16(v) => v.iter().map(|&q| q as u32).collect(),
            Payload::F32(_) => return Err(format!("q{bits}: float payload")),
        };
        let ranges = wire.ranges.as_ref().ok_or("missing ranges")?;
        let exact = dequantized_values(&wire).map_err(|e| e.to_string())?;
        let Payload::F32(stored) = dequantize_chunk(&wire).map_err(|e| e.to_string())?.payload else {
            return Err("dequantized chunk is not float".into());
        };

        let (mut violations, mut exact_checks, mut stored_over, mut worst_excess_ulp) = (0, 0, 0, 0.0f64);
        for c in 0..COMPONENTS {
            let [lo, hi] = ranges[c];
            let observed_lo = values.iter().map(|v| v[c]).fold(f32::INFINITY, f32::min);
            let observed_hi = values.iter().map(|v| v[c]).fold(f32::NEG_INFINITY, f32::max);
            ensure!(lo == observed_lo && hi == observed_hi, "q{bits} component {c}: header range is not the data range");
            let half_step = (hi as f64 - lo as f64) / (2.0 * top as f64);
            for (s, row) in values.iter().enumerate() {
                let i = payload_index(c, s, VALUES);
                let q = codes[i];
                let (ok, slow) = within_half_step(row[c], lo, hi, q, top);
                violations += !ok as usize;
                exact_checks += slow as usize;
                let formula = lo as f64 + q as f64 / top as f64 * (hi as f64 - lo as f64);
                ensure!((exact[i] - formula).abs() <= 4.0 * f64::EPSILON * formula.abs().max(1.0), "q{bits}: reconstruction formula");
                let excess = (stored[i] as f64 - row[c] as f64).abs() - half_step;
                if excess > 0.0 {
                    stored_over += 1;
                    let ulp = (stored[i].abs().next_up() - stored[i].abs()) as f64;
                    worst_excess_ulp = worst_excess_ulp.max(excess / ulp);
                }
            }
        }
        ensure!(violations == 0, "q{bits}: {violations} values outside half a step");
        report.push(format!(
            "q{bits} 0 violations ({exact_checks} decided in exact arithmetic; f32 storage exceeds by <= {worst_excess_ulp:.2} ulp on {stored_over})"
        ));
    }
    Ok(format!("{VALUES} values x {COMPONENTS} attributes; {}", report.join("; ")))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("compositing conservation", conservation),
        ("order invariance at 100%", order_invariance),
        ("ordering dominance", dominance),
        ("octree properties", octree_properties),
        ("frustum classification", frustum_classification),
        ("ply round-trip", ply_round_trip),
        ("quantization bound", quantization_bound),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.1?}]", started.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

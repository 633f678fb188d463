//! Synthetic scenes and camera rigs used by the tests, benches and the CLI
//! `fixture` command.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Camera, Gaussian, Scene, SH_C0, SH_REST_LEN};

fn logit(p: f64) -> f32 {
    (p / (1.0 - p)).ln() as f32
}

/// DC coefficients that evaluate to `rgb` (before clamping).
pub fn dc_for_rgb(rgb: [f64; 3]) -> [f32; 3] {
    rgb.map(|c| ((c - 0.5) / SH_C0) as f32)
}

/// Splats scattered in the cube [-1, 1]^3 with random shape, opacity and
/// degree-3 color.
pub fn random_scene(seed: u64, count: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = (0..count)
        .map(|_| {
            let mut sh_rest = [0.0f32; SH_REST_LEN];
            for v in sh_rest.iter_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
            Gaussian {
                position: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                log_scale: [rng.random_range(-3.0..-1.0), rng.random_range(-3.0..-1.0), rng.random_range(-3.0..-1.0)],
                rotation: [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
                opacity_logit: rng.random_range(-2.0..4.0),
                sh_dc: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
                sh_rest,
                ..Default::default()
            }
        })
        .collect();
    Scene::new(splats)
}

/// Cameras 3 to 5 units from the origin looking roughly at it.
pub fn random_cameras(seed: u64, count: usize, width: u32, height: u32) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count)
        .map(|_| {
            let dir = loop {
                let d = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0f64),
                );
                // avoid looking straight along the up vector
                if d.norm() > 0.2 && d.normalize().y.abs() < 0.9 {
                    break d.normalize();
                }
            };
            let eye = dir * rng.random_range(3.0..5.0);
            let target = Vector3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            );
            Camera::look_at(eye, target, Vector3::y(), width, height, width as f64 * rng.random_range(0.8..1.5))
        })
        .collect()
}

/// Cameras on a small arc around `eye`, all looking at `target`.
pub fn arc_cameras(eye: Vector3<f64>, target: Vector3<f64>, count: usize, width: u32, height: u32, focal: f64) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let offset = Vector3::new(0.15 * i as f64 - 0.075 * (count as f64 - 1.0), 0.05 * (i % 2) as f64, 0.0);
            Camera::look_at(eye + offset, target, Vector3::y(), width, height, focal)
        })
        .collect()
}

/// A scene where a handful of large, opaque splats far from the origin cover
/// most of the training views, while many faint specks sit near the origin.
///
/// Splats `0..dominant` are the large ones, the rest are specks.
pub fn dominant_splat_scene(seed: u64, total: usize, dominant: usize) -> (Scene, Vec<Camera>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette = [[0.9, 0.2, 0.1], [0.1, 0.8, 0.3], [0.2, 0.3, 0.9], [0.9, 0.9, 0.2], [0.7, 0.2, 0.8]];
    let mut splats = Vec::with_capacity(total);
    for i in 0..dominant {
        let angle = i as f64 / dominant.max(1) as f64 * std::f64::consts::TAU;
        splats.push(Gaussian {
            position: [(6.0 + 1.2 * angle.cos()) as f32, (1.2 * angle.sin()) as f32, (10.0 + 0.1 * i as f64) as f32],
            log_scale: [0.9f32.ln(), 0.9f32.ln(), 0.3f32.ln()],
            opacity_logit: logit(0.97),
            sh_dc: dc_for_rgb(palette[i % palette.len()]),
            ..Default::default()
        });
    }
    for _ in dominant..total {
        let grey = rng.random_range(0.3..0.7);
        splats.push(Gaussian {
            position: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            log_scale: [0.02f32.ln(); 3],
            opacity_logit: logit(rng.random_range(0.2..0.5)),
            sh_dc: dc_for_rgb([grey, grey, grey]),
            ..Default::default()
        });
    }
    let cameras = arc_cameras(Vector3::new(3.0, 0.0, -4.0), Vector3::new(4.5, 0.0, 5.0), 3, 48, 40, 40.0);
    (Scene::new(splats), cameras)
}

/// A scene where a few small splats close to the cameras dominate the views
/// and hide a wall of large, opaque splats behind them.
///
/// Splats `0..front` are the small unoccluded ones.
pub fn occluded_giants_scene(seed: u64, total: usize, front: usize) -> (Scene, Vec<Camera>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splats = Vec::with_capacity(total);
    let side = (front as f64).sqrt().ceil() as usize;
    for i in 0..front {
        let (gx, gy) = ((i % side) as f64, (i / side) as f64);
        let c = (side as f64 - 1.0) / 2.0;
        let rgb = [0.2 + 0.6 * gx / side as f64, 0.8 - 0.6 * gy / side as f64, 0.5];
        splats.push(Gaussian {
            position: [(0.25 * (gx - c)) as f32, (0.25 * (gy - c)) as f32, (1.0 + 0.01 * i as f64) as f32],
            log_scale: [0.12f32.ln(), 0.12f32.ln(), 0.02f32.ln()],
            opacity_logit: logit(0.99),
            sh_dc: dc_for_rgb(rgb),
            ..Default::default()
        });
    }
    for _ in front..total {
        let grey = rng.random_range(0.2..0.8);
        splats.push(Gaussian {
            position: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(8.0..9.0)],
            log_scale: [0.8f32.ln(), 0.8f32.ln(), 0.3f32.ln()],
            opacity_logit: logit(0.95),
            sh_dc: dc_for_rgb([grey, grey * 0.8, 0.3]),
            ..Default::default()
        });
    }
    let cameras = arc_cameras(Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.0, 0.0, 5.0), 3, 40, 40, 40.0);
    (Scene::new(splats), cameras)
}

use nalgebra::Vector3;

use super::Ordering;
use crate::model::{Camera, Scene};

pub const DEFAULT_MARGIN: f64 = 0.3;
pub const DEFAULT_IN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumParams {
    /// Image bounds grow by `margin * width` / `margin * height` on each side.
    pub margin: f64,
    /// Share of every block reserved for in-frustum splats.
    pub in_fraction: f64,
    /// Block length, normally the chunk size.
    pub granularity: usize,
}

impl FrustumParams {
    pub fn with_granularity(granularity: usize) -> Self {
        Self { margin: DEFAULT_MARGIN, in_fraction: DEFAULT_IN_FRACTION, granularity }
    }
}

/// Classifies a splat mean against the margin-expanded viewing frustum.
pub fn in_frustum(position: [f32; 3], cam: &Camera, margin: f64) -> bool {
    let p = Vector3::new(position[0] as f64, position[1] as f64, position[2] as f64);
    cam.in_frustum(&p, margin)
}

/// Merges the in-frustum and out-of-frustum subsequences of `ordering` so
/// that each `granularity`-sized block holds `ceil(in_fraction * granularity)`
/// in-frustum splats (in-frustum first within the block) while both
/// subsequences last. Relative order inside each class is preserved.
pub fn prioritize_frustum(ordering: &Ordering, scene: &Scene, cam: &Camera, params: FrustumParams) -> Ordering {
    let fraction = params.in_fraction.clamp(0.0, 1.0);
    let block = params.granularity.max(1);
    let want_in = ((fraction * block as f64).ceil() as usize).min(block);

    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (j, &i) in ordering.permutation.iter().enumerate() {
        if in_frustum(scene.splats[i as usize].position, cam, params.margin) {
            inside.push(j);
        } else {
            outside.push(j);
        }
    }

    let mut positions = Vec::with_capacity(ordering.len());
    let (mut a, mut b) = (0, 0);
    while a < inside.len() || b < outside.len() {
        let take_in = want_in.min(inside.len() - a);
        let take_out = (block - take_in).min(outside.len() - b);
        // top up from the other class once one runs dry
        let take_in = (take_in + (block - take_in - take_out)).min(inside.len() - a);
        positions.extend_from_slice(&inside[a..a + take_in]);
        positions.extend_from_slice(&outside[b..b + take_out]);
        a += take_in;
        b += take_out;
    }

    Ordering {
        strategy: ordering.strategy.with_frustum(),
        permutation: positions.iter().map(|&j| ordering.permutation[j]).collect(),
        scores: positions.iter().map(|&j| ordering.scores[j]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gaussian;
    use crate::ordering::{order_by_contribution, tests::tally};

    fn camera() -> Camera {
        Camera::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), 64, 48, 50.0)
    }

    fn at(x: f32, z: f32) -> Gaussian {
        Gaussian { position: [x, 0.0, z], ..Default::default() }
    }

    /// Indices 0, 2, 4, ... in view; 1, 3, 5, ... behind the camera.
    fn mixed(n: usize) -> (Scene, Ordering) {
        let scene = Scene::new((0..n).map(|i| if i % 2 == 0 { at(0.0, 5.0) } else { at(0.0, -5.0) }).collect());
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        (scene, order_by_contribution(&tally(&scores)))
    }

    #[test]
    fn behind_camera_is_outside() {
        assert!(!in_frustum([0.0, 0.0, -5.0], &camera(), 0.3));
        assert!(in_frustum([0.0, 0.0, 5.0], &camera(), 0.3));
    }

    #[test]
    fn margin_expands_bounds() {
        // u = 50 * x / 5 + 32; right edge 64, with 30% margin 83.2
        assert!(!in_frustum([3.5, 0.0, 5.0], &camera(), 0.0));
        assert!(in_frustum([3.5, 0.0, 5.0], &camera(), 0.3));
        assert!(!in_frustum([5.2, 0.0, 5.0], &camera(), 0.3));
    }

    #[test]
    fn zero_fraction_puts_outside_first() {
        let (scene, base) = mixed(8);
        let p = FrustumParams { margin: 0.3, in_fraction: 0.0, granularity: 2 };
        let o = prioritize_frustum(&base, &scene, &camera(), p);
        assert_eq!(o.permutation, vec![1, 3, 5, 7, 0, 2, 4, 6]);
        assert!(o.strategy.frustum);
    }

    #[test]
    fn all_inside_is_unchanged() {
        let scene = Scene::new((0..10).map(|i| at(0.01 * i as f32, 5.0)).collect());
        let base = order_by_contribution(&tally(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0]));
        let o = prioritize_frustum(&base, &scene, &camera(), FrustumParams::with_granularity(3));
        assert_eq!(o.permutation, base.permutation);
        assert_eq!(o.scores, base.scores);
    }

    #[test]
    fn blocks_hold_requested_share() {
        let (scene, base) = mixed(40);
        let p = FrustumParams { margin: 0.3, in_fraction: 0.75, granularity: 4 };
        let o = prioritize_frustum(&base, &scene, &camera(), p);
        // 20 inside at 3 per block: 6 full blocks, then the 2 left over
        for block in o.permutation.chunks(4).take(6) {
            let inside = block.iter().filter(|&&i| i % 2 == 0).count();
            assert_eq!(inside, 3, "{block:?}");
        }
        let mut sorted = o.permutation.clone();
        sorted.sort();
        assert_eq!(sorted, (0..40).collect::<Vec<u32>>());
    }
}

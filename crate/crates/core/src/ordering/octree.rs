use std::collections::BTreeMap;

use super::{ContributionTally, Ordering, Strategy};
use crate::model::Scene;

pub const DEFAULT_OCTREE_DEPTH: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeLeaf {
    /// Integer cell coordinates at `max_depth`, each in `0..2^max_depth`.
    pub cell: [u32; 3],
    pub members: Vec<u32>,
}

/// Uniform subdivision of the bounding box of splat means down to
/// `max_depth`. Only non-empty leaves are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Octree {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub max_depth: u32,
    /// Sorted by cell coordinates (z, y, x).
    pub leaves: Vec<OctreeLeaf>,
}

impl Octree {
    pub fn build(scene: &Scene, max_depth: u32) -> Self {
        let max_depth = max_depth.min(20);
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for g in &scene.splats {
            for a in 0..3 {
                let p = g.position[a] as f64;
                if p.is_finite() {
                    min[a] = min[a].min(p);
                    max[a] = max[a].max(p);
                }
            }
        }
        for a in 0..3 {
            if min[a] > max[a] {
                min[a] = 0.0;
                max[a] = 0.0;
            }
        }

        let cells_per_axis = 1u32 << max_depth;
        let mut leaves: BTreeMap<[u32; 3], Vec<u32>> = BTreeMap::new();
        for (i, g) in scene.splats.iter().enumerate() {
            let mut cell = [0u32; 3];
            for a in 0..3 {
                let extent = max[a] - min[a];
                if extent > 0.0 {
                    let t = (g.position[a] as f64 - min[a]) / extent;
                    // NaN and out-of-box values saturate into the boundary cells
                    cell[a] = ((t * cells_per_axis as f64) as u32).min(cells_per_axis - 1);
                }
            }
            leaves.entry([cell[2], cell[1], cell[0]]).or_default().push(i as u32);
        }
        let leaves = leaves
            .into_iter()
            .map(|([z, y, x], members)| OctreeLeaf { cell: [x, y, z], members })
            .collect();
        Self { min, max, max_depth, leaves }
    }

    /// Axis-aligned bounds of a leaf.
    pub fn leaf_bounds(&self, leaf: &OctreeLeaf) -> ([f64; 3], [f64; 3]) {
        let n = (1u32 << self.max_depth) as f64;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            let size = (self.max[a] - self.min[a]) / n;
            lo[a] = self.min[a] + size * leaf.cell[a] as f64;
            hi[a] = lo[a] + size;
        }
        (lo, hi)
    }
}

/// Spreads the contribution order over space. Emission proceeds in rounds:
/// each round takes the best remaining splat of every non-empty leaf, and the
/// round's picks are emitted by descending score (ties by index).
pub fn refine_octree(scene: &Scene, tally: &ContributionTally, max_depth: u32) -> Ordering {
    let tree = Octree::build(scene, max_depth);
    let score = |i: u32| tally.scores[i as usize];
    let by_score = |a: &u32, b: &u32| score(*b).total_cmp(&score(*a)).then(a.cmp(b));

    let mut queues: Vec<Vec<u32>> = tree
        .leaves
        .into_iter()
        .map(|leaf| {
            let mut m = leaf.members;
            m.sort_by(by_score);
            // pop from the back
            m.reverse();
            m
        })
        .collect();

    let mut permutation = Vec::with_capacity(scene.count());
    let mut round = Vec::with_capacity(queues.len());
    while !queues.is_empty() {
        round.clear();
        round.extend(queues.iter_mut().filter_map(|q| q.pop()));
        queues.retain(|q| !q.is_empty());
        round.sort_by(by_score);
        permutation.extend_from_slice(&round);
    }
    let scores = permutation.iter().map(|&i| score(i)).collect();
    Ordering { strategy: Strategy::CONTRIBUTION_OCTREE, permutation, scores }
}

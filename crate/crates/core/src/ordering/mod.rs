//! Splat priority orderings: contribution-based, octree-refined,
//! frustum-prioritized, per-object, and the two viewer baselines.
//!
//! Every ordering breaks ties by ascending splat index so that identical
//! inputs always give identical permutations (and identical chunk bytes).

use std::cmp::Ordering as CmpOrdering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sigmoid, Scene};
use crate::raster::RenderError;

mod frustum;
mod io;
mod object;
mod octree;
mod tally;

pub use frustum::{in_frustum, prioritize_frustum, FrustumParams, DEFAULT_IN_FRACTION, DEFAULT_MARGIN};
pub use io::{read_mask, ORDERING_MAGIC};
pub use object::order_object;
pub use octree::{refine_octree, Octree, OctreeLeaf, DEFAULT_OCTREE_DEPTH};
pub use tally::{tally_contributions, ContributionTally};

#[derive(Debug, Error)]
pub enum OrderingError {
    #[error("mask index {index} out of range for {count} splats")]
    InvalidMask { index: u32, count: usize },
    #[error("invalid ordering: {0}")]
    InvalidPermutation(String),
    #[error("at least one camera is required")]
    NoCameras,
    #[error("malformed ordering file: {0}")]
    Format(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseStrategy {
    Contribution,
    ContributionOctree,
    Antimatter,
    CenterDistance,
    Object,
}

/// Which procedure produced an ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Strategy {
    pub base: BaseStrategy,
    /// Re-prioritized for a viewing frustum afterwards.
    pub frustum: bool,
}

impl Strategy {
    pub const CONTRIBUTION: Strategy = Strategy::plain(BaseStrategy::Contribution);
    pub const CONTRIBUTION_OCTREE: Strategy = Strategy::plain(BaseStrategy::ContributionOctree);
    pub const ANTIMATTER: Strategy = Strategy::plain(BaseStrategy::Antimatter);
    pub const CENTER_DISTANCE: Strategy = Strategy::plain(BaseStrategy::CenterDistance);
    pub const OBJECT: Strategy = Strategy::plain(BaseStrategy::Object);

    pub const fn plain(base: BaseStrategy) -> Self {
        Self { base, frustum: false }
    }

    pub fn with_frustum(self) -> Self {
        Self { frustum: true, ..self }
    }

    pub fn tag(self) -> u8 {
        let base = match self.base {
            BaseStrategy::Contribution => 0,
            BaseStrategy::ContributionOctree => 1,
            BaseStrategy::Antimatter => 2,
            BaseStrategy::CenterDistance => 3,
            BaseStrategy::Object => 4,
        };
        base | if self.frustum { 0x80 } else { 0 }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        let base = match tag & 0x7f {
            0 => BaseStrategy::Contribution,
            1 => BaseStrategy::ContributionOctree,
            2 => BaseStrategy::Antimatter,
            3 => BaseStrategy::CenterDistance,
            4 => BaseStrategy::Object,
            _ => return None,
        };
        Some(Self { base, frustum: tag & 0x80 != 0 })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.base {
            BaseStrategy::Contribution => "contribution",
            BaseStrategy::ContributionOctree => "contribution+octree",
            BaseStrategy::Antimatter => "antimatter",
            BaseStrategy::CenterDistance => "center_distance",
            BaseStrategy::Object => "object",
        };
        f.write_str(base)?;
        if self.frustum {
            f.write_str("+frustum")?;
        }
        Ok(())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (rest, frustum) = match s.strip_suffix("+frustum") {
            Some(rest) => (rest, true),
            None => (s, false),
        };
        let base = match rest {
            "contribution" => BaseStrategy::Contribution,
            "contribution+octree" | "contribution-octree" => BaseStrategy::ContributionOctree,
            "antimatter" => BaseStrategy::Antimatter,
            "center_distance" | "center" => BaseStrategy::CenterDistance,
            "object" => BaseStrategy::Object,
            _ => return Err(format!("unknown strategy `{s}`")),
        };
        Ok(Self { base, frustum })
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// A priority order over splat indices with the score that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub strategy: Strategy,
    pub permutation: Vec<u32>,
    /// `scores[j]` belongs to `permutation[j]`.
    pub scores: Vec<f64>,
}

impl Ordering {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// Object orderings may cover a subset; all others must be a bijection on
    /// `0..count`.
    pub fn validate(&self, count: usize) -> Result<(), OrderingError> {
        if self.scores.len() != self.permutation.len() {
            return Err(OrderingError::InvalidPermutation(format!(
                "{} scores for {} indices",
                self.scores.len(),
                self.permutation.len()
            )));
        }
        if self.strategy.base != BaseStrategy::Object && self.permutation.len() != count {
            return Err(OrderingError::InvalidPermutation(format!(
                "{} indices for {count} splats",
                self.permutation.len()
            )));
        }
        crate::ply::validate_indices(&self.permutation, count)
            .map_err(|e| OrderingError::InvalidPermutation(e.to_string()))
    }

    /// Sorts `0..scores.len()` by `cmp` on the scores, then by index.
    fn sorted_by(strategy: Strategy, scores: Vec<f64>, cmp: impl Fn(f64, f64) -> CmpOrdering) -> Self {
        let mut permutation: Vec<u32> = (0..scores.len() as u32).collect();
        permutation.sort_by(|&a, &b| cmp(scores[a as usize], scores[b as usize]).then(a.cmp(&b)));
        let scores = permutation.iter().map(|&i| scores[i as usize]).collect();
        Self { strategy, permutation, scores }
    }
}

fn descending(a: f64, b: f64) -> CmpOrdering {
    b.total_cmp(&a)
}

pub fn order_by_contribution(tally: &ContributionTally) -> Ordering {
    Ordering::sorted_by(Strategy::CONTRIBUTION, tally.scores.clone(), descending)
}

/// Key `exp(sum of stored log-scales) * sigmoid(stored opacity logit)`:
/// linear-scale volume proxy times opacity.
pub fn antimatter_key(g: &crate::model::Gaussian) -> f64 {
    let log_volume: f64 = g.log_scale.iter().map(|&s| s as f64).sum();
    log_volume.exp() * sigmoid(g.opacity_logit as f64)
}

/// Larger `antimatter_key` first. Sorting the negated key ascending gives the
/// same permutation.
pub fn order_antimatter(scene: &Scene) -> Ordering {
    let keys = scene.splats.iter().map(antimatter_key).map(|k| if k.is_nan() { f64::NEG_INFINITY } else { k });
    Ordering::sorted_by(Strategy::ANTIMATTER, keys.collect(), descending)
}

/// Nearest stored position to `center` first.
pub fn order_center_distance(scene: &Scene, center: [f64; 3]) -> Ordering {
    let distances = scene.splats.iter().map(|g| {
        let d: f64 = g.position.iter().zip(center).map(|(&p, c)| (p as f64 - c).powi(2)).sum::<f64>().sqrt();
        if d.is_nan() {
            f64::INFINITY
        } else {
            d
        }
    });
    Ordering::sorted_by(Strategy::CENTER_DISTANCE, distances.collect(), |a, b| a.total_cmp(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Gaussian;

    pub(super) fn tally(scores: &[f64]) -> ContributionTally {
        ContributionTally { scores: scores.to_vec(), views_used: 1, k_used: 20 }
    }

    #[test]
    fn contribution_sort_and_ties() {
        assert_eq!(order_by_contribution(&tally(&[0.1, 5.0, 0.1])).permutation, vec![1, 0, 2]);
        assert_eq!(order_by_contribution(&tally(&[2.0; 5])).permutation, vec![0, 1, 2, 3, 4]);
        assert_eq!(order_by_contribution(&tally(&[1.0, 2.0, 3.0])).permutation, vec![2, 1, 0]);
        let o = order_by_contribution(&tally(&[0.0, 0.3, 0.0, 0.1]));
        assert_eq!(o.permutation, vec![1, 3, 0, 2]);
        assert_eq!(o.scores, vec![0.3, 0.1, 0.0, 0.0]);
    }

    #[test]
    fn antimatter_prefers_opaque_and_large() {
        let opaque = Gaussian { opacity_logit: 2.0, ..Default::default() };
        let faint = Gaussian { opacity_logit: -2.0, ..Default::default() };
        assert_eq!(order_antimatter(&Scene::new(vec![faint, opaque])).permutation, vec![1, 0]);

        let small = Gaussian { log_scale: [-1.0, 0.0, 0.0], ..Default::default() };
        let large = Gaussian { log_scale: [0.5, 0.5, 0.0], ..Default::default() };
        assert_eq!(order_antimatter(&Scene::new(vec![small, large])).permutation, vec![1, 0]);

        assert_eq!(antimatter_key(&Gaussian::default()), 0.5);
    }

    #[test]
    fn antimatter_negated_key_ascending_is_equivalent() {
        let scene = crate::fixtures::random_scene(5, 100);
        let o = order_antimatter(&scene);
        let mut neg: Vec<u32> = (0..100).collect();
        neg.sort_by(|&a, &b| {
            let ka = -antimatter_key(&scene.splats[a as usize]);
            let kb = -antimatter_key(&scene.splats[b as usize]);
            ka.total_cmp(&kb).then(a.cmp(&b))
        });
        assert_eq!(o.permutation, neg);
    }

    #[test]
    fn center_distance() {
        let at = |x: f32| Gaussian { position: [x, 0.0, 0.0], ..Default::default() };
        let scene = Scene::new(vec![at(1.0), at(0.0), at(-2.0)]);
        let o = order_center_distance(&scene, [0.0; 3]);
        assert_eq!(o.permutation, vec![1, 0, 2]);
        assert_eq!(o.scores, vec![0.0, 1.0, 2.0]);

        let ring = Scene::new(vec![at(1.0), at(-1.0), Gaussian { position: [0.0, 1.0, 0.0], ..Default::default() }]);
        assert_eq!(order_center_distance(&ring, [0.0; 3]).permutation, vec![0, 1, 2]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for base in [
            BaseStrategy::Contribution,
            BaseStrategy::ContributionOctree,
            BaseStrategy::Antimatter,
            BaseStrategy::CenterDistance,
            BaseStrategy::Object,
        ] {
            for s in [Strategy::plain(base), Strategy::plain(base).with_frustum()] {
                assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
                assert_eq!(Strategy::from_tag(s.tag()), Some(s));
            }
        }
        assert_eq!("center".parse::<Strategy>().unwrap(), Strategy::CENTER_DISTANCE);
        assert!("bogus".parse::<Strategy>().is_err());
    }

    #[test]
    fn validation() {
        let o = order_by_contribution(&tally(&[1.0, 2.0]));
        o.validate(2).unwrap();
        assert!(o.validate(3).is_err());
        let dup = Ordering { permutation: vec![0, 0], ..o.clone() };
        assert!(dup.validate(2).is_err());
        let subset = Ordering { strategy: Strategy::OBJECT, permutation: vec![1], scores: vec![2.0] };
        subset.validate(2).unwrap();
    }
}

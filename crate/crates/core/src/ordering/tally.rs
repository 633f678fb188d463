use serde::{Deserialize, Serialize};

use super::OrderingError;
use crate::exec::Exec;
use crate::model::{Camera, Scene};
use crate::raster::{view_contribution_sums, PreparedScene, RenderError, DEFAULT_CULL_MARGIN};

/// Per-splat sum of recorded top-K `T * alpha` weights over all pixels of all views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionTally {
    pub scores: Vec<f64>,
    pub views_used: usize,
    pub k_used: usize,
}

/// Views rendered concurrently before their sums are folded in.
const VIEW_BATCH: usize = 16;

pub fn tally_contributions(
    scene: &Scene,
    cameras: &[Camera],
    top_k: usize,
    exec: Exec,
) -> Result<ContributionTally, OrderingError> {
    if cameras.is_empty() {
        return Err(OrderingError::NoCameras);
    }
    if top_k == 0 {
        return Err(RenderError::InvalidK.into());
    }
    let prepared = PreparedScene::new(scene).map_err(RenderError::from)?;
    let mut scores = vec![0.0f64; scene.count()];
    for batch in cameras.chunks(VIEW_BATCH) {
        let sums = exec.map(batch, |cam| view_contribution_sums(&prepared, cam, top_k, DEFAULT_CULL_MARGIN, exec));
        // fold in view order so the result does not depend on scheduling
        for view in sums {
            for (i, w) in view? {
                scores[i as usize] += w;
            }
        }
    }
    Ok(ContributionTally { scores, views_used: cameras.len(), k_used: top_k })
}

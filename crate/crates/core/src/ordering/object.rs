use super::{ContributionTally, Ordering, OrderingError, Strategy};

/// Contribution order restricted to `mask`, plus the object's total score.
/// Duplicate mask entries are ignored.
pub fn order_object(tally: &ContributionTally, mask: &[u32]) -> Result<(Ordering, f64), OrderingError> {
    let count = tally.scores.len();
    if let Some(&index) = mask.iter().find(|&&i| i as usize >= count) {
        return Err(OrderingError::InvalidMask { index, count });
    }
    let mut permutation = mask.to_vec();
    permutation.sort_unstable();
    permutation.dedup();
    let object_score = permutation.iter().map(|&i| tally.scores[i as usize]).sum();
    permutation.sort_by(|&a, &b| tally.scores[b as usize].total_cmp(&tally.scores[a as usize]).then(a.cmp(&b)));
    let scores = permutation.iter().map(|&i| tally.scores[i as usize]).collect();
    Ok((Ordering { strategy: Strategy::OBJECT, permutation, scores }, object_score))
}

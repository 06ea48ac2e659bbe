use rand::seq::index;
use rand::Rng;

use super::dataset::PatchDataset;
use crate::error::{Error, Result};

/// One (anchor, positive) patch pair per sampled point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub point_ids: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }
}

/// Draws `batch_points` distinct points uniformly without replacement from
/// `candidates`, and two distinct patches of each.
pub fn sample_triplet_batch<R: Rng + ?Sized>(
    ds: &PatchDataset,
    candidates: &[usize],
    batch_points: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    if batch_points > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {batch_points} points requested from {} available",
            candidates.len()
        )));
    }
    if batch_points < 2 {
        return Err(Error::InvalidArgument("a batch needs at least 2 points".into()));
    }
    let chosen = index::sample(rng, candidates.len(), batch_points);
    let mut batch = TripletBatch {
        anchors: Vec::with_capacity(batch_points),
        positives: Vec::with_capacity(batch_points),
        point_ids: Vec::with_capacity(batch_points),
    };
    for c in chosen.iter() {
        let point = candidates[c];
        let views = ds.patches_of(point);
        let pair = index::sample(rng, views.len(), 2);
        batch.anchors.push(views[pair.index(0)]);
        batch.positives.push(views[pair.index(1)]);
        batch.point_ids.push(point);
    }
    Ok(batch)
}

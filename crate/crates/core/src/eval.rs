//! Held-out evaluation of a trained network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_triplet_batch, PatchDataset};
use crate::error::{Error, Result};
use crate::loss::{distance_matrix, mine_hardest_negatives, DistanceMatrix};
use crate::metrics::{eval_fpr95, eval_matching_map};
use crate::model::DescriptorNet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fpr95: f64,
    pub matching_map: f64,
    pub mean_pos: f64,
    pub mean_neg: f64,
    pub positives: usize,
    pub negatives: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Evaluates `net` (eval mode) on the patches of `points`.
///
/// Positives are every within-point patch pair; each patch contributes one
/// negative, its closest patch of another point. Matching mAP pairs the
/// first view of every point with its second view.
pub fn evaluate(net: &DescriptorNet, ds: &PatchDataset, points: &[usize]) -> Result<Evaluation> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("evaluation needs at least 2 points".into()));
    }
    let indices: Vec<usize> = points.iter().flat_map(|&p| ds.patches_of(p).iter().copied()).collect();
    let ids: Vec<usize> = indices.iter().map(|&i| ds.point_ids()[i]).collect();
    let desc = net.embed(&ds.to_tensor(&indices))?;
    let dist = distance_matrix(&desc, &desc)?;

    let mut d_pos = Vec::new();
    for i in 0..indices.len() {
        for j in i + 1..indices.len() {
            if ids[i] == ids[j] {
                d_pos.push(dist.get(i, j));
            }
        }
    }
    let d_neg = dist.select(&mine_hardest_negatives(&dist, &ids)?);
    let fpr95 = eval_fpr95(&d_pos, &d_neg)?;

    // rows are grouped by point, so view k of point p sits at offset + k
    let mut first = Vec::with_capacity(points.len());
    let mut second = Vec::with_capacity(points.len());
    let mut offset = 0;
    for &p in points {
        first.push(desc.row(offset).to_vec());
        second.push(desc.row(offset + 1).to_vec());
        offset += ds.patches_of(p).len();
    }
    let dim = desc.shape()[1];
    let refs = Tensor::new(&[points.len(), dim], first.concat())?;
    let targets = Tensor::new(&[points.len(), dim], second.concat())?;
    let identity: Vec<usize> = (0..points.len()).collect();
    let matching_map = eval_matching_map(&refs, &targets, &identity)?;

    Ok(Evaluation {
        fpr95,
        matching_map,
        mean_pos: mean(&d_pos),
        mean_neg: mean(&d_neg),
        positives: d_pos.len(),
        negatives: d_neg.len(),
    })
}

/// Positive and hardest-in-batch negative distances of `net` (eval mode)
/// over batches drawn like training batches.
pub fn batch_triplet_distances(
    net: &DescriptorNet,
    ds: &PatchDataset,
    points: &[usize],
    batch_points: usize,
    batches: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch_points = batch_points.min(points.len());
    let mut d_pos = Vec::new();
    let mut d_neg = Vec::new();
    for _ in 0..batches {
        let b = sample_triplet_batch(ds, points, batch_points, &mut rng)?;
        let a = net.embed(&ds.to_tensor(&b.anchors))?;
        let p = net.embed(&ds.to_tensor(&b.positives))?;
        let dist: DistanceMatrix = distance_matrix(&a, &p)?;
        let t = mine_hardest_negatives(&dist, &b.point_ids)?;
        d_pos.extend(dist.diagonal());
        d_neg.extend(dist.select(&t));
    }
    Ok((d_pos, d_neg))
}

//! Patch verification and matching metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::distance_matrix;
use crate::tensor::Tensor;

/// False positive rate at the threshold admitting 95% of positive pairs.
///
/// The threshold is the smallest distance `τ` with at least `⌈0.95·P⌉`
/// positives at `d ≤ τ`; the result is the share of negatives at `d ≤ τ`.
pub fn eval_fpr95(d_pos: &[f64], d_neg: &[f64]) -> Result<f64> {
    if d_pos.is_empty() || d_neg.is_empty() {
        return Err(Error::InvalidArgument(
            "fpr95 needs at least one positive and one negative distance".into(),
        ));
    }
    let mut pos = d_pos.to_vec();
    pos.sort_by(f64::total_cmp);
    let need = (95 * pos.len()).div_ceil(100);
    let tau = pos[need - 1];
    let fp = d_neg.iter().filter(|&&d| d <= tau).count();
    Ok(fp as f64 / d_neg.len() as f64)
}

/// Mean average precision of nearest-neighbour matching from `desc_ref` to
/// `desc_target`.
///
/// Each reference row is matched to its nearest target row (ties to the
/// smaller index). Matches are ranked by ascending distance and a match is
/// correct when it hits `correspondence[i]`. Precision is accumulated at each
/// correct match and normalized by the number of references.
pub fn eval_matching_map(desc_ref: &Tensor, desc_target: &Tensor, correspondence: &[usize]) -> Result<f64> {
    let n = *desc_ref.shape().first().unwrap_or(&0);
    if desc_ref.shape() != desc_target.shape() || correspondence.len() != n {
        return Err(Error::dim(
            "eval_matching_map",
            format!(
                "reference {:?}, target {:?}, {} correspondences",
                desc_ref.shape(),
                desc_target.shape(),
                correspondence.len()
            ),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("eval_matching_map needs descriptors".into()));
    }
    let dist = distance_matrix(desc_ref, desc_target)?;
    let mut matches: Vec<(f64, usize, bool)> = (0..n)
        .map(|i| {
            let mut best = 0;
            for j in 1..n {
                if dist.get(i, j) < dist.get(i, best) {
                    best = j;
                }
            }
            (dist.get(i, best), i, best == correspondence[i])
        })
        .collect();
    matches.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &(_, _, correct)) in matches.iter().enumerate() {
        if correct {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / n as f64)
}

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Mean positive / hardest-negative distances over the epoch's training batches.
    pub student_pos: f64,
    pub student_neg: f64,
    /// Teacher distances on the same pairs (distillation only).
    pub teacher_pos: Option<f64>,
    pub teacher_neg: Option<f64>,
    /// Teacher's own hardest-in-batch negatives on the same batches.
    pub teacher_mined_neg: Option<f64>,
    /// Held-out distances in eval mode.
    pub heldout_pos: Option<f64>,
    pub heldout_neg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arch: String,
    pub fpr95: f64,
    pub matching_map: f64,
    pub mean_pos_distance: f64,
    pub mean_neg_distance: f64,
    pub epochs: Vec<EpochLog>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned-column summary for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<22}{}\n", "arch", self.arch));
        out.push_str(&format!("{:<22}{:.4}\n", "fpr95", self.fpr95));
        out.push_str(&format!("{:<22}{:.4}\n", "matching_map", self.matching_map));
        out.push_str(&format!("{:<22}{:.4}\n", "mean_pos_distance", self.mean_pos_distance));
        out.push_str(&format!("{:<22}{:.4}\n", "mean_neg_distance", self.mean_neg_distance));
        if !self.epochs.is_empty() {
            out.push_str(&format!(
                "\n{:>5} {:>10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
                "epoch", "loss", "lr", "s_d+", "s_d-", "t_d+", "t_d-", "t_d-own"
            ));
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            for e in &self.epochs {
                out.push_str(&format!(
                    "{:>5} {:>10.5} {:>9.5} {:>9.4} {:>9.4} {:>9} {:>9} {:>9}\n",
                    e.epoch,
                    e.loss,
                    e.lr,
                    e.student_pos,
                    e.student_neg,
                    opt(e.teacher_pos),
                    opt(e.teacher_neg),
                    opt(e.teacher_mined_neg)
                ));
            }
        }
        out
    }
}

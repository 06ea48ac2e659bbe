//! Pair distances, hardest-in-batch mining and the three terms of the
//! distillation objective: the triplet hinge and the two teacher-student
//! regularizers on positive and negative pair distances.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Euclidean distances between two descriptor sets (rows × columns).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Tensor,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.at2(i, j)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows().min(self.cols())).map(|i| self.get(i, i)).collect()
    }

    /// Distances `(i, negatives[i])`.
    pub fn select(&self, triplets: &MinedTriplets) -> Vec<f64> {
        triplets
            .negatives
            .iter()
            .enumerate()
            .map(|(i, &j)| self.get(i, j))
            .collect()
    }
}

pub fn distance_matrix(a: &Tensor, b: &Tensor) -> Result<DistanceMatrix> {
    Ok(DistanceMatrix {
        values: crate::graph::pairwise_distance(a, b)?,
    })
}

/// Triplet `i` is (anchor `i`, positive `i`, negative `negatives[i]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedTriplets {
    pub negatives: Vec<usize>,
}

impl MinedTriplets {
    pub fn len(&self) -> usize {
        self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.negatives.is_empty()
    }

    /// Flat indices of the negative pairs in a row-major `n × n` matrix.
    pub fn flat_indices(&self, cols: usize) -> Vec<usize> {
        self.negatives.iter().enumerate().map(|(i, &j)| i * cols + j).collect()
    }
}

/// For each anchor row, the closest column with a different point id.
/// Ties go to the smallest column index.
pub fn mine_hardest_negatives(dist: &DistanceMatrix, point_ids: &[usize]) -> Result<MinedTriplets> {
    let (n, m) = (dist.rows(), dist.cols());
    if point_ids.len() != n || n != m {
        return Err(Error::dim(
            "mine_hardest_negatives",
            format!("{n}×{m} distances with {} point ids", point_ids.len()),
        ));
    }
    let first = point_ids.first().copied();
    if point_ids.iter().all(|&id| Some(id) == first) {
        return Err(Error::InvalidArgument(
            "hardest-negative mining needs at least 2 distinct point ids".into(),
        ));
    }
    let negatives = (0..n)
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..m {
                if point_ids[j] == point_ids[i] {
                    continue;
                }
                let d = dist.get(i, j);
                if best == usize::MAX || d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    Ok(MinedTriplets { negatives })
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("lengths {a} and {b} differ")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument(format!("{op} needs at least one pair")));
    }
    Ok(())
}

/// `(1/N) Σ max(0, m + d⁺ᵢ − d⁻ᵢ)`.
pub fn triplet_loss(d_pos: &[f64], d_neg: &[f64], margin: f64) -> Result<f64> {
    check_len("triplet_loss", d_pos.len(), d_neg.len())?;
    let s: f64 = d_pos
        .iter()
        .zip(d_neg)
        .map(|(p, n)| (margin + p - n).max(0.0))
        .sum();
    Ok(s / d_pos.len() as f64)
}

fn mean_squared_gap(op: &'static str, teacher: &[f64], student: &[f64]) -> Result<f64> {
    check_len(op, teacher.len(), student.len())?;
    let s: f64 = teacher.iter().zip(student).map(|(t, s)| (t - s) * (t - s)).sum();
    Ok(s / teacher.len() as f64)
}

/// `(1/N) Σ (d^{t,+}ᵢ − d^{s,+}ᵢ)²`.
pub fn ts_regularizer_pos(d_t_pos: &[f64], d_s_pos: &[f64]) -> Result<f64> {
    mean_squared_gap("ts_regularizer_pos", d_t_pos, d_s_pos)
}

/// `(1/N) Σ (d^{t,−}ᵢ − d^{s,−}ᵢ)²`.
pub fn ts_regularizer_neg(d_t_neg: &[f64], d_s_neg: &[f64]) -> Result<f64> {
    mean_squared_gap("ts_regularizer_neg", d_t_neg, d_s_neg)
}

fn check_weights(alpha_p: f64, alpha_n: f64) -> Result<()> {
    if !(alpha_p >= 0.0 && alpha_n >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "regularizer weights must be non-negative, got alpha_p={alpha_p}, alpha_n={alpha_n}"
        )));
    }
    Ok(())
}

/// `L_B + αp·L_TSP + αn·L_TSN`.
pub fn total_loss(base: f64, tsp: f64, tsn: f64, alpha_p: f64, alpha_n: f64) -> Result<f64> {
    check_weights(alpha_p, alpha_n)?;
    Ok(base + alpha_p * tsp + alpha_n * tsn)
}

/// Triplet hinge on the tape. Ties at the hinge get zero gradient.
pub fn triplet_loss_on(g: &mut Graph, d_pos: Var, d_neg: Var, margin: f64) -> Result<Var> {
    check_len("triplet_loss", g.value(d_pos).len(), g.value(d_neg).len())?;
    let gap = g.sub(d_pos, d_neg)?;
    let shifted = g.add_scalar(gap, margin)?;
    let hinge = g.relu(shifted)?;
    g.mean(hinge)
}

/// Teacher-student regularizer on the tape; teacher distances are constants.
pub fn ts_regularizer_on(g: &mut Graph, teacher: &[f64], student: Var) -> Result<Var> {
    check_len("ts_regularizer", teacher.len(), g.value(student).len())?;
    let t = g.constant(Tensor::from_vec(teacher.to_vec()))?;
    let diff = g.sub(t, student)?;
    let sq = g.square(diff)?;
    g.mean(sq)
}

pub fn total_loss_on(
    g: &mut Graph,
    base: Var,
    tsp: Var,
    tsn: Var,
    alpha_p: f64,
    alpha_n: f64,
) -> Result<Var> {
    check_weights(alpha_p, alpha_n)?;
    let p = g.scale(tsp, alpha_p)?;
    let n = g.scale(tsn, alpha_n)?;
    let s = g.add(base, p)?;
    g.add(s, n)
}

/// Loss weights and margin of the distillation objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub margin: f64,
    pub alpha_p: f64,
    pub alpha_n: f64,
}

/// Everything produced by one batch of the objective.
#[derive(Debug)]
pub struct BatchObjective {
    pub loss: Var,
    pub triplets: MinedTriplets,
    pub student_pos: Vec<f64>,
    pub student_neg: Vec<f64>,
    /// Teacher distances on the same pairs, when a teacher is present.
    pub teacher_pos: Option<Vec<f64>>,
    pub teacher_neg: Option<Vec<f64>>,
    /// Teacher's own hardest-in-batch negatives, mined on its distances.
    pub teacher_mined_neg: Option<Vec<f64>>,
}

/// Builds the batch loss from anchor and positive descriptors.
///
/// Negatives are mined on the student distances; the same indices select the
/// teacher's negative distances so both regularizer terms compare the same
/// patch pairs. Without a teacher the loss is the plain triplet loss.
pub fn batch_objective(
    g: &mut Graph,
    anchors: Var,
    positives: Var,
    point_ids: &[usize],
    teacher: Option<&DistanceMatrix>,
    weights: ObjectiveWeights,
) -> Result<BatchObjective> {
    let dist = g.pairwise_distance(anchors, positives)?;
    let values = DistanceMatrix {
        values: g.value(dist).clone(),
    };
    let triplets = mine_hardest_negatives(&values, point_ids)?;
    let n = values.rows();
    let diag: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let d_pos = g.gather(dist, &diag)?;
    let d_neg = g.gather(dist, &triplets.flat_indices(n))?;
    let base = triplet_loss_on(g, d_pos, d_neg, weights.margin)?;
    let student_pos = g.value(d_pos).data().to_vec();
    let student_neg = g.value(d_neg).data().to_vec();

    let (loss, teacher_pos, teacher_neg, teacher_mined_neg) = match teacher {
        Some(t) => {
            if t.rows() != n || t.cols() != n {
                return Err(Error::dim(
                    "batch_objective",
                    format!("teacher distances {}×{} for batch {n}", t.rows(), t.cols()),
                ));
            }
            let tp = t.diagonal();
            let tn = t.select(&triplets);
            let tsp = ts_regularizer_on(g, &tp, d_pos)?;
            let tsn = ts_regularizer_on(g, &tn, d_neg)?;
            let loss = total_loss_on(g, base, tsp, tsn, weights.alpha_p, weights.alpha_n)?;
            let own = t.select(&mine_hardest_negatives(t, point_ids)?);
            (loss, Some(tp), Some(tn), Some(own))
        }
        None => (base, None, None, None),
    };
    Ok(BatchObjective {
        loss,
        triplets,
        student_pos,
        student_neg,
        teacher_pos,
        teacher_neg,
        teacher_mined_neg,
    })
}

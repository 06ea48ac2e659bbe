//! The distillation optimum in distance space.
//!
//! Treating a single triplet's student distances `(d⁺, d⁻)` as free
//! variables, and assuming the hinge is active, the per-triplet objective is
//!
//! ```text
//! f(d⁺, d⁻) = (m + d⁺ − d⁻) + αp (d_t⁺ − d⁺)² + αn (d_t⁻ − d⁻)²
//! ```
//!
//! which is a separable convex quadratic with minimizer
//! `(d_t⁺ − 1/(2αp), d_t⁻ + 1/(2αn))`. This module computes that point in
//! closed form, recovers it independently by gradient descent, and
//! summarizes how often the hinge-activity assumption holds in practice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Teacher distances and loss weights for one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletDistanceRecord {
    pub d_t_pos: f64,
    pub d_t_neg: f64,
    pub alpha_p: f64,
    pub alpha_n: f64,
    pub margin: f64,
}

impl TripletDistanceRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0 && self.alpha_n > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weights must be positive, got alpha_p={}, alpha_n={}",
                self.alpha_p, self.alpha_n
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidArgument(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.d_t_pos >= 0.0 && self.d_t_neg >= 0.0) {
            return Err(Error::InvalidArgument("teacher distances must be non-negative".into()));
        }
        Ok(())
    }

    /// Objective value with the hinge taken as active.
    pub fn objective(&self, d_pos: f64, d_neg: f64) -> f64 {
        (self.margin + d_pos - d_neg)
            + self.alpha_p * (self.d_t_pos - d_pos).powi(2)
            + self.alpha_n * (self.d_t_neg - d_neg).powi(2)
    }

    /// Partial derivatives `(∂f/∂d⁺, ∂f/∂d⁻)`.
    pub fn gradient(&self, d_pos: f64, d_neg: f64) -> (f64, f64) {
        (
            1.0 + 2.0 * self.alpha_p * (d_pos - self.d_t_pos),
            -1.0 + 2.0 * self.alpha_n * (d_neg - self.d_t_neg),
        )
    }
}

/// Student distances at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentOptimum {
    pub d_pos: f64,
    pub d_neg: f64,
}

impl StudentOptimum {
    /// Whether unit-norm descriptors can realize these distances (`0 ≤ d ≤ 2`).
    pub fn is_feasible(&self) -> bool {
        (0.0..=2.0).contains(&self.d_pos) && (0.0..=2.0).contains(&self.d_neg)
    }

    pub fn hinge_active(&self, margin: f64) -> bool {
        margin + self.d_pos - self.d_neg > 0.0
    }
}

/// The unconstrained optimum; may fall outside `[0, 2]`, see
/// [`StudentOptimum::is_feasible`].
pub fn closed_form_student(rec: &TripletDistanceRecord) -> Result<StudentOptimum> {
    rec.validate()?;
    Ok(StudentOptimum {
        d_pos: rec.d_t_pos - 1.0 / (2.0 * rec.alpha_p),
        d_neg: rec.d_t_neg + 1.0 / (2.0 * rec.alpha_n),
    })
}

/// Result of the iterative minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericOptimum {
    pub optimum: StudentOptimum,
    pub iterations: usize,
    pub grad_norm: f64,
    /// The hinge stayed active at every iterate.
    pub hinge_active_throughout: bool,
}

const GRAD_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 100_000;

/// Minimizes the hinge-active objective by gradient descent with
/// backtracking, starting from `init`.
pub fn numeric_oracle(rec: &TripletDistanceRecord, init: (f64, f64)) -> Result<NumericOptimum> {
    rec.validate()?;
    let (mut p, mut n) = init;
    if rec.margin + p - n <= 0.0 {
        return Err(Error::InvalidArgument(
            "initialization must lie in the hinge-active region".into(),
        ));
    }
    let mut active = true;
    for it in 0..MAX_ITERS {
        let (gp, gn) = rec.gradient(p, n);
        let norm = gp.hypot(gn);
        if norm < GRAD_TOL {
            return Ok(NumericOptimum {
                optimum: StudentOptimum { d_pos: p, d_neg: n },
                iterations: it,
                grad_norm: norm,
                hinge_active_throughout: active,
            });
        }
        let f0 = rec.objective(p, n);
        let mut step = 1.0;
        loop {
            let (np, nn) = (p - step * gp, n - step * gn);
            let f1 = rec.objective(np, nn);
            // Armijo on f alone is unreliable once the decrease falls below
            // the rounding of f, so the step must also shrink the gradient
            let slack = 8.0 * f64::EPSILON * (rec.margin + p.abs() + n.abs() + f0.abs());
            let armijo = f1 <= f0 - 0.5 * step * norm * norm || f1 <= f0 + slack;
            let (ngp, ngn) = rec.gradient(np, nn);
            let shrinks = ngp.hypot(ngn) < norm;
            if (armijo && shrinks) || step < 1e-20 {
                p = np;
                n = nn;
                break;
            }
            step *= 0.5;
        }
        active &= rec.margin + p - n > 0.0;
    }
    let (gp, gn) = rec.gradient(p, n);
    Err(Error::NoConvergence {
        iterations: MAX_ITERS,
        grad_norm: gp.hypot(gn),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub fraction: f64,
}

/// Distribution of `m + d⁺ᵢ − d⁻ᵢ` over a set of triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeStats {
    pub total: usize,
    pub satisfied: usize,
    /// Fraction with `m + d⁺ − d⁻ > 0`.
    pub fraction: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<HistogramBin>,
}

impl HingeStats {
    /// Number of local maxima in the 3-bin moving average of the histogram.
    pub fn smoothed_modes(&self) -> usize {
        let c: Vec<f64> = self.histogram.iter().map(|b| b.count as f64).collect();
        let k = c.len();
        let s: Vec<f64> = (0..k)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(k - 1);
                c[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        let mut modes = 0;
        let mut i = 0;
        while i < k {
            // treat plateaus as a single point
            let mut j = i;
            while j + 1 < k && s[j + 1] == s[i] {
                j += 1;
            }
            let left_lower = i == 0 || s[i - 1] < s[i];
            let right_lower = j + 1 == k || s[j + 1] < s[i];
            if left_lower && right_lower && s[i] > 0.0 {
                modes += 1;
            }
            i = j + 1;
        }
        modes
    }
}

pub fn hinge_condition_stats(d_pos: &[f64], d_neg: &[f64], margin: f64, bins: usize) -> Result<HingeStats> {
    if d_pos.len() != d_neg.len() {
        return Err(Error::dim(
            "hinge_condition_stats",
            format!("lengths {} and {} differ", d_pos.len(), d_neg.len()),
        ));
    }
    if d_pos.is_empty() {
        return Err(Error::InvalidArgument("hinge_condition_stats needs at least one triplet".into()));
    }
    let bins = bins.max(1);
    let values: Vec<f64> = d_pos.iter().zip(d_neg).map(|(p, n)| margin + p - n).collect();
    let satisfied = values.iter().filter(|&&v| v > 0.0).count();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in &values {
        let b = (((v - min) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = values.len();
    let histogram = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            lo: min + i as f64 * width,
            hi: min + (i + 1) as f64 * width,
            count,
            fraction: count as f64 / total as f64,
        })
        .collect();
    Ok(HingeStats {
        total,
        satisfied,
        fraction: satisfied as f64 / total as f64,
        min,
        max,
        histogram,
    })
}

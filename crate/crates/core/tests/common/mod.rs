//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use desdis_core::theory::TripletDistanceRecord;
use desdis_core::Tensor;
use rand::Rng;

/// Hardest negative of row `i` by scanning every column; ties to the lowest index.
pub fn exhaustive_negative(n: usize, d: &[f64], ids: &[usize], i: usize) -> usize {
    let candidates: Vec<usize> = (0..n).filter(|&j| ids[j] != ids[i]).collect();
    let best = candidates.iter().map(|&j| d[i * n + j]).fold(f64::INFINITY, f64::min);
    *candidates.iter().find(|&&j| d[i * n + j] == best).unwrap()
}

/// Tries every observed distance as a threshold and keeps the smallest one
/// that admits at least 95% of positives.
pub fn brute_force_fpr95(pos: &[f64], neg: &[f64]) -> f64 {
    let mut best: Option<f64> = None;
    for &tau in pos.iter().chain(neg) {
        let admitted = pos.iter().filter(|&&d| d <= tau).count();
        if admitted * 100 >= 95 * pos.len() && best.map_or(true, |b| tau < b) {
            best = Some(tau);
        }
    }
    let tau = best.unwrap();
    neg.iter().filter(|&&d| d <= tau).count() as f64 / neg.len() as f64
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest-neighbour matching AP computed by direct distances and explicit
/// rank counting.
pub fn brute_force_ap(r: &Tensor, t: &Tensor, corr: &[usize]) -> f64 {
    let n = r.shape()[0];
    let matches: Vec<(f64, bool)> = (0..n)
        .map(|i| {
            let d: Vec<f64> = (0..n).map(|j| euclid(r.row(i), t.row(j))).collect();
            let best = (0..n).fold(0, |b, j| if d[j] < d[b] { j } else { b });
            (d[best], best == corr[i])
        })
        .collect();
    let mut ap = 0.0;
    for k in 0..n {
        if !matches[k].1 {
            continue;
        }
        // rank and correct count among matches ordered before or at k
        let before = |m: usize| matches[m].0 < matches[k].0 || (matches[m].0 == matches[k].0 && m <= k);
        let rank = (0..n).filter(|&m| before(m)).count();
        let hits = (0..n).filter(|&m| before(m) && matches[m].1).count();
        ap += hits as f64 / rank as f64;
    }
    ap / n as f64
}

pub fn random_record<R: Rng>(rng: &mut R) -> TripletDistanceRecord {
    TripletDistanceRecord {
        d_t_pos: rng.gen_range(0.0..2.0),
        d_t_neg: rng.gen_range(0.0..2.0),
        alpha_p: rng.gen_range(0.1..30.0),
        alpha_n: rng.gen_range(0.1..30.0),
        margin: 1.0,
    }
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

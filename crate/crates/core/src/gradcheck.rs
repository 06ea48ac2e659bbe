//! Central-difference verification of reverse-mode gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone())?;
    let out = f(&mut g, v)?;
    let value = g.value(out);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok(value.item())
}

/// Compares the reverse-mode gradient of `f` at `x` against central differences
/// over every coordinate. The relative error per coordinate is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    check_coords(&f, x, step, &coords)
}

/// Like [`grad_check`] but samples at most `max_coords` coordinates.
pub fn grad_check_sampled<F>(
    f: F,
    x: &Tensor,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords = if x.len() <= max_coords {
        (0..x.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = index::sample(&mut rng, x.len(), max_coords).into_vec();
        c.sort_unstable();
        c
    };
    check_coords(&f, x, step, &coords)
}

fn check_coords<F>(f: &F, x: &Tensor, step: f64, coords: &[usize]) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone())?;
    let out = f(&mut g, v)?;
    let analytic = g
        .backward(out)?
        .take(v)
        .expect("trainable leaf always receives a gradient");

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: coords.len(),
    };
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(f, &probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > worst.max_rel_error {
            worst.max_rel_error = err;
            worst.worst_index = i;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        // dyadic values and step keep every perturbed sum exact
        let x = Tensor::new(&[2, 3], vec![0.25, -1.5, 4.0, 0.0, 2.5, -0.75]).unwrap();
        let r = grad_check(|g, v| g.sum(v), &x, 1.0 / 1024.0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.checked, 6);
    }

    #[test]
    fn normalized_dot_with_constant() {
        let x = Tensor::new(&[2, 3], vec![0.3, -1.2, 4.0, 1.0, 2.5, -0.7]).unwrap();
        let c = Tensor::new(&[2, 3], vec![0.5, 0.1, -0.9, 2.0, -1.0, 0.3]).unwrap();
        let r = grad_check(
            |g, v| {
                let y = g.l2_normalize(v, 1e-8)?;
                let k = g.constant(c.clone())?;
                let p = g.mul(y, k)?;
                g.sum(p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }
}

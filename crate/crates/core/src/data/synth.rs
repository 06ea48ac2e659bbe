use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{PatchDataset, PATCH_SIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_points: usize,
    pub patches_per_point: usize,
    /// Std of additive Gaussian noise, in units of the 0..255 intensity range.
    pub noise_level: f64,
    /// Strength of the per-patch affine warp; 0 gives identity warps.
    pub warp: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_points: 256,
            patches_per_point: 4,
            noise_level: 0.08,
            warp: 1.0,
            seed: 0,
        }
    }
}

const WAVES: usize = 6;
const BLOBS: usize = 4;

/// A smooth random texture defined on the continuous plane.
struct Texture {
    waves: [(f64, f64, f64, f64); WAVES],
    blobs: [(f64, f64, f64, f64); BLOBS],
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let amp = Normal::new(0.0, 1.0 / (WAVES as f64).sqrt()).expect("valid");
        let waves = std::array::from_fn(|_| {
            let freq = rng.gen_range(0.12..0.55);
            let angle = rng.gen_range(0.0..PI);
            (
                freq * angle.cos(),
                freq * angle.sin(),
                rng.gen_range(0.0..2.0 * PI),
                amp.sample(rng),
            )
        });
        let blobs = std::array::from_fn(|_| {
            (
                rng.gen_range(4.0..28.0),
                rng.gen_range(4.0..28.0),
                rng.gen_range(2.5..6.0),
                rng.gen_range(-1.2..1.2),
            )
        });
        Self { waves, blobs }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let w: f64 = self
            .waves
            .iter()
            .map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin())
            .sum();
        let b: f64 = self
            .blobs
            .iter()
            .map(|&(cx, cy, r, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp())
            .sum();
        w + b
    }
}

/// Affine map applied around the patch centre.
struct Warp {
    m: [f64; 4],
    t: (f64, f64),
}

impl Warp {
    fn random(rng: &mut ChaCha8Rng, strength: f64) -> Self {
        if strength == 0.0 {
            return Self {
                m: [1.0, 0.0, 0.0, 1.0],
                t: (0.0, 0.0),
            };
        }
        let theta = rng.gen_range(-0.3..0.3) * strength;
        let scale = (rng.gen_range(-0.12..0.12) * strength).exp();
        let shear = rng.gen_range(-0.08..0.08) * strength;
        let (s, c) = theta.sin_cos();
        Self {
            m: [scale * c, scale * (-s + shear), scale * s, scale * c],
            t: (
                rng.gen_range(-1.5..1.5) * strength,
                rng.gen_range(-1.5..1.5) * strength,
            ),
        }
    }

    fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let c = (PATCH_SIDE as f64 - 1.0) / 2.0;
        let (du, dv) = (u - c, v - c);
        (
            self.m[0] * du + self.m[1] * dv + c + self.t.0,
            self.m[2] * du + self.m[3] * dv + c + self.t.1,
        )
    }
}

/// Generates `num_points` random textures and renders `patches_per_point`
/// warped, noisy views of each. Deterministic given the seed.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<PatchDataset> {
    if cfg.num_points < 2 || cfg.patches_per_point < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 points with 2 patches each, got {}×{}",
            cfg.num_points, cfg.patches_per_point
        )));
    }
    if !(cfg.noise_level >= 0.0 && cfg.warp >= 0.0) {
        return Err(Error::InvalidArgument("noise and warp must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_level * 255.0).expect("non-negative std");
    let side = PATCH_SIDE;
    let total = cfg.num_points * cfg.patches_per_point;
    let mut patches = Vec::with_capacity(total * side * side);
    let mut ids = Vec::with_capacity(total);
    for point in 0..cfg.num_points {
        let tex = Texture::random(&mut rng);
        for _ in 0..cfg.patches_per_point {
            let warp = Warp::random(&mut rng, cfg.warp);
            for v in 0..side {
                for u in 0..side {
                    let (x, y) = warp.apply(u as f64, v as f64);
                    let mut px = 128.0 + 48.0 * tex.at(x, y);
                    if cfg.noise_level > 0.0 {
                        px += noise.sample(&mut rng);
                    }
                    patches.push(px.round().clamp(0.0, 255.0) as u8);
                }
            }
            ids.push(point as u32);
        }
    }
    PatchDataset::new(side, patches, &ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(noise: f64, warp: f64) -> SynthConfig {
        SynthConfig {
            num_points: 12,
            patches_per_point: 3,
            noise_level: noise,
            warp,
            seed: 17,
        }
    }

    fn correlation(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
        cov / (va * vb).sqrt().max(1e-12)
    }

    #[test]
    fn noiseless_identity_views_are_identical() {
        let ds = synth_dataset(&cfg(0.0, 0.0)).unwrap();
        for p in 0..ds.num_points() {
            let idx = ds.patches_of(p);
            for &i in &idx[1..] {
                assert_eq!(ds.patch(i), ds.patch(idx[0]));
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(
            synth_dataset(&cfg(0.1, 1.0)).unwrap(),
            synth_dataset(&cfg(0.1, 1.0)).unwrap()
        );
    }

    #[test]
    fn views_correlate_more_within_points() {
        let ds = synth_dataset(&SynthConfig {
            num_points: 40,
            ..SynthConfig::default()
        })
        .unwrap();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for p in 0..ds.num_points() {
            let a = ds.patches_of(p)[0];
            let b = ds.patches_of(p)[1];
            within += correlation(ds.patch(a), ds.patch(b));
            nw += 1;
            let q = (p + 1) % ds.num_points();
            across += correlation(ds.patch(a), ds.patch(ds.patches_of(q)[0]));
            na += 1;
        }
        let (within, across) = (within / nw as f64, across / na as f64);
        assert!(within > across + 0.2, "within {within}, across {across}");
    }
}

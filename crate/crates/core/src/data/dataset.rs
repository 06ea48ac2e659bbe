use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{put_len, put_u32, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"DSDS";
pub const DATASET_VERSION: u32 = 1;
pub const PATCH_SIDE: usize = 32;

/// Grayscale patches labelled by the 3D point they depict.
///
/// Point ids are contiguous (`0..num_points`); `id_map` holds the id each
/// one had on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchDataset {
    side: usize,
    patches: Vec<u8>,
    point_ids: Vec<usize>,
    id_map: Vec<u32>,
    by_point: Vec<Vec<usize>>,
}

/// Point ids assigned to training and held-out evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSplit {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

impl PatchDataset {
    /// Builds a dataset from raw ids, remapping them to `0..k` in ascending
    /// order of the original values.
    pub fn new(side: usize, patches: Vec<u8>, raw_ids: &[u32]) -> Result<Self> {
        if side != PATCH_SIDE {
            return Err(Error::InvalidDataset(format!(
                "patch side must be {PATCH_SIDE}, got {side}"
            )));
        }
        if patches.len() != raw_ids.len() * side * side {
            return Err(Error::InvalidDataset(format!(
                "{} pixel bytes for {} patches",
                patches.len(),
                raw_ids.len()
            )));
        }
        let mut remap = BTreeMap::new();
        for &id in raw_ids {
            remap.entry(id).or_insert(0usize);
        }
        let id_map: Vec<u32> = remap.keys().copied().collect();
        for (new, v) in remap.values_mut().enumerate() {
            *v = new;
        }
        let point_ids: Vec<usize> = raw_ids.iter().map(|id| remap[id]).collect();
        let mut by_point = vec![Vec::new(); id_map.len()];
        for (i, &p) in point_ids.iter().enumerate() {
            by_point[p].push(i);
        }
        if let Some((p, _)) = by_point.iter().enumerate().find(|(_, v)| v.len() < 2) {
            return Err(Error::InvalidDataset(format!(
                "point id {} has fewer than 2 patches",
                id_map[p]
            )));
        }
        Ok(Self {
            side,
            patches,
            point_ids,
            id_map,
            by_point,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.by_point.len()
    }

    pub fn point_ids(&self) -> &[usize] {
        &self.point_ids
    }

    /// Original on-disk id of each contiguous point id.
    pub fn id_map(&self) -> &[u32] {
        &self.id_map
    }

    pub fn patches_of(&self, point: usize) -> &[usize] {
        &self.by_point[point]
    }

    pub fn patch(&self, index: usize) -> &[u8] {
        let n = self.side * self.side;
        &self.patches[index * n..(index + 1) * n]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.patches
    }

    /// Patches as an `N×1×side×side` tensor, each standardized to zero mean
    /// and unit variance.
    pub fn to_tensor(&self, indices: &[usize]) -> Tensor {
        let n = self.side * self.side;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            let px = self.patch(i);
            let mean = px.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = px.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt().max(1e-8);
            data.extend(px.iter().map(|&v| (v as f64 - mean) / std));
        }
        Tensor::new(&[indices.len(), 1, self.side, self.side], data).expect("sized")
    }

    /// Deterministically holds out `fraction` of the points (at least 2 when
    /// possible, always leaving 2 for training).
    pub fn split(&self, fraction: f64, seed: u64) -> PointSplit {
        let k = self.num_points();
        let mut ids: Vec<usize> = (0..k).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let mut held = ((k as f64) * fraction).round() as usize;
        if fraction > 0.0 {
            held = held.max(2);
        }
        held = held.min(k.saturating_sub(2));
        let mut heldout = ids[..held].to_vec();
        let mut train = ids[held..].to_vec();
        heldout.sort_unstable();
        train.sort_unstable();
        PointSplit { train, heldout }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.patches.len() + 4 * self.len());
        out.extend_from_slice(&DATASET_MAGIC);
        put_u32(&mut out, DATASET_VERSION);
        put_len(&mut out, self.len())?;
        put_len(&mut out, self.side)?;
        out.extend_from_slice(&self.patches);
        for &p in &self.point_ids {
            put_u32(&mut out, self.id_map[p]);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(DATASET_MAGIC)?;
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                expected: DATASET_VERSION,
                found: version,
            });
        }
        let count = r.u32()? as usize;
        let side = r.u32()? as usize;
        let per = side
            .checked_mul(side)
            .and_then(|v| v.checked_add(4))
            .ok_or_else(|| Error::Malformed(format!("side {side} overflows")))?;
        r.ensure(count, per)?;
        let patches = r.take(count * side * side)?.to_vec();
        let ids = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(side, patches, &ids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

//! `DDCK` checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DDCK"  u32 version  u32 name_len  name  u32 width  u32 record_count
//! record: u32 name_len  name  u32 rank  rank × u32 dims  product(dims) × f32
//! ```
//!
//! Records carry network parameters (`conv{i}.weight`, `bn{i}.gamma`,
//! `bn{i}.beta`, `bn{i}.running_mean`, `bn{i}.running_var`) and optionally
//! training state under the `adam.` and `meta.` prefixes.

use std::path::Path;

use crate::codec::{put_len, put_u32, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::net::DescriptorNet;
use super::zoo::Arch;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DDCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl Record {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self {
            name: name.into(),
            dims: t.shape().iter().map(|&d| d as u32).collect(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_slice(name: impl Into<String>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            dims: vec![values.len() as u32],
            values: values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn scalar(name: impl Into<String>, value: f32) -> Self {
        Self {
            name: name.into(),
            dims: Vec::new(),
            values: vec![value],
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let shape: Vec<usize> = self.dims.iter().map(|&d| d as usize).collect();
        Tensor::new(&shape, self.values.iter().map(|&v| v as f64).collect())
            .expect("decoded records are consistent")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch_name: String,
    pub width: u32,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_len(&mut out, self.arch_name.len())?;
        out.extend_from_slice(self.arch_name.as_bytes());
        put_u32(&mut out, self.width);
        put_len(&mut out, self.records.len())?;
        for r in &self.records {
            let expected: u64 = r.dims.iter().map(|&d| d as u64).product();
            if expected != r.values.len() as u64 {
                return Err(Error::InvalidArgument(format!(
                    "record {} has dims {:?} but {} values",
                    r.name,
                    r.dims,
                    r.values.len()
                )));
            }
            put_len(&mut out, r.name.len())?;
            out.extend_from_slice(r.name.as_bytes());
            put_len(&mut out, r.dims.len())?;
            for &d in &r.dims {
                put_u32(&mut out, d);
            }
            for &v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let arch_name = read_string(&mut r)?;
        let width = r.u32()?;
        let count = r.u32()? as usize;
        // every record needs at least 8 header bytes
        r.ensure(count, 8)?;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_string(&mut r)?;
            let rank = r.u32()?;
            if rank > MAX_RANK {
                return Err(Error::Malformed(format!("record {name} has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank as usize);
            let mut len: usize = 1;
            for _ in 0..rank {
                let d = r.u32()?;
                len = len
                    .checked_mul(d as usize)
                    .ok_or_else(|| Error::Malformed(format!("record {name} is too large")))?;
                dims.push(d);
            }
            r.ensure(len, 4)?;
            let values = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            records.push(Record { name, dims, values });
        }
        r.finish()?;
        Ok(Self {
            arch_name,
            width,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn read_string(r: &mut Reader<'_>) -> Result<String> {
    let len = r.u32()? as usize;
    let bytes = r.take(len)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| Error::Malformed("name is not UTF-8".into()))
}

impl DescriptorNet {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut records = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            records.push(Record::from_tensor(format!("conv{i}.weight"), &l.weight.value));
            if let Some(bn) = &l.bn {
                records.push(Record::from_tensor(format!("bn{i}.gamma"), &bn.gamma.value));
                records.push(Record::from_tensor(format!("bn{i}.beta"), &bn.beta.value));
                records.push(Record::from_slice(format!("bn{i}.running_mean"), &bn.stats.mean));
                records.push(Record::from_slice(format!("bn{i}.running_var"), &bn.stats.var));
            }
        }
        Checkpoint {
            arch_name: self.arch().to_string(),
            width: self.arch().width(),
            records,
        }
    }

    /// Rebuilds a network; records outside the network namespace are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: Arch = ck.arch_name.parse()?;
        let mut net = DescriptorNet::init(arch, 0)?;
        let fetch = |name: String, shape: &[usize]| -> Result<Tensor> {
            let rec = ck
                .record(&name)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks record {name}")))?;
            let t = rec.to_tensor();
            if t.shape() != shape {
                return Err(Error::Malformed(format!(
                    "record {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for (i, l) in net.layers.iter_mut().enumerate() {
            let shape = l.weight.value.shape().to_vec();
            l.weight.value = fetch(format!("conv{i}.weight"), &shape)?;
            if let Some(bn) = &mut l.bn {
                let c = [bn.stats.mean.len()];
                bn.gamma.value = fetch(format!("bn{i}.gamma"), &c)?;
                bn.beta.value = fetch(format!("bn{i}.beta"), &c)?;
                bn.stats.mean = fetch(format!("bn{i}.running_mean"), &c)?.into_data();
                bn.stats.var = fetch(format!("bn{i}.running_var"), &c)?.into_data();
            }
        }
        Ok(net)
    }
}

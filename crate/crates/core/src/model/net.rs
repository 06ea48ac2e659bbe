use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::zoo::{build_spec, Activation, Arch, NetworkSpec};
use crate::error::{Error, Result};
use crate::graph::{BnMode, Graph, Parameter, RunningStats, Var};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const NORM_EPS: f64 = 1e-8;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub stats: RunningStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Parameter,
    pub bn: Option<BatchNormParams>,
}

/// A network specification with bound parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorNet {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams>,
}

/// Result of a forward pass on a graph.
#[derive(Debug, Clone)]
pub struct NetOutput {
    /// `N × 128` unit-norm descriptors.
    pub descriptors: Var,
    /// Leaves for every trainable parameter, in [`DescriptorNet::parameters`] order.
    pub params: Vec<Var>,
}

impl DescriptorNet {
    /// Fan-in scaled normal init for conv weights; BN gamma = 1, beta = 0.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        let spec = build_spec(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let fan_in = (l.in_channels * l.kernel * l.kernel) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let shape = [l.out_channels, l.in_channels, l.kernel, l.kernel];
                let n: usize = shape.iter().product();
                // stored weights are f32-representable so checkpoints are lossless
                let data = (0..n)
                    .map(|_| normal.sample(&mut rng) as f32 as f64)
                    .collect();
                let weight = Parameter::new(Tensor::new(&shape, data).expect("sized"));
                let bn = l.has_bn.then(|| BatchNormParams {
                    gamma: Parameter::new(Tensor::ones(&[l.out_channels])),
                    beta: Parameter::new(Tensor::zeros(&[l.out_channels])),
                    stats: RunningStats::new(l.out_channels, BN_MOMENTUM),
                });
                LayerParams { weight, bn }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn arch(&self) -> Arch {
        self.spec.arch
    }

    /// Named trainable parameters in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &l.weight));
            if let Some(bn) = &l.bn {
                out.push((format!("bn{i}.gamma"), &bn.gamma));
                out.push((format!("bn{i}.beta"), &bn.beta));
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn running_stats(&self) -> Vec<&RunningStats> {
        self.layers.iter().filter_map(|l| l.bn.as_ref().map(|b| &b.stats)).collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut RunningStats> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.bn.as_mut().map(|b| &mut b.stats))
            .collect()
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let s = self.spec.input_side;
        let shape = g.shape(x);
        if shape.len() != 4 || shape[1] != 1 || shape[2] != s || shape[3] != s || shape[0] == 0 {
            return Err(Error::dim(
                "forward",
                format!("expected N×1×{s}×{s} patches, got {shape:?}"),
            ));
        }
        Ok(())
    }

    /// Forward pass creating a trainable leaf per parameter.
    ///
    /// Train mode uses batch statistics and updates the running statistics.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: BnMode) -> Result<NetOutput> {
        let params = self
            .parameters()
            .into_iter()
            .map(|(_, p)| g.param(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut stats: Vec<RunningStats> = self.running_stats().into_iter().cloned().collect();
        let descriptors = self.forward_with(g, x, mode, &params, &mut stats)?;
        if mode == BnMode::Train {
            for (dst, src) in self.running_stats_mut().into_iter().zip(stats) {
                *dst = src;
            }
        }
        Ok(NetOutput {
            descriptors,
            params,
        })
    }

    /// Eval-mode forward pass with parameters entered as constants.
    pub fn forward_frozen(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let params = self
            .parameters()
            .into_iter()
            .map(|(_, p)| g.constant(p.value.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut stats: Vec<RunningStats> = self.running_stats().into_iter().cloned().collect();
        self.forward_with(g, x, BnMode::Eval, &params, &mut stats)
    }

    /// Forward pass over caller-supplied parameter leaves.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        x: Var,
        mode: BnMode,
        params: &[Var],
        stats: &mut [RunningStats],
    ) -> Result<Var> {
        self.check_input(g, x)?;
        let expected = self.parameters().len();
        if params.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{} parameter leaves supplied, network has {expected}",
                params.len()
            )));
        }
        let mut h = x;
        let mut p = params.iter().copied();
        let mut s = stats.iter_mut();
        for spec in &self.spec.layers {
            let w = p.next().expect("counted above");
            h = g.conv2d(h, w, spec.stride, spec.padding)?;
            if spec.has_bn {
                let gamma = p.next().expect("counted above");
                let beta = p.next().expect("counted above");
                let st = s
                    .next()
                    .ok_or_else(|| Error::InvalidArgument("missing running statistics".into()))?;
                h = g.batch_norm(h, gamma, beta, mode, st, BN_EPS)?;
            }
            if spec.activation == Activation::Relu {
                h = g.relu(h)?;
            }
        }
        let n = g.shape(x)[0];
        let flat = g.reshape(h, &[n, self.spec.descriptor_dim])?;
        g.l2_normalize(flat, NORM_EPS)
    }

    /// Eval-mode descriptors for a batch of patches, processed in chunks.
    pub fn embed(&self, patches: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 256;
        let n = *patches.shape().first().unwrap_or(&0);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let mut g = Graph::new();
            let x = g.constant(patches.slice_rows(start, end)?)?;
            let y = self.forward_frozen(&mut g, x)?;
            parts.push(g.value(y).clone());
            start = end;
        }
        if parts.is_empty() {
            return Err(Error::dim("forward", "empty patch batch"));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_rows(&refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patches(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data = (0..n * 32 * 32).map(|_| normal.sample(&mut rng)).collect();
        Tensor::new(&[n, 1, 32, 32], data).unwrap()
    }

    #[test]
    fn outputs_are_unit_norm() {
        let mut net = DescriptorNet::init(Arch::DesDis(8), 1).unwrap();
        let x = patches(6, 2);
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let out = net.forward(&mut g, xv, BnMode::Train).unwrap();
        let d = g.value(out.descriptors);
        assert_eq!(d.shape(), &[6, 128]);
        for i in 0..6 {
            let n: f64 = d.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let e = net.embed(&x).unwrap();
        for i in 0..6 {
            let n: f64 = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_is_batch_independent() {
        let net = DescriptorNet::init(Arch::DesDis(8), 3).unwrap();
        let batch = patches(8, 4);
        let single = batch.slice_rows(5, 6).unwrap();
        let all = net.embed(&batch).unwrap();
        let one = net.embed(&single).unwrap();
        for (a, b) in all.row(5).iter().zip(one.row(0)) {
            assert!((a - b).abs() < 1e-6);
        }
        let dup = Tensor::concat_rows(&[&single, &single]).unwrap();
        let d = net.embed(&dup).unwrap();
        assert_eq!(d.row(0), d.row(1));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = DescriptorNet::init(Arch::DesDis(8), 0).unwrap();
        assert!(matches!(
            net.embed(&Tensor::zeros(&[2, 1, 16, 16])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut net = DescriptorNet::init(Arch::DesDis(8), 0).unwrap();
        let before = net.running_stats()[0].clone();
        let mut g = Graph::new();
        let x = g.constant(patches(4, 9)).unwrap();
        net.forward(&mut g, x, BnMode::Train).unwrap();
        assert_ne!(net.running_stats()[0], &before);
    }

    #[test]
    fn init_is_deterministic() {
        let a = DescriptorNet::init(Arch::Teacher7, 42).unwrap();
        let b = DescriptorNet::init(Arch::Teacher7, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameters().len(), 7 + 2 * 6);
    }
}

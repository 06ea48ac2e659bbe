//! Architecture tables for the teacher, the DesDis-D students and the
//! Net-I..IV depth variants.
//!
//! Convolutions carry no bias; every conv except the final descriptor layer
//! is followed by batch norm and ReLU. Parameter counts below are conv-only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_SIDE: usize = 32;
pub const DESCRIPTOR_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    FinalConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_bn: bool,
    pub activation: Activation,
}

impl LayerSpec {
    /// 3×3 conv, padding 1, followed by BN and ReLU.
    pub fn conv3(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            kernel: 3,
            stride,
            padding: 1,
            in_channels,
            out_channels,
            has_bn: true,
            activation: Activation::Relu,
        }
    }

    /// Unpadded descriptor layer collapsing a `kernel × kernel` map to 1×1.
    pub fn final_conv(in_channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::FinalConv,
            kernel,
            stride: 1,
            padding: 0,
            in_channels,
            out_channels: DESCRIPTOR_DIM,
            has_bn: false,
            activation: Activation::None,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn output_side(&self, input_side: usize) -> usize {
        (input_side + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetVariant {
    I,
    II,
    III,
    IV,
}

/// Named architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// Seven-layer L2Net/HardNet-style teacher.
    Teacher7,
    /// Five-layer light-weight student whose first layer has `D` channels.
    DesDis(usize),
    Net(NetVariant),
}

impl Arch {
    pub const DESDIS_WIDTHS: [usize; 4] = [8, 16, 24, 32];

    pub fn desdis(width: usize) -> Result<Self> {
        if Self::DESDIS_WIDTHS.contains(&width) {
            Ok(Arch::DesDis(width))
        } else {
            Err(Error::UnknownArchitecture(format!(
                "desdis-{width} (width must be one of 8, 16, 24, 32)"
            )))
        }
    }

    /// Width recorded in checkpoint headers (0 when not a DesDis-D net).
    pub fn width(&self) -> u32 {
        match self {
            Arch::DesDis(d) => *d as u32,
            Arch::Net(NetVariant::III) => 32,
            _ => 0,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Teacher7 => write!(f, "teacher7"),
            Arch::DesDis(d) => write!(f, "desdis-{d}"),
            Arch::Net(v) => {
                let s = match v {
                    NetVariant::I => "i",
                    NetVariant::II => "ii",
                    NetVariant::III => "iii",
                    NetVariant::IV => "iv",
                };
                write!(f, "net-{s}")
            }
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        if norm == "teacher7" || norm == "teacher" {
            return Ok(Arch::Teacher7);
        }
        let width = norm
            .strip_prefix("desdisd")
            .or_else(|| norm.strip_prefix("desdis"));
        if let Some(w) = width {
            let w: usize = w
                .parse()
                .map_err(|_| Error::UnknownArchitecture(s.to_string()))?;
            return Arch::desdis(w);
        }
        let variant = norm
            .strip_prefix("netvariant")
            .or_else(|| norm.strip_prefix("net"));
        match variant {
            Some("i") | Some("1") => Ok(Arch::Net(NetVariant::I)),
            Some("ii") | Some("2") => Ok(Arch::Net(NetVariant::II)),
            Some("iii") | Some("3") => Ok(Arch::Net(NetVariant::III)),
            Some("iv") | Some("4") => Ok(Arch::Net(NetVariant::IV)),
            _ => Err(Error::UnknownArchitecture(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub arch: Arch,
    pub layers: Vec<LayerSpec>,
    pub input_side: usize,
    pub descriptor_dim: usize,
}

fn desdis_layers(d: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv3(1, d, 2),
        LayerSpec::conv3(d, 2 * d, 2),
        LayerSpec::conv3(2 * d, 4 * d, 2),
        LayerSpec::conv3(4 * d, 4 * d, 1),
        LayerSpec::final_conv(4 * d, 4),
    ]
}

pub fn build_spec(arch: Arch) -> Result<NetworkSpec> {
    use LayerSpec as L;
    let layers = match arch {
        Arch::Teacher7 => vec![
            L::conv3(1, 32, 1),
            L::conv3(32, 32, 1),
            L::conv3(32, 64, 2),
            L::conv3(64, 64, 1),
            L::conv3(64, 128, 2),
            L::conv3(128, 128, 1),
            L::final_conv(128, 8),
        ],
        Arch::DesDis(d) => {
            Arch::desdis(d)?;
            desdis_layers(d)
        }
        Arch::Net(NetVariant::I) => vec![
            L::conv3(1, 32, 2),
            L::conv3(32, 64, 2),
            L::final_conv(64, 8),
        ],
        Arch::Net(NetVariant::II) => vec![
            L::conv3(1, 32, 2),
            L::conv3(32, 64, 2),
            L::conv3(64, 128, 2),
            L::final_conv(128, 4),
        ],
        Arch::Net(NetVariant::III) => desdis_layers(32),
        Arch::Net(NetVariant::IV) => {
            let mut l = desdis_layers(32);
            l.insert(2, L::conv3(64, 64, 1));
            l
        }
    };
    let spec = NetworkSpec {
        name: arch.to_string(),
        arch,
        layers,
        input_side: INPUT_SIDE,
        descriptor_dim: DESCRIPTOR_DIM,
    };
    spec.validate()?;
    Ok(spec)
}

impl NetworkSpec {
    /// Spatial side length entering each layer, plus the final output side.
    pub fn sides(&self) -> Vec<usize> {
        let mut sides = vec![self.input_side];
        for l in &self.layers {
            let s = *sides.last().unwrap();
            sides.push(l.output_side(s));
        }
        sides
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("{}: {msg}", self.name)));
        let Some(last) = self.layers.last() else {
            return bad("no layers".into());
        };
        let mut side = self.input_side;
        let mut channels = 1;
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.stride == 1 || l.stride == 2) {
                return bad(format!("layer {i} has stride {}", l.stride));
            }
            if l.in_channels != channels {
                return bad(format!("layer {i} expects {} channels, gets {channels}", l.in_channels));
            }
            let is_last = i + 1 == self.layers.len();
            if (l.kind == LayerKind::FinalConv) != is_last {
                return bad(format!("layer {i} misplaces the final conv"));
            }
            if l.kind == LayerKind::FinalConv {
                if l.has_bn || l.activation != Activation::None {
                    return bad("final conv must have no BN and no activation".into());
                }
                if l.kernel != side || l.padding != 0 {
                    return bad(format!(
                        "final {}×{} kernel does not exactly cover the {side}×{side} map",
                        l.kernel, l.kernel
                    ));
                }
            }
            side = l.output_side(side);
            channels = l.out_channels;
        }
        if side != 1 || last.out_channels != self.descriptor_dim {
            return bad(format!("output is {side}×{side}×{}", last.out_channels));
        }
        Ok(())
    }

    pub fn count_params(&self, include_bn_affine: bool) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let bn = if include_bn_affine && l.has_bn {
                    2 * l.out_channels
                } else {
                    0
                };
                l.weight_count() + bn
            })
            .sum()
    }
}

pub fn count_params(spec: &NetworkSpec, include_bn_affine: bool) -> usize {
    spec.count_params(include_bn_affine)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(arch: Arch) -> usize {
        build_spec(arch).unwrap().count_params(false)
    }

    /// Independent layer-wise tally: Σ out·in·k².
    fn tally(layers: &[(usize, usize, usize)]) -> usize {
        layers.iter().map(|&(i, o, k)| i * o * k * k).sum()
    }

    #[test]
    fn desdis_counts() {
        for d in [8, 16, 24, 32] {
            let want = tally(&[(1, d, 3), (d, 2 * d, 3), (2 * d, 4 * d, 3), (4 * d, 4 * d, 3), (4 * d, 128, 4)]);
            assert_eq!(count(Arch::DesDis(d)), want);
        }
        assert_eq!(count(Arch::DesDis(8)), 80_584);
        assert_eq!(count(Arch::DesDis(16)), 191_120);
        assert_eq!(count(Arch::DesDis(24)), 331_608);
        assert_eq!(count(Arch::DesDis(32)), 502_048);
    }

    #[test]
    fn variant_and_teacher_counts() {
        assert_eq!(count(Arch::Net(NetVariant::I)), 543_008);
        assert_eq!(count(Arch::Net(NetVariant::II)), 354_592);
        assert_eq!(count(Arch::Net(NetVariant::III)), 502_048);
        assert_eq!(count(Arch::Net(NetVariant::IV)), 538_912);
        assert_eq!(count(Arch::Teacher7), 1_334_560);
    }

    #[test]
    fn bn_affine_adds_two_per_channel() {
        let spec = build_spec(Arch::DesDis(8)).unwrap();
        assert_eq!(spec.count_params(true) - spec.count_params(false), 2 * (8 + 16 + 32 + 32));
    }

    #[test]
    fn structure_examples() {
        let s = build_spec(Arch::DesDis(32)).unwrap();
        assert_eq!(s.layers.len(), 5);
        let strides: Vec<_> = s.layers[..4].iter().map(|l| l.stride).collect();
        assert_eq!(strides, [2, 2, 2, 1]);
        let outs: Vec<_> = s.layers.iter().map(|l| l.out_channels).collect();
        assert_eq!(outs, [32, 64, 128, 128, 128]);
        assert_eq!(s.layers[4].kernel, 4);

        let n1 = build_spec(Arch::Net(NetVariant::I)).unwrap();
        assert_eq!(n1.layers.len(), 3);
        assert_eq!(n1.layers[2].kernel, 8);

        let t = build_spec(Arch::Teacher7).unwrap();
        assert_eq!(t.layers.len(), 7);
        assert_eq!(t.layers[6].kernel, 8);
    }

    #[test]
    fn every_spec_reaches_one_by_one() {
        let all = [
            Arch::Teacher7,
            Arch::DesDis(8),
            Arch::DesDis(16),
            Arch::DesDis(24),
            Arch::DesDis(32),
            Arch::Net(NetVariant::I),
            Arch::Net(NetVariant::II),
            Arch::Net(NetVariant::III),
            Arch::Net(NetVariant::IV),
        ];
        for arch in all {
            let s = build_spec(arch).unwrap();
            assert_eq!(*s.sides().last().unwrap(), 1, "{arch}");
        }
    }

    #[test]
    fn channels_double_exactly_at_downsampling() {
        for d in Arch::DESDIS_WIDTHS {
            let s = build_spec(Arch::DesDis(d)).unwrap();
            for l in &s.layers[1..s.layers.len() - 1] {
                if l.stride == 2 {
                    assert_eq!(l.out_channels, 2 * l.in_channels);
                } else {
                    assert_eq!(l.out_channels, l.in_channels);
                }
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("teacher7".parse::<Arch>().unwrap(), Arch::Teacher7);
        assert_eq!("desdis-16".parse::<Arch>().unwrap(), Arch::DesDis(16));
        assert_eq!("desdis_d(24)".parse::<Arch>().unwrap(), Arch::DesDis(24));
        assert_eq!("Net-IV".parse::<Arch>().unwrap(), Arch::Net(NetVariant::IV));
        assert_eq!("net_variant(II)".parse::<Arch>().unwrap(), Arch::Net(NetVariant::II));
        assert!("desdis-12".parse::<Arch>().is_err());
        assert!("resnet".parse::<Arch>().is_err());
        for a in [Arch::Teacher7, Arch::DesDis(8), Arch::Net(NetVariant::III)] {
            assert_eq!(a.to_string().parse::<Arch>().unwrap(), a);
        }
    }
}

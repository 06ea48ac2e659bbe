//! Descriptor network architectures, forward pass and checkpoints.

pub mod checkpoint;
pub mod net;
pub mod zoo;

pub use checkpoint::{Checkpoint, Record, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{BatchNormParams, DescriptorNet, LayerParams, NetOutput, BN_EPS, BN_MOMENTUM, NORM_EPS};
pub use zoo::{
    build_spec, count_params, Activation, Arch, LayerKind, LayerSpec, NetVariant, NetworkSpec,
    DESCRIPTOR_DIM, INPUT_SIDE,
};

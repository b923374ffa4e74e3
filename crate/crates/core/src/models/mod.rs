//! Teacher and student networks: 3-D convolutional encoders, a 1-D latent head
//! and a 1-D convolutional decoder with named feature taps.

mod checkpoint;
mod discriminator;
mod network;
mod ops;

pub use checkpoint::{
    encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, ParamEntry,
};
pub use discriminator::{Discriminator, DiscriminatorCache};
pub use network::{
    build_network, EncoderKind, ForwardCache, Network, NetworkSpec, Scale, TapBundle, TapGrads,
};
pub use ops::{
    spatial_average_pool, spatial_average_pool_backward, temporal_resize,
    temporal_resize_backward,
};

use ndarray::{Array3, Array5};

use crate::error::Result;
use crate::nn::Module;

/// Runs the network once and returns every tap.
pub fn forward_with_taps(network: &Network, x: &Array5<f32>) -> Result<TapBundle> {
    network.forward_with_taps(x)
}

pub fn forward(network: &Network, x: &Array5<f32>) -> Result<Array3<f32>> {
    network.forward(x)
}

/// Number of trainable scalars.
pub fn parameter_count<M: Module + ?Sized>(module: &M) -> usize {
    module.parameter_count()
}

//! Layers, model specifications, and the classifier / GAN builders.

mod activation;
mod batchnorm;
mod conv;
mod minibatch;
mod pool;

pub use activation::{softmax, softmax_rows};
pub use batchnorm::{batchnorm, channel_moments, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv_transpose2d, transposed_extent, window_geometry, Padding};
pub use minibatch::minibatch_discrimination;
pub use pool::maxpool2d;
mod builders;
mod model;
mod spec;

pub use builders::{
    build_classifier, build_discriminator, build_generator, ModelKind, DISC_LEAK, GAN_INIT_STD, LATENT_DIM, MBD_KERNEL_STD,
};
pub use model::{Bound, Forward, Model};
pub use spec::{Init, LayerSpec, ModelSpec};

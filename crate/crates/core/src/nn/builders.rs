//! The classifier and the DCGAN-style generator/discriminator pair.

use std::fmt;
use std::str::FromStr;

use super::conv::Padding;
use super::spec::{Init, LayerSpec, ModelSpec};
use crate::error::Error;
use crate::profile::Profile;

pub const LATENT_DIM: usize = 100;
pub const DISC_LEAK: f32 = 0.2;
pub const GAN_INIT_STD: f32 = 0.02;
/// Init std of the minibatch-discrimination kernel. At `GAN_INIT_STD` the
/// projected rows start nearly identical, every closeness feature sits near
/// its maximum, and the discriminator wins on batch statistics from the
/// first epoch.
pub const MBD_KERNEL_STD: f32 = 0.15;

fn conv(filters: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv {
        filters,
        kernel,
        stride,
        padding: Padding::Same,
    }
}

fn deconv(filters: usize) -> LayerSpec {
    LayerSpec::ConvTranspose {
        filters,
        kernel: 5,
        stride: 2,
        padding: Padding::Same,
    }
}

fn pool() -> LayerSpec {
    LayerSpec::MaxPool {
        window: 3,
        stride: 2,
        padding: Padding::Same,
    }
}

/// conv-conv-pool-conv-conv-pool followed by three dense layers, ReLU on
/// every hidden layer and a softmax over `outputs` units.
pub fn build_classifier(profile: Profile, outputs: usize) -> ModelSpec {
    let (c1, c2, d1, d2) = match profile {
        Profile::Paper => (128, 256, 512, 384),
        Profile::Mini => (8, 16, 64, 48),
    };
    let layers = vec![
        conv(c1, 3, 1),
        LayerSpec::Relu,
        conv(c1, 3, 1),
        LayerSpec::Relu,
        pool(),
        conv(c2, 3, 1),
        LayerSpec::Relu,
        conv(c2, 3, 1),
        LayerSpec::Relu,
        pool(),
        LayerSpec::Flatten,
        LayerSpec::Dense { units: d1 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: d2 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: outputs },
        LayerSpec::Softmax,
    ];
    ModelSpec::new(
        format!("classifier-{profile}"),
        profile.classifier_input(),
        layers,
        Init::He,
    )
    .expect("classifier spec composes")
}

/// Channel widths of the generator stages, widest first; the discriminator
/// mirrors them.
fn gan_widths(profile: Profile) -> Vec<usize> {
    match profile {
        Profile::Paper => vec![512, 256, 128],
        Profile::Mini => vec![32, 16],
    }
}

/// Latent vector -> dense projection to 4x4 -> stride-2 transposed convs with
/// batch norm and ReLU -> tanh image at the profile's GAN resolution.
pub fn build_generator(profile: Profile) -> ModelSpec {
    let widths = gan_widths(profile);
    let mut layers = vec![
        LayerSpec::Dense {
            units: widths[0] * 16,
        },
        LayerSpec::Reshape {
            shape: vec![widths[0], 4, 4],
        },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
    ];
    for &w in &widths[1..] {
        layers.extend([deconv(w), LayerSpec::BatchNorm, LayerSpec::Relu]);
    }
    layers.extend([deconv(profile.channels()), LayerSpec::Tanh]);
    let spec = ModelSpec::new(
        format!("generator-{profile}"),
        vec![LATENT_DIM],
        layers,
        Init::Normal(GAN_INIT_STD),
    )
    .expect("generator spec composes");
    debug_assert_eq!(spec.output_shape(), profile.gan_image());
    spec
}

/// Stride-2 convs with leaky ReLU (batch norm after the first), then
/// minibatch discrimination and a single logit.
pub fn build_discriminator(profile: Profile) -> ModelSpec {
    let mut widths = gan_widths(profile);
    widths.reverse();
    if profile == Profile::Paper {
        widths.insert(0, 64);
    }
    let (kernels, dims) = match profile {
        Profile::Paper => (32, 8),
        Profile::Mini => (8, 4),
    };
    let mut layers = Vec::new();
    for (i, &w) in widths.iter().enumerate() {
        layers.push(conv(w, 5, 2));
        if i > 0 {
            layers.push(LayerSpec::BatchNorm);
        }
        layers.push(LayerSpec::LeakyRelu { slope: DISC_LEAK });
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::MinibatchDisc { kernels, dims },
        LayerSpec::Dense { units: 1 },
    ]);
    ModelSpec::new(
        format!("discriminator-{profile}"),
        profile.gan_image(),
        layers,
        Init::Normal(GAN_INIT_STD),
    )
    .expect("discriminator spec composes")
}

/// Which builder produced a model; stored in checkpoints so a spec can be
/// rebuilt on load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Classifier { outputs: usize },
    Generator,
    Discriminator,
}

impl ModelKind {
    pub fn build(self, profile: Profile) -> ModelSpec {
        match self {
            ModelKind::Classifier { outputs } => build_classifier(profile, outputs),
            ModelKind::Generator => build_generator(profile),
            ModelKind::Discriminator => build_discriminator(profile),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Classifier { outputs } => write!(f, "classifier:{outputs}"),
            ModelKind::Generator => f.write_str("generator"),
            ModelKind::Discriminator => f.write_str("discriminator"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "generator" => Ok(ModelKind::Generator),
            "discriminator" => Ok(ModelKind::Discriminator),
            _ => s
                .strip_prefix("classifier:")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n > 0)
                .map(|outputs| ModelKind::Classifier { outputs })
                .ok_or_else(|| Error::CheckpointInvalid(format!("unknown model kind '{s}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_classifier_layout() {
        let spec = build_classifier(Profile::Paper, 30);
        assert_eq!(spec.output_shape(), vec![30]);
        assert_eq!(
            spec.weight_and_pool_layers(),
            vec!["conv", "conv", "maxpool", "conv", "conv", "maxpool", "dense", "dense", "dense"]
        );
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[0], vec![3, 24, 24]);
        assert_eq!(shapes[5], vec![128, 12, 12]);
        assert_eq!(shapes[10], vec![256, 6, 6]);
        assert!(matches!(spec.layers.last(), Some(LayerSpec::Softmax)));
    }

    #[test]
    fn mini_classifier_width() {
        let spec = build_classifier(Profile::Mini, 3 * 5);
        assert_eq!(spec.output_shape(), vec![15]);
        assert_eq!(spec.input_shape, vec![1, 16, 16]);
    }

    #[test]
    fn gan_shapes() {
        assert_eq!(build_generator(Profile::Paper).output_shape(), vec![3, 32, 32]);
        assert_eq!(build_generator(Profile::Mini).output_shape(), vec![1, 16, 16]);
        assert_eq!(build_discriminator(Profile::Paper).output_shape(), vec![1]);
        assert_eq!(build_discriminator(Profile::Mini).output_shape(), vec![1]);
    }

    #[test]
    fn paper_generator_size_near_four_and_a_half_million() {
        let count = build_generator(Profile::Paper).param_count() as f64;
        assert!((count - 4.5e6).abs() / 4.5e6 <= 0.15, "{count}");
    }
}

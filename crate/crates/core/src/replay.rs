//! Generative replay: pseudo-images from the generator, targets from a
//! frozen copy of the classifier, and the mixed real/generated set the
//! generator itself rehearses on.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::data::{center_crop, preprocess_eval_batch};
use crate::error::{Error, Result};
use crate::nn::{Model, LATENT_DIM};
use crate::seed;

const CHUNK: usize = 256;

/// Read-only snapshot of the classifier taken before a new task starts.
#[derive(Clone, Debug)]
pub struct FrozenClassifier {
    model: Model,
}

impl FrozenClassifier {
    pub fn new(model: &Model) -> Self {
        Self { model: model.clone() }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Eval-mode output probabilities for preprocessed images.
    pub fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        self.model.predict(images, CHUNK)
    }
}

/// Generated items with the frozen classifier's soft targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoDataset {
    /// Preprocessed (standardized) `[n, c, h, w]`.
    pub images: Tensor,
    /// `[n, K]`, each row a probability vector.
    pub soft_targets: Tensor,
    /// Argmax of each target row, for reporting.
    pub hard_labels: Vec<usize>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

impl PseudoDataset {
    pub fn len(&self) -> usize {
        self.hard_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_labels.is_empty()
    }
}

fn latents(n: usize, seed: u64) -> Tensor {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("latent")]));
    let z: Vec<f32> = (0..n * LATENT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(vec![n, LATENT_DIM], z).expect("n >= 1")
}

/// `n` eval-mode generator samples mapped from `[-1, 1]` to `[0, 255]`.
pub fn generate_pseudo_images(generator: &Model, n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::shape("generate_pseudo_images", "n must be at least 1"));
    }
    if generator.spec().input_shape != [LATENT_DIM] {
        return Err(Error::CheckpointInvalid(format!(
            "{} is not a generator (input {:?})",
            generator.spec().name,
            generator.spec().input_shape
        )));
    }
    let mut out = generator.predict(&latents(n, seed), CHUNK)?;
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = ((*v + 1.0) * 127.5).clamp(0.0, 255.0));
    Ok(out)
}

/// Soft targets and their argmax labels for preprocessed images.
pub fn label_pseudo_images(frozen: &FrozenClassifier, images: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let expected = &frozen.model.spec().input_shape;
    if images.rank() != 4 || images.shape()[1..] != expected[..] {
        return Err(Error::shape(
            "label_pseudo_images",
            format!("images {:?}, classifier expects [n, {:?}]", images.shape(), expected),
        ));
    }
    let probs = frozen.probabilities(images)?;
    let hard = probs.argmax_rows();
    Ok((probs, hard))
}

fn assemble(frozen: &FrozenClassifier, raw: &Tensor, sizes: [usize; 2]) -> Result<PseudoDataset> {
    let crop = frozen.model.spec().input_shape[1];
    let images = preprocess_eval_batch(raw, crop);
    let (soft_targets, hard_labels) = label_pseudo_images(frozen, &images)?;
    Ok(PseudoDataset {
        images,
        soft_targets,
        hard_labels,
        train: (0..sizes[0]).collect(),
        valid: (sizes[0]..sizes[0] + sizes[1]).collect(),
    })
}

/// `sizes = [train, valid]` generator samples labelled by `frozen`.
pub fn build_pseudo_dataset(
    generator: &Model,
    frozen: &FrozenClassifier,
    sizes: [usize; 2],
    seed: u64,
) -> Result<PseudoDataset> {
    let raw = generate_pseudo_images(generator, sizes[0] + sizes[1], seed)?;
    assemble(frozen, &raw, sizes)
}

/// i.i.d. uniform integer pixels in `[0, 255]` of shape `[n, ..image_shape]`.
pub fn uniform_noise_images(n: usize, image_shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("uniform-noise")]));
    let per: usize = image_shape.iter().product();
    let data = (0..n * per).map(|_| rng.random_range(0..=255u8) as f32).collect();
    let mut shape = vec![n];
    shape.extend_from_slice(image_shape);
    Tensor::new(shape, data).expect("n >= 1")
}

/// Like [`build_pseudo_dataset`] with uniform noise in place of generator samples.
pub fn build_uniform_noise_pseudo(
    frozen: &FrozenClassifier,
    image_shape: &[usize],
    sizes: [usize; 2],
    seed: u64,
) -> Result<PseudoDataset> {
    let raw = uniform_noise_images(sizes[0] + sizes[1], image_shape, seed);
    assemble(frozen, &raw, sizes)
}

/// Maps `[0, 255]` images, centre-cropped to `size`, into `[-1, 1]`.
pub fn to_gan_domain(images: &Tensor, size: usize) -> Tensor {
    let n = images.shape()[0];
    let parts: Vec<Tensor> = (0..n)
        .map(|i| {
            let item = images.slice_rows(i, i + 1);
            let item = item.reshape(images.shape()[1..].to_vec()).expect("same size");
            let mut c = center_crop(&item, size);
            c.data_mut().iter_mut().for_each(|v| *v = *v / 127.5 - 1.0);
            c
        })
        .collect();
    let mut shape = vec![n];
    shape.extend_from_slice(parts[0].shape());
    Tensor::new(shape, parts.into_iter().flat_map(Tensor::into_data).collect()).expect("non-empty")
}

/// Training set for the generator after a task: `total` items in `[-1, 1]`.
/// Without a previous generator (first task) every item is real; otherwise
/// `total / 2` are real and the rest are samples of the previous generator.
/// Real items are drawn without replacement while they last.
pub fn build_gan_rehearsal_set(
    previous: Option<&Model>,
    new_task_images: &Tensor,
    gan_size: usize,
    total: usize,
    seed: u64,
) -> Result<Tensor> {
    let real = to_gan_domain(new_task_images, gan_size);
    let n_real = if previous.is_some() { total / 2 } else { total };
    let n_fake = total - n_real;
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("gan-rehearsal")]));
    let available = real.shape()[0];
    let mut picks = Vec::with_capacity(n_real);
    while picks.len() < n_real {
        let mut round: Vec<usize> = (0..available).collect();
        round.shuffle(&mut rng);
        picks.extend(round.into_iter().take(n_real - picks.len()));
    }
    let real = real.gather_rows(&picks);
    let Some(generator) = previous else {
        return Ok(real);
    };
    let mut fake = generate_pseudo_images(generator, n_fake, seed::derive(seed, &[seed::tag("gan-fake")]))?;
    fake.data_mut().iter_mut().for_each(|v| *v = *v / 127.5 - 1.0);
    Tensor::concat_rows(&[&real, &fake])
}

/// Entropy (nats) of the argmax histogram over `classes` labels.
pub fn label_entropy(labels: &[usize], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Sum of each row of a `[n, K]` tensor.
pub fn row_sums(t: &Tensor) -> Vec<f64> {
    let k = t.shape()[1];
    t.data().chunks(k).map(|r| r.iter().map(|&v| v as f64).sum()).collect()
}

//! Task datasets: ingestion, synthetic desk-scale tasks, and the
//! train/eval image preprocessing.

mod augment;
mod idx;
mod manifest;
mod synthetic;

pub use augment::{
    apply_augmentation, augment_batch, augment_batch_parallel, augment_train_image, center_crop, crop, draw_augmentation,
    preprocess_eval_batch, preprocess_eval_image, standardize, AugmentConfig, AugmentDraw,
};
pub use idx::{load_idx, parse_idx, write_idx, Idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_CLASSES};
pub use manifest::{load_raw_task, Manifest};
pub use synthetic::{make_synthetic_task, prototype, split_sizes, SYNTHETIC_NOISE_STD, SYNTHETIC_SIZE};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One classification task: images in `[0, 255]`, per-task class labels and
/// disjoint train/valid/test index lists.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub task_index: usize,
    pub classes: usize,
    /// `[n, c, h, w]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    /// Whether random left-right flips apply during augmentation.
    pub flip_lr: bool,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Output unit of `label` when every task owns its own block of units.
    pub fn global_unit(&self, label: usize) -> usize {
        self.task_index * self.classes + label
    }

    /// Checks labels and that the partitions are disjoint and cover every item.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.images.shape()[0] != n {
            return Err(Error::SizeMismatch(format!(
                "{} images but {} labels",
                self.images.shape()[0],
                n
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as u32,
                classes: self.classes as u32,
            });
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.valid).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::SizeMismatch(format!("partition index {i} repeated or out of range")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::SizeMismatch("partitions do not cover every item".into()));
        }
        Ok(())
    }

    pub fn images_at(&self, idx: &[usize]) -> Tensor {
        self.images.gather_rows(idx)
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// `[n, units]` one-hot rows.
pub fn one_hot(units: &[usize], width: usize) -> Tensor {
    let mut data = vec![0.0; units.len() * width];
    for (row, &u) in units.iter().enumerate() {
        data[row * width + u] = 1.0;
    }
    Tensor::new(vec![units.len(), width], data).expect("non-empty one-hot")
}

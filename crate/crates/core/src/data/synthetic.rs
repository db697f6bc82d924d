//! Desk-scale grayscale tasks. Each class is an oriented bar; each task adds
//! a blob in its own corner and rotates its bar set, so the prototypes of
//! different tasks never coincide.

use std::f32::consts::PI;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::TaskDataset;
use crate::autodiff::Tensor;
use crate::seed;

pub const SYNTHETIC_SIZE: usize = 20;
pub const SYNTHETIC_NOISE_STD: f32 = 64.0;

const BACKGROUND: f32 = 40.0;
const BAR_LEVEL: f32 = 200.0;
const BAR_HALF_LENGTH: f32 = 6.5;
const BLOB_LEVEL: f32 = 150.0;
const BLOB_SIGMA: f32 = 2.0;
const CORNERS: [(f32, f32); 4] = [(4.5, 4.5), (4.5, 14.5), (14.5, 4.5), (14.5, 14.5)];

/// Noise-free `[SYNTHETIC_SIZE²]` image for `(task_index, class)`.
pub fn prototype(task_index: usize, class: usize, classes: usize) -> Vec<f32> {
    let angle = PI * (class as f32 + 0.37 * task_index as f32) / classes as f32;
    let (dy, dx) = angle.sin_cos();
    let centre = (SYNTHETIC_SIZE as f32 - 1.0) / 2.0;
    let (by, bx) = CORNERS[task_index % CORNERS.len()];
    let mut img = vec![BACKGROUND; SYNTHETIC_SIZE * SYNTHETIC_SIZE];
    for y in 0..SYNTHETIC_SIZE {
        for x in 0..SYNTHETIC_SIZE {
            let (ry, rx) = (y as f32 - centre, x as f32 - centre);
            let along = ry * dy + rx * dx;
            let across = (ry * dx - rx * dy).abs();
            let bar = if along.abs() <= BAR_HALF_LENGTH {
                (1.5 - across).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d2 = (y as f32 - by).powi(2) + (x as f32 - bx).powi(2);
            let blob = (-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
            let v = &mut img[y * SYNTHETIC_SIZE + x];
            *v = (*v + bar * (BAR_LEVEL - BACKGROUND) + blob * BLOB_LEVEL).min(255.0);
        }
    }
    img
}

/// Train/valid/test sizes in the 37.5 : 12.5 : 10 proportion.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let train = (n as f64 * 37.5 / 60.0).round() as usize;
    let valid = ((n as f64 * 12.5 / 60.0).round() as usize).min(n - train);
    [train, valid, n - train - valid]
}

/// `classes × n_per_class` noisy prototype renders, shuffled and split.
pub fn make_synthetic_task(task_index: usize, classes: usize, n_per_class: usize, seed: u64) -> TaskDataset {
    assert!(classes >= 2, "synthetic tasks need at least two classes");
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("synthetic"), task_index as u64]));
    let noise = Normal::new(0.0f32, SYNTHETIC_NOISE_STD).expect("positive std");
    let protos: Vec<Vec<f32>> = (0..classes).map(|c| prototype(task_index, c, classes)).collect();
    let n = classes * n_per_class;
    let pixels = SYNTHETIC_SIZE * SYNTHETIC_SIZE;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for &item in &order {
        let class = item % classes;
        labels.push(class);
        data.extend(
            protos[class]
                .iter()
                .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 255.0).round()),
        );
    }
    let [tr, va, _] = split_sizes(n);
    TaskDataset {
        name: format!("synthetic-{task_index}"),
        task_index,
        classes,
        images: Tensor::new(vec![n, 1, SYNTHETIC_SIZE, SYNTHETIC_SIZE], data).expect("non-empty task"),
        labels,
        train: (0..tr).collect(),
        valid: (tr..tr + va).collect(),
        test: (tr + va..n).collect(),
        flip_lr: false,
    }
}

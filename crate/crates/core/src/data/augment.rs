//! Training augmentation and evaluation preprocessing. Both end in
//! per-image standardization.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop_to: usize,
    /// Random crop offsets; otherwise the centre crop.
    pub random_crop: bool,
    pub flip_lr: bool,
    /// Brightness shift drawn from `[-delta, delta]` on the 0..255 scale.
    pub brightness_delta: f32,
    pub contrast_range: (f32, f32),
}

impl AugmentConfig {
    pub fn train(crop_to: usize, flip_lr: bool) -> Self {
        Self {
            crop_to,
            random_crop: true,
            flip_lr,
            brightness_delta: 63.0,
            contrast_range: (0.2, 1.8),
        }
    }

    /// No randomness: equivalent to evaluation preprocessing.
    pub fn identity(crop_to: usize) -> Self {
        Self {
            crop_to,
            random_crop: false,
            flip_lr: false,
            brightness_delta: 0.0,
            contrast_range: (1.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
    pub delta: f32,
    pub contrast: f32,
}

pub fn draw_augmentation(cfg: &AugmentConfig, height: usize, width: usize, seed: u64) -> AugmentDraw {
    assert!(cfg.crop_to <= height && cfg.crop_to <= width, "crop larger than image");
    let mut rng = seed::rng(seed);
    let (offset_y, offset_x) = if cfg.random_crop {
        (rng.random_range(0..=height - cfg.crop_to), rng.random_range(0..=width - cfg.crop_to))
    } else {
        ((height - cfg.crop_to) / 2, (width - cfg.crop_to) / 2)
    };
    let flip = cfg.flip_lr && rng.random_bool(0.5);
    let d = cfg.brightness_delta;
    let (lo, hi) = cfg.contrast_range;
    AugmentDraw {
        offset_y,
        offset_x,
        flip,
        delta: rng.random_range(-d..=d),
        contrast: rng.random_range(lo..=hi),
    }
}

/// `[c, size, size]` window of a `[c, h, w]` image.
pub fn crop(img: &Tensor, offset_y: usize, offset_x: usize, size: usize) -> Tensor {
    let &[c, h, w] = img.shape() else {
        panic!("crop expects [c,h,w], got {:?}", img.shape())
    };
    assert!(offset_y + size <= h && offset_x + size <= w, "crop window out of bounds");
    let src = img.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in offset_y..offset_y + size {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&src[row + offset_x..row + offset_x + size]);
        }
    }
    Tensor::new(vec![c, size, size], out).expect("positive crop")
}

pub fn center_crop(img: &Tensor, size: usize) -> Tensor {
    let s = img.shape();
    crop(img, (s[1] - size) / 2, (s[2] - size) / 2, size)
}

/// `(x − mean) / max(std, 1/√N)` over all of the image's values.
pub fn standardize(img: &Tensor) -> Tensor {
    let mut out = img.clone();
    standardize_in_place(out.data_mut());
    out
}

fn standardize_in_place(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt().max(1.0 / n.sqrt());
    for x in v {
        *x = ((*x as f64 - mean) / scale) as f32;
    }
}

pub fn apply_augmentation(img: &Tensor, cfg: &AugmentConfig, draw: &AugmentDraw) -> Tensor {
    let mut out = crop(img, draw.offset_y, draw.offset_x, cfg.crop_to);
    let size = cfg.crop_to;
    let data = out.data_mut();
    if draw.flip {
        for row in data.chunks_mut(size) {
            row.reverse();
        }
    }
    let mean = data.iter().map(|&x| (x + draw.delta) as f64).sum::<f64>() / data.len() as f64;
    for x in data.iter_mut() {
        let shifted = *x + draw.delta;
        *x = ((shifted as f64 - mean) * draw.contrast as f64 + mean) as f32;
    }
    standardize_in_place(data);
    out
}

pub fn augment_train_image(img: &Tensor, cfg: &AugmentConfig, seed: u64) -> Tensor {
    let s = img.shape();
    let draw = draw_augmentation(cfg, s[1], s[2], seed);
    apply_augmentation(img, cfg, &draw)
}

pub fn preprocess_eval_image(img: &Tensor, crop_to: usize) -> Tensor {
    standardize(&center_crop(img, crop_to))
}

fn item(batch: &Tensor, i: usize) -> Tensor {
    batch.slice_rows(i, i + 1).reshape(batch.shape()[1..].to_vec()).expect("same size")
}

fn stack(items: Vec<Tensor>) -> Tensor {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    Tensor::new(shape, items.into_iter().flat_map(Tensor::into_data).collect()).expect("consistent items")
}

/// Augments `batch[i]` with the per-item seed `derive(seed, [epoch, item_ids[i]])`.
pub fn augment_batch(batch: &Tensor, item_ids: &[usize], cfg: &AugmentConfig, seed: u64, epoch: usize) -> Tensor {
    assert_eq!(batch.shape()[0], item_ids.len());
    let items = (0..item_ids.len())
        .map(|i| augment_train_image(&item(batch, i), cfg, seed::derive(seed, &[epoch as u64, item_ids[i] as u64])))
        .collect();
    stack(items)
}

/// Same result as `augment_batch`, spread over `threads` scoped workers.
pub fn augment_batch_parallel(
    batch: &Tensor,
    item_ids: &[usize],
    cfg: &AugmentConfig,
    seed: u64,
    epoch: usize,
    threads: usize,
) -> Tensor {
    let n = item_ids.len();
    let chunk = n.div_ceil(threads.max(1)).max(1);
    let parts: Vec<Tensor> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(n);
                let part = batch.slice_rows(start, end);
                s.spawn(move || augment_batch(&part, &item_ids[start..end], cfg, seed, epoch))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("augment worker panicked")).collect()
    });
    Tensor::concat_rows(&parts.iter().collect::<Vec<_>>()).expect("consistent parts")
}

pub fn preprocess_eval_batch(batch: &Tensor, crop_to: usize) -> Tensor {
    stack((0..batch.shape()[0]).map(|i| preprocess_eval_image(&item(batch, i), crop_to)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|i| ((i * 37) % 256) as f32).collect()).unwrap()
    }

    fn moments(v: &[f32]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn constant_image_standardizes_to_zero() {
        let out = preprocess_eval_image(&Tensor::full(vec![1, 20, 20], 77.0), 16);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_crop_shapes() {
        assert_eq!(preprocess_eval_image(&ramp(3, 32, 32), 24).shape(), &[3, 24, 24]);
        let img = ramp(3, 24, 24);
        assert_eq!(center_crop(&img, 24), img);
    }

    #[test]
    fn standardize_matches_two_pass_oracle() {
        let img = ramp(1, 5, 7);
        let out = standardize(&img);
        let (mean, std) = moments(img.data());
        for (o, &x) in out.data().iter().zip(img.data()) {
            assert!((*o as f64 - (x as f64 - mean) / std).abs() < 1e-5);
        }
        assert!(moments(out.data()).0.abs() < 1e-5);
    }

    #[test]
    fn degenerate_config_equals_eval() {
        let img = ramp(3, 32, 32);
        let out = augment_train_image(&img, &AugmentConfig::identity(24), 5);
        assert_eq!(out, preprocess_eval_image(&img, 24));
    }

    #[test]
    fn augmented_image_is_standardized() {
        let img = ramp(3, 32, 32);
        for s in 0..20 {
            let (mean, std) = moments(augment_train_image(&img, &AugmentConfig::train(24, true), s).data());
            assert!(mean.abs() < 1e-4 && (std - 1.0).abs() < 1e-4, "{mean} {std}");
        }
    }

    #[test]
    fn flip_only_when_flagged() {
        let no_flip = AugmentConfig::train(16, false);
        assert!((0..200).all(|s| !draw_augmentation(&no_flip, 20, 20, s).flip));
        let flip = AugmentConfig::train(16, true);
        assert!((0..200).any(|s| draw_augmentation(&flip, 20, 20, s).flip));
    }

    #[test]
    fn double_flip_is_involution() {
        let img = ramp(1, 20, 20);
        let cfg = AugmentConfig::identity(16);
        let mut draw = draw_augmentation(&cfg, 20, 20, 0);
        let plain = apply_augmentation(&img, &cfg, &draw);
        draw.flip = true;
        let once = apply_augmentation(&img, &cfg, &draw);
        assert_ne!(once, plain);
        let mut back = once.clone();
        for row in back.data_mut().chunks_mut(16) {
            row.reverse();
        }
        assert_eq!(back, plain);
    }

    #[test]
    fn parallel_matches_serial() {
        let batch = Tensor::new(vec![7, 1, 20, 20], (0..2800).map(|i| (i % 251) as f32).collect()).unwrap();
        let ids = [3, 9, 1, 4, 0, 12, 8];
        let cfg = AugmentConfig::train(16, true);
        let serial = augment_batch(&batch, &ids, &cfg, 42, 3);
        for threads in [1, 2, 3, 8] {
            assert_eq!(augment_batch_parallel(&batch, &ids, &cfg, 42, 3, threads), serial);
        }
        assert_ne!(augment_batch(&batch, &ids, &cfg, 42, 4), serial);
    }
}

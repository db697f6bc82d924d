use proptest::prelude::*;
use pseudorec::autodiff::{Graph, Tensor};
use pseudorec::data::{
    apply_augmentation, draw_augmentation, make_synthetic_task, one_hot, preprocess_eval_batch, AugmentConfig,
    SYNTHETIC_SIZE,
};
use pseudorec::losses::model_cross_entropy;
use pseudorec::nn::{Init, LayerSpec, Mode, Model, ModelSpec};
use pseudorec::replay::uniform_noise_images;
use pseudorec::trainer::{adam_step, OptimizerState};

fn moments(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_draws_stay_in_range(seed in any::<u64>(), h in 16usize..40, extra in 0usize..8, flip in any::<bool>()) {
        let crop = h.saturating_sub(extra).max(1);
        let cfg = AugmentConfig::train(crop, flip);
        let d = draw_augmentation(&cfg, h, h, seed);
        prop_assert!(d.offset_y + crop <= h && d.offset_x + crop <= h);
        prop_assert!(d.delta.abs() <= cfg.brightness_delta);
        prop_assert!(d.contrast >= cfg.contrast_range.0 && d.contrast <= cfg.contrast_range.1);
        prop_assert!(flip || !d.flip);
        prop_assert_eq!(d, draw_augmentation(&cfg, h, h, seed));
    }

    #[test]
    fn augmented_images_are_standardized(seed in any::<u64>(), c in 1usize..4) {
        let pixels: Vec<f32> = (0..c * 32 * 32).map(|i| (((i as u64 * 2654435761) ^ seed) % 256) as f32).collect();
        let img = Tensor::new(vec![c, 32, 32], pixels).unwrap();
        let cfg = AugmentConfig::train(24, true);
        let out = apply_augmentation(&img, &cfg, &draw_augmentation(&cfg, 32, 32, seed));
        prop_assert_eq!(out.shape(), &[c, 24, 24]);
        let (mean, std) = moments(out.data());
        prop_assert!(mean.abs() < 1e-4 && (std - 1.0).abs() < 1e-4, "mean {} std {}", mean, std);
    }
}

#[test]
fn perceptron_separates_one_synthetic_task() {
    let task = make_synthetic_task(0, 5, 150, 4);
    let crop = 16;
    let x_train = preprocess_eval_batch(&task.images_at(&task.train), crop);
    let y_train = one_hot(&task.labels_at(&task.train), 5);
    let x_test = preprocess_eval_batch(&task.images_at(&task.test), crop);
    let spec = ModelSpec::new(
        "perceptron",
        vec![1, crop, crop],
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 32 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 5 },
            LayerSpec::Softmax,
        ],
        Init::He,
    )
    .unwrap();
    let mut model = Model::new(spec, 1);
    let mut opt = OptimizerState::adam(model.params(), 1e-3);
    let n = task.train.len();
    let mut accuracy = 0.0;
    for _ in 0..20 {
        for start in (0..n).step_by(16) {
            let rows: Vec<usize> = (start..(start + 16).min(n)).collect();
            let mut g = Graph::new(0);
            let bound = model.bind(&mut g, true);
            let loss = model_cross_entropy(
                &mut g,
                &model,
                &bound,
                &x_train.gather_rows(&rows),
                &y_train.gather_rows(&rows),
                Mode::Train,
            )
            .unwrap();
            g.backward(loss).unwrap();
            let grads: Vec<&[f32]> = bound.params.iter().map(|&p| g.grad(p).unwrap()).collect();
            adam_step(model.params_mut(), &grads, &mut opt).unwrap();
        }
        let pred = model.predict(&x_test, 64).unwrap().argmax_rows();
        let labels = task.labels_at(&task.test);
        accuracy = pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
        if accuracy >= 0.95 {
            break;
        }
    }
    assert!(accuracy >= 0.95, "test accuracy {accuracy}");
}

#[test]
fn uniform_noise_pixels_pass_chi_square() {
    let images = uniform_noise_images(64, &[1, SYNTHETIC_SIZE, SYNTHETIC_SIZE], 7);
    let mut bins = [0usize; 256];
    for &v in images.data() {
        assert!(v == v.round() && (0.0..=255.0).contains(&v));
        bins[v as usize] += 1;
    }
    let expected = images.numel() as f64 / 256.0;
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 255 degrees of freedom; 330 is beyond the 0.999 quantile.
    assert!(chi2 < 330.0, "chi2 {chi2}");
    assert_eq!(images, uniform_noise_images(64, &[1, SYNTHETIC_SIZE, SYNTHETIC_SIZE], 7));
}

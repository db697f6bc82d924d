//! Alternating discriminator/generator updates.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::optim::{adam_step, OptimizerState, ADAM_BETA2, ADAM_EPS};
use crate::autodiff::{Graph, Tensor};
use crate::error::Result;
use crate::losses::gan_losses;
use crate::nn::{Mode, Model, LATENT_DIM};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            lr: 2e-4,
            beta1: 0.5,
        }
    }
}

/// Per-epoch means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanReport {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    /// Fraction of real logits above zero and fake logits below zero, seen
    /// by the discriminator before its update.
    pub d_accuracy: Vec<f64>,
}

fn latent_batch(n: usize, seed: u64) -> Tensor {
    let mut rng = seed::rng(seed);
    let z = (0..n * LATENT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(vec![n, LATENT_DIM], z).expect("n >= 1")
}

/// Trains on `images` (`[n, c, h, w]` in `[-1, 1]`); `on_epoch` sees the
/// generator after every epoch. Real and generated items reach the
/// discriminator as separate batches; only the real batch updates its
/// running statistics. Batches smaller than two items are skipped.
pub fn train_gan(
    generator: &mut Model,
    discriminator: &mut Model,
    images: &Tensor,
    cfg: &GanConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<GanReport> {
    let mut g_opt = OptimizerState::new(generator.params(), cfg.lr, cfg.beta1, ADAM_BETA2, ADAM_EPS);
    let mut d_opt = OptimizerState::new(discriminator.params(), cfg.lr, cfg.beta1, ADAM_BETA2, ADAM_EPS);
    let n = images.shape()[0];
    let mut report = GanReport::default();
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(seed::derive(seed, &[seed::tag("gan-epoch"), epoch as u64]));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut acc_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let m = chunk.len();
            let step_seed = seed::derive(seed, &[epoch as u64, b as u64]);

            let mut g = Graph::new(0);
            let gb = generator.bind(&mut g, false);
            let db = discriminator.bind(&mut g, true);
            let z = g.constant(latent_batch(m, seed::derive(step_seed, &[0])));
            let fake = generator.forward(&mut g, &gb, z, Mode::Train)?.output;
            let real = g.constant(images.gather_rows(chunk));
            let fake = g.constant(g.value(fake).clone());
            let real_fwd = discriminator.forward(&mut g, &db, real, Mode::Train)?;
            let fake_fwd = discriminator.forward(&mut g, &db, fake, Mode::Train)?;
            let (real_logits, fake_logits) = (real_fwd.output, fake_fwd.output);
            let (d_loss, _) = gan_losses(&mut g, real_logits, fake_logits)?;
            let correct = g.value(real_logits).data().iter().filter(|&&v| v > 0.0).count()
                + g.value(fake_logits).data().iter().filter(|&&v| v < 0.0).count();
            acc_sum += correct as f64 / (2 * m) as f64;
            d_sum += g.value(d_loss).item() as f64;
            g.backward(d_loss)?;
            let grads: Vec<&[f32]> = db.params.iter().map(|&p| g.grad(p).expect("tracked")).collect();
            adam_step(discriminator.params_mut(), &grads, &mut d_opt)?;
            discriminator.commit_running_stats(&g, &real_fwd);

            let mut g = Graph::new(0);
            let gb = generator.bind(&mut g, true);
            let db = discriminator.bind(&mut g, false);
            let z = g.constant(latent_batch(m, seed::derive(step_seed, &[1])));
            let gen_fwd = generator.forward(&mut g, &gb, z, Mode::Train)?;
            let fake_logits = discriminator.forward(&mut g, &db, gen_fwd.output, Mode::Train)?.output;
            let neg = g.neg(fake_logits)?;
            let sp = g.softplus(neg)?;
            let g_loss = g.mean(sp)?;
            g_sum += g.value(g_loss).item() as f64;
            g.backward(g_loss)?;
            let grads: Vec<&[f32]> = gb.params.iter().map(|&p| g.grad(p).expect("tracked")).collect();
            adam_step(generator.params_mut(), &grads, &mut g_opt)?;
            generator.commit_running_stats(&g, &gen_fwd);
            steps += 1;
        }
        let s = steps.max(1) as f64;
        report.d_loss.push(d_sum / s);
        report.g_loss.push(g_sum / s);
        report.d_accuracy.push(acc_sum / s);
        on_epoch(epoch, generator)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_discriminator, build_generator};
    use crate::profile::Profile;

    #[test]
    fn short_run_is_finite_and_deterministic() {
        let images = {
            let mut rng = seed::rng(0);
            let data = (0..12 * 256).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            Tensor::new(vec![12, 1, 16, 16], data).unwrap()
        };
        let cfg = GanConfig {
            epochs: 2,
            batch_size: 5,
            ..GanConfig::default()
        };
        let run = || {
            let mut gen = Model::new(build_generator(Profile::Mini), 1);
            let mut disc = Model::new(build_discriminator(Profile::Mini), 2);
            let mut seen = 0;
            let r = train_gan(&mut gen, &mut disc, &images, &cfg, 9, |_, _| {
                seen += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, 2);
            (gen, r)
        };
        let (g1, r1) = run();
        let (g2, r2) = run();
        assert_eq!(g1, g2);
        assert_eq!(r1, r2);
        assert!(r1.g_loss.iter().chain(&r1.d_loss).all(|v| v.is_finite()));
    }
}

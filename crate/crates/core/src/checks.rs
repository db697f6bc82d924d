//! Invariant and oracle suite: brute-force layer references, loss
//! identities, and finite-difference checks of the full mini-profile graphs.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{finite_difference_check_with, GradCheckOptions, Graph, NodeId, Tensor};
use crate::data::one_hot;
use crate::error::Result;
use crate::losses::{
    cross_entropy, cross_entropy_value, ewc_penalty, gan_losses, model_cross_entropy, pseudo_rehearsal_loss,
    rehearsal_loss, FisherState,
};
use crate::nn::{
    batchnorm, build_classifier, build_discriminator, build_generator, conv2d, maxpool2d, minibatch_discrimination,
    softmax, softmax_rows, Mode, Model, Padding, RunningStats, BN_EPS, LATENT_DIM,
};
use crate::profile::Profile;
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

/// Relative tolerance and minimum pass fraction of the gradient checks.
pub const GRAD_TOL: f32 = 1e-3;
pub const GRAD_PASS_FRACTION: f64 = 0.99;
/// Tolerance of the layer oracles.
pub const ORACLE_TOL: f32 = 1e-4;

fn normal_tensor(shape: Vec<usize>, std: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(shape, data).expect("sized")
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Leading pad and output extent, written out independently of the layer code:
/// valid keeps whole windows, same emits `ceil(extent / stride)` outputs and
/// puts the odd padding row at the end.
fn naive_geometry(extent: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => ((extent - k) / stride + 1, 0),
        Padding::Same => {
            let out = extent.div_ceil(stride);
            let needed = (out - 1) * stride + k;
            (out, needed.saturating_sub(extent) / 2)
        }
    }
}

/// Direct-loop cross-correlation; `w` is `[f, c, k, k]`.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &[f32], stride: usize, padding: Padding) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, k) = (w.shape()[0], w.shape()[2]);
    let (oh, ph) = naive_geometry(h, k, stride, padding);
    let (ow, pw) = naive_geometry(wd, k, stride, padding);
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0f32; n * f * oh * ow];
    for i in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for z in 0..ow {
                    let mut acc = b[o] as f64;
                    for ch in 0..c {
                        for dy in 0..k {
                            for dz in 0..k {
                                let iy = (y * stride + dy) as isize - ph as isize;
                                let iz = (z * stride + dz) as isize - pw as isize;
                                if iy < 0 || iz < 0 || iy >= h as isize || iz >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((i * c + ch) * h + iy as usize) * wd + iz as usize];
                                let wv = wdat[((o * c + ch) * k + dy) * k + dz];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((i * f + o) * oh + y) * ow + z] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).expect("sized")
}

/// Direct-loop max pooling; padded cells never win.
pub fn naive_maxpool2d(x: &Tensor, window: usize, stride: usize, padding: Padding) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ph) = naive_geometry(h, window, stride, padding);
    let (ow, pw) = naive_geometry(w, window, stride, padding);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for y in 0..oh {
            for z in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..window {
                    for dz in 0..window {
                        let iy = (y * stride + dy) as isize - ph as isize;
                        let iz = (z * stride + dz) as isize - pw as isize;
                        if iy >= 0 && iz >= 0 && iy < h as isize && iz < w as isize {
                            best = best.max(plane[iy as usize * w + iz as usize]);
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).expect("sized")
}

/// Direct double loop over sample pairs; `t` is `[a, B, C]`.
pub fn naive_minibatch_discrimination(f: &Tensor, t: &Tensor) -> Tensor {
    let (n, a) = (f.shape()[0], f.shape()[1]);
    let (kernels, dims) = (t.shape()[1], t.shape()[2]);
    let m: Vec<f64> = (0..n)
        .flat_map(|i| {
            (0..kernels * dims).map(move |bc| (0..a).map(|p| f.data()[i * a + p] as f64 * t.data()[p * kernels * dims + bc] as f64).sum())
        })
        .collect();
    let mut out = Vec::with_capacity(n * (a + kernels));
    for i in 0..n {
        out.extend_from_slice(&f.data()[i * a..(i + 1) * a]);
        for b in 0..kernels {
            let mut o = 0.0f64;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let l1: f64 = (0..dims)
                    .map(|c| (m[(i * kernels + b) * dims + c] - m[(j * kernels + b) * dims + c]).abs())
                    .sum();
                o += (-l1).exp();
            }
            out.push(o as f32);
        }
    }
    Tensor::new(vec![n, a + kernels], out).expect("sized")
}

/// Per-channel normalisation over batch and spatial axes, in f64.
pub fn naive_batchnorm(x: &Tensor, gamma: &[f32], beta: &[f32], running: Option<&RunningStats>) -> Tensor {
    let s = x.shape();
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let mut out = x.data().to_vec();
    for ch in 0..c {
        let values = (0..n).flat_map(|i| {
            let start = (i * c + ch) * spatial;
            x.data()[start..start + spatial].iter().map(|&v| v as f64)
        });
        let (mean, var) = match running {
            Some(r) => (r.mean[ch] as f64, r.var[ch] as f64),
            None => {
                let v: Vec<f64> = values.collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64)
            }
        };
        let inv = 1.0 / (var + BN_EPS as f64).sqrt();
        for i in 0..n {
            let start = (i * c + ch) * spatial;
            for v in &mut out[start..start + spatial] {
                *v = (((*v as f64 - mean) * inv) * gamma[ch] as f64 + beta[ch] as f64) as f32;
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("sized")
}

fn padding_of(rng: &mut ChaCha8Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

/// Compares each layer with its brute-force reference on `cases` random
/// instances.
pub fn layer_oracle_checks(cases: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("layer-oracles")]));
    let mut worst = [0.0f32; 4];
    for _ in 0..cases {
        let (n, c, f) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
        let (h, w) = (rng.random_range(3..=9), rng.random_range(3..=9));
        let k = rng.random_range(1..=h.min(w).min(5));
        let stride = rng.random_range(1..=3);
        let padding = padding_of(&mut rng);
        let x = normal_tensor(vec![n, c, h, w], 1.0, &mut rng);
        let wt = normal_tensor(vec![f, c, k, k], 0.5, &mut rng);
        let b = normal_tensor(vec![f], 0.5, &mut rng);
        let mut g = Graph::new(0);
        let (xi, wi, bi) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(b.clone()));
        let y = conv2d(&mut g, xi, wi, bi, stride, padding)?;
        let want = naive_conv2d(&x, &wt, b.data(), stride, padding);
        worst[0] = worst[0].max(shape_checked_diff(g.value(y), &want));

        let window = rng.random_range(1..=h.min(w).min(4));
        let y = maxpool2d(&mut g, xi, window, stride, padding)?;
        let want = naive_maxpool2d(&x, window, stride, padding);
        worst[1] = worst[1].max(shape_checked_diff(g.value(y), &want));

        let (rows, a) = (rng.random_range(2..=6), rng.random_range(1..=8));
        let (kernels, dims) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let feats = normal_tensor(vec![rows, a], 1.0, &mut rng);
        let t = normal_tensor(vec![a, kernels, dims], 0.3, &mut rng);
        let (fi, ti) = (g.constant(feats.clone()), g.constant(t.clone()));
        let y = minibatch_discrimination(&mut g, fi, ti)?;
        let want = naive_minibatch_discrimination(&feats, &t);
        worst[2] = worst[2].max(shape_checked_diff(g.value(y), &want));

        let bn_x = if rng.random_bool(0.5) {
            normal_tensor(vec![rows, a], 2.0, &mut rng)
        } else {
            normal_tensor(vec![n + 1, c, h, w], 2.0, &mut rng)
        };
        let ch = bn_x.shape()[1];
        let gamma = normal_tensor(vec![ch], 1.0, &mut rng);
        let beta = normal_tensor(vec![ch], 1.0, &mut rng);
        let running = RunningStats {
            mean: (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect(),
            var: (0..ch).map(|_| rng.random_range(0.2..3.0)).collect(),
        };
        let (xi, gi, bi) = (g.constant(bn_x.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
        let y = batchnorm(&mut g, xi, gi, bi, Mode::Train, &running)?;
        let want = naive_batchnorm(&bn_x, gamma.data(), beta.data(), None);
        worst[3] = worst[3].max(shape_checked_diff(g.value(y), &want));
        let y = batchnorm(&mut g, xi, gi, bi, Mode::Eval, &running)?;
        let want = naive_batchnorm(&bn_x, gamma.data(), beta.data(), Some(&running));
        worst[3] = worst[3].max(shape_checked_diff(g.value(y), &want));
    }
    Ok(["conv2d", "maxpool2d", "minibatch_discrimination", "batchnorm"]
        .iter()
        .zip(worst)
        .map(|(name, err)| {
            CheckOutcome::new(
                format!("oracle {name}"),
                err <= ORACLE_TOL,
                format!("{cases} cases, max abs diff {err:.2e}"),
            )
        })
        .collect())
}

fn shape_checked_diff(got: &Tensor, want: &Tensor) -> f32 {
    if got.shape() != want.shape() {
        return f32::INFINITY;
    }
    max_abs_diff(got.data(), want.data())
}

fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn random_targets(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    one_hot(&labels, k)
}

/// Exact and near-exact identities between the objectives.
pub fn loss_identity_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("loss-identities")]));
    let mut out = Vec::new();
    let outputs = 15;
    let model = Model::new(build_classifier(Profile::Mini, outputs), seed);
    let input = Profile::Mini.classifier_input();
    let mut shape = vec![4];
    shape.extend(&input);
    let x = normal_tensor(shape, 1.0, &mut rng);
    let y = random_targets(4, outputs, &mut rng);

    let mut g = Graph::new(0);
    let bound = model.bind(&mut g, true);
    let ce = model_cross_entropy(&mut g, &model, &bound, &x, &y, Mode::Eval)?;
    let jp = pseudo_rehearsal_loss(&mut g, &model, &bound, (&x, &y), &[], Mode::Eval)?;
    let (ce_v, jp_v) = (g.value(ce).item(), g.value(jp).item());
    out.push(CheckOutcome::new(
        "identity J_p without pseudo tasks equals CE",
        ce_v == jp_v,
        format!("{jp_v} vs {ce_v}"),
    ));

    let copies = 3;
    let batches = vec![(x.clone(), y.clone()); copies];
    let jr = rehearsal_loss(&mut g, &model, &bound, &batches, Mode::Eval)?;
    let jr_v = g.value(jr).item() as f64;
    out.push(CheckOutcome::new(
        "identity J_r over duplicated batches equals (t+1)*CE",
        within(jr_v, copies as f64 * ce_v as f64, 1e-5),
        format!("{jr_v} vs {copies}*{ce_v}"),
    ));

    let fisher: Vec<Tensor> = model
        .params()
        .iter()
        .map(|p| {
            let mut t = normal_tensor(p.shape().to_vec(), 1.0, &mut rng);
            t.data_mut().iter_mut().for_each(|v| *v = v.abs());
            t
        })
        .collect();
    let state = FisherState::new(fisher, model.params().to_vec(), 270.0)?;
    let pen = ewc_penalty(&mut g, &bound, std::slice::from_ref(&state))?;
    let pen_v = g.value(pen).item();
    out.push(CheckOutcome::new("identity ewc_penalty at anchor is zero", pen_v == 0.0, format!("{pen_v}")));

    let mut logits = normal_tensor(vec![16, 12], 5.0, &mut rng);
    logits.data_mut()[..12].iter_mut().for_each(|v| *v *= 40.0);
    let li = g.constant(logits.clone());
    let sm = softmax(&mut g, li)?;
    let worst = g
        .value(sm)
        .data()
        .chunks(12)
        .chain(softmax_rows(&logits).data().chunks(12))
        .map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(CheckOutcome::new(
        "identity softmax rows sum to one",
        worst <= 1e-5,
        format!("max deviation {worst:.2e}"),
    ));

    let k = 10;
    let zeros = g.constant(Tensor::zeros(vec![5, k]));
    let probs = softmax(&mut g, zeros)?;
    let t = g.constant(random_targets(5, k, &mut rng));
    let uni = cross_entropy(&mut g, probs, t)?;
    let uni_v = g.value(uni).item() as f64;
    let uni_ref = cross_entropy_value(g.value(probs), g.value(t))?;
    out.push(CheckOutcome::new(
        "identity uniform-logit CE equals ln K",
        within(uni_v, (k as f64).ln(), 1e-5) && within(uni_ref, (k as f64).ln(), 1e-5),
        format!("{uni_v} vs {}", (k as f64).ln()),
    ));
    Ok(out)
}

fn grad_outcome(name: &str, g: &mut Graph, loss: NodeId, opts: &GradCheckOptions) -> Result<CheckOutcome> {
    let report = finite_difference_check_with(g, loss, opts)?;
    let frac = report.pass_fraction();
    Ok(CheckOutcome::new(
        format!("gradient {name}"),
        frac >= GRAD_PASS_FRACTION && report.compared() > 0,
        format!(
            "{} compared, {} kinks skipped, {:.2}% within {:.0e}",
            report.compared(),
            report.kinks(),
            100.0 * frac,
            opts.tol
        ),
    ))
}

fn batch_shape(n: usize, item: &[usize]) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(item);
    s
}

/// Finite-difference checks of the mini classifier, generator and
/// discriminator graphs and of every objective. `max_per_param` bounds the
/// elements sampled from each parameter tensor.
pub fn gradient_checks(seed: u64, max_per_param: Option<usize>) -> Result<Vec<CheckOutcome>> {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("gradient-checks")]));
    let opts = GradCheckOptions {
        max_per_param,
        ..GradCheckOptions::new(1e-2, GRAD_TOL)
    };
    let profile = Profile::Mini;
    let outputs = 15;
    let classifier = Model::new(build_classifier(profile, outputs), seed);
    let generator = Model::new(build_generator(profile), seed::derive(seed, &[1]));
    let discriminator = Model::new(build_discriminator(profile), seed::derive(seed, &[2]));
    let input = profile.classifier_input();
    let mut out = Vec::new();

    let x = normal_tensor(batch_shape(3, &input), 1.0, &mut rng);
    let y = random_targets(3, outputs, &mut rng);
    let mut g = Graph::new(seed);
    let bound = classifier.bind(&mut g, true);
    let loss = model_cross_entropy(&mut g, &classifier, &bound, &x, &y, Mode::Train)?;
    out.push(grad_outcome("classifier graph (CE)", &mut g, loss, &opts)?);

    // The generator graph crosses ReLU, leaky-ReLU and L1 kinks in both
    // networks, so it gets a small batch and sixteen times the sample budget.
    let z = normal_tensor(vec![2, LATENT_DIM], 1.0, &mut rng);
    let gen_opts = GradCheckOptions {
        max_per_param: max_per_param.map(|k| 16 * k),
        ..opts.clone()
    };
    let mut g = Graph::new(seed);
    let gb = generator.bind(&mut g, true);
    let db = discriminator.bind(&mut g, false);
    let zi = g.constant(z);
    let fake = generator.forward(&mut g, &gb, zi, Mode::Train)?.output;
    let logits = discriminator.forward(&mut g, &db, fake, Mode::Train)?.output;
    let real_dummy = g.constant(Tensor::zeros(vec![2, 1]));
    let (_, g_loss) = gan_losses(&mut g, real_dummy, logits)?;
    out.push(grad_outcome("generator graph (GAN g-loss)", &mut g, g_loss, &gen_opts)?);

    let real = normal_tensor(batch_shape(4, &profile.gan_image()), 0.5, &mut rng);
    let fake = normal_tensor(batch_shape(4, &profile.gan_image()), 0.5, &mut rng);
    let mut g = Graph::new(seed);
    let db = discriminator.bind(&mut g, true);
    let ri = g.constant(real);
    let fi = g.constant(fake);
    let rl = discriminator.forward(&mut g, &db, ri, Mode::Train)?.output;
    let fl = discriminator.forward(&mut g, &db, fi, Mode::Train)?.output;
    let (d_loss, _) = gan_losses(&mut g, rl, fl)?;
    out.push(grad_outcome("discriminator graph (GAN d-loss)", &mut g, d_loss, &opts)?);

    let batches: Vec<(Tensor, Tensor)> = (0..2)
        .map(|_| (normal_tensor(batch_shape(2, &input), 1.0, &mut rng), random_targets(2, outputs, &mut rng)))
        .collect();
    let mut g = Graph::new(seed);
    let bound = classifier.bind(&mut g, true);
    let jr = rehearsal_loss(&mut g, &classifier, &bound, &batches, Mode::Eval)?;
    out.push(grad_outcome("J_r", &mut g, jr, &opts)?);

    let soft = {
        let logits = normal_tensor(vec![2, outputs], 2.0, &mut rng);
        softmax_rows(&logits)
    };
    let pseudo = [(normal_tensor(batch_shape(2, &input), 1.0, &mut rng), soft)];
    let mut g = Graph::new(seed);
    let bound = classifier.bind(&mut g, true);
    let jp = pseudo_rehearsal_loss(&mut g, &classifier, &bound, (&batches[0].0, &batches[0].1), &pseudo, Mode::Eval)?;
    out.push(grad_outcome("J_p", &mut g, jp, &opts)?);

    let mut g = Graph::new(seed);
    let rl = g.param(normal_tensor(vec![6, 1], 2.0, &mut rng));
    let fl = g.param(normal_tensor(vec![6, 1], 2.0, &mut rng));
    let (d_loss, g_loss) = gan_losses(&mut g, rl, fl)?;
    let both = g.add(d_loss, g_loss)?;
    out.push(grad_outcome("GAN losses", &mut g, both, &opts)?);

    // A small parameter set keeps the penalty value, and with it the f32
    // rounding of the difference quotient, comparable to its gradients.
    let mut g = Graph::new(seed);
    let w = normal_tensor(vec![6, 4], 0.5, &mut rng);
    let bias = normal_tensor(vec![1, 4], 0.5, &mut rng);
    let params: Vec<NodeId> = [w.clone(), bias.clone()].into_iter().map(|t| g.param(t)).collect();
    let bound = crate::nn::Bound { params: params.clone() };
    let shifted = |t: &Tensor, rng: &mut ChaCha8Rng| {
        let mut a = t.clone();
        let noise = normal_tensor(t.shape().to_vec(), 0.3, rng);
        a.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
        a
    };
    let importance = |t: &Tensor, rng: &mut ChaCha8Rng| {
        let mut f = normal_tensor(t.shape().to_vec(), 1.0, rng);
        f.data_mut().iter_mut().for_each(|v| *v = v.abs());
        f
    };
    let states: Vec<FisherState> = (0..2)
        .map(|_| {
            let anchor = vec![shifted(&w, &mut rng), shifted(&bias, &mut rng)];
            let fisher = vec![importance(&w, &mut rng), importance(&bias, &mut rng)];
            FisherState::new(fisher, anchor, 2.7)
        })
        .collect::<Result<_>>()?;
    let xi = g.constant(normal_tensor(vec![3, 6], 1.0, &mut rng));
    let logits = g.matmul(xi, params[0])?;
    let logits = g.add(logits, params[1])?;
    let probs = softmax(&mut g, logits)?;
    let t = g.constant(random_targets(3, 4, &mut rng));
    let ce = cross_entropy(&mut g, probs, t)?;
    let pen = ewc_penalty(&mut g, &bound, &states)?;
    let total = g.add(ce, pen)?;
    out.push(grad_outcome("CE + EWC penalty", &mut g, total, &opts)?);
    Ok(out)
}

/// Everything the `check` command runs.
pub fn oracle_suite(seed: u64, oracle_cases: usize, max_per_param: Option<usize>) -> Result<Vec<CheckOutcome>> {
    let mut out = gradient_checks(seed, max_per_param)?;
    out.extend(loss_identity_checks(seed)?);
    out.extend(layer_oracle_checks(oracle_cases, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_conv_same_geometry() {
        let x = Tensor::full(vec![1, 1, 4, 4], 1.0);
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let y = naive_conv2d(&x, &w, &[0.0], 1, Padding::Same);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[5], 9.0);
    }

    #[test]
    fn oracles_agree_on_a_few_cases() {
        for outcome in layer_oracle_checks(5, 3).unwrap() {
            assert!(outcome.passed, "{outcome}");
        }
    }

    #[test]
    fn identities_hold() {
        for outcome in loss_identity_checks(4).unwrap() {
            assert!(outcome.passed, "{outcome}");
        }
    }
}

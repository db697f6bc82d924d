use crate::autodiff::{Graph, NodeId, Op, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics for a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Blends in batch statistics: `running = m·running + (1−m)·batch`, with
    /// the unbiased batch variance.
    pub fn update(&mut self, x: &Tensor) {
        let (mean, var, count) = channel_moments(x);
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = BN_MOMENTUM * self.mean[c] + (1.0 - BN_MOMENTUM) * mean[c] as f32;
            self.var[c] = BN_MOMENTUM * self.var[c] + (1.0 - BN_MOMENTUM) * (var[c] * unbias) as f32;
        }
    }
}

/// `(channels, spatial)` for `[n,c]` or `[n,c,h,w]` inputs.
fn layout(x: &Tensor) -> Option<(usize, usize, usize)> {
    match *x.shape() {
        [n, c] => Some((n, c, 1)),
        [n, c, h, w] => Some((n, c, h * w)),
        _ => None,
    }
}

/// Per-channel mean and biased variance over batch and spatial axes.
pub fn channel_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>, usize) {
    let (n, c, p) = layout(x).expect("batch norm input must be rank 2 or 4");
    let d = x.data();
    let count = n * p;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let vals = (0..n).flat_map(|i| d[(i * c + ch) * p..(i * c + ch + 1) * p].iter());
        mean[ch] = vals.clone().map(|&v| v as f64).sum::<f64>() / count as f64;
        var[ch] = vals.map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>() / count as f64;
    }
    (mean, var, count)
}

struct BatchNorm {
    mode: Mode,
    running: RunningStats,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

impl Op for BatchNorm {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
        let (n, c, p) = layout(x)
            .ok_or_else(|| Error::shape("batchnorm", format!("expected rank 2 or 4, got {:?}", x.shape())))?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("batchnorm", format!("{c} channels, gamma {:?}", gamma.shape())));
        }
        let mean: Vec<f32> = match self.mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::BatchTooSmall { op: "batchnorm", n });
                }
                let (mean, var, _) = channel_moments(x);
                self.inv_std = var.iter().map(|v| 1.0 / (*v as f32 + BN_EPS).sqrt()).collect();
                mean.into_iter().map(|m| m as f32).collect()
            }
            Mode::Eval => {
                self.inv_std = self.running.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                self.running.mean.clone()
            }
        };
        self.xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        let d = x.data();
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * p..(i * c + ch + 1) * p;
                for j in r {
                    let xh = (d[j] - mean[ch]) * self.inv_std[ch];
                    self.xhat[j] = xh;
                    out[j] = gamma.data()[ch] * xh + beta.data()[ch];
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (n, c, p) = layout(x).unwrap();
        let m = (n * p) as f64;
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for i in 0..n {
            for ch in 0..c {
                for j in (i * c + ch) * p..(i * c + ch + 1) * p {
                    sum_g[ch] += grad[j] as f64;
                    sum_gx[ch] += grad[j] as f64 * self.xhat[j] as f64;
                }
            }
        }
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; x.numel()];
            for i in 0..n {
                for ch in 0..c {
                    let scale = gamma.data()[ch] * self.inv_std[ch];
                    for j in (i * c + ch) * p..(i * c + ch + 1) * p {
                        gx[j] = match self.mode {
                            Mode::Eval => scale * grad[j],
                            Mode::Train => {
                                let centered = grad[j] as f64 - sum_g[ch] / m - self.xhat[j] as f64 * sum_gx[ch] / m;
                                scale * centered as f32
                            }
                        };
                    }
                }
            }
            gx
        });
        let gg = needs[1].then(|| sum_gx.iter().map(|&v| v as f32).collect());
        let gb = needs[2].then(|| sum_g.iter().map(|&v| v as f32).collect());
        vec![gx, gg, gb]
    }
}

/// Batch normalisation over `[n,c]` or `[n,c,h,w]`. Train mode normalises
/// with batch statistics; eval mode with `running`. Running statistics are
/// not modified here; see [`RunningStats::update`].
pub fn batchnorm(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    mode: Mode,
    running: &RunningStats,
) -> Result<NodeId> {
    g.apply(
        BatchNorm {
            mode,
            running: running.clone(),
            xhat: Vec::new(),
            inv_std: Vec::new(),
        },
        &[x, gamma, beta],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-3.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn train_mode_standardises_channels() {
        let mut g = Graph::new(0);
        let x = g.constant(random(vec![4, 3, 5, 5], 1));
        let gamma = g.constant(Tensor::full(vec![3], 1.0));
        let beta = g.constant(Tensor::zeros(vec![3]));
        let y = batchnorm(&mut g, x, gamma, beta, Mode::Train, &RunningStats::new(3)).unwrap();
        let (mean, var, _) = channel_moments(g.value(y));
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-4);
            assert!((var[c] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut g = Graph::new(0);
        let x = g.constant(random(vec![3, 2, 4, 4], 2));
        let gamma = g.constant(Tensor::zeros(vec![2]));
        let beta = g.constant(Tensor::full(vec![2], 5.0));
        let y = batchnorm(&mut g, x, gamma, beta, Mode::Train, &RunningStats::new(2)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn train_needs_two_items() {
        let mut g = Graph::new(0);
        let x = g.constant(random(vec![1, 2, 3, 3], 3));
        let gamma = g.constant(Tensor::full(vec![2], 1.0));
        let beta = g.constant(Tensor::zeros(vec![2]));
        let err = batchnorm(&mut g, x, gamma, beta, Mode::Train, &RunningStats::new(2));
        assert!(matches!(err, Err(Error::BatchTooSmall { n: 1, .. })));
        assert!(batchnorm(&mut g, x, gamma, beta, Mode::Eval, &RunningStats::new(2)).is_ok());
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut stats = RunningStats::new(1);
        let x = Tensor::new(vec![2, 1], vec![4.0, 6.0]).unwrap();
        stats.update(&x);
        assert!((stats.mean[0] - 0.5).abs() < 1e-6);
        // unbiased batch variance of {4, 6} is 2
        assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-6);
    }
}

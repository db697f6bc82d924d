use rand_distr::{Distribution, Normal};

use super::activation::softmax;
use super::batchnorm::{batchnorm, Mode, RunningStats};
use super::conv::{conv2d, conv_transpose2d};
use super::builders::MBD_KERNEL_STD;
use super::minibatch::minibatch_discrimination;
use super::pool::maxpool2d;
use super::spec::{Init, LayerSpec, ModelSpec};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::seed;

/// A [`ModelSpec`] with concrete parameters and batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Tensor>,
    running: Vec<RunningStats>,
}

/// Graph leaves holding a model's parameters for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    pub params: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub output: NodeId,
    bn_inputs: Vec<NodeId>,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let shapes = spec.shapes().expect("validated spec");
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut running = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::BatchNorm) {
                running.push(RunningStats::new(shapes[i][0]));
            }
            for (name, shape) in layer.param_shapes(&shapes[i]) {
                let n: usize = shape.iter().product();
                let data = match name {
                    "bias" | "beta" => vec![0.0; n],
                    "gamma" => vec![1.0; n],
                    _ => {
                        let std = match (spec.init, layer) {
                            (_, LayerSpec::MinibatchDisc { .. }) => MBD_KERNEL_STD,
                            (Init::He, _) => {
                                let fan_in: usize = match layer {
                                    LayerSpec::Dense { .. } => shape[0],
                                    _ => shape[1..].iter().product(),
                                };
                                (2.0 / fan_in as f32).sqrt()
                            }
                            (Init::Normal(std), _) => std,
                        };
                        let dist = Normal::new(0.0, std).unwrap();
                        (0..n).map(|_| dist.sample(&mut rng)).collect()
                    }
                };
                names.push(format!("{}.{}.{}", i, layer.kind(), name));
                params.push(Tensor::new(shape, data).unwrap());
            }
        }
        Self {
            spec,
            names,
            params,
            running,
        }
    }

    /// Reassembles a model from stored tensors, checking them against `spec`.
    pub fn from_parts(spec: ModelSpec, params: Vec<Tensor>, running: Vec<RunningStats>) -> Result<Self> {
        let template = Model::new(spec, 0);
        if params.len() != template.params.len() || running.len() != template.running.len() {
            return Err(Error::CheckpointInvalid(format!(
                "{} holds {} tensors and {} norm layers, got {} and {}",
                template.spec.name,
                template.params.len(),
                template.running.len(),
                params.len(),
                running.len()
            )));
        }
        for (want, got) in template.params.iter().zip(&params) {
            if want.shape() != got.shape() {
                return Err(Error::CheckpointInvalid(format!(
                    "tensor shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        for (want, got) in template.running.iter().zip(&running) {
            if want.mean.len() != got.mean.len() || want.var.len() != got.var.len() {
                return Err(Error::CheckpointInvalid("running statistics width".into()));
            }
        }
        Ok(Self {
            names: template.names,
            spec: template.spec,
            params,
            running,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound {
            params: self
                .params
                .iter()
                .map(|p| g.leaf(p.clone().with_requires_grad(trainable)))
                .collect(),
        }
    }

    /// Builds the forward pass for `x` of shape `[n, ..input_shape]`.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: NodeId, mode: Mode) -> Result<Forward> {
        let xs = g.value(x).shape().to_vec();
        if xs[1..] != self.spec.input_shape[..] {
            return Err(Error::shape(
                "model_forward",
                format!("{} expects [n, {:?}], got {xs:?}", self.spec.name, self.spec.input_shape),
            ));
        }
        let n = xs[0];
        let mut h = x;
        let mut p = bound.params.iter().copied();
        let mut bn_inputs = Vec::new();
        let mut bn_index = 0;
        for layer in &self.spec.layers {
            h = match layer {
                LayerSpec::Conv { stride, padding, .. } => {
                    let (w, b) = (p.next().unwrap(), p.next().unwrap());
                    conv2d(g, h, w, b, *stride, *padding)?
                }
                LayerSpec::ConvTranspose { stride, padding, .. } => {
                    let (w, b) = (p.next().unwrap(), p.next().unwrap());
                    conv_transpose2d(g, h, w, b, *stride, *padding)?
                }
                LayerSpec::MaxPool {
                    window,
                    stride,
                    padding,
                } => maxpool2d(g, h, *window, *stride, *padding)?,
                LayerSpec::Dense { units } => {
                    let (w, b) = (p.next().unwrap(), p.next().unwrap());
                    let y = g.matmul(h, w)?;
                    let b = g.reshape(b, &[1, *units])?;
                    g.add(y, b)?
                }
                LayerSpec::Relu => g.relu(h)?,
                LayerSpec::LeakyRelu { slope } => g.leaky_relu(h, *slope)?,
                LayerSpec::Tanh => g.tanh(h)?,
                LayerSpec::Softmax => softmax(g, h)?,
                LayerSpec::BatchNorm => {
                    let (gamma, beta) = (p.next().unwrap(), p.next().unwrap());
                    bn_inputs.push(h);
                    let y = batchnorm(g, h, gamma, beta, mode, &self.running[bn_index])?;
                    bn_index += 1;
                    y
                }
                LayerSpec::MinibatchDisc { .. } => {
                    let kernel = p.next().unwrap();
                    minibatch_discrimination(g, h, kernel)?
                }
                LayerSpec::Flatten => {
                    let per: usize = g.value(h).numel() / n;
                    g.reshape(h, &[n, per])?
                }
                LayerSpec::Reshape { shape } => {
                    let mut full = vec![n];
                    full.extend_from_slice(shape);
                    g.reshape(h, &full)?
                }
            };
        }
        Ok(Forward { output: h, bn_inputs })
    }

    /// Folds the batch statistics seen by a train-mode pass into the running
    /// statistics.
    pub fn commit_running_stats(&mut self, g: &Graph, fwd: &Forward) {
        for (stats, &node) in self.running.iter_mut().zip(&fwd.bn_inputs) {
            stats.update(g.value(node));
        }
    }

    /// Eval-mode forward without gradients, evaluated in chunks of `chunk`.
    pub fn predict(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut outputs = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let mut g = Graph::new(0);
            let bound = self.bind(&mut g, false);
            let xi = g.constant(x.slice_rows(start, end));
            let out = self.forward(&mut g, &bound, xi, Mode::Eval)?.output;
            outputs.push(g.value(out).clone());
            start = end;
        }
        let refs: Vec<&Tensor> = outputs.iter().collect();
        Tensor::concat_rows(&refs)
    }

    /// Copies parameters and running statistics from `other` (same spec).
    pub fn load_state_from(&mut self, other: &Model) {
        assert_eq!(self.spec, other.spec);
        self.params = other.params.clone();
        self.running = other.running.clone();
    }
}

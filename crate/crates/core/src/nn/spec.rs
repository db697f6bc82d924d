use std::fmt;

use super::conv::{transposed_extent, window_geometry, Padding};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    ConvTranspose {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    Dense {
        units: usize,
    },
    Relu,
    LeakyRelu {
        slope: f32,
    },
    Tanh,
    Softmax,
    BatchNorm,
    /// Appends `kernels` closeness features computed from `dims`-wide rows.
    MinibatchDisc {
        kernels: usize,
        dims: usize,
    },
    Flatten,
    /// Per-item target shape.
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Softmax => "softmax",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::MinibatchDisc { .. } => "minibatch_disc",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{} {name} must be positive", self.kind())))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                ..
            }
            | LayerSpec::ConvTranspose {
                filters,
                kernel,
                stride,
                ..
            } => {
                positive("filters", *filters)?;
                positive("kernel", *kernel)?;
                positive("stride", *stride)
            }
            LayerSpec::MaxPool { window, stride, .. } => {
                positive("window", *window)?;
                positive("stride", *stride)
            }
            LayerSpec::Dense { units } => positive("units", *units),
            LayerSpec::MinibatchDisc { kernels, dims } => {
                positive("kernels", *kernels)?;
                positive("dims", *dims)
            }
            LayerSpec::LeakyRelu { slope } if !(0.0..1.0).contains(slope) => {
                Err(Error::Config(format!("leaky_relu slope {slope} outside [0,1)")))
            }
            _ => Ok(()),
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::shape("model_spec", format!("{} cannot follow shape {input:?}", self.kind()));
        match self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let &[_, h, w] = input else { return Err(bad()) };
                let (oh, _) = window_geometry(h, *kernel, *stride, *padding).ok_or_else(bad)?;
                let (ow, _) = window_geometry(w, *kernel, *stride, *padding).ok_or_else(bad)?;
                Ok(vec![*filters, oh, ow])
            }
            LayerSpec::ConvTranspose {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let &[_, h, w] = input else { return Err(bad()) };
                Ok(vec![
                    *filters,
                    transposed_extent(h, *kernel, *stride, *padding),
                    transposed_extent(w, *kernel, *stride, *padding),
                ])
            }
            LayerSpec::MaxPool {
                window,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else { return Err(bad()) };
                let (oh, _) = window_geometry(h, *window, *stride, *padding).ok_or_else(bad)?;
                let (ow, _) = window_geometry(w, *window, *stride, *padding).ok_or_else(bad)?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::Dense { units } => match input {
                [_] => Ok(vec![*units]),
                _ => Err(bad()),
            },
            LayerSpec::Relu | LayerSpec::LeakyRelu { .. } | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => Err(bad()),
            },
            LayerSpec::BatchNorm => match input.len() {
                1 | 3 => Ok(input.to_vec()),
                _ => Err(bad()),
            },
            LayerSpec::MinibatchDisc { kernels, .. } => match input {
                [a] => Ok(vec![a + kernels]),
                _ => Err(bad()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() == input.iter().product::<usize>() {
                    Ok(shape.clone())
                } else {
                    Err(bad())
                }
            }
        }
    }

    /// Shapes of this layer's trainable tensors given its per-item input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            LayerSpec::Conv { filters, kernel, .. } => vec![
                ("weight", vec![*filters, input[0], *kernel, *kernel]),
                ("bias", vec![*filters]),
            ],
            LayerSpec::ConvTranspose { filters, kernel, .. } => vec![
                ("weight", vec![input[0], *filters, *kernel, *kernel]),
                ("bias", vec![*filters]),
            ],
            LayerSpec::Dense { units } => vec![("weight", vec![input[0], *units]), ("bias", vec![*units])],
            LayerSpec::BatchNorm => vec![("gamma", vec![input[0]]), ("beta", vec![input[0]])],
            LayerSpec::MinibatchDisc { kernels, dims } => vec![("kernel", vec![input[0], *kernels, *dims])],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean normal with std `sqrt(2 / fan_in)`.
    He,
    /// Zero-mean normal with a fixed std.
    Normal(f32),
}

/// Ordered layers plus the per-item input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub init: Init,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<LayerSpec>, init: Init) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            input_shape,
            layers,
            init,
        };
        for layer in &spec.layers {
            layer.validate()?;
        }
        spec.shapes()?;
        Ok(spec)
    }

    /// Per-item shapes: the input followed by each layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes().expect("validated at construction").pop().unwrap()
    }

    /// `(layer index, tensor name, shape)` for every trainable tensor.
    pub fn param_shapes(&self) -> Vec<(usize, &'static str, Vec<usize>)> {
        let shapes = self.shapes().expect("validated at construction");
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer
                    .param_shapes(&shapes[i])
                    .into_iter()
                    .map(move |(name, s)| (i, name, s))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, _, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Kinds of the weight-bearing and pooling layers, in order.
    pub fn weight_and_pool_layers(&self) -> Vec<&'static str> {
        self.layers
            .iter()
            .filter(|l| {
                matches!(
                    l,
                    LayerSpec::Conv { .. }
                        | LayerSpec::ConvTranspose { .. }
                        | LayerSpec::MaxPool { .. }
                        | LayerSpec::Dense { .. }
                )
            })
            .map(|l| l.kind())
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shapes = self.shapes().map_err(|_| fmt::Error)?;
        writeln!(f, "{} (input {:?}, {} parameters)", self.name, self.input_shape, self.param_count())?;
        for (layer, shape) in self.layers.iter().zip(&shapes[1..]) {
            writeln!(f, "  {:<16} -> {:?}", layer.kind(), shape)?;
        }
        Ok(())
    }
}

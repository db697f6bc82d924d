use crate::autodiff::{Graph, NodeId, Op, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax over `[n, k]`, evaluated after subtracting each row's max.
struct Softmax;

impl Op for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if x.rank() != 2 {
            return Err(Error::shape("softmax", format!("expected [n,k], got {:?}", x.shape())));
        }
        let k = x.shape()[1];
        let mut out = Vec::with_capacity(x.numel());
        for row in x.data().chunks(k) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let total: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|e| (e / total) as f32));
        }
        Tensor::new(x.shape().to_vec(), out)
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let k = output.shape()[1];
        let mut gx = Vec::with_capacity(grad.len());
        for (y, g) in output.data().chunks(k).zip(grad.chunks(k)) {
            let dot: f64 = y.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum();
            gx.extend(y.iter().zip(g).map(|(&a, &b)| a * (b - dot as f32)));
        }
        vec![Some(gx)]
    }
}

pub fn softmax(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    g.apply(Softmax, &[x])
}

/// Row-wise softmax of a plain tensor, outside any graph.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    Softmax.forward(&[logits]).expect("softmax_rows expects a rank-2 tensor")
}

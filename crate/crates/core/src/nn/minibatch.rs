//! Minibatch discrimination: each sample gets features measuring how close
//! it is to the rest of the batch, which lets a discriminator detect a
//! generator that has collapsed onto a few outputs.

use crate::autodiff::{Graph, NodeId, Op, Tensor};
use crate::error::{Error, Result};

/// `M [n,B,C]` -> `o [n,B]` with `o[i,b] = Σ_{j≠i} exp(−‖M[i,b] − M[j,b]‖₁)`.
struct PairwiseSimilarity;

impl Op for PairwiseSimilarity {
    fn name(&self) -> &'static str {
        "minibatch_similarity"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let m = inputs[0];
        let &[n, kernels, dims] = m.shape() else {
            return Err(Error::shape("minibatch_similarity", format!("expected [n,B,C], got {:?}", m.shape())));
        };
        if n < 2 {
            return Err(Error::BatchTooSmall {
                op: "minibatch_discrimination",
                n,
            });
        }
        let d = m.data();
        let mut out = vec![0.0f32; n * kernels];
        for i in 0..n {
            for j in i + 1..n {
                for b in 0..kernels {
                    let mi = &d[(i * kernels + b) * dims..][..dims];
                    let mj = &d[(j * kernels + b) * dims..][..dims];
                    let l1: f32 = mi.iter().zip(mj).map(|(p, q)| (p - q).abs()).sum();
                    let e = (-l1).exp();
                    out[i * kernels + b] += e;
                    out[j * kernels + b] += e;
                }
            }
        }
        Tensor::new(vec![n, kernels], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let m = inputs[0];
        let (n, kernels, dims) = (m.shape()[0], m.shape()[1], m.shape()[2]);
        let d = m.data();
        let mut gm = vec![0.0f32; m.numel()];
        for i in 0..n {
            for j in i + 1..n {
                for b in 0..kernels {
                    let oi = (i * kernels + b) * dims;
                    let oj = (j * kernels + b) * dims;
                    let l1: f32 = (0..dims).map(|c| (d[oi + c] - d[oj + c]).abs()).sum();
                    let coef = -(grad[i * kernels + b] + grad[j * kernels + b]) * (-l1).exp();
                    for c in 0..dims {
                        let diff = d[oi + c] - d[oj + c];
                        let s = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        gm[oi + c] += coef * s;
                        gm[oj + c] -= coef * s;
                    }
                }
            }
        }
        vec![Some(gm)]
    }

    fn branch_signature(&self, inputs: &[&Tensor], _output: &Tensor) -> u64 {
        let m = inputs[0];
        let (n, rest) = (m.shape()[0], m.numel() / m.shape()[0]);
        let d = m.data();
        let signs = (0..n).flat_map(|i| {
            (i + 1..n).flat_map(move |j| (0..rest).map(move |k| d[i * rest + k] > d[j * rest + k]))
        });
        crate::autodiff::mask_hash(signs)
    }
}

/// `features [n,a]`, `kernel [a,B,C]` -> `[n, a+B]`: the input features with
/// `B` closeness statistics appended.
pub fn minibatch_discrimination(g: &mut Graph, features: NodeId, kernel: NodeId) -> Result<NodeId> {
    let fs = g.value(features).shape().to_vec();
    let ks = g.value(kernel).shape().to_vec();
    let (&[n, a], &[ka, b, c]) = (fs.as_slice(), ks.as_slice()) else {
        return Err(Error::shape("minibatch_discrimination", format!("features {fs:?}, kernel {ks:?}")));
    };
    if ka != a {
        return Err(Error::shape("minibatch_discrimination", format!("features {fs:?}, kernel {ks:?}")));
    }
    if n < 2 {
        return Err(Error::BatchTooSmall {
            op: "minibatch_discrimination",
            n,
        });
    }
    let t = g.reshape(kernel, &[a, b * c])?;
    let proj = g.matmul(features, t)?;
    let m = g.reshape(proj, &[n, b, c])?;
    let o = g.apply(PairwiseSimilarity, &[m])?;
    g.concat_cols(features, o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_score_one() {
        let mut g = Graph::new(0);
        let f = g.constant(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]).unwrap());
        let t = g.constant(Tensor::new(vec![3, 2, 2], (0..12).map(|v| v as f32 * 0.1).collect()).unwrap());
        let y = minibatch_discrimination(&mut g, f, t).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[2, 5]);
        for row in out.data().chunks(5) {
            assert_eq!(&row[..3], &[0.5, -1.0, 2.0]);
            assert!(row[3..].iter().all(|&v| (v - 1.0).abs() < 1e-7));
        }
    }

    #[test]
    fn single_item_batch_is_rejected() {
        let mut g = Graph::new(0);
        let f = g.constant(Tensor::zeros(vec![1, 3]));
        let t = g.constant(Tensor::zeros(vec![3, 2, 2]));
        assert!(matches!(
            minibatch_discrimination(&mut g, f, t),
            Err(Error::BatchTooSmall { n: 1, .. })
        ));
    }
}

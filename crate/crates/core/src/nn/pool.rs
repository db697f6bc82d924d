use super::conv::{window_geometry, Padding};
use crate::autodiff::{Graph, NodeId, Op, Tensor};
use crate::error::{Error, Result};

struct MaxPool2d {
    window: usize,
    stride: usize,
    padding: Padding,
    /// Flat input index of each output's winner.
    argmax: Vec<usize>,
}

impl Op for MaxPool2d {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("maxpool2d", format!("expected [n,c,h,w], got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let geo = |extent| window_geometry(extent, self.window, self.stride, self.padding);
        let ((oh, ph), (ow, pw)) = geo(h).zip(geo(w)).ok_or_else(|| {
            Error::shape("maxpool2d", format!("window {} does not fit {h}x{w}", self.window))
        })?;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        self.argmax.clear();
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..self.window {
                        let iy = (oy * self.stride + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.window {
                            let ix = (ox * self.stride + kx) as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best_idx == usize::MAX || data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    self.argmax.push(best_idx);
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let mut gx = vec![0.0; inputs[0].numel()];
        for (&idx, &g) in self.argmax.iter().zip(grad) {
            gx[idx] += g;
        }
        vec![Some(gx)]
    }

    fn branch_signature(&self, _inputs: &[&Tensor], _output: &Tensor) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &i in &self.argmax {
            h ^= i as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        h
    }
}

/// Per-window maximum over `[n,c,h,w]`. Gradients go to the first maximal
/// element of each window in row-major scan order.
pub fn maxpool2d(g: &mut Graph, x: NodeId, window: usize, stride: usize, padding: Padding) -> Result<NodeId> {
    g.apply(
        MaxPool2d {
            window,
            stride,
            padding,
            argmax: Vec::new(),
        },
        &[x],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_gives_constant_output() {
        let mut g = Graph::new(0);
        let x = g.constant(Tensor::full(vec![2, 3, 6, 6], 1.5));
        let y = maxpool2d(&mut g, x, 3, 2, Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn two_by_two_window() {
        let mut g = Graph::new(0);
        let x = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = maxpool2d(&mut g, x, 2, 2, Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn same_padding_halves_24_and_12() {
        let mut g = Graph::new(0);
        let x = g.constant(Tensor::zeros(vec![1, 1, 24, 24]));
        let y = maxpool2d(&mut g, x, 3, 2, Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 12, 12]);
        let z = maxpool2d(&mut g, y, 3, 2, Padding::Same).unwrap();
        assert_eq!(g.value(z).shape(), &[1, 1, 6, 6]);
    }

    #[test]
    fn ties_route_to_first_index() {
        let mut g = Graph::new(0);
        let x = g.param(Tensor::new(vec![1, 1, 2, 2], vec![5.0, 5.0, 5.0, 1.0]).unwrap());
        let y = maxpool2d(&mut g, x, 2, 2, Padding::Valid).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&x], vec![1.0, 0.0, 0.0, 0.0]);
    }
}

//! 2-D convolution and its adjoint, lowered to GEMM through im2col.

use crate::autodiff::kernels::gemm;
use crate::autodiff::{Graph, NodeId, Op, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn name(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

/// Output extent and leading pad for one spatial axis of a strided window.
/// `Same` pads so the output is `ceil(extent / stride)`, splitting odd pad
/// totals with the extra row at the end.
pub fn window_geometry(extent: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    match padding {
        Padding::Valid => (kernel <= extent).then(|| ((extent - kernel) / stride + 1, 0)),
        Padding::Same => {
            let out = extent.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(extent);
            Some((out, total / 2))
        }
    }
}

/// Spatial layout shared by a convolution and its transpose: the "image" side
/// `[c, h, w]` and the "patch" side `[f, oh, ow]`.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_h: usize,
    pad_w: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Option<Self> {
        let (oh, pad_h) = window_geometry(h, k, stride, padding)?;
        let (ow, pad_w) = window_geometry(w, k, stride, padding)?;
        Some(Self {
            c,
            h,
            w,
            k,
            stride,
            oh,
            ow,
            pad_h,
            pad_w,
        })
    }

    fn patch_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Writes image `img` ([c,h,w]) into columns `col0..col0+oh*ow` of a
    /// `[c*k*k, ld]` matrix.
    fn im2col(&self, img: &[f32], cols: &mut [f32], ld: usize, col0: usize) {
        let ohw = self.out_pixels();
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * ld + col0..row * ld + col0 + ohw];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &img[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                            *v = if ix >= 0 && ix < self.w as isize { src[ix as usize] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back into image `img`; adjoint of `im2col`.
    fn col2im(&self, cols: &[f32], ld: usize, col0: usize, img: &mut [f32]) {
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * ld + col0..];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad_h as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut img[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad_w as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[n, f, p]` <-> `[f, n, p]`.
fn swap_leading(data: &[f32], a: usize, b: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for i in 0..a {
        for j in 0..b {
            out[(j * a + i) * p..(j * a + i + 1) * p].copy_from_slice(&data[(i * b + j) * p..(i * b + j + 1) * p]);
        }
    }
    out
}

fn add_channel_bias(out: &mut [f32], bias: &[f32], n: usize, pixels: usize) {
    let f = bias.len();
    for i in 0..n {
        for (j, b) in bias.iter().enumerate() {
            out[(i * f + j) * pixels..(i * f + j + 1) * pixels]
                .iter_mut()
                .for_each(|v| *v += b);
        }
    }
}

fn channel_sums(grad: &[f32], n: usize, f: usize, pixels: usize) -> Vec<f32> {
    let mut sums = vec![0.0f64; f];
    for i in 0..n {
        for (j, s) in sums.iter_mut().enumerate() {
            *s += grad[(i * f + j) * pixels..(i * f + j + 1) * pixels]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
    }
    sums.into_iter().map(|s| s as f32).collect()
}

struct Conv2d {
    stride: usize,
    padding: Padding,
    geom: Option<ConvGeom>,
    cols: Vec<f32>,
}

impl Op for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || b.shape() != [ws[0]] {
            return Err(Error::shape("conv2d", format!("input {xs:?}, weights {ws:?}, bias {:?}", b.shape())));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let f = ws[0];
        let geom = ConvGeom::new(c, h, wd, ws[2], self.stride, self.padding)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {} does not fit {h}x{wd}", ws[2])))?;
        let (rows, ohw) = (geom.patch_rows(), geom.out_pixels());
        let ld = n * ohw;
        self.cols.resize(rows * ld, 0.0);
        for i in 0..n {
            geom.im2col(&x.data()[i * c * h * wd..(i + 1) * c * h * wd], &mut self.cols, ld, i * ohw);
        }
        let mut fmaj = vec![0.0; f * ld];
        gemm(f, rows, ld, w.data(), false, &self.cols, false, 0.0, &mut fmaj);
        let mut out = swap_leading(&fmaj, f, n, ohw);
        add_channel_bias(&mut out, b.data(), n, ohw);
        self.geom = Some(geom);
        Tensor::new(vec![n, f, geom.oh, geom.ow], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let geom = self.geom.expect("forward before backward");
        let (n, f) = (x.shape()[0], w.shape()[0]);
        let (rows, ohw) = (geom.patch_rows(), geom.out_pixels());
        let ld = n * ohw;
        let gf = swap_leading(grad, n, f, ohw);
        let gx = needs[0].then(|| {
            let mut dcols = vec![0.0; rows * ld];
            gemm(rows, f, ld, w.data(), true, &gf, false, 0.0, &mut dcols);
            let per = geom.c * geom.h * geom.w;
            let mut gx = vec![0.0; x.numel()];
            for i in 0..n {
                geom.col2im(&dcols, ld, i * ohw, &mut gx[i * per..(i + 1) * per]);
            }
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![0.0; w.numel()];
            gemm(f, ld, rows, &gf, false, &self.cols, true, 0.0, &mut gw);
            gw
        });
        let gb = needs[2].then(|| channel_sums(grad, n, f, ohw));
        vec![gx, gw, gb]
    }
}

/// Adjoint of [`Conv2d`] with respect to its input. Weights keep the conv
/// layout `[c_in, c_out, k, k]`, where `c_in` is this op's input channel count.
struct ConvTranspose2d {
    stride: usize,
    padding: Padding,
    geom: Option<ConvGeom>,
    /// Input permuted to `[c_in, n*h*w]`.
    yp: Vec<f32>,
}

/// Output extent of a transposed convolution along one axis.
pub fn transposed_extent(extent: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => extent * stride,
        Padding::Valid => (extent - 1) * stride + kernel,
    }
}

impl Op for ConvTranspose2d {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (y, w, b) = (inputs[0], inputs[1], inputs[2]);
        let (ys, ws) = (y.shape(), w.shape());
        if ys.len() != 4 || ws.len() != 4 || ws[0] != ys[1] || ws[2] != ws[3] || b.shape() != [ws[1]] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input {ys:?}, weights {ws:?}, bias {:?}", b.shape()),
            ));
        }
        let (n, cin, h, wd) = (ys[0], ys[1], ys[2], ys[3]);
        let (cout, k) = (ws[1], ws[2]);
        let oh = transposed_extent(h, k, self.stride, self.padding);
        let ow = transposed_extent(wd, k, self.stride, self.padding);
        let geom = ConvGeom::new(cout, oh, ow, k, self.stride, self.padding)
            .filter(|g| g.oh == h && g.ow == wd)
            .ok_or_else(|| Error::shape("conv_transpose2d", format!("{h}x{wd} does not invert to {oh}x{ow}")))?;
        let hw = h * wd;
        let ld = n * hw;
        self.yp = swap_leading(y.data(), n, cin, hw);
        let rows = geom.patch_rows();
        let mut cols = vec![0.0; rows * ld];
        gemm(rows, cin, ld, w.data(), true, &self.yp, false, 0.0, &mut cols);
        let per = cout * oh * ow;
        let mut out = vec![0.0; n * per];
        for i in 0..n {
            geom.col2im(&cols, ld, i * hw, &mut out[i * per..(i + 1) * per]);
        }
        add_channel_bias(&mut out, b.data(), n, oh * ow);
        self.geom = Some(geom);
        Tensor::new(vec![n, cout, oh, ow], out)
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (y, w) = (inputs[0], inputs[1]);
        let geom = self.geom.expect("forward before backward");
        let (n, cin) = (y.shape()[0], y.shape()[1]);
        let hw = geom.out_pixels();
        let ld = n * hw;
        let rows = geom.patch_rows();
        let per = output.numel() / n;
        let mut dcols = vec![0.0; rows * ld];
        for i in 0..n {
            geom.im2col(&grad[i * per..(i + 1) * per], &mut dcols, ld, i * hw);
        }
        let gy = needs[0].then(|| {
            let mut gp = vec![0.0; cin * ld];
            gemm(cin, rows, ld, w.data(), false, &dcols, false, 0.0, &mut gp);
            swap_leading(&gp, cin, n, hw)
        });
        let gw = needs[1].then(|| {
            let mut gw = vec![0.0; w.numel()];
            gemm(cin, ld, rows, &self.yp, false, &dcols, true, 0.0, &mut gw);
            gw
        });
        let gb = needs[2].then(|| channel_sums(grad, n, geom.c, geom.h * geom.w));
        vec![gy, gw, gb]
    }
}

/// `x [n,c,h,w]`, `weights [f,c,k,k]`, `bias [f]` -> `[n,f,oh,ow]`.
pub fn conv2d(g: &mut Graph, x: NodeId, weights: NodeId, bias: NodeId, stride: usize, padding: Padding) -> Result<NodeId> {
    g.apply(
        Conv2d {
            stride,
            padding,
            geom: None,
            cols: Vec::new(),
        },
        &[x, weights, bias],
    )
}

/// `y [n,c_in,h,w]`, `weights [c_in,c_out,k,k]`, `bias [c_out]` ->
/// `[n,c_out,H,W]`; for `Same` padding `H = h * stride`.
pub fn conv_transpose2d(
    g: &mut Graph,
    y: NodeId,
    weights: NodeId,
    bias: NodeId,
    stride: usize,
    padding: Padding,
) -> Result<NodeId> {
    g.apply(
        ConvTranspose2d {
            stride,
            padding,
            geom: None,
            yp: Vec::new(),
        },
        &[y, weights, bias],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_and_valid_geometry() {
        assert_eq!(window_geometry(24, 3, 1, Padding::Same), Some((24, 1)));
        assert_eq!(window_geometry(24, 3, 2, Padding::Same), Some((12, 0)));
        assert_eq!(window_geometry(12, 3, 2, Padding::Same), Some((6, 0)));
        assert_eq!(window_geometry(16, 5, 2, Padding::Same), Some((8, 1)));
        assert_eq!(window_geometry(3, 3, 1, Padding::Valid), Some((1, 0)));
        assert_eq!(window_geometry(2, 3, 1, Padding::Valid), None);
    }

    #[test]
    fn identity_kernel_passes_input() {
        let mut g = Graph::new(0);
        let data: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let x = g.constant(Tensor::new(vec![1, 1, 3, 3], data.clone()).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = conv2d(&mut g, x, w, b, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn all_ones_valid_is_nine() {
        let mut g = Graph::new(0);
        let x = g.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let w = g.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = conv2d(&mut g, x, w, b, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut g = Graph::new(0);
        let x = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(vec![1]));
        assert!(matches!(conv2d(&mut g, x, w, b, 1, Padding::Same), Err(Error::ShapeMismatch { .. })));
        let w5 = g.constant(Tensor::zeros(vec![1, 2, 5, 5]));
        assert!(matches!(conv2d(&mut g, x, w5, b, 1, Padding::Valid), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn transpose_scales_with_unit_kernel() {
        let mut g = Graph::new(0);
        let data: Vec<f32> = (0..8).map(|v| v as f32 - 3.0).collect();
        let y = g.constant(Tensor::new(vec![2, 1, 2, 2], data.clone()).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap());
        let b = g.constant(Tensor::zeros(vec![1]));
        let x = conv_transpose2d(&mut g, y, w, b, 1, Padding::Same).unwrap();
        let want: Vec<f32> = data.iter().map(|v| v * 2.5).collect();
        assert_eq!(g.value(x).data(), &want[..]);
    }

    #[test]
    fn transpose_upsamples_four_to_eight() {
        let mut g = Graph::new(0);
        let y = g.constant(Tensor::zeros(vec![1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![3, 2, 5, 5]));
        let b = g.constant(Tensor::zeros(vec![2]));
        let x = conv_transpose2d(&mut g, y, w, b, 2, Padding::Same).unwrap();
        assert_eq!(g.value(x).shape(), &[1, 2, 8, 8]);
    }
}

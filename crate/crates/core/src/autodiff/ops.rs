//! Primitive differentiable operations.

use super::graph::{Graph, NodeId, Op};
use super::kernels::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Log,
    /// `max(x, c)`; the gradient flows only where `x > c`.
    MaxConst(f32),
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
    /// `ln(1 + e^x)`, evaluated without overflow.
    Softplus,
}

/// Output shape for extent-1 broadcasting. Ranks must agree.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn strides_in(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for ax in (0..shape.len()).rev() {
        strides[ax] = if shape[ax] == 1 && out[ax] != 1 { 0 } else { acc };
        acc *= shape[ax];
    }
    strides
}

/// Visits every output element with the matching flat offsets into `a` and `b`.
fn for_each_broadcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let sa = strides_in(a, out);
    let sb = strides_in(b, out);
    let total: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..total {
        f(o, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

struct Binary {
    kind: BinaryKind,
}

impl Op for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
            Error::shape(self.name(), format!("{:?} and {:?} do not broadcast", a.shape(), b.shape()))
        })?;
        let f = match self.kind {
            BinaryKind::Add => |x: f32, y: f32| x + y,
            BinaryKind::Sub => |x: f32, y: f32| x - y,
            BinaryKind::Mul => |x: f32, y: f32| x * y,
        };
        let data = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = vec![0.0; shape.iter().product()];
            let (ad, bd) = (a.data(), b.data());
            for_each_broadcast(&shape, a.shape(), b.shape(), |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
            out
        };
        Tensor::new(shape, data)
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let same = a.shape() == b.shape();
        let mut ga = needs[0].then(|| vec![0.0f32; a.numel()]);
        let mut gb = needs[1].then(|| vec![0.0f32; b.numel()]);
        let (ad, bd) = (a.data(), b.data());
        let kind = self.kind;
        let mut visit = |o: usize, ia: usize, ib: usize| {
            let g = grad[o];
            if let Some(ga) = ga.as_mut() {
                ga[ia] += match kind {
                    BinaryKind::Add | BinaryKind::Sub => g,
                    BinaryKind::Mul => g * bd[ib],
                };
            }
            if let Some(gb) = gb.as_mut() {
                gb[ib] += match kind {
                    BinaryKind::Add => g,
                    BinaryKind::Sub => -g,
                    BinaryKind::Mul => g * ad[ia],
                };
            }
        };
        if same {
            (0..grad.len()).for_each(|i| visit(i, i, i));
        } else {
            for_each_broadcast(output.shape(), a.shape(), b.shape(), visit);
        }
        vec![ga, gb]
    }
}

struct Unary {
    kind: UnaryKind,
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Op for Unary {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::MaxConst(_) => "max_const",
            UnaryKind::Relu => "relu",
            UnaryKind::LeakyRelu(_) => "leaky_relu",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Softplus => "softplus",
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if self.kind == UnaryKind::Log {
            if let Some(bad) = x.data().iter().find(|v| v.is_nan() || **v <= 0.0) {
                return Err(Error::DomainError {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        let data: Vec<f32> = match self.kind {
            UnaryKind::Neg => x.data().iter().map(|v| -v).collect(),
            UnaryKind::Exp => x.data().iter().map(|v| v.exp()).collect(),
            UnaryKind::Log => x.data().iter().map(|v| v.ln()).collect(),
            UnaryKind::MaxConst(c) => x.data().iter().map(|v| v.max(c)).collect(),
            UnaryKind::Relu => x.data().iter().map(|v| v.max(0.0)).collect(),
            UnaryKind::LeakyRelu(s) => x.data().iter().map(|&v| if v > 0.0 { v } else { s * v }).collect(),
            UnaryKind::Tanh => x.data().iter().map(|v| v.tanh()).collect(),
            UnaryKind::Sigmoid => x.data().iter().map(|&v| sigmoid(v)).collect(),
            UnaryKind::Softplus => x.data().iter().map(|&v| softplus(v)).collect(),
        };
        Tensor::new(x.shape().to_vec(), data)
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let x = inputs[0].data();
        let y = output.data();
        let g: Vec<f32> = match self.kind {
            UnaryKind::Neg => grad.iter().map(|g| -g).collect(),
            UnaryKind::Exp => grad.iter().zip(y).map(|(g, y)| g * y).collect(),
            UnaryKind::Log => grad.iter().zip(x).map(|(g, x)| g / x).collect(),
            UnaryKind::MaxConst(c) => grad.iter().zip(x).map(|(&g, &x)| if x > c { g } else { 0.0 }).collect(),
            UnaryKind::Relu => grad.iter().zip(x).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect(),
            UnaryKind::LeakyRelu(s) => grad.iter().zip(x).map(|(&g, &x)| if x > 0.0 { g } else { s * g }).collect(),
            UnaryKind::Tanh => grad.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            UnaryKind::Sigmoid => grad.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
            UnaryKind::Softplus => grad.iter().zip(x).map(|(&g, &x)| g * sigmoid(x)).collect(),
        };
        vec![Some(g)]
    }

    fn branch_signature(&self, inputs: &[&Tensor], _output: &Tensor) -> u64 {
        let threshold = match self.kind {
            UnaryKind::MaxConst(c) => c,
            UnaryKind::Relu | UnaryKind::LeakyRelu(_) => 0.0,
            _ => return 0,
        };
        mask_hash(inputs[0].data().iter().map(|&v| v > threshold))
    }
}

/// FNV-style hash over a boolean pattern.
pub(crate) fn mask_hash(bits: impl Iterator<Item = bool>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for (i, b) in bits.enumerate() {
        if b {
            h ^= i as u64 + 1;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

/// `a * x + b` with constant scalars.
struct Affine {
    scale: f32,
    shift: f32,
}

impl Op for Affine {
    fn name(&self) -> &'static str {
        "affine"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let data = x.data().iter().map(|v| self.scale * v + self.shift).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![Some(grad.iter().map(|g| g * self.scale).collect())]
    }
}

struct MatMul;

impl Op for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
        Tensor::new(vec![m, n], c)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let ga = needs[0].then(|| {
            let mut ga = vec![0.0; m * k];
            gemm(m, n, k, grad, false, b.data(), true, 0.0, &mut ga);
            ga
        });
        let gb = needs[1].then(|| {
            let mut gb = vec![0.0; k * n];
            gemm(k, m, n, a.data(), true, grad, false, 0.0, &mut gb);
            gb
        });
        vec![ga, gb]
    }
}

struct Sum {
    mean: bool,
}

impl Op for Sum {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let s: f64 = x.data().iter().map(|&v| v as f64).sum();
        let s = if self.mean { s / x.numel() as f64 } else { s };
        Ok(Tensor::scalar(s as f32))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let n = inputs[0].numel();
        let g = if self.mean { grad[0] / n as f32 } else { grad[0] };
        vec![Some(vec![g; n])]
    }
}

struct Reshape {
    shape: Vec<usize>,
}

impl Op for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), inputs[0].data().to_vec())
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![Some(grad.to_vec())]
    }
}

struct SliceRows {
    start: usize,
    end: usize,
}

impl Op for SliceRows {
    fn name(&self) -> &'static str {
        "slice_rows"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        if self.start >= self.end || self.end > x.shape()[0] {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {}..{} of {:?}", self.start, self.end, x.shape()),
            ));
        }
        Ok(x.slice_rows(self.start, self.end))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], _needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let x = inputs[0];
        let row = x.numel() / x.shape()[0];
        let mut g = vec![0.0; x.numel()];
        g[self.start * row..self.end * row].copy_from_slice(grad);
        vec![Some(g)]
    }
}

/// Joins `[n, a]` and `[n, b]` into `[n, a + b]`.
struct ConcatCols;

impl Op for ConcatCols {
    fn name(&self) -> &'static str {
        "concat_cols"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
            return Err(Error::shape("concat_cols", format!("{:?} and {:?}", a.shape(), b.shape())));
        }
        let (n, ca, cb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
        }
        Tensor::new(vec![n, ca + cb], data)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (n, ca, cb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let w = ca + cb;
        let ga = needs[0].then(|| (0..n).flat_map(|i| grad[i * w..i * w + ca].to_vec()).collect());
        let gb = needs[1].then(|| (0..n).flat_map(|i| grad[i * w + ca..(i + 1) * w].to_vec()).collect());
        vec![ga, gb]
    }
}

impl Graph {
    pub fn binary(&mut self, kind: BinaryKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Binary { kind }, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: NodeId) -> Result<NodeId> {
        self.apply(Unary { kind }, &[x])
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn max_const(&mut self, x: NodeId, c: f32) -> Result<NodeId> {
        self.unary(UnaryKind::MaxConst(c), x)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> Result<NodeId> {
        self.unary(UnaryKind::LeakyRelu(slope), x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn affine(&mut self, x: NodeId, scale: f32, shift: f32) -> Result<NodeId> {
        self.apply(Affine { scale, shift }, &[x])
    }

    pub fn mul_scalar(&mut self, x: NodeId, s: f32) -> Result<NodeId> {
        self.affine(x, s, 0.0)
    }

    pub fn add_scalar(&mut self, x: NodeId, s: f32) -> Result<NodeId> {
        self.affine(x, 1.0, s)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(MatMul, &[a, b])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Sum { mean: false }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Sum { mean: true }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.value(x).shape(), shape),
            ));
        }
        self.apply(Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.apply(SliceRows { start, end }, &[x])
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(ConcatCols, &[a, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_componentwise() {
        let mut g = Graph::new(0);
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn log_inverts_exp() {
        let xs: Vec<f32> = (0..=100).map(|i| -5.0 + 0.1 * i as f32).collect();
        let mut g = Graph::new(0);
        let x = g.constant(Tensor::from_vec(xs.clone()));
        let e = g.exp(x).unwrap();
        let l = g.log(e).unwrap();
        for (a, b) in g.value(l).data().iter().zip(&xs) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut g = Graph::new(0);
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::DomainError { .. })));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new(0);
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads[&x], vec![6.0]);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[1, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[3, 2]), None);
        assert_eq!(broadcast_shape(&[3], &[1, 3]), None);

        let mut g = Graph::new(0);
        let a = g.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.param(t(&[1, 3], &[10.0, 20.0, 30.0]));
        let c = g.mul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[10.0, 40.0, 90.0, 40.0, 100.0, 180.0]);
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&b], vec![5.0, 7.0, 9.0]);
        assert_eq!(grads[&a], vec![10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);

        let bad = g.constant(t(&[3, 2], &[0.0; 6]));
        assert!(matches!(g.add(a, bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_identity_and_hand_sum() {
        let mut g = Graph::new(0);
        let eye = g.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let m_data: Vec<f32> = (0..6).map(|v| v as f32 - 2.5).collect();
        let m = g.constant(t(&[3, 2], &m_data));
        let p = g.matmul(eye, m).unwrap();
        assert_eq!(g.value(p).data(), &m_data[..]);

        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let c = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);

        assert!(matches!(g.matmul(a, m), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sum_gradient_is_ones_and_constants_absent() {
        let mut g = Graph::new(0);
        let x = g.param(t(&[4], &[0.5, -1.0, 2.0, 3.0]));
        let c = g.constant(t(&[4], &[1.0; 4]));
        let y = g.mul(x, c).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&x], vec![1.0; 4]);
        assert!(!grads.contains_key(&c));
    }

    #[test]
    fn backward_twice_doubles_and_zero_grad_resets() {
        let mut g = Graph::new(0);
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&x], vec![4.0, 8.0]);
        g.zero_grad();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&x], vec![2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new(0);
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar { numel: 2 })));
    }

    #[test]
    fn replay_tracks_leaf_changes() {
        let mut g = Graph::new(0);
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y).unwrap();
        assert_eq!(g.value(s).item(), 5.0);
        g.set_leaf_data(x, &[3.0, 4.0]).unwrap();
        g.replay().unwrap();
        assert_eq!(g.value(s).item(), 25.0);
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut g = Graph::new(0);
        let a = g.param(t(&[2, 1], &[1.0, 2.0]));
        let b = g.param(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat_cols(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let r = g.slice_rows(c, 1, 2).unwrap();
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[&a], vec![0.0, 1.0]);
        assert_eq!(grads[&b], vec![0.0, 0.0, 1.0, 1.0]);
    }
}

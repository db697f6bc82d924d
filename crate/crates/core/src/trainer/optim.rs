use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// Fresh state with the default betas and epsilon.
    pub fn adam(params: &[Tensor], lr: f32) -> Self {
        Self::new(params, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }
}

/// One bias-corrected Adam update: `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adam_step(params: &mut [Tensor], grads: &[&[f32]], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.numel() != g.len() || p.numel() != m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {:?} vs gradient of {} and moment of {}", p.shape(), g.len(), m.len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - (state.beta1 as f64).powi(t);
    let c2 = 1.0 - (state.beta2 as f64).powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi as f64 / c1;
            let v_hat = *vi as f64 / c2;
            *theta -= (state.lr as f64 * m_hat / (v_hat.sqrt() + state.eps as f64)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0])];
        let mut s = OptimizerState::adam(&p, 1e-3);
        adam_step(&mut p, &[&[0.0, 0.0]], &mut s).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_about_lr() {
        let mut p = vec![Tensor::from_vec(vec![0.0])];
        let mut s = OptimizerState::adam(&p, 1e-3);
        adam_step(&mut p, &[&[0.5]], &mut s).unwrap();
        assert!((p[0].data()[0] + 9.99999e-4).abs() < 1e-8);
    }

    #[test]
    fn two_steps_match_unrolled() {
        let mut p = vec![Tensor::from_vec(vec![0.3])];
        let mut s = OptimizerState::adam(&p, 1e-3);
        for _ in 0..2 {
            adam_step(&mut p, &[&[0.5]], &mut s).unwrap();
        }
        let (b1, b2, g) = (0.9f64, 0.999f64, 0.5f64);
        let mut theta = 0.3f64;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            theta -= 1e-3 * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + 1e-8);
        }
        assert!((p[0].data()[0] as f64 - theta).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::from_vec(vec![0.0, 1.0])];
        let mut s = OptimizerState::adam(&p, 1e-3);
        assert!(adam_step(&mut p, &[&[0.5]], &mut s).is_err());
    }
}

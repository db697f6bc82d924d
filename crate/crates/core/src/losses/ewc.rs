use rand::seq::index::sample;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::nn::{Bound, Mode, Model};
use crate::seed;

/// Diagonal importance `fisher` and anchor parameters for one finished task.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherState {
    pub fisher: Vec<Tensor>,
    pub anchor: Vec<Tensor>,
    pub lambda: f32,
}

impl FisherState {
    pub fn new(fisher: Vec<Tensor>, anchor: Vec<Tensor>, lambda: f32) -> Result<Self> {
        if fisher.len() != anchor.len() || fisher.iter().zip(&anchor).any(|(f, a)| f.shape() != a.shape()) {
            return Err(Error::shape("fisher_state", "importance and anchor shapes differ"));
        }
        if fisher.iter().flat_map(|f| f.data()).any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::DomainError {
                op: "fisher_state",
                detail: "importance values must be non-negative".into(),
            });
        }
        Ok(Self { fisher, anchor, lambda })
    }
}

/// Empirical diagonal Fisher over `n_samples` items of `images` (already
/// preprocessed), drawn without replacement: the mean squared gradient of
/// `log p(argmax | x)`.
pub fn fisher_diagonal(model: &Model, images: &Tensor, n_samples: usize, seed: u64) -> Result<Vec<Tensor>> {
    assert!(n_samples >= 1, "fisher needs at least one sample");
    let n = images.shape()[0];
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("fisher")]));
    let picks = sample(&mut rng, n, n_samples.min(n)).into_vec();
    let mut acc: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.numel()]).collect();
    for &i in &picks {
        let mut g = Graph::new(0);
        let bound = model.bind(&mut g, true);
        let x = g.constant(images.slice_rows(i, i + 1));
        let probs = model.forward(&mut g, &bound, x, Mode::Eval)?.output;
        let label = g.value(probs).argmax_rows()[0];
        let width = g.value(probs).shape()[1];
        let mask = g.constant(one_hot(&[label], width));
        let masked = g.mul(probs, mask)?;
        let picked = g.sum(masked)?;
        let clamped = g.max_const(picked, super::PROB_FLOOR)?;
        let logp = g.log(clamped)?;
        let loss = g.sum(logp)?;
        g.backward(loss)?;
        for (a, &p) in acc.iter_mut().zip(&bound.params) {
            if let Some(grad) = g.grad(p) {
                a.iter_mut().zip(grad).for_each(|(a, &gv)| *a += (gv as f64).powi(2));
            }
        }
    }
    let count = picks.len() as f64;
    Ok(model
        .params()
        .iter()
        .zip(acc)
        .map(|(p, a)| Tensor::new(p.shape().to_vec(), a.iter().map(|v| (v / count) as f32).collect()).unwrap())
        .collect())
}

/// `Σ_states (λ/2) Σ_j F_j (θ_j − θ*_j)²` over the bound parameters.
pub fn ewc_penalty(g: &mut Graph, bound: &Bound, states: &[FisherState]) -> Result<NodeId> {
    let mut total = g.constant(Tensor::scalar(0.0));
    for state in states {
        if state.anchor.len() != bound.params.len() {
            return Err(Error::shape(
                "ewc_penalty",
                format!("{} anchors for {} parameters", state.anchor.len(), bound.params.len()),
            ));
        }
        for ((&p, anchor), fisher) in bound.params.iter().zip(&state.anchor).zip(&state.fisher) {
            if g.value(p).shape() != anchor.shape() {
                return Err(Error::shape(
                    "ewc_penalty",
                    format!("parameter {:?} vs anchor {:?}", g.value(p).shape(), anchor.shape()),
                ));
            }
            let a = g.constant(anchor.clone());
            let diff = g.sub(p, a)?;
            let sq = g.mul(diff, diff)?;
            let mut w = fisher.clone();
            w.data_mut().iter_mut().for_each(|v| *v *= state.lambda / 2.0);
            let w = g.constant(w);
            let weighted = g.mul(sq, w)?;
            let s = g.sum(weighted)?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// Gradient-free [`ewc_penalty`] for a parameter set.
pub fn ewc_penalty_value(params: &[Tensor], states: &[FisherState]) -> f64 {
    states
        .iter()
        .map(|s| {
            let inner: f64 = params
                .iter()
                .zip(&s.anchor)
                .zip(&s.fisher)
                .flat_map(|((p, a), f)| {
                    p.data()
                        .iter()
                        .zip(a.data())
                        .zip(f.data())
                        .map(|((&p, &a), &f)| f as f64 * (p as f64 - a as f64).powi(2))
                })
                .sum();
            s.lambda as f64 / 2.0 * inner
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(theta: f32, anchor: f32, f: f32, lambda: f32) -> f32 {
        let mut g = Graph::new(0);
        let p = g.param(Tensor::from_vec(vec![theta]));
        let bound = Bound { params: vec![p] };
        let state = FisherState::new(vec![Tensor::from_vec(vec![f])], vec![Tensor::from_vec(vec![anchor])], lambda).unwrap();
        let out = ewc_penalty(&mut g, &bound, &[state]).unwrap();
        g.value(out).item()
    }

    #[test]
    fn hand_arithmetic() {
        assert!((single(0.6, 0.5, 2.0, 270.0) - 2.7).abs() < 1e-4);
        assert_eq!(single(0.5, 0.5, 2.0, 270.0), 0.0);
        assert_eq!(single(0.9, 0.5, 2.0, 0.0), 0.0);
    }

    #[test]
    fn negative_importance_rejected() {
        let r = FisherState::new(vec![Tensor::from_vec(vec![-1.0])], vec![Tensor::from_vec(vec![0.0])], 1.0);
        assert!(r.is_err());
    }
}

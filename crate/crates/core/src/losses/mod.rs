//! Training objectives: cross-entropy, the rehearsal and pseudo-rehearsal
//! sums, adversarial losses and the EWC penalty.

mod ewc;

pub use ewc::{ewc_penalty, ewc_penalty_value, fisher_diagonal, FisherState};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Bound, Mode, Model};

/// Probabilities are clamped here before the log.
pub const PROB_FLOOR: f32 = 1e-12;

/// `−(1/n) Σ_i Σ_k t_ik · log(max(p_ik, PROB_FLOOR))` for `[n, K]` inputs.
pub fn cross_entropy(g: &mut Graph, probs: NodeId, targets: NodeId) -> Result<NodeId> {
    let (ps, ts) = (g.value(probs).shape(), g.value(targets).shape());
    if ps.len() != 2 || ps != ts {
        return Err(Error::shape("cross_entropy", format!("probs {ps:?} vs targets {ts:?}")));
    }
    let n = ps[0];
    let clamped = g.max_const(probs, PROB_FLOOR)?;
    let logp = g.log(clamped)?;
    let weighted = g.mul(logp, targets)?;
    let total = g.sum(weighted)?;
    g.mul_scalar(total, -1.0 / n as f32)
}

/// Gradient-free [`cross_entropy`], accumulated in f64.
pub fn cross_entropy_value(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    if probs.rank() != 2 || probs.shape() != targets.shape() {
        return Err(Error::shape(
            "cross_entropy",
            format!("probs {:?} vs targets {:?}", probs.shape(), targets.shape()),
        ));
    }
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| t as f64 * (p.max(PROB_FLOOR) as f64).ln())
        .sum();
    Ok(-total / probs.shape()[0] as f64)
}

/// Cross-entropy of the model's predictions for `x` against `targets`.
pub fn model_cross_entropy(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    x: &Tensor,
    targets: &Tensor,
    mode: Mode,
) -> Result<NodeId> {
    let xi = g.constant(x.clone());
    let probs = model.forward(g, bound, xi, mode)?.output;
    let t = g.constant(targets.clone());
    cross_entropy(g, probs, t)
}

fn sum_nodes(g: &mut Graph, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Rehearsal objective: one cross-entropy per task batch, summed.
pub fn rehearsal_loss(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    batches: &[(Tensor, Tensor)],
    mode: Mode,
) -> Result<NodeId> {
    if batches.is_empty() {
        return Err(Error::shape("rehearsal_loss", "no task batches"));
    }
    let terms = batches
        .iter()
        .map(|(x, y)| model_cross_entropy(g, model, bound, x, y, mode))
        .collect::<Result<Vec<_>>>()?;
    sum_nodes(g, &terms)
}

/// Pseudo-rehearsal objective: new-task cross-entropy plus one cross-entropy
/// per pseudo batch against its soft targets.
pub fn pseudo_rehearsal_loss(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    new_batch: (&Tensor, &Tensor),
    pseudo_batches: &[(Tensor, Tensor)],
    mode: Mode,
) -> Result<NodeId> {
    let mut terms = vec![model_cross_entropy(g, model, bound, new_batch.0, new_batch.1, mode)?];
    for (x, y) in pseudo_batches {
        terms.push(model_cross_entropy(g, model, bound, x, y, mode)?);
    }
    sum_nodes(g, &terms)
}

/// Discriminator and non-saturating generator losses from logits:
/// `d = mean softplus(−real) + mean softplus(fake)`, `g = mean softplus(−fake)`.
pub fn gan_losses(g: &mut Graph, real_logits: NodeId, fake_logits: NodeId) -> Result<(NodeId, NodeId)> {
    let neg_real = g.neg(real_logits)?;
    let real_term = g.softplus(neg_real)?;
    let real_term = g.mean(real_term)?;
    let fake_term = g.softplus(fake_logits)?;
    let fake_term = g.mean(fake_term)?;
    let d_loss = g.add(real_term, fake_term)?;
    let neg_fake = g.neg(fake_logits)?;
    let g_term = g.softplus(neg_fake)?;
    let g_loss = g.mean(g_term)?;
    Ok((d_loss, g_loss))
}

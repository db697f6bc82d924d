//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{GradMap, Graph, NodeId};
use crate::error::Result;

/// Gradients smaller than this are compared in absolute terms. f32 forward
/// passes carry roughly 1e-6 relative noise, which a central difference with
/// `eps = 1e-2` amplifies to a few 1e-5 on O(1) losses.
pub const DEFAULT_FLOOR: f32 = 5e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementStatus {
    Ok,
    Flagged,
    /// The perturbation crossed a non-differentiable point.
    Kink,
}

#[derive(Clone, Debug)]
pub struct ElementCheck {
    pub node: NodeId,
    pub index: usize,
    pub analytic: f32,
    pub numeric: f32,
    pub rel_err: f32,
    pub status: ElementStatus,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub elements: Vec<ElementCheck>,
    pub tol: f32,
}

impl GradCheckReport {
    pub fn compared(&self) -> usize {
        self.elements.iter().filter(|e| e.status != ElementStatus::Kink).count()
    }

    pub fn flagged(&self) -> Vec<&ElementCheck> {
        self.elements
            .iter()
            .filter(|e| e.status == ElementStatus::Flagged)
            .collect()
    }

    pub fn kinks(&self) -> usize {
        self.elements.iter().filter(|e| e.status == ElementStatus::Kink).count()
    }

    /// Fraction of compared (non-kink) elements within tolerance.
    pub fn pass_fraction(&self) -> f64 {
        let compared = self.compared();
        if compared == 0 {
            return 1.0;
        }
        1.0 - self.flagged().len() as f64 / compared as f64
    }

    pub fn max_rel_err(&self) -> f32 {
        self.elements
            .iter()
            .filter(|e| e.status != ElementStatus::Kink)
            .map(|e| e.rel_err)
            .fold(0.0, f32::max)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f32,
    pub tol: f32,
    pub floor: f32,
    /// Check at most this many elements per parameter tensor, chosen with
    /// the graph seed. `None` checks every element.
    pub max_per_param: Option<usize>,
}

impl GradCheckOptions {
    pub fn new(eps: f32, tol: f32) -> Self {
        Self {
            eps,
            tol,
            floor: DEFAULT_FLOOR,
            max_per_param: None,
        }
    }
}

pub fn relative_error(analytic: f32, numeric: f32, floor: f32) -> f32 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every parameter element's analytic gradient with
/// `(f(θ+eps) − f(θ−eps)) / (2·eps)`.
pub fn finite_difference_check(g: &mut Graph, loss: NodeId, eps: f32, tol: f32) -> Result<GradCheckReport> {
    finite_difference_check_with(g, loss, &GradCheckOptions::new(eps, tol))
}

pub fn finite_difference_check_with(g: &mut Graph, loss: NodeId, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    g.zero_grad();
    let grads = g.backward(loss)?;
    g.zero_grad();
    compare_against(g, loss, &grads, opts)
}

/// Runs the finite-difference comparison against caller-supplied analytic
/// gradients. Also serves as the negative control: a corrupted map must be
/// flagged.
pub fn compare_against(g: &mut Graph, loss: NodeId, analytic: &GradMap, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    assert!(opts.eps > 0.0, "eps must be positive");
    let base_print = g.fingerprint();
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed());
    let mut report = GradCheckReport {
        elements: Vec::new(),
        tol: opts.tol,
    };

    for param in g.params() {
        let original = g.value(param).data().to_vec();
        let indices: Vec<usize> = match opts.max_per_param {
            Some(k) if k < original.len() => {
                let mut idx = sample(&mut rng, original.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..original.len()).collect(),
        };
        let mut work = original.clone();
        for index in indices {
            work[index] = original[index] + opts.eps;
            g.set_leaf_data(param, &work)?;
            g.replay()?;
            let plus = g.value(loss).item() as f64;
            let plus_print = g.fingerprint();

            work[index] = original[index] - opts.eps;
            g.set_leaf_data(param, &work)?;
            g.replay()?;
            let minus = g.value(loss).item() as f64;
            let minus_print = g.fingerprint();
            work[index] = original[index];

            let numeric = ((plus - minus) / (2.0 * opts.eps as f64)) as f32;
            let a = analytic.get(&param).map_or(0.0, |v| v[index]);
            let rel_err = relative_error(a, numeric, opts.floor);
            let status = if plus_print != base_print || minus_print != base_print {
                ElementStatus::Kink
            } else if rel_err > opts.tol {
                ElementStatus::Flagged
            } else {
                ElementStatus::Ok
            };
            report.elements.push(ElementCheck {
                node: param,
                index,
                analytic: a,
                numeric,
                rel_err,
                status,
            });
        }
        g.set_leaf_data(param, &original)?;
    }
    g.replay()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn linear_model_has_no_flags() {
        let mut g = Graph::new(3);
        let x = g.constant(Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]).unwrap());
        let w = g.param(Tensor::new(vec![2, 2], vec![0.1, -0.2, 0.3, 0.4]).unwrap());
        let y = g.matmul(x, w).unwrap();
        let s = g.sum(y).unwrap();
        let report = finite_difference_check(&mut g, s, 1e-2, 1e-3).unwrap();
        assert_eq!(report.compared(), 4);
        assert!(report.flagged().is_empty(), "{:?}", report.flagged());
    }

    #[test]
    fn relu_kink_is_excluded() {
        let mut g = Graph::new(0);
        let x = g.param(Tensor::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap());
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        let report = finite_difference_check(&mut g, s, 1e-2, 1e-3).unwrap();
        let kink = &report.elements[0];
        assert_eq!(kink.status, ElementStatus::Kink);
        assert_eq!(report.kinks(), 1);
        assert!(report.flagged().is_empty());
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut g = Graph::new(0);
        let x = g.param(Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y).unwrap();
        let mut grads = g.backward(s).unwrap();
        grads.get_mut(&x).unwrap()[1] += 0.5;
        let report = compare_against(&mut g, s, &grads, &GradCheckOptions::new(1e-2, 1e-3)).unwrap();
        let flagged = report.flagged();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].index, 1);
    }
}

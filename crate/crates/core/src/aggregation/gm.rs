//! Weighted geometric median via the Weiszfeld fixed-point iteration.

use nalgebra::{DMatrix, DVector};

use super::{weighted_mean, WeightedVectorSet};
use crate::vector;

/// Distances below this are treated as coincident with an input point.
const SINGULARITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GmOutcome {
    pub point: Vec<f64>,
    pub iterations: usize,
    /// `false` when the iteration cap was hit before the displacement fell
    /// below tolerance. `point` is then the lowest-objective iterate seen.
    pub converged: bool,
}

/// `Σ sᵢ ‖y − xᵢ‖`
pub fn gm_objective(set: &WeightedVectorSet, y: &[f64]) -> f64 {
    set.canonical_order()
        .into_iter()
        .map(|i| set.weights()[i] * vector::dist(y, &set.vectors()[i]))
        .sum()
}

/// Returns an approximate minimiser of `Σ sᵢ ‖y − xᵢ‖`.
///
/// Input points are first tested for optimality: `xₖ` is a minimiser iff
/// `‖Σ_{xᵢ≠xₖ} sᵢ (xᵢ − xₖ)/‖xᵢ − xₖ‖‖ ≤ Σ_{xᵢ=xₖ} sᵢ`. When no input point
/// qualifies, the minimiser lies off the data and Weiszfeld's iteration is
/// run from the weighted mean until the iterate moves less than `tolerance`.
/// Each Weiszfeld step is followed by a Newton step on the objective, kept
/// only if it lowers the objective; this removes the slow linear tail of the
/// plain iteration when the minimiser sits close to an input point.
pub fn weighted_geometric_median(
    set: &WeightedVectorSet,
    tolerance: f64,
    max_iters: usize,
) -> GmOutcome {
    if let Some(k) = optimal_input_point(set) {
        return GmOutcome {
            point: set.vectors()[k].clone(),
            iterations: 0,
            converged: true,
        };
    }

    let order = set.canonical_order();
    let xs = set.vectors();
    let ws = set.weights();
    let d = set.dim();

    let mut y = weighted_mean(set);
    let mut best = y.clone();
    let mut best_obj = gm_objective(set, &y);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=max_iters {
        iterations = it;
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for &i in &order {
            let mut dist = vector::dist(&y, &xs[i]);
            if dist < SINGULARITY_EPS {
                dist += SINGULARITY_EPS;
            }
            let c = ws[i] / dist;
            vector::axpy(&mut num, c, &xs[i]);
            den += c;
        }
        num.iter_mut().for_each(|v| *v /= den);
        let mut obj = gm_objective(set, &num);
        if let Some(candidate) = newton_step(set, &order, &num) {
            let candidate_obj = gm_objective(set, &candidate);
            if candidate_obj < obj {
                num = candidate;
                obj = candidate_obj;
            }
        }
        let step = vector::dist(&num, &y);
        y = num;
        if step <= tolerance {
            // Near the minimiser objective values differ only by rounding,
            // so the converged iterate is preferred over `best`.
            best = y;
            converged = true;
            break;
        }
        if obj < best_obj {
            best_obj = obj;
            best.clone_from(&y);
        }
    }

    GmOutcome {
        point: best,
        iterations,
        converged,
    }
}

/// `y − H⁻¹∇` for the objective's gradient and Hessian at `y`, or `None`
/// when `y` is too close to an input point or the Hessian is singular.
fn newton_step(set: &WeightedVectorSet, order: &[usize], y: &[f64]) -> Option<Vec<f64>> {
    let d = y.len();
    let mut grad = DVector::<f64>::zeros(d);
    let mut hess = DMatrix::<f64>::zeros(d, d);
    for &i in order {
        let diff = vector::sub(y, &set.vectors()[i]);
        let r = vector::norm(&diff);
        if r < SINGULARITY_EPS {
            return None;
        }
        let u = DVector::from_vec(diff) / r;
        let c = set.weights()[i] / r;
        grad += &u * set.weights()[i];
        hess += (DMatrix::identity(d, d) - &u * u.transpose()) * c;
    }
    let delta = hess.cholesky()?.solve(&grad);
    let next: Vec<f64> = y.iter().zip(delta.iter()).map(|(a, b)| a - b).collect();
    vector::is_finite(&next).then_some(next)
}

/// First input index (in canonical order) satisfying the vertex optimality
/// condition, if any.
fn optimal_input_point(set: &WeightedVectorSet) -> Option<usize> {
    let xs = set.vectors();
    let ws = set.weights();
    let order = set.canonical_order();
    for &k in &order {
        let mut pull = vec![0.0; set.dim()];
        let mut own = 0.0;
        for &i in &order {
            let diff = vector::sub(&xs[i], &xs[k]);
            let n = vector::norm(&diff);
            if n == 0.0 {
                own += ws[i];
            } else {
                vector::axpy(&mut pull, ws[i] / n, &diff);
            }
        }
        if vector::norm(&pull) <= own {
            return Some(k);
        }
    }
    None
}

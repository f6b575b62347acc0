//! Weighted centred trimmed meta-aggregation.
//!
//! Entries are ranked by distance to an anchor (the output of a base robust
//! rule). The closest entries are kept until their weight reaches
//! `(1 − λ)·W`; the entry that crosses the threshold contributes only the
//! fraction of its weight needed to hit it exactly. The output is the
//! weighted mean of what was kept.

use super::WeightedVectorSet;
use crate::error::{Error, Result};
use crate::vector;

#[derive(Debug, Clone, PartialEq)]
pub struct CtmaOutcome {
    pub point: Vec<f64>,
    /// Weight actually retained, summed entry by entry.
    pub retained_weight: f64,
    /// `(1 − λ)·W`
    pub target_weight: f64,
    /// Index (into the input set) of the entry whose weight was split.
    pub split_index: usize,
    /// Weight the split entry kept.
    pub split_weight: f64,
}

pub fn ctma(set: &WeightedVectorSet, lambda: f64, anchor: &[f64]) -> Result<Vec<f64>> {
    ctma_detailed(set, lambda, anchor).map(|o| o.point)
}

pub fn ctma_detailed(set: &WeightedVectorSet, lambda: f64, anchor: &[f64]) -> Result<CtmaOutcome> {
    if !(0.0..0.5).contains(&lambda) {
        return Err(Error::invalid(format!("ctma lambda {lambda} must lie in [0, 0.5)")));
    }
    if anchor.len() != set.dim() {
        return Err(Error::invalid(format!(
            "anchor has dimension {} but set has dimension {}",
            anchor.len(),
            set.dim()
        )));
    }
    let ws = set.weights();
    let dists: Vec<f64> = set.vectors().iter().map(|x| vector::dist_sq(x, anchor)).collect();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));

    let target = (1.0 - lambda) * set.total_weight();
    let mut retained = vec![0.0; set.len()];
    let mut before = 0.0;
    let mut split_index = *order.last().expect("non-empty set");
    for (pos, &i) in order.iter().enumerate() {
        let is_last = pos + 1 == order.len();
        if before + ws[i] >= target || is_last {
            split_index = i;
            break;
        }
        retained[i] = ws[i];
        before += ws[i];
    }
    let split_weight = target - before;
    retained[split_index] = split_weight;

    let retained_weight = order.iter().map(|&i| retained[i]).sum();
    Ok(CtmaOutcome {
        point: set.average_with(&retained),
        retained_weight,
        target_weight: target,
        split_index,
        split_weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::weighted_mean;

    fn set(pairs: &[(f64, f64)]) -> WeightedVectorSet {
        WeightedVectorSet::from_pairs(pairs.iter().map(|&(v, w)| (vec![v], w))).unwrap()
    }

    #[test]
    fn trims_the_far_point() {
        let s = set(&[(0.0, 1.0), (0.1, 1.0), (100.0, 1.0)]);
        let out = ctma_detailed(&s, 1.0 / 3.0, &[0.1]).unwrap();
        assert!((out.point[0] - 0.05).abs() < 1e-12);
        assert!((out.retained_weight - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fractional_split() {
        let s = set(&[(0.0, 1.0), (1.0, 1.0), (10.0, 1.0)]);
        let out = ctma_detailed(&s, 0.25, &[1.0]).unwrap();
        let expected = (1.0 * 1.0 + 1.0 * 0.0 + 0.25 * 10.0) / 2.25;
        assert!((out.point[0] - expected).abs() < 1e-12);
        assert_eq!(out.split_index, 2);
        assert!((out.split_weight - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_is_weighted_mean() {
        let s = set(&[(3.0, 0.5), (-1.0, 2.0), (8.0, 1.25), (0.5, 4.0)]);
        let out = ctma(&s, 0.0, &[0.0]).unwrap();
        let mean = weighted_mean(&s);
        assert!((out[0] - mean[0]).abs() < 1e-12);
    }

    #[test]
    fn equal_distances_break_by_index() {
        // 1 and -1 are equidistant from 0; the earlier index is kept whole.
        let s = set(&[(1.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (50.0, 1.0)]);
        let out = ctma_detailed(&s, 0.25, &[0.0]).unwrap();
        assert_eq!(out.split_index, 1);
        assert!((out.point[0] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_breakdown_lambda() {
        let s = set(&[(0.0, 1.0)]);
        assert!(ctma(&s, 0.5, &[0.0]).is_err());
        assert!(ctma(&s, 0.1, &[0.0, 1.0]).is_err());
    }
}

//! Weighted coordinate-wise median.

use super::WeightedVectorSet;

/// Relative tolerance under which a prefix weight counts as exactly half.
const HALF_TIE_RTOL: f64 = 1e-12;

/// Weighted median of scalar `values`.
///
/// Values are sorted ascending (ties by position). The result is the first
/// sorted value whose cumulative weight strictly exceeds half the total; if
/// some prefix weighs exactly half, the result is the midpoint between the
/// last value of that prefix and the next one.
///
/// `weights` must be nonnegative with positive total and at least one entry.
pub fn weighted_median_1d(values: &[f64], weights: &[f64], total: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let half = 0.5 * total;
    let tie_band = HALF_TIE_RTOL * total;
    let mut cum = 0.0;
    for (pos, &i) in idx.iter().enumerate() {
        cum += weights[i];
        if (cum - half).abs() <= tie_band {
            if let Some(&next) = idx.get(pos + 1) {
                return 0.5 * (values[i] + values[next]);
            }
            return values[i];
        }
        if cum > half {
            return values[i];
        }
    }
    // Only reachable if rounding kept every prefix below half.
    values[*idx.last().expect("at least one positive weight")]
}

/// Applies [`weighted_median_1d`] to each coordinate independently.
pub fn weighted_cwmed(set: &WeightedVectorSet) -> Vec<f64> {
    let total = set.total_weight();
    let weights = set.weights();
    let mut column = vec![0.0; set.len()];
    (0..set.dim())
        .map(|k| {
            for (c, v) in column.iter_mut().zip(set.vectors()) {
                *c = v[k];
            }
            weighted_median_1d(&column, weights, total)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cw(pairs: &[(Vec<f64>, f64)]) -> Vec<f64> {
        weighted_cwmed(&WeightedVectorSet::from_pairs(pairs.to_vec()).unwrap())
    }

    #[test]
    fn strict_exceedance() {
        assert_eq!(cw(&[(vec![1.0], 1.0), (vec![5.0], 3.0)]), vec![5.0]);
    }

    #[test]
    fn exact_half_takes_midpoint() {
        assert_eq!(cw(&[(vec![1.0], 1.0), (vec![3.0], 1.0)]), vec![2.0]);
        assert_eq!(cw(&[(vec![3.0], 2.0), (vec![1.0], 1.0), (vec![7.0], 3.0)]), vec![5.0]);
    }

    #[test]
    fn per_coordinate_2d() {
        let out = cw(&[(vec![0.0, 10.0], 1.0), (vec![5.0, 0.0], 1.0), (vec![10.0, 5.0], 1.0)]);
        assert_eq!(out, vec![5.0, 5.0]);
    }

    #[test]
    fn unsorted_input_and_duplicates() {
        let out = cw(&[(vec![4.0], 1.0), (vec![4.0], 1.0), (vec![-2.0], 1.0), (vec![9.0], 0.5)]);
        assert_eq!(out, vec![4.0]);
    }

    #[test]
    fn zero_weights_are_skipped_in_1d() {
        assert_eq!(weighted_median_1d(&[100.0, 1.0, 2.0], &[0.0, 1.0, 2.0], 3.0), 2.0);
    }
}

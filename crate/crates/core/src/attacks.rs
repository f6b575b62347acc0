//! Byzantine worker behaviours.
//!
//! Sign flipping and label flipping are run by a worker that otherwise
//! follows the honest protocol: it keeps its own corrected momentum and
//! either negates it before sending or computes it against corrupted labels.
//! The "little is enough" and "empire" attacks are omniscient: they read the
//! momenta the honest workers last sent together with their update counts
//! and craft a vector from the coordinate-wise weighted statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::aggregation::{weighted_mean, WeightedVectorSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    SignFlip,
    LabelFlip,
    Little,
    Empire,
}

impl AttackKind {
    /// Whether the attack reads the honest workers' momenta.
    pub fn colludes(self) -> bool {
        matches!(self, AttackKind::Little | AttackKind::Empire)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::SignFlip => "sign-flip",
            AttackKind::LabelFlip => "label-flip",
            AttackKind::Little => "little",
            AttackKind::Empire => "empire",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign-flip" => Ok(AttackKind::SignFlip),
            "label-flip" => Ok(AttackKind::LabelFlip),
            "little" => Ok(AttackKind::Little),
            "empire" => Ok(AttackKind::Empire),
            other => Err(Error::invalid(format!(
                "unknown attack '{other}' (expected sign-flip, label-flip, little or empire)"
            ))),
        }
    }
}

fn default_epsilon() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Empire scale.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            epsilon: default_epsilon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AttackKind::Empire && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("attack.epsilon", "must be > 0 for the empire attack"));
        }
        Ok(())
    }
}

/// Update totals at the moment the attack fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateCounts {
    /// All updates received so far.
    pub total: u64,
    /// Updates received from Byzantine workers so far.
    pub byzantine: u64,
}

/// Coordinate-wise weighted population standard deviation
/// `sqrt(Σ sᵢ(xᵢ − μ)² / Σ sᵢ)`.
pub fn weighted_std(set: &WeightedVectorSet) -> Vec<f64> {
    let mu = weighted_mean(set);
    let total = set.total_weight();
    let mut var = vec![0.0; set.dim()];
    for (x, &s) in set.vectors().iter().zip(set.weights()) {
        for ((v, xi), m) in var.iter_mut().zip(x).zip(&mu) {
            *v += s * (xi - m) * (xi - m);
        }
    }
    var.into_iter().map(|v| (v / total).sqrt()).collect()
}

/// Deviation multiplier for the "little is enough" attack with update counts
/// standing in for worker counts.
///
/// With `n = s` total updates and `f = s_B` Byzantine ones, the number of
/// honest supporters needed for a majority is `⌊n/2 + 1⌋ − f`, and the
/// attacker may sit `Φ⁻¹((n − supporters)/n)` standard deviations from the
/// mean. The quantile is clamped into `[0.5, 1 − 1e−9]`.
pub fn zmax(counts: UpdateCounts) -> f64 {
    let s = counts.total as f64;
    if counts.total == 0 {
        return 0.0;
    }
    let supporters = (s / 2.0 + 1.0).floor() - counts.byzantine as f64;
    let q = ((s - supporters) / s).clamp(0.5, 1.0 - 1e-9);
    Normal::standard().inverse_cdf(q).max(0.0)
}

/// Vector a Byzantine worker sends.
///
/// `own_honest` is the momentum the worker would have sent had it been
/// honest (for label flipping, computed against flipped labels already).
/// `honest_view` holds the honest workers' latest momenta weighted by their
/// update counts; it is required by the colluding attacks.
pub fn byzantine_update(
    spec: &AttackSpec,
    honest_view: Option<&WeightedVectorSet>,
    own_honest: Option<&[f64]>,
    counts: UpdateCounts,
) -> Result<Vec<f64>> {
    match spec.kind {
        AttackKind::SignFlip => {
            let d = own_honest.ok_or_else(|| Error::InvalidState("sign-flip needs the worker's own momentum".into()))?;
            Ok(d.iter().map(|v| -v).collect())
        }
        AttackKind::LabelFlip => {
            let d = own_honest.ok_or_else(|| Error::InvalidState("label-flip needs the worker's own momentum".into()))?;
            Ok(d.to_vec())
        }
        AttackKind::Little => {
            let view = honest_view.ok_or_else(|| Error::InvalidState("little attack with no honest momenta".into()))?;
            let mu = weighted_mean(view);
            let sd = weighted_std(view);
            let z = zmax(counts);
            Ok(mu.iter().zip(&sd).map(|(m, s)| m - s * z).collect())
        }
        AttackKind::Empire => {
            let view = honest_view.ok_or_else(|| Error::InvalidState("empire attack with no honest momenta".into()))?;
            Ok(weighted_mean(view).into_iter().map(|m| -spec.epsilon * m).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COUNTS: UpdateCounts = UpdateCounts { total: 10, byzantine: 2 };

    #[test]
    fn sign_flip_negates() {
        let spec = AttackSpec::new(AttackKind::SignFlip);
        let out = byzantine_update(&spec, None, Some(&[1.0, -2.0]), COUNTS).unwrap();
        assert_eq!(out, vec![-1.0, 2.0]);
        let twice = byzantine_update(&spec, None, Some(&out), COUNTS).unwrap();
        assert_eq!(twice, vec![1.0, -2.0]);
    }

    #[test]
    fn empire_scales_the_mean() {
        let view = WeightedVectorSet::from_pairs(vec![(vec![1.0, 0.0], 1.0), (vec![3.0, 0.0], 1.0)]).unwrap();
        let out = byzantine_update(&AttackSpec::new(AttackKind::Empire), Some(&view), None, COUNTS).unwrap();
        assert!((out[0] + 0.2).abs() < 1e-15 && out[1] == 0.0);
    }

    #[test]
    fn little_substitution() {
        // Mean 1 and population std 0.5 from {0.5, 1.5} with equal weight.
        let view = WeightedVectorSet::from_pairs(vec![(vec![0.5], 2.0), (vec![1.5], 2.0)]).unwrap();
        assert!((weighted_std(&view)[0] - 0.5).abs() < 1e-15);
        let counts = UpdateCounts { total: 1000, byzantine: 341 };
        let z = zmax(counts);
        let out = byzantine_update(&AttackSpec::new(AttackKind::Little), Some(&view), None, counts).unwrap();
        assert!((out[0] - (1.0 - 0.5 * z)).abs() < 1e-15);
    }

    #[test]
    fn collusion_requires_a_view() {
        for kind in [AttackKind::Little, AttackKind::Empire] {
            let err = byzantine_update(&AttackSpec::new(kind), None, None, COUNTS).unwrap_err();
            assert!(matches!(err, Error::InvalidState(_)));
        }
        assert!(byzantine_update(&AttackSpec::new(AttackKind::SignFlip), None, None, COUNTS).is_err());
    }

    #[test]
    fn zmax_values() {
        // No Byzantine budget: the quantile sits just under 1/2 and clamps.
        assert_eq!(zmax(UpdateCounts { total: 10_000, byzantine: 0 }), 0.0);
        // s = 100, s_B = 40: (100 − (51 − 40))/100 = 0.89.
        let expected = Normal::standard().inverse_cdf(0.89);
        assert!((zmax(UpdateCounts { total: 100, byzantine: 40 }) - expected).abs() < 1e-12);
        // s = 100, s_B = 10: 0.59.
        let expected = Normal::standard().inverse_cdf(0.59);
        assert!((zmax(UpdateCounts { total: 100, byzantine: 10 }) - expected).abs() < 1e-12);
        assert!(zmax(UpdateCounts { total: 100, byzantine: 1 }) == 0.0);
        assert_eq!(zmax(UpdateCounts { total: 0, byzantine: 0 }), 0.0);
    }

    #[test]
    fn weighted_std_equal_weights_is_population_std() {
        let view = WeightedVectorSet::unweighted(vec![vec![2.0], vec![4.0], vec![4.0], vec![4.0], vec![5.0], vec![5.0], vec![7.0], vec![9.0]]).unwrap();
        assert!((weighted_std(&view)[0] - 2.0).abs() < 1e-15);
    }
}

//! Weighted robust aggregation.
//!
//! Every rule here consumes a [`WeightedVectorSet`]: `m` vectors in `R^d`
//! together with nonnegative weights (in the asynchronous setting, the weight
//! of a worker's vector is the number of updates that worker has contributed).
//! A rule is `(c, λ)`-weighted robust when, for any honest subset holding at
//! least `1 - λ` of the total weight, the expected squared distance between
//! its output and the honest weighted mean is at most `c · ρ²`, where `ρ²` is
//! the weighted mean of the honest spreads.
//!
//! Three base rules are provided ([`weighted_mean`], [`weighted_geometric_median`],
//! [`weighted_cwmed`]) together with the centred trimmed meta-aggregator
//! [`ctma`], which trims a `λ` fraction of weight furthest from a base
//! rule's output and averages the rest.
//!
//! All functions are pure. Sums over entries are taken in a canonical order
//! (lexicographic on the vector, then weight) so that permuting the input
//! pairs cannot change the output through floating-point reassociation.

mod ctma;
mod cwmed;
mod gm;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

pub use ctma::{ctma, ctma_detailed, CtmaOutcome};
pub use cwmed::{weighted_cwmed, weighted_median_1d};
pub use gm::{gm_objective, weighted_geometric_median, GmOutcome};

/// Default displacement tolerance for the Weiszfeld iteration.
pub const DEFAULT_GM_TOLERANCE: f64 = 1e-9;
/// Default iteration cap for the Weiszfeld iteration.
pub const DEFAULT_GM_MAX_ITERS: usize = 1000;

/// `m ≥ 1` vectors of common dimension `d ≥ 1` with nonnegative weights of
/// positive total. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedVectorSet {
    vectors: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl WeightedVectorSet {
    pub fn new(vectors: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid("weighted set must contain at least one vector"));
        }
        if vectors.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} vectors but {} weights",
                vectors.len(),
                weights.len()
            )));
        }
        let d = vectors[0].len();
        if d == 0 {
            return Err(Error::invalid("vectors must have dimension >= 1"));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != d {
                return Err(Error::invalid(format!(
                    "vector {i} has dimension {} (expected {d})",
                    v.len()
                )));
            }
            if !vector::is_finite(v) {
                return Err(Error::invalid(format!("vector {i} has a non-finite entry")));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("weight {i} = {w} is not a finite nonnegative number")));
            }
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::invalid("total weight must be positive"));
        }
        Ok(Self { vectors, weights })
    }

    /// Builds a set from `(vector, weight)` pairs.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<f64>, f64)>,
    {
        let (vectors, weights) = pairs.into_iter().unzip();
        Self::new(vectors, weights)
    }

    /// Equal unit weights.
    pub fn unweighted(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let weights = vec![1.0; vectors.len()];
        Self::new(vectors, weights)
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Total weight, summed in canonical order.
    pub fn total_weight(&self) -> f64 {
        self.canonical_order().iter().map(|&i| self.weights[i]).sum()
    }

    /// The same set with zero-weight entries removed.
    pub fn without_zero_weights(&self) -> Result<Self> {
        let (vectors, weights) = self
            .vectors
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(v, &w)| (v.clone(), w))
            .unzip();
        Self::new(vectors, weights)
    }

    /// Indices sorted lexicographically by vector, then by weight, then by
    /// position. Used as the summation order everywhere.
    pub(crate) fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            let va = &self.vectors[a];
            let vb = &self.vectors[b];
            va.iter()
                .zip(vb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
                .then(self.weights[a].total_cmp(&self.weights[b]))
                .then(a.cmp(&b))
        });
        idx
    }

    /// Weighted average using an explicit per-entry weight vector, summed in
    /// canonical order. Entries with zero effective weight are skipped.
    pub(crate) fn average_with(&self, weights: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        let mut total = 0.0;
        for i in self.canonical_order() {
            let w = weights[i];
            if w > 0.0 {
                vector::axpy(&mut acc, w, &self.vectors[i]);
                total += w;
            }
        }
        acc.iter_mut().for_each(|a| *a /= total);
        acc
    }
}

/// The base rule an [`AggregatorSpec`] applies before the optional trimming
/// stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseRule {
    WeightedMean,
    WeightedGm,
    WeightedCwmed,
}

impl BaseRule {
    pub fn as_str(self) -> &'static str {
        match self {
            BaseRule::WeightedMean => "weighted-mean",
            BaseRule::WeightedGm => "weighted-gm",
            BaseRule::WeightedCwmed => "weighted-cwmed",
        }
    }
}

impl std::str::FromStr for BaseRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-mean" | "mean" => Ok(BaseRule::WeightedMean),
            "weighted-gm" | "gm" => Ok(BaseRule::WeightedGm),
            "weighted-cwmed" | "cwmed" => Ok(BaseRule::WeightedCwmed),
            other => Err(Error::invalid(format!(
                "unknown base aggregator '{other}' (expected weighted-mean, weighted-gm or weighted-cwmed)"
            ))),
        }
    }
}

impl std::fmt::Display for BaseRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_gm_tolerance() -> f64 {
    DEFAULT_GM_TOLERANCE
}

fn default_gm_max_iters() -> usize {
    DEFAULT_GM_MAX_ITERS
}

/// A fully configured aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub base: BaseRule,
    #[serde(default)]
    pub ctma: bool,
    /// Byzantine weight fraction assumed by the rule, in `[0, 1/2)`.
    pub lambda: f64,
    #[serde(default = "default_gm_tolerance")]
    pub gm_tolerance: f64,
    #[serde(default = "default_gm_max_iters")]
    pub gm_max_iters: usize,
}

impl AggregatorSpec {
    pub fn new(base: BaseRule, ctma: bool, lambda: f64) -> Self {
        Self {
            base,
            ctma,
            lambda,
            gm_tolerance: DEFAULT_GM_TOLERANCE,
            gm_max_iters: DEFAULT_GM_MAX_ITERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.lambda) {
            return Err(Error::config("aggregator.lambda", format!("{} must be >= 0 and < 0.5", self.lambda)));
        }
        if !(self.gm_tolerance > 0.0) {
            return Err(Error::config("aggregator.gm_tolerance", "must be > 0"));
        }
        if self.gm_max_iters == 0 {
            return Err(Error::config("aggregator.gm_max_iters", "must be >= 1"));
        }
        Ok(())
    }

    /// Short label such as `weighted-gm+ctma`.
    pub fn label(&self) -> String {
        if self.ctma {
            format!("{}+ctma", self.base)
        } else {
            self.base.to_string()
        }
    }
}

impl std::str::FromStr for AggregatorSpec {
    type Err = Error;

    /// Parses labels of the form `weighted-cwmed` or `weighted-gm+ctma`;
    /// `lambda` is left at zero for the caller to fill in.
    fn from_str(s: &str) -> Result<Self> {
        let (base, ctma) = match s.strip_suffix("+ctma") {
            Some(b) => (b, true),
            None => (s, false),
        };
        Ok(AggregatorSpec::new(base.parse()?, ctma, 0.0))
    }
}

/// The robustness coefficient `c_λ` of a configured rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessCertificate {
    /// `f64::INFINITY` when the rule carries no robustness guarantee.
    pub c_lambda: f64,
}

impl RobustnessCertificate {
    pub fn is_bounded(&self) -> bool {
        self.c_lambda.is_finite()
    }
}

/// `(1 + λ/(1 - 2λ))²`, the coefficient shared by the weighted geometric
/// median and the weighted coordinate-wise median.
pub fn median_coefficient(lambda: f64) -> f64 {
    let r = 1.0 + lambda / (1.0 - 2.0 * lambda);
    r * r
}

/// Reports `c_λ` for the configured rule. The trimmed variants scale the
/// base coefficient by `λ`; the weighted mean has no finite coefficient.
pub fn certificate(spec: &AggregatorSpec) -> RobustnessCertificate {
    let c_lambda = match spec.base {
        BaseRule::WeightedMean => f64::INFINITY,
        BaseRule::WeightedGm | BaseRule::WeightedCwmed => {
            let c = median_coefficient(spec.lambda);
            if spec.ctma {
                spec.lambda * c
            } else {
                c
            }
        }
    };
    RobustnessCertificate { c_lambda }
}

/// `Σ sᵢxᵢ / Σ sᵢ`.
pub fn weighted_mean(set: &WeightedVectorSet) -> Vec<f64> {
    set.average_with(set.weights())
}

/// Applies the configured rule: zero-weight entries are dropped, the base
/// rule is evaluated, and if `spec.ctma` its output becomes the anchor of the
/// trimming stage.
pub fn aggregate(set: &WeightedVectorSet, spec: &AggregatorSpec) -> Result<Vec<f64>> {
    spec.validate().map_err(|e| Error::invalid(e.to_string()))?;
    let set = set.without_zero_weights()?;
    let anchor = match spec.base {
        BaseRule::WeightedMean => weighted_mean(&set),
        BaseRule::WeightedGm => {
            weighted_geometric_median(&set, spec.gm_tolerance, spec.gm_max_iters).point
        }
        BaseRule::WeightedCwmed => weighted_cwmed(&set),
    };
    if spec.ctma {
        ctma(&set, spec.lambda, &anchor)
    } else {
        Ok(anchor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&[f64], f64)]) -> WeightedVectorSet {
        WeightedVectorSet::from_pairs(pairs.iter().map(|(v, w)| (v.to_vec(), *w))).unwrap()
    }

    #[test]
    fn set_validation() {
        assert!(WeightedVectorSet::new(vec![], vec![]).is_err());
        assert!(WeightedVectorSet::new(vec![vec![1.0]], vec![1.0, 2.0]).is_err());
        assert!(WeightedVectorSet::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, 1.0]).is_err());
        assert!(WeightedVectorSet::new(vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(WeightedVectorSet::new(vec![vec![1.0]], vec![-1.0]).is_err());
        assert!(WeightedVectorSet::new(vec![vec![1.0], vec![2.0]], vec![0.0, 0.0]).is_err());
        assert!(WeightedVectorSet::new(vec![vec![]], vec![1.0]).is_err());
    }

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(weighted_mean(&set(&[(&[1.0, 0.0], 1.0), (&[0.0, 1.0], 1.0)])), vec![0.5, 0.5]);
        assert_eq!(weighted_mean(&set(&[(&[2.0], 3.0), (&[6.0], 1.0)])), vec![3.0]);
        assert_eq!(weighted_mean(&set(&[(&[-4.5, 7.25], 0.3)])), vec![-4.5, 7.25]);
    }

    #[test]
    fn certificate_values() {
        let gm = AggregatorSpec::new(BaseRule::WeightedGm, false, 0.25);
        assert!((certificate(&gm).c_lambda - 2.25).abs() < 1e-15);
        let cw = AggregatorSpec::new(BaseRule::WeightedCwmed, true, 0.25);
        assert!((certificate(&cw).c_lambda - 0.5625).abs() < 1e-15);
        for base in [BaseRule::WeightedGm, BaseRule::WeightedCwmed] {
            assert_eq!(certificate(&AggregatorSpec::new(base, true, 0.0)).c_lambda, 0.0);
        }
        let mean = AggregatorSpec::new(BaseRule::WeightedMean, false, 0.1);
        assert!(!certificate(&mean).is_bounded());
    }

    #[test]
    fn spec_validation() {
        assert!(AggregatorSpec::new(BaseRule::WeightedGm, false, 0.5).validate().is_err());
        assert!(AggregatorSpec::new(BaseRule::WeightedGm, false, -0.1).validate().is_err());
        let mut s = AggregatorSpec::new(BaseRule::WeightedGm, false, 0.1);
        s.gm_max_iters = 0;
        assert!(s.validate().is_err());
        assert!(AggregatorSpec::new(BaseRule::WeightedGm, false, 0.49).validate().is_ok());
    }

    #[test]
    fn label_round_trip() {
        for label in ["weighted-mean", "weighted-gm+ctma", "weighted-cwmed"] {
            let spec: AggregatorSpec = label.parse().unwrap();
            assert_eq!(spec.label(), label);
        }
        assert!("krum".parse::<AggregatorSpec>().is_err());
    }

    #[test]
    fn zero_weight_entries_are_ignored() {
        let spec = AggregatorSpec::new(BaseRule::WeightedCwmed, false, 0.2);
        let with = set(&[(&[1.0], 1.0), (&[100.0], 0.0), (&[2.0], 2.0), (&[3.0], 1.0)]);
        let without = set(&[(&[1.0], 1.0), (&[2.0], 2.0), (&[3.0], 1.0)]);
        assert_eq!(aggregate(&with, &spec).unwrap(), aggregate(&without, &spec).unwrap());
        let mean = AggregatorSpec::new(BaseRule::WeightedMean, true, 0.2);
        assert_eq!(aggregate(&with, &mean).unwrap(), aggregate(&without, &mean).unwrap());
    }

    #[test]
    fn equal_weight_cwmed_is_classical_median() {
        let spec = AggregatorSpec::new(BaseRule::WeightedCwmed, false, 0.0);
        let s = set(&[(&[5.0, -1.0], 2.0), (&[1.0, 3.0], 2.0), (&[3.0, 0.0], 2.0), (&[9.0, 8.0], 2.0), (&[4.0, 2.0], 2.0)]);
        assert_eq!(aggregate(&s, &spec).unwrap(), vec![4.0, 2.0]);
    }

    #[test]
    fn composed_gm_ctma_hand_trace() {
        let spec = AggregatorSpec::new(BaseRule::WeightedGm, true, 1.0 / 3.0);
        let s = set(&[(&[0.0], 1.0), (&[0.1], 1.0), (&[100.0], 1.0)]);
        let out = aggregate(&s, &spec).unwrap();
        assert!((out[0] - 0.05).abs() < 1e-12, "{out:?}");
    }
}

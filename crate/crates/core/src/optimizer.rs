//! Double-momentum SGD state machines.
//!
//! The server keeps two sequences: the iterate `w`, updated by a projected
//! step along the aggregated momentum, and its importance-weighted running
//! average `x`, at which all gradients are queried. Workers keep a corrected
//! momentum `d ← g + (1 − β)(d − g̃)` where `g` and `g̃` are gradients of the
//! same sample at the new and previous query points.

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorSpec, WeightedVectorSet};
use crate::error::{Error, Result};
use crate::vector;

/// How importance weights `α_t` are chosen for the running average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaKind {
    /// `α_t = t`
    Linear,
    /// `α_1 = 1`, `α_t = C·α_{1:t−1}`.
    Geometric,
    /// `x ← γ·w + (1 − γ)·x` with constant `γ`; the `w` step uses `η` alone.
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaKind {
    /// `β = 1/s` where `s` counts the momenta the worker has produced.
    OneOverS,
    Constant,
}

fn default_alpha() -> AlphaKind {
    AlphaKind::Linear
}
fn default_beta() -> BetaKind {
    BetaKind::OneOverS
}
fn default_gamma() -> f64 {
    0.1
}
fn default_growth() -> f64 {
    1.0 / 9.0
}
fn default_beta_const() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Number of server iterations `T`.
    pub horizon: u64,
    /// Constant learning rate. `None` selects `1/(4·L·T)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: AlphaKind,
    /// Averaging weight for [`AlphaKind::Momentum`].
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Growth constant `C` for [`AlphaKind::Geometric`].
    #[serde(default = "default_growth")]
    pub growth: f64,
    #[serde(default = "default_beta")]
    pub beta: BetaKind,
    #[serde(default = "default_beta_const")]
    pub beta_const: f64,
}

impl OptimizerConfig {
    /// Linear `α`, `β = 1/s`, default learning rate.
    pub fn theory(horizon: u64) -> Self {
        Self {
            horizon,
            eta: None,
            alpha: AlphaKind::Linear,
            gamma: default_gamma(),
            growth: default_growth(),
            beta: BetaKind::OneOverS,
            beta_const: default_beta_const(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("optimizer.horizon", "must be >= 1"));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::config("optimizer.eta", format!("{eta} must be > 0")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("optimizer.gamma", format!("{} must lie in (0, 1]", self.gamma)));
        }
        if !(self.growth > 0.0 && self.growth.is_finite()) {
            return Err(Error::config("optimizer.growth", format!("{} must be > 0", self.growth)));
        }
        if !(self.beta_const > 0.0 && self.beta_const <= 1.0) {
            return Err(Error::config(
                "optimizer.beta_const",
                format!("{} must lie in (0, 1]", self.beta_const),
            ));
        }
        Ok(())
    }

    /// The configured learning rate, or `1/(4·L·T)` when unset.
    pub fn resolved_eta(&self, smoothness: f64) -> f64 {
        self.eta
            .unwrap_or_else(|| 1.0 / (4.0 * smoothness * self.horizon as f64))
    }
}

/// `min(1/(4LT), D/(σT^{3/2}))`: the constant step that balances the bias
/// and noise terms of the convergence bound. The second term is the smaller
/// one once the run is noise dominated.
pub fn balanced_eta(smoothness: f64, diameter: f64, sigma: f64, horizon: u64) -> f64 {
    let t = horizon as f64;
    let bias = 1.0 / (4.0 * smoothness * t);
    if sigma > 0.0 {
        bias.min(diameter / (sigma * t.powf(1.5)))
    } else {
        bias
    }
}

/// Momentum correction weight for a worker about to produce its `s`-th
/// momentum.
pub fn beta_for(s: u64, cfg: &OptimizerConfig) -> Result<f64> {
    if s == 0 {
        return Err(Error::InvalidState("beta requested for update count 0".into()));
    }
    Ok(match cfg.beta {
        BetaKind::OneOverS => 1.0 / s as f64,
        BetaKind::Constant => cfg.beta_const,
    })
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Incrementally maintained importance-weighted average of the iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct AnytimeAverage {
    kind: AlphaKind,
    gamma: f64,
    growth: f64,
    x: Vec<f64>,
    alpha_sum: CompensatedSum,
    count: u64,
}

impl AnytimeAverage {
    /// Starts the average at `w_1`, which receives weight `α_1`.
    pub fn new(w1: &[f64], kind: AlphaKind, gamma: f64, growth: f64) -> Self {
        let mut avg = Self {
            kind,
            gamma,
            growth,
            x: w1.to_vec(),
            alpha_sum: CompensatedSum::default(),
            count: 1,
        };
        let a1 = avg.alpha(1);
        avg.alpha_sum.add(a1);
        avg
    }

    pub fn from_config(w1: &[f64], cfg: &OptimizerConfig) -> Self {
        Self::new(w1, cfg.alpha, cfg.gamma, cfg.growth)
    }

    /// `α_k`, for the index `k` that is about to be (or was) pushed.
    /// The momentum form has no explicit weights; it reports 1.
    pub fn alpha(&self, k: u64) -> f64 {
        match self.kind {
            AlphaKind::Linear => k as f64,
            AlphaKind::Geometric if k == 1 => 1.0,
            AlphaKind::Geometric => self.growth * self.alpha_sum.value(),
            AlphaKind::Momentum => 1.0,
        }
    }

    /// `α_{1:t}` over everything pushed so far.
    pub fn alpha_sum(&self) -> f64 {
        self.alpha_sum.value()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn value(&self) -> &[f64] {
        &self.x
    }

    pub fn kind(&self) -> AlphaKind {
        self.kind
    }

    /// Folds in `w_{t+1}`.
    pub fn push(&mut self, w: &[f64]) {
        let k = self.count + 1;
        let gamma = match self.kind {
            AlphaKind::Momentum => self.gamma,
            _ => {
                let a = self.alpha(k);
                self.alpha_sum.add(a);
                a / self.alpha_sum.value()
            }
        };
        for (xi, wi) in self.x.iter_mut().zip(w) {
            *xi = gamma * wi + (1.0 - gamma) * *xi;
        }
        self.count = k;
    }
}

/// Server-side state: iterate, running average and the latest momentum and
/// update count of every worker.
#[derive(Debug, Clone)]
pub struct ServerState {
    t: u64,
    w: Vec<f64>,
    avg: AnytimeAverage,
    radius: f64,
    eta: f64,
    momenta: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

/// What a single server iteration produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Iteration index the step was taken at.
    pub t: u64,
    /// The aggregated momentum `d̂_t`.
    pub aggregate: Vec<f64>,
    /// `x_t`, the query point handed back to the arriving worker.
    pub query: Vec<f64>,
}

impl ServerState {
    /// `x1` is projected onto the domain before use.
    pub fn new(
        x1: &[f64],
        workers: usize,
        radius: f64,
        eta: f64,
        cfg: &OptimizerConfig,
    ) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("server needs at least one worker"));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid("domain radius must be > 0"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("learning rate {eta} must be > 0")));
        }
        let w = vector::project_ball(x1, radius);
        Ok(Self {
            t: 1,
            avg: AnytimeAverage::from_config(&w, cfg),
            w,
            radius,
            eta,
            momenta: vec![Vec::new(); workers],
            counts: vec![0; workers],
        })
    }

    /// Index of the next iteration.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn iterate(&self) -> &[f64] {
        &self.w
    }

    /// The current running average `x_t`.
    pub fn average(&self) -> &[f64] {
        self.avg.value()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Latest momentum received from `worker`; empty before its first arrival.
    pub fn momentum(&self, worker: usize) -> &[f64] {
        &self.momenta[worker]
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Weighted set of every worker that has reported at least once, in
    /// worker order, optionally restricted by `include`.
    pub fn reported_set(&self, include: impl Fn(usize) -> bool) -> Option<WeightedVectorSet> {
        let (vectors, weights): (Vec<_>, Vec<_>) = (0..self.counts.len())
            .filter(|&i| self.counts[i] > 0 && include(i))
            .map(|i| (self.momenta[i].clone(), self.counts[i] as f64))
            .unzip();
        if vectors.is_empty() {
            None
        } else {
            WeightedVectorSet::new(vectors, weights).ok()
        }
    }

    /// One server iteration: record the arriving momentum, aggregate over
    /// all reporting workers, take a projected step on `w` and fold the new
    /// iterate into the running average.
    pub fn step(&mut self, worker: usize, received: &[f64], agg: &AggregatorSpec) -> Result<StepOutcome> {
        let t = self.t;
        let fault = |message: String| Error::SimulationFault { t, message };
        if worker >= self.counts.len() {
            return Err(fault(format!("worker {worker} out of range")));
        }
        if received.len() != self.w.len() || !vector::is_finite(received) {
            return Err(fault(format!("worker {worker} sent a malformed or non-finite momentum")));
        }
        self.momenta[worker] = received.to_vec();
        self.counts[worker] += 1;

        let set = self
            .reported_set(|_| true)
            .ok_or_else(|| fault("no reported momenta".into()))?;
        let d_hat = aggregate(&set, agg).map_err(|e| fault(e.to_string()))?;

        let query = self.avg.value().to_vec();
        let step = self.eta * self.avg.alpha(t);
        let mut w_next = self.w.clone();
        vector::axpy(&mut w_next, -step, &d_hat);
        self.w = vector::project_ball(&w_next, self.radius);
        self.avg.push(&self.w);
        self.t += 1;

        if !vector::is_finite(&self.w) || !vector::is_finite(self.avg.value()) {
            return Err(fault("iterate became non-finite".into()));
        }
        Ok(StepOutcome {
            t,
            aggregate: d_hat,
            query,
        })
    }
}

/// An honest worker's corrected momentum and the point it was computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct HonestWorkerState {
    pub d: Vec<f64>,
    pub x_last: Vec<f64>,
    /// Number of momenta produced so far (the initial one counts).
    pub s: u64,
    /// Iteration at which `x_last` was handed out; 0 for the starting point.
    pub last_query_t: u64,
}

impl HonestWorkerState {
    /// First momentum: a plain stochastic gradient at the starting point.
    pub fn init(g1: Vec<f64>, x1: &[f64]) -> Result<Self> {
        if !vector::is_finite(&g1) {
            return Err(Error::SimulationFault {
                t: 0,
                message: "initial gradient is non-finite".into(),
            });
        }
        Ok(Self {
            d: g1,
            x_last: x1.to_vec(),
            s: 1,
            last_query_t: 0,
        })
    }

    /// `d ← g_new + (1 − β)(d − g_stale)`; `g_new` and `g_stale` must come
    /// from the same sample at `x_new` and `x_last` respectively.
    pub fn update(&mut self, g_new: &[f64], g_stale: &[f64], beta: f64, x_new: &[f64], t: u64) -> Result<()> {
        if !vector::is_finite(g_new) || !vector::is_finite(g_stale) {
            return Err(Error::SimulationFault {
                t,
                message: "worker gradient is non-finite".into(),
            });
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid(format!("beta {beta} must lie in (0, 1]")));
        }
        let keep = 1.0 - beta;
        for ((d, gn), gs) in self.d.iter_mut().zip(g_new).zip(g_stale) {
            *d = gn + keep * (*d - gs);
        }
        self.s += 1;
        self.x_last = x_new.to_vec();
        self.last_query_t = t;
        Ok(())
    }
}

/// Upper bound on the distance between a worker's consecutive query points
/// under linear weights: `‖x_t − x_{t−τ}‖ ≤ 4·D·τ/t`.
pub fn query_drift_bound(diameter: f64, tau: u64, t: u64) -> f64 {
    4.0 * diameter * tau as f64 / t as f64
}

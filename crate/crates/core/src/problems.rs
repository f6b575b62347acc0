//! Synthetic stochastic convex objectives.
//!
//! Each problem exposes a stochastic gradient oracle keyed by a
//! [`SampleToken`]: the token identifies the random sample `z`, so the same
//! sample can be evaluated at two different points, which the corrected
//! momentum update needs. Tokens carry a 64-bit seed from which the sample is
//! regenerated on demand.
//!
//! Three families are provided:
//!
//! * additive-noise quadratic: `∇f(x; z) = A(x − x*) + z` with Gaussian `z`,
//!   `E‖z‖² = σ²`. Noise does not depend on `x`, so `σ_L = 0`.
//! * random-curvature quadratic: `∇f(x; z) = (A + Z)(x − x*) + z` where `Z`
//!   is a zero-mean symmetric rank-one perturbation with spectral norm at
//!   most `σ_L`.
//! * synthetic logistic regression with a small ridge term, sampled one
//!   example at a time from a fixed generated dataset.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    AdditiveNoiseQuadratic,
    RandomCurvatureQuadratic,
    SyntheticLogistic,
}

/// How the eigenvalues of the curvature matrix are spread over
/// `[mu_min, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spectrum {
    Linear,
    Geometric,
}

fn default_dim() -> usize {
    20
}
fn default_smoothness() -> f64 {
    1.0
}
fn default_mu_min() -> f64 {
    0.1
}
fn default_sigma() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    10.0
}
fn default_spectrum() -> Spectrum {
    Spectrum::Linear
}
fn default_samples() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Smoothness constant `L`; the top of the curvature spectrum.
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    /// Bottom of the curvature spectrum (ridge weight for logistic).
    #[serde(default = "default_mu_min")]
    pub mu_min: f64,
    #[serde(default = "default_spectrum")]
    pub spectrum: Spectrum,
    /// Additive noise scale `σ`.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Smoothness-noise scale `σ_L` (random-curvature family).
    #[serde(default)]
    pub sigma_l: f64,
    /// Domain radius `R`; the domain is the origin-centred L2 ball.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// `x*` (or the planted logistic parameter) is drawn uniformly in the ball
    /// of this radius. Defaults to `R/2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum_radius: Option<f64>,
    /// Dataset size for the logistic family.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind) -> Self {
        Self {
            kind,
            dim: default_dim(),
            smoothness: default_smoothness(),
            mu_min: default_mu_min(),
            spectrum: default_spectrum(),
            sigma: default_sigma(),
            sigma_l: 0.0,
            radius: default_radius(),
            optimum_radius: None,
            samples: default_samples(),
        }
    }

    pub fn optimum_radius(&self) -> f64 {
        self.optimum_radius.unwrap_or(0.5 * self.radius)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("problem.dim", "must be >= 1"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::config("problem.radius", "must be > 0"));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(Error::config("problem.smoothness", "must be > 0"));
        }
        if !(self.mu_min > 0.0 && self.mu_min <= self.smoothness) {
            return Err(Error::config("problem.mu_min", "must lie in (0, smoothness]"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("problem.sigma", "must be >= 0"));
        }
        if !(self.sigma_l >= 0.0 && self.sigma_l <= self.smoothness) {
            return Err(Error::config("problem.sigma_l", "must lie in [0, smoothness]"));
        }
        if self.kind == ProblemKind::RandomCurvatureQuadratic
            && self.smoothness - self.sigma_l < self.mu_min
        {
            return Err(Error::config(
                "problem.sigma_l",
                "smoothness - sigma_l must be >= mu_min so every sampled curvature stays within [mu_min - sigma_l, smoothness]",
            ));
        }
        if self.kind != ProblemKind::RandomCurvatureQuadratic && self.sigma_l != 0.0 {
            return Err(Error::config("problem.sigma_l", "only the random-curvature family has sigma_l > 0"));
        }
        let r = self.optimum_radius();
        if !(r >= 0.0 && r < self.radius) {
            return Err(Error::config("problem.optimum_radius", "must lie in [0, radius)"));
        }
        if self.kind == ProblemKind::SyntheticLogistic && self.samples < 2 {
            return Err(Error::config("problem.samples", "must be >= 2"));
        }
        Ok(())
    }
}

/// Identifies one random sample `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleToken(pub u64);

/// Whether a gradient is taken against the true data or a label-corrupted
/// copy (see [`crate::attacks`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Labels {
    Clean,
    Flipped,
}

#[derive(Debug, Clone)]
struct LogisticData {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    ridge: f64,
}

impl LogisticData {
    fn sample_grad(&self, i: usize, x: &[f64], labels: Labels) -> Vec<f64> {
        let a = &self.features[i];
        let y = match labels {
            Labels::Clean => self.labels[i],
            Labels::Flipped => 1.0 - self.labels[i],
        };
        let p = sigmoid(vector::dot(a, x));
        let mut g = vector::scale(x, self.ridge);
        vector::axpy(&mut g, p - y, a);
        g
    }

    fn loss(&self, x: &[f64]) -> f64 {
        let n = self.features.len() as f64;
        let data: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(a, y)| {
                let u = vector::dot(a, x);
                softplus(u) - y * u
            })
            .sum();
        data / n + 0.5 * self.ridge * vector::norm_sq(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.features.len() as f64;
        let mut g = vec![0.0; x.len()];
        for (a, y) in self.features.iter().zip(&self.labels) {
            vector::axpy(&mut g, (sigmoid(vector::dot(a, x)) - y) / n, a);
        }
        vector::axpy(&mut g, self.ridge, x);
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let n = self.features.len() as f64;
        let mut h = DMatrix::<f64>::identity(d, d) * self.ridge;
        for a in &self.features {
            let p = sigmoid(vector::dot(a, x));
            let c = p * (1.0 - p) / n;
            let av = DVector::from_column_slice(a);
            h += &av * av.transpose() * c;
        }
        h
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// A generated problem instance. Immutable once built.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ProblemSpec,
    /// Row-major curvature matrix (quadratics only).
    curvature: Vec<f64>,
    x_star: Vec<f64>,
    logistic: Option<LogisticData>,
    smoothness: f64,
    f_star: f64,
}

impl Problem {
    pub fn generate(spec: &ProblemSpec, rng: &mut StreamRng) -> Result<Self> {
        spec.validate()?;
        match spec.kind {
            ProblemKind::AdditiveNoiseQuadratic | ProblemKind::RandomCurvatureQuadratic => {
                Ok(Self::quadratic(spec, rng))
            }
            ProblemKind::SyntheticLogistic => Self::logistic(spec, rng),
        }
    }

    fn quadratic(spec: &ProblemSpec, rng: &mut StreamRng) -> Self {
        let d = spec.dim;
        let top = spec.smoothness - spec.sigma_l;
        let eig: Vec<f64> = (0..d)
            .map(|k| {
                if d == 1 {
                    return top;
                }
                let frac = k as f64 / (d - 1) as f64;
                match spec.spectrum {
                    Spectrum::Linear => spec.mu_min + frac * (top - spec.mu_min),
                    Spectrum::Geometric => spec.mu_min * (top / spec.mu_min).powf(frac),
                }
            })
            .collect();
        let gauss = DMatrix::from_fn(d, d, |_, _| rng::gaussian_vector(rng, 1, 1.0)[0]);
        let q = gauss.qr().q();
        let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
        let mut curvature = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                curvature[i * d + j] = 0.5 * (a[(i, j)] + a[(j, i)]);
            }
        }
        let x_star = rng::uniform_in_ball(rng, d, spec.optimum_radius());
        Self {
            spec: *spec,
            curvature,
            x_star,
            logistic: None,
            smoothness: spec.smoothness,
            f_star: 0.0,
        }
    }

    fn logistic(spec: &ProblemSpec, rng: &mut StreamRng) -> Result<Self> {
        let d = spec.dim;
        let planted = rng::uniform_in_ball(rng, d, spec.optimum_radius());
        let scale = 2.0 / (d as f64).sqrt();
        let mut features = Vec::with_capacity(spec.samples);
        let mut labels = Vec::with_capacity(spec.samples);
        for _ in 0..spec.samples {
            let a = rng::gaussian_vector(rng, d, scale);
            let p = sigmoid(vector::dot(&a, &planted));
            labels.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            features.push(a);
        }
        let max_feature_sq = features
            .iter()
            .map(|a| vector::norm_sq(a))
            .fold(0.0, f64::max);
        let data = LogisticData {
            features,
            labels,
            ridge: spec.mu_min,
        };
        let smoothness = 0.25 * max_feature_sq + spec.mu_min;
        let x_star = solve_logistic(&data, spec.radius, smoothness)?;
        let f_star = data.loss(&x_star);
        Ok(Self {
            spec: *spec,
            curvature: Vec::new(),
            x_star,
            logistic: Some(data),
            smoothness,
            f_star,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn radius(&self) -> f64 {
        self.spec.radius
    }

    /// `D = 2R`
    pub fn diameter(&self) -> f64 {
        2.0 * self.spec.radius
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    /// Smoothness constant `L` that every sampled gradient satisfies.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn sigma_l(&self) -> f64 {
        self.spec.sigma_l
    }

    /// A constant `σ` with `E‖∇f(x; z) − ∇f(x)‖² ≤ σ²` on the whole domain.
    pub fn noise_bound(&self) -> f64 {
        match self.spec.kind {
            ProblemKind::AdditiveNoiseQuadratic => self.spec.sigma,
            ProblemKind::RandomCurvatureQuadratic => {
                let reach = self.diameter() * self.spec.sigma_l;
                (self.spec.sigma * self.spec.sigma + reach * reach).sqrt()
            }
            ProblemKind::SyntheticLogistic => {
                let data = self.logistic.as_ref().expect("logistic data");
                data.features
                    .iter()
                    .map(|a| vector::norm(a))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// `‖∇f(x*)‖`
    pub fn g_star(&self) -> f64 {
        vector::norm(&self.gradient(&self.x_star))
    }

    pub fn draw_sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> SampleToken {
        SampleToken(rng.next_u64())
    }

    pub fn stochastic_gradient(&self, x: &[f64], token: SampleToken) -> Result<Vec<f64>> {
        self.stochastic_gradient_with(x, token, Labels::Clean)
    }

    pub fn stochastic_gradient_with(&self, x: &[f64], token: SampleToken, labels: Labels) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let d = self.dim();
        let mut sample = StreamRng::seed_from_u64(token.0);
        Ok(match self.spec.kind {
            ProblemKind::AdditiveNoiseQuadratic => {
                let mut g = self.curvature_times(&self.displacement(x, labels));
                let noise = rng::gaussian_vector(&mut sample, d, self.spec.sigma / (d as f64).sqrt());
                vector::axpy(&mut g, 1.0, &noise);
                g
            }
            ProblemKind::RandomCurvatureQuadratic => {
                let v = self.displacement(x, labels);
                let mut g = self.curvature_times(&v);
                let noise = rng::gaussian_vector(&mut sample, d, self.spec.sigma / (d as f64).sqrt());
                let xi: f64 = sample.random_range(-1.0..=1.0);
                let u = rng::unit_vector(&mut sample, d);
                vector::axpy(&mut g, self.spec.sigma_l * xi * vector::dot(&u, &v), &u);
                vector::axpy(&mut g, 1.0, &noise);
                g
            }
            ProblemKind::SyntheticLogistic => {
                let data = self.logistic.as_ref().expect("logistic data");
                let n = data.features.len() as u128;
                let i = ((sample.next_u64() as u128 * n) >> 64) as usize;
                data.sample_grad(i, x, labels)
            }
        })
    }

    /// Exact `∇f(x)`; simulator-side information only.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.logistic {
            Some(data) => data.gradient(x),
            None => self.curvature_times(&vector::sub(x, &self.x_star)),
        }
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        match &self.logistic {
            Some(data) => data.loss(x),
            None => {
                let v = vector::sub(x, &self.x_star);
                0.5 * vector::dot(&v, &self.curvature_times(&v))
            }
        }
    }

    /// `f(x) − f(x*)`
    pub fn excess_loss(&self, x: &[f64]) -> f64 {
        self.loss(x) - self.f_star
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!("point has dimension {} (expected {})", x.len(), self.dim())));
        }
        if vector::norm(x) > self.radius() * (1.0 + 1e-12) {
            return Err(Error::invalid("query point lies outside the domain"));
        }
        Ok(())
    }

    /// `x − x*`, or `x + x*` when labels are flipped (the regression analogue
    /// of label flipping negates the target).
    fn displacement(&self, x: &[f64], labels: Labels) -> Vec<f64> {
        match labels {
            Labels::Clean => vector::sub(x, &self.x_star),
            Labels::Flipped => vector::add(x, &self.x_star),
        }
    }

    fn curvature_times(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| vector::dot(&self.curvature[i * d..(i + 1) * d], v))
            .collect()
    }
}

/// Full-batch minimiser over the ball: damped Newton from the origin, with
/// projected gradient descent as a fallback when the unconstrained optimum
/// lies outside the domain.
fn solve_logistic(data: &LogisticData, radius: f64, smoothness: f64) -> Result<Vec<f64>> {
    let d = data.features[0].len();
    let mut x = vec![0.0; d];
    for _ in 0..100 {
        let g = data.gradient(&x);
        if vector::norm(&g) <= 1e-12 {
            break;
        }
        let h = data.hessian(&x);
        let step = h
            .cholesky()
            .ok_or_else(|| Error::invalid("logistic Hessian is not positive definite"))?
            .solve(&DVector::from_vec(g.clone()));
        let f0 = data.loss(&x);
        let slope = vector::dot(&g, step.as_slice());
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
            if data.loss(&cand) <= f0 - 0.25 * t * slope || t < 1e-10 {
                x = cand;
                break;
            }
            t *= 0.5;
        }
    }
    if vector::norm(&x) < radius && vector::norm(&data.gradient(&x)) <= 1e-10 {
        return Ok(x);
    }
    // Constrained optimum: projected gradient with step 1/L until the
    // gradient mapping vanishes.
    let mut x = vector::project_ball(&x, radius);
    for _ in 0..1_000_000 {
        let g = data.gradient(&x);
        let mut next = x.clone();
        vector::axpy(&mut next, -1.0 / smoothness, &g);
        let next = vector::project_ball(&next, radius);
        let moved = vector::dist(&next, &x) * smoothness;
        x = next;
        if moved <= 1e-10 {
            return Ok(x);
        }
    }
    Err(Error::invalid("logistic optimum did not converge"))
}

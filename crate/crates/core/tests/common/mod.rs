//! Shared Monte-Carlo harness for robustness bounds.

use byzasync::aggregation::WeightedVectorSet;
use byzasync::rng::{gaussian_vector, stream, Role};
use byzasync::vector;
use rand::Rng;

/// Honest Gaussian vectors with per-vector variance; adversaries share one
/// point at distance 10⁶ and hold exactly a `lambda` share of the weight.
pub struct Harness {
    pub honest: usize,
    pub byzantine: usize,
    pub lambda: f64,
    pub dim: usize,
}

impl Harness {
    /// Returns (E‖Â − x̄_G‖², ρ²) estimated over `trials` draws.
    pub fn estimate(&self, trials: usize, seed: u64, rule: impl Fn(&WeightedVectorSet) -> Vec<f64>) -> (f64, f64) {
        let mut rng = stream(seed, 0, Role::Aux, 0);
        let honest_w: Vec<f64> = (0..self.honest).map(|_| rng.random_range(1.0..10.0)).collect();
        let honest_total: f64 = honest_w.iter().sum();
        let byz_total = self.lambda / (1.0 - self.lambda) * honest_total;
        let byz_w = vec![byz_total / self.byzantine as f64; self.byzantine];
        let variances: Vec<f64> = (0..self.honest).map(|_| rng.random_range(0.5..2.0)).collect();
        let p: Vec<f64> = honest_w.iter().map(|w| w / honest_total).collect();
        // E‖x_i − x̄_G‖² for independent N(μ, v_i I_d) draws.
        let pooled: f64 = p.iter().zip(&variances).map(|(pj, vj)| pj * pj * vj).sum();
        let rho_i: Vec<f64> = (0..self.honest)
            .map(|i| self.dim as f64 * (variances[i] * (1.0 - 2.0 * p[i]) + pooled))
            .collect();
        let rho_sq: f64 = p.iter().zip(&rho_i).map(|(a, b)| a * b).sum();

        let far = vec![1e6 / (self.dim as f64).sqrt(); self.dim];
        let mut err = 0.0;
        for _ in 0..trials {
            let mut vectors: Vec<Vec<f64>> = variances
                .iter()
                .map(|v| gaussian_vector(&mut rng, self.dim, v.sqrt()))
                .collect();
            let mut xbar = vec![0.0; self.dim];
            for (x, pi) in vectors.iter().zip(&p) {
                vector::axpy(&mut xbar, *pi, x);
            }
            vectors.extend((0..self.byzantine).map(|_| far.clone()));
            let weights: Vec<f64> = honest_w.iter().chain(&byz_w).copied().collect();
            let set = WeightedVectorSet::new(vectors, weights).unwrap();
            err += vector::dist_sq(&rule(&set), &xbar);
        }
        (err / trials as f64, rho_sq)
    }
}

//! (mu/mu_w, lambda)-CMA-ES with the standard strategy-parameter defaults.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-12;

/// Strategy parameters, echoed into run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaParams {
    pub dim: usize,
    pub population_size: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(dim: usize) -> Self {
        let n = dim as f64;
        let lambda = 4 + (3.0 * n.ln()).floor() as usize;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            dim,
            population_size: lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub z: Vec<f64>,
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub covariance: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: u64,
    pub rng_seed: u64,
    pub params: CmaParams,
}

/// `B` and `D` with `C = B diag(D^2) B^T`, eigenvalues clamped from below.
fn factor(c: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(c.clone());
    let d = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR).sqrt());
    (eig.eigenvectors, d)
}

pub fn cma_init(dim: usize, mean0: &[f64], sigma0: f64, seed: u64) -> Result<CmaState> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if mean0.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: mean0.len(),
        });
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma0 must be positive, got {sigma0}")));
    }
    Ok(CmaState {
        mean: DVector::from_column_slice(mean0),
        sigma: sigma0,
        covariance: DMatrix::identity(dim, dim),
        p_sigma: DVector::zeros(dim),
        p_c: DVector::zeros(dim),
        generation: 0,
        rng_seed: seed,
        params: CmaParams::new(dim),
    })
}

impl CmaState {
    pub fn population_size(&self) -> usize {
        self.params.population_size
    }

    /// The current generation's candidates. Pure in `(rng_seed, generation, state)`.
    pub fn ask(&self) -> Vec<Candidate> {
        let dim = self.params.dim;
        let (b, d) = factor(&self.covariance);
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(self.generation);
        (0..self.population_size())
            .map(|_| {
                let n = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                let y = &b * d.component_mul(&n);
                Candidate {
                    z: (&self.mean + self.sigma * y).as_slice().to_vec(),
                    fitness: None,
                }
            })
            .collect()
    }

    /// Updates the distribution from one evaluated generation (minimization).
    /// NaN fitness ranks last; ties keep candidate order.
    pub fn tell(&mut self, candidates: &[Candidate]) -> Result<()> {
        let p = &self.params;
        if candidates.len() != p.population_size {
            return Err(Error::InvalidParameter(format!(
                "tell needs {} candidates, got {}",
                p.population_size,
                candidates.len()
            )));
        }
        let mut order: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            let f = c
                .fitness
                .ok_or_else(|| Error::InvalidParameter(format!("candidate {i} has no fitness")))?;
            if c.z.len() != p.dim {
                return Err(Error::LengthMismatch {
                    expected: p.dim,
                    actual: c.z.len(),
                });
            }
            order.push((i, f));
        }
        order.sort_by(|a, b| match (a.1.is_nan(), b.1.is_nan()) {
            (false, false) => a.1.total_cmp(&b.1),
            (x, y) => x.cmp(&y),
        });

        let n = p.dim as f64;
        let old_mean = self.mean.clone();
        let ys: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|(i, _)| (DVector::from_column_slice(&candidates[*i].z) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(p.dim);
        for (w, y) in p.weights.iter().zip(&ys) {
            y_w += *w * y;
        }
        self.mean = &old_mean + self.sigma * &y_w;

        let (b, d) = factor(&self.covariance);
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();
        self.p_sigma = (1.0 - p.c_sigma) * &self.p_sigma
            + (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt() * (&inv_sqrt * &y_w);
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - p.c_sigma).powf(2.0 * (self.generation as f64 + 1.0));
        let h_sigma = if ps_norm / decay.sqrt() / p.chi_n < 1.4 + 2.0 / (n + 1.0) {
            1.0
        } else {
            0.0
        };
        self.p_c = (1.0 - p.c_c) * &self.p_c + h_sigma * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(p.dim, p.dim);
        for (w, y) in p.weights.iter().zip(&ys) {
            rank_mu += *w * y * y.transpose();
        }
        let keep = 1.0 - p.c_1 - p.c_mu + (1.0 - h_sigma) * p.c_1 * p.c_c * (2.0 - p.c_c);
        let c = keep * &self.covariance + p.c_1 * &self.p_c * self.p_c.transpose() + p.c_mu * rank_mu;
        self.covariance = (&c + c.transpose()) * 0.5;
        self.sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.generation += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaOutcome {
    pub best_z: Vec<f64>,
    pub best_fitness: f64,
    pub evals: usize,
    /// Best fitness after each completed or interrupted generation.
    pub best_history: Vec<f64>,
}

/// Ask/evaluate/tell until a fitness `<= target` appears or no further full
/// generation fits in `max_evals`. Returns the best point ever evaluated.
pub fn cma_minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    mean0: &[f64],
    sigma0: f64,
    max_evals: usize,
    target: f64,
    seed: u64,
) -> Result<CmaOutcome> {
    let mut state = cma_init(mean0.len(), mean0, sigma0, seed)?;
    let lambda = state.population_size();
    if max_evals < lambda {
        return Err(Error::InsufficientBudget {
            budget: max_evals,
            required: lambda,
        });
    }
    let mut best = CmaOutcome {
        best_z: mean0.to_vec(),
        best_fitness: f64::INFINITY,
        evals: 0,
        best_history: Vec::new(),
    };
    while best.evals + lambda <= max_evals {
        let mut candidates = state.ask();
        for c in candidates.iter_mut() {
            let value = f(&c.z);
            best.evals += 1;
            c.fitness = Some(value);
            if value < best.best_fitness {
                best.best_fitness = value;
                best.best_z = c.z.clone();
            }
            if value <= target {
                best.best_history.push(best.best_fitness);
                return Ok(best);
            }
        }
        best.best_history.push(best.best_fitness);
        state.tell(&candidates)?;
    }
    Ok(best)
}

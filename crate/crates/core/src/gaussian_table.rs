//! Mean-field Gaussian parameter tables.
//!
//! A [`GaussianTable`] holds independent `N(mu, softplus(rho)^2)` factors for
//! every entry of a `rows x cols` matrix (the embedding table `E` or the
//! aggregation-weight table `W`). A [`PriorSnapshot`] is a frozen copy of such
//! factors used as the prior in the KL term.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::standard_normal;

/// Scale of freshly initialised entries: `mu ~ N(0, INIT_SCALE^2)`, `sigma = INIT_SCALE`.
pub const INIT_SCALE: f64 = 0.1;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `KL(N(mu, sigma^2) || N(mu0, sigma0^2))`.
pub fn kl_gaussian(mu: f64, sigma: f64, mu0: f64, sigma0: f64) -> f64 {
    let d = mu - mu0;
    (sigma0 / sigma).ln() + (sigma * sigma + d * d) / (2.0 * sigma0 * sigma0) - 0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTable {
    rows: usize,
    cols: usize,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl GaussianTable {
    /// Random initialisation: `mu ~ N(0, 0.1^2)` i.i.d. and `sigma = 0.1`.
    pub fn init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let n = rows * cols;
        let mu = (0..n).map(|_| INIT_SCALE * standard_normal(rng)).collect();
        Self {
            rows,
            cols,
            mu,
            rho: vec![inverse_softplus(INIT_SCALE); n],
        }
    }

    /// Table whose factors equal `N(mean, sigma^2)` everywhere.
    pub fn constant(rows: usize, cols: usize, mean: f64, sigma: f64) -> Self {
        Self {
            rows,
            cols,
            mu: vec![mean; rows * cols],
            rho: vec![inverse_softplus(sigma); rows * cols],
        }
    }

    pub fn from_parts(rows: usize, cols: usize, mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rows * cols || rho.len() != rows * cols {
            return Err(Error::invalid(format!(
                "table parts have {} / {} entries, expected {rows}x{cols}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(Self { rows, cols, mu, rho })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    pub fn buffers_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.mu, &mut self.rho)
    }

    pub fn mu_row(&self, row: usize) -> &[f64] {
        &self.mu[row * self.cols..(row + 1) * self.cols]
    }

    pub fn sigma(&self, row: usize, col: usize) -> f64 {
        softplus(self.rho[row * self.cols + col])
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn param_count(&self) -> usize {
        2 * self.rows * self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.rho).all(|v| v.is_finite())
    }

    /// Appends one row drawn from the initialisation distribution.
    pub fn push_init_row<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for _ in 0..self.cols {
            self.mu.push(INIT_SCALE * standard_normal(rng));
            self.rho.push(inverse_softplus(INIT_SCALE));
        }
        self.rows += 1;
    }

    /// Reparametrised draw of one row: `mu + sigma * noise`, written to `out`.
    pub fn sample_row_into(&self, row: usize, noise: &[f64], out: &mut [f64]) {
        let base = row * self.cols;
        for j in 0..self.cols {
            out[j] = self.mu[base + j] + softplus(self.rho[base + j]) * noise[j];
        }
    }

    /// Samples the listed rows with the given standard-normal noise
    /// (`indices.len() x cols`, row-major). Only the requested rows are touched.
    pub fn sample_rows(&self, indices: &[usize], noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != indices.len() * self.cols {
            return Err(Error::invalid(format!(
                "noise has {} entries, expected {}",
                noise.len(),
                indices.len() * self.cols
            )));
        }
        let mut out = vec![0.0; noise.len()];
        for (i, &row) in indices.iter().enumerate() {
            if row >= self.rows {
                return Err(Error::invalid(format!(
                    "row {row} out of range for table with {} rows",
                    self.rows
                )));
            }
            let span = i * self.cols..(i + 1) * self.cols;
            self.sample_row_into(row, &noise[span.clone()], &mut out[span]);
        }
        Ok(out)
    }

    fn check_shape(&self, prior: &PriorSnapshot) -> Result<()> {
        if prior.rows != self.rows || prior.cols != self.cols {
            return Err(Error::invalid(format!(
                "prior shape {}x{} does not match table {}x{}",
                prior.rows, prior.cols, self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Closed-form `sum_ij KL(q_ij || prior_ij)`.
    pub fn kl_to_prior(&self, prior: &PriorSnapshot) -> Result<f64> {
        self.check_shape(prior)?;
        Ok((0..self.mu.len())
            .map(|i| kl_gaussian(self.mu[i], softplus(self.rho[i]), prior.mu0[i], prior.sigma0[i]))
            .sum())
    }

    /// Adds `scale * d KL / d(mu, rho)` into the gradient buffers and returns the KL value.
    pub fn accumulate_kl_grad(
        &self,
        prior: &PriorSnapshot,
        scale: f64,
        grad_mu: &mut [f64],
        grad_rho: &mut [f64],
    ) -> Result<f64> {
        self.check_shape(prior)?;
        let mut kl = 0.0;
        for i in 0..self.mu.len() {
            let sigma = softplus(self.rho[i]);
            let (mu0, sigma0) = (prior.mu0[i], prior.sigma0[i]);
            let var0 = sigma0 * sigma0;
            kl += kl_gaussian(self.mu[i], sigma, mu0, sigma0);
            grad_mu[i] += scale * (self.mu[i] - mu0) / var0;
            grad_rho[i] += scale * (sigma / var0 - 1.0 / sigma) * sigmoid(self.rho[i]);
        }
        Ok(kl)
    }

    /// Freezes the current factors as a prior.
    pub fn snapshot(&self) -> PriorSnapshot {
        PriorSnapshot {
            rows: self.rows,
            cols: self.cols,
            mu0: self.mu.clone().into(),
            sigma0: self.sigmas().into(),
        }
    }
}

/// Immutable prior factors `N(mu0, sigma0^2)`; cloning shares the buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSnapshot {
    rows: usize,
    cols: usize,
    mu0: Arc<[f64]>,
    sigma0: Arc<[f64]>,
}

impl PriorSnapshot {
    /// The `N(0, 1)` prior placed on every entry before any data is seen.
    pub fn standard(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            mu0: vec![0.0; rows * cols].into(),
            sigma0: vec![1.0; rows * cols].into(),
        }
    }

    pub fn from_parts(rows: usize, cols: usize, mu0: Vec<f64>, sigma0: Vec<f64>) -> Result<Self> {
        if mu0.len() != rows * cols || sigma0.len() != rows * cols {
            return Err(Error::invalid("prior parts do not match the declared shape"));
        }
        if sigma0.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("prior scales must be positive and finite"));
        }
        Ok(Self {
            rows,
            cols,
            mu0: mu0.into(),
            sigma0: sigma0.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn sigma0(&self) -> &[f64] {
        &self.sigma0
    }

    /// A new snapshot with `extra` standard-normal rows appended (used when a
    /// collision-free table grows).
    pub fn with_standard_rows(&self, extra: usize) -> Self {
        let mut mu0 = self.mu0.to_vec();
        let mut sigma0 = self.sigma0.to_vec();
        mu0.resize(mu0.len() + extra * self.cols, 0.0);
        sigma0.resize(sigma0.len() + extra * self.cols, 1.0);
        Self {
            rows: self.rows + extra,
            cols: self.cols,
            mu0: mu0.into(),
            sigma0: sigma0.into(),
        }
    }
}

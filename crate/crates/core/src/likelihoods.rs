//! Likelihood heads `p_theta(y | features)` with analytic gradients with
//! respect to both `theta` and the input features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Observed target of one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Class(usize),
    Real(f64),
    Count(u64),
}

/// Per-sample predictive statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Probabilities(Vec<f64>),
    Mean(f64),
}

impl Prediction {
    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        match self {
            Prediction::Probabilities(p) => {
                let mut best = 0;
                for (i, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = i;
                    }
                }
                Some(best)
            }
            Prediction::Mean(_) => None,
        }
    }

    /// Point estimate: the argmax class as a number, or the predicted mean.
    pub fn point(&self) -> f64 {
        match self {
            Prediction::Probabilities(_) => self.argmax().unwrap_or(0) as f64,
            Prediction::Mean(m) => *m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum HeadKind {
    /// `softmax(W^T f + b)` over `classes` outcomes.
    CategoricalLinear { classes: usize },
    /// `N(y; w2 . tanh(W1^T f + b1) + b2, sigma_y^2)`.
    GaussianMlp { hidden: usize, sigma_y: f64 },
    /// `Poisson(y; exp(w . f + b))`.
    PoissonLinear,
    /// `N(y; w . f + b, sigma_y^2)`.
    GaussianLinear { sigma_y: f64 },
}

impl HeadKind {
    pub fn param_len(&self, feature_dim: usize) -> usize {
        match *self {
            HeadKind::CategoricalLinear { classes } => (feature_dim + 1) * classes,
            HeadKind::GaussianMlp { hidden, .. } => (feature_dim + 2) * hidden + 1,
            HeadKind::PoissonLinear | HeadKind::GaussianLinear { .. } => feature_dim + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            HeadKind::CategoricalLinear { classes } if classes < 2 => {
                Err(Error::config("head.classes", "need at least two classes"))
            }
            HeadKind::GaussianMlp { hidden: 0, .. } => Err(Error::config("head.hidden", "must be at least 1")),
            HeadKind::GaussianMlp { sigma_y, .. } | HeadKind::GaussianLinear { sigma_y }
                if !(sigma_y > 0.0 && sigma_y.is_finite()) =>
            {
                Err(Error::config("head.sigma_y", "must be positive and finite"))
            }
            _ => Ok(()),
        }
    }
}

/// A likelihood head with its parameters stored in one flat vector.
///
/// Layouts (row-major):
/// categorical `[W (F x C), b (C)]`, gaussian-mlp `[W1 (F x H), b1 (H), w2 (H), b2]`,
/// poisson / gaussian-linear `[w (F), b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodHead {
    kind: HeadKind,
    feature_dim: usize,
    theta: Vec<f64>,
}

impl LikelihoodHead {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation of every layer.
    pub fn init<R: Rng + ?Sized>(kind: HeadKind, feature_dim: usize, rng: &mut R) -> Result<Self> {
        kind.validate()?;
        let mut theta = Vec::with_capacity(kind.param_len(feature_dim));
        let mut fill = |n: usize, fan_in: usize, theta: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            theta.extend((0..n).map(|_| rng.random_range(-bound..bound)));
        };
        match kind {
            HeadKind::CategoricalLinear { classes } => fill((feature_dim + 1) * classes, feature_dim, &mut theta),
            HeadKind::GaussianMlp { hidden, .. } => {
                fill((feature_dim + 1) * hidden, feature_dim, &mut theta);
                fill(hidden + 1, hidden, &mut theta);
            }
            HeadKind::PoissonLinear | HeadKind::GaussianLinear { .. } => {
                fill(feature_dim + 1, feature_dim, &mut theta)
            }
        }
        Ok(Self {
            kind,
            feature_dim,
            theta,
        })
    }

    pub fn from_theta(kind: HeadKind, feature_dim: usize, theta: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        if theta.len() != kind.param_len(feature_dim) {
            return Err(Error::invalid(format!(
                "head expects {} parameters, got {}",
                kind.param_len(feature_dim),
                theta.len()
            )));
        }
        Ok(Self {
            kind,
            feature_dim,
            theta,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn check(&self, features: &[f64], target: Option<&Target>) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::invalid(format!(
                "head expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        match (self.kind, target) {
            (_, None) => Ok(()),
            (HeadKind::CategoricalLinear { classes }, Some(Target::Class(c))) => {
                if *c < classes {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("class {c} out of range for {classes} classes")))
                }
            }
            (HeadKind::GaussianMlp { .. } | HeadKind::GaussianLinear { .. }, Some(Target::Real(y))) => {
                if y.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("real target must be finite"))
                }
            }
            (HeadKind::PoissonLinear, Some(Target::Count(_))) => Ok(()),
            (kind, Some(t)) => Err(Error::invalid(format!("target {t:?} does not fit head {kind:?}"))),
        }
    }

    fn logits(&self, f: &[f64], classes: usize) -> Vec<f64> {
        let (w, b) = self.theta.split_at(self.feature_dim * classes);
        let mut z = b.to_vec();
        for (i, &x) in f.iter().enumerate() {
            let row = &w[i * classes..(i + 1) * classes];
            for (zc, &wc) in z.iter_mut().zip(row) {
                *zc += x * wc;
            }
        }
        z
    }

    fn hidden(&self, f: &[f64], hidden: usize) -> Vec<f64> {
        let w1 = &self.theta[..self.feature_dim * hidden];
        let b1 = &self.theta[self.feature_dim * hidden..(self.feature_dim + 1) * hidden];
        let mut pre = b1.to_vec();
        for (i, &x) in f.iter().enumerate() {
            for (p, &w) in pre.iter_mut().zip(&w1[i * hidden..(i + 1) * hidden]) {
                *p += x * w;
            }
        }
        pre.iter_mut().for_each(|p| *p = p.tanh());
        pre
    }

    fn mlp_mean(&self, h: &[f64], hidden: usize) -> f64 {
        let off = (self.feature_dim + 1) * hidden;
        let w2 = &self.theta[off..off + hidden];
        h.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>() + self.theta[off + hidden]
    }

    fn linear(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.theta).map(|(a, b)| a * b).sum::<f64>() + self.theta[self.feature_dim]
    }

    pub fn log_lik(&self, features: &[f64], target: &Target) -> Result<f64> {
        self.check(features, Some(target))?;
        Ok(match (self.kind, *target) {
            (HeadKind::CategoricalLinear { classes }, Target::Class(y)) => {
                let z = self.logits(features, classes);
                z[y] - log_sum_exp(&z)
            }
            (HeadKind::GaussianMlp { hidden, sigma_y }, Target::Real(y)) => {
                let m = self.mlp_mean(&self.hidden(features, hidden), hidden);
                gaussian_log_density(y, m, sigma_y)
            }
            (HeadKind::GaussianLinear { sigma_y }, Target::Real(y)) => {
                gaussian_log_density(y, self.linear(features), sigma_y)
            }
            (HeadKind::PoissonLinear, Target::Count(y)) => {
                let eta = self.linear(features);
                let y = y as f64;
                y * eta - eta.exp() - libm::lgamma(y + 1.0)
            }
            _ => unreachable!("checked above"),
        })
    }

    /// Returns `(log_lik, d log_lik / d theta, d log_lik / d features)`.
    pub fn grad(&self, features: &[f64], target: &Target) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check(features, Some(target))?;
        let fd = self.feature_dim;
        let mut g_theta = vec![0.0; self.theta.len()];
        let mut g_f = vec![0.0; fd];
        let ll = match (self.kind, *target) {
            (HeadKind::CategoricalLinear { classes }, Target::Class(y)) => {
                let z = self.logits(features, classes);
                let lse = log_sum_exp(&z);
                let dz: Vec<f64> = z
                    .iter()
                    .enumerate()
                    .map(|(c, &zc)| f64::from(u8::from(c == y)) - (zc - lse).exp())
                    .collect();
                let w = &self.theta[..fd * classes];
                for i in 0..fd {
                    for c in 0..classes {
                        g_theta[i * classes + c] = features[i] * dz[c];
                        g_f[i] += w[i * classes + c] * dz[c];
                    }
                }
                g_theta[fd * classes..].copy_from_slice(&dz);
                z[y] - lse
            }
            (HeadKind::GaussianMlp { hidden, sigma_y }, Target::Real(y)) => {
                let h = self.hidden(features, hidden);
                let m = self.mlp_mean(&h, hidden);
                let dm = (y - m) / (sigma_y * sigma_y);
                let off = (fd + 1) * hidden;
                let w1 = &self.theta[..fd * hidden];
                let w2 = &self.theta[off..off + hidden];
                let dpre: Vec<f64> = (0..hidden).map(|j| dm * w2[j] * (1.0 - h[j] * h[j])).collect();
                for i in 0..fd {
                    for j in 0..hidden {
                        g_theta[i * hidden + j] = features[i] * dpre[j];
                        g_f[i] += w1[i * hidden + j] * dpre[j];
                    }
                }
                g_theta[fd * hidden..off].copy_from_slice(&dpre);
                for j in 0..hidden {
                    g_theta[off + j] = dm * h[j];
                }
                g_theta[off + hidden] = dm;
                gaussian_log_density(y, m, sigma_y)
            }
            (HeadKind::GaussianLinear { sigma_y }, Target::Real(y)) => {
                let m = self.linear(features);
                let dm = (y - m) / (sigma_y * sigma_y);
                self.linear_grads(features, dm, &mut g_theta, &mut g_f);
                gaussian_log_density(y, m, sigma_y)
            }
            (HeadKind::PoissonLinear, Target::Count(y)) => {
                let eta = self.linear(features);
                let y = y as f64;
                let rate = eta.exp();
                self.linear_grads(features, y - rate, &mut g_theta, &mut g_f);
                y * eta - rate - libm::lgamma(y + 1.0)
            }
            _ => unreachable!("checked above"),
        };
        Ok((ll, g_theta, g_f))
    }

    fn linear_grads(&self, f: &[f64], d_out: f64, g_theta: &mut [f64], g_f: &mut [f64]) {
        for i in 0..self.feature_dim {
            g_theta[i] = f[i] * d_out;
            g_f[i] = self.theta[i] * d_out;
        }
        g_theta[self.feature_dim] = d_out;
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        self.check(features, None)?;
        Ok(match self.kind {
            HeadKind::CategoricalLinear { classes } => {
                let z = self.logits(features, classes);
                let lse = log_sum_exp(&z);
                Prediction::Probabilities(z.iter().map(|v| (v - lse).exp()).collect())
            }
            HeadKind::GaussianMlp { hidden, .. } => Prediction::Mean(self.mlp_mean(&self.hidden(features, hidden), hidden)),
            HeadKind::GaussianLinear { .. } => Prediction::Mean(self.linear(features)),
            HeadKind::PoissonLinear => Prediction::Mean(self.linear(features).exp()),
        })
    }
}

fn gaussian_log_density(y: f64, mean: f64, sigma: f64) -> f64 {
    let r = (y - mean) / sigma;
    -0.5 * r * r - sigma.ln() - LN_SQRT_2PI
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn zero_head(kind: HeadKind, fd: usize) -> LikelihoodHead {
        LikelihoodHead::from_theta(kind, fd, vec![0.0; kind.param_len(fd)]).unwrap()
    }

    #[test]
    fn reference_values() {
        let cat = zero_head(HeadKind::CategoricalLinear { classes: 4 }, 3);
        let ll = cat.log_lik(&[0.3, -1.0, 2.0], &Target::Class(2)).unwrap();
        assert!((ll - 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(
            cat.predict(&[1.0, 1.0, 1.0]).unwrap(),
            Prediction::Probabilities(vec![0.25; 4])
        );

        let gauss = zero_head(HeadKind::GaussianMlp { hidden: 4, sigma_y: 1.0 }, 2);
        let ll = gauss.log_lik(&[0.5, 0.5], &Target::Real(0.0)).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);

        let pois = zero_head(HeadKind::PoissonLinear, 2);
        assert_eq!(pois.log_lik(&[0.0, 0.0], &Target::Count(0)).unwrap(), -1.0);
        let three = LikelihoodHead::from_theta(HeadKind::PoissonLinear, 1, vec![0.0, 3f64.ln()]).unwrap();
        match three.predict(&[5.0]).unwrap() {
            Prediction::Mean(r) => assert!((r - 3.0).abs() < 1e-12),
            p => panic!("{p:?}"),
        }
    }

    #[test]
    fn target_errors() {
        let cat = zero_head(HeadKind::CategoricalLinear { classes: 2 }, 1);
        assert!(cat.log_lik(&[0.0], &Target::Class(2)).is_err());
        assert!(cat.log_lik(&[0.0], &Target::Real(1.0)).is_err());
        assert!(cat.log_lik(&[0.0, 1.0], &Target::Class(0)).is_err());
        let pois = zero_head(HeadKind::PoissonLinear, 1);
        assert!(pois.grad(&[0.0], &Target::Class(0)).is_err());
        assert!(LikelihoodHead::init(HeadKind::GaussianMlp { hidden: 2, sigma_y: 0.0 }, 1, &mut seeded(0)).is_err());
    }

    #[test]
    fn saturated_softmax_has_vanishing_feature_gradient() {
        let head =
            LikelihoodHead::from_theta(HeadKind::CategoricalLinear { classes: 2 }, 1, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let (_, _, gf) = head.grad(&[60.0], &Target::Class(0)).unwrap();
        assert!(gf[0].abs() < 1e-40);
    }

    #[test]
    fn mlp_with_zero_hidden_weights_ignores_features() {
        let (fd, h) = (3, 5);
        let kind = HeadKind::GaussianMlp { hidden: h, sigma_y: 0.3 };
        let mut theta = vec![0.0; kind.param_len(fd)];
        // biases and output layer nonzero, first-layer weights zero
        for (i, v) in theta.iter_mut().enumerate().skip(fd * h) {
            *v = 0.1 * (i as f64 + 1.0);
        }
        let head = LikelihoodHead::from_theta(kind, fd, theta).unwrap();
        let (_, gt, gf) = head.grad(&[0.4, -2.0, 1.0], &Target::Real(0.2)).unwrap();
        assert_eq!(gf, vec![0.0; fd]);
        // the hidden-bias path still carries gradient
        assert!(gt[fd * h..(fd + 1) * h].iter().any(|g| *g != 0.0));
    }

    #[test]
    fn mlp_hand_computation() {
        // F = 2, H = 2: W1 = [[1, 0], [0, 2]], b1 = [0, 0.5], w2 = [1, -1], b2 = 0.25
        let kind = HeadKind::GaussianMlp { hidden: 2, sigma_y: 0.1 };
        let theta = vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.5, 1.0, -1.0, 0.25];
        let head = LikelihoodHead::from_theta(kind, 2, theta).unwrap();
        let expected = 0.3f64.tanh() - (2.0 * -0.2 + 0.5f64).tanh() + 0.25;
        assert_eq!(head.predict(&[0.3, -0.2]).unwrap(), Prediction::Mean(expected));
    }

    #[test]
    fn probabilities_are_normalised() {
        let mut rng = seeded(11);
        for _ in 0..50 {
            let head = LikelihoodHead::init(HeadKind::CategoricalLinear { classes: 5 }, 4, &mut rng).unwrap();
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let Prediction::Probabilities(p) = head.predict(&f).unwrap() else { unreachable!() };
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(Prediction::Probabilities(vec![0.2, 0.4, 0.4]).argmax(), Some(1));
        assert_eq!(Prediction::Probabilities(vec![0.5, 0.5]).argmax(), Some(0));
    }

    #[test]
    fn small_ascent_step_increases_concave_log_lik() {
        let mut rng = seeded(12);
        for (kind, target) in [
            (HeadKind::CategoricalLinear { classes: 3 }, Target::Class(1)),
            (HeadKind::PoissonLinear, Target::Count(4)),
        ] {
            let mut head = LikelihoodHead::init(kind, 3, &mut rng).unwrap();
            let f = [0.5, -0.3, 0.8];
            let (before, g, _) = head.grad(&f, &target).unwrap();
            head.theta_mut().iter_mut().zip(&g).for_each(|(t, gi)| *t += 1e-3 * gi);
            assert!(head.log_lik(&f, &target).unwrap() > before);
        }
    }
}

//! Isotropic Gaussian-mixture priors and the exact scores of their noised
//! marginals.
//!
//! Under the forward process `x_t = sqrt(ᾱ_t) x_0 + sqrt(1 - ᾱ_t) ε`, component
//! `N(μ_k, σ_k² I)` becomes `N(sqrt(ᾱ_t) μ_k, (ᾱ_t σ_k² + 1 - ᾱ_t) I)`, so every
//! marginal is again a mixture with the same weights.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::normal_vec;
use crate::vector::{axpy, dot, sq_dist};

/// Something that can report the score of the time-`t` marginal.
///
/// `score_hvp` is the Hessian of `log p_t` applied to `v`; it is what turns
/// a reward gradient at the denoised point into a gradient at `x_t`.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>>;

    fn score_hvp(&self, x: &[f64], t: usize, schedule: &NoiseSchedule, v: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct GaussianMixturePrior {
    components: Vec<MixtureComponent>,
    dim: usize,
}

#[derive(Deserialize)]
struct RawPrior {
    components: Vec<MixtureComponent>,
}

impl TryFrom<RawPrior> for GaussianMixturePrior {
    type Error = Error;

    fn try_from(raw: RawPrior) -> Result<Self> {
        GaussianMixturePrior::new(raw.components)
    }
}

/// Per-component quantities of the time-t marginal at one point.
struct Responsibilities {
    weights: Vec<f64>,
    /// Component scores `-(x - m_k) / v_k`.
    scores: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::invalid("component means must be non-empty"));
        }
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::invalid(format!(
                    "component {k} has dimension {}, expected {dim}",
                    c.mean.len()
                )));
            }
            if !(c.variance > 0.0 && c.variance.is_finite()) {
                return Err(Error::invalid(format!("component {k} variance must be positive")));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::invalid(format!("component {k} weight must be non-negative")));
            }
            if !c.mean.iter().all(|m| m.is_finite()) {
                return Err(Error::invalid(format!("component {k} mean is not finite")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components, dim })
    }

    /// Single isotropic Gaussian `N(mean, variance I)`.
    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean,
            variance,
        }])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn is_single_gaussian(&self) -> bool {
        self.components.len() == 1
    }

    /// Mean and per-coordinate variance of the clean distribution.
    pub fn moments(&self) -> (Vec<f64>, f64) {
        let mut mean = vec![0.0; self.dim];
        for c in &self.components {
            axpy(c.weight, &c.mean, &mut mean);
        }
        // average per-coordinate variance
        let mut second = 0.0;
        for c in &self.components {
            let m2: f64 = c.mean.iter().map(|m| m * m).sum::<f64>() / self.dim as f64;
            second += c.weight * (c.variance + m2);
        }
        let m2 = dot(&mean, &mean) / self.dim as f64;
        (mean, second - m2)
    }

    /// Exact draw from the clean prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let c = &self.components[pick];
        let sd = c.variance.sqrt();
        normal_vec(rng, self.dim)
            .into_iter()
            .zip(&c.mean)
            .map(|(z, m)| m + sd * z)
            .collect()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has dimension {}, prior has {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Log-density of the time-`t` marginal; `t = 0` is the clean prior.
    pub fn log_density(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<f64> {
        self.check_point(x)?;
        if t > schedule.steps() {
            schedule.check_step(t)?;
        }
        let ab = schedule.alpha_bar(t);
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let (m, v) = marginal_component(c, ab);
                c.weight.ln() + log_normal(x, &m, v)
            })
            .collect();
        Ok(log_sum_exp(&logs))
    }

    fn responsibilities(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Responsibilities> {
        self.check_point(x)?;
        schedule.check_step(t)?;
        let ab = schedule.alpha_bar(t);
        let mut logs = Vec::with_capacity(self.components.len());
        let mut scores = Vec::with_capacity(self.components.len());
        let mut variances = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let (m, v) = marginal_component(c, ab);
            logs.push(c.weight.ln() + log_normal(x, &m, v));
            scores.push(x.iter().zip(&m).map(|(xi, mi)| -(xi - mi) / v).collect());
            variances.push(v);
        }
        let lse = log_sum_exp(&logs);
        let weights = logs.iter().map(|l| (l - lse).exp()).collect();
        Ok(Responsibilities {
            weights,
            scores,
            variances,
        })
    }
}

fn marginal_component(c: &MixtureComponent, alpha_bar: f64) -> (Vec<f64>, f64) {
    let s = alpha_bar.sqrt();
    let mean = c.mean.iter().map(|m| s * m).collect();
    (mean, alpha_bar * c.variance + (1.0 - alpha_bar))
}

fn log_normal(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    -0.5 * d * (2.0 * PI * var).ln() - sq_dist(x, mean) / (2.0 * var)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl ScoreModel for GaussianMixturePrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let r = self.responsibilities(x, t, schedule)?;
        let mut s = vec![0.0; self.dim];
        for (w, u) in r.weights.iter().zip(&r.scores) {
            axpy(*w, u, &mut s);
        }
        Ok(s)
    }

    // ∇² log p = Σ_k r_k (-I / v_k + u_k u_kᵀ) - s sᵀ
    fn score_hvp(&self, x: &[f64], t: usize, schedule: &NoiseSchedule, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::invalid("direction has wrong dimension"));
        }
        let r = self.responsibilities(x, t, schedule)?;
        let mut s = vec![0.0; self.dim];
        let mut out = vec![0.0; self.dim];
        for ((w, u), var) in r.weights.iter().zip(&r.scores).zip(&r.variances) {
            axpy(*w, u, &mut s);
            axpy(-w / var, v, &mut out);
            axpy(w * dot(u, v), u, &mut out);
        }
        let sv = dot(&s, v);
        axpy(-sv, &s, &mut out);
        Ok(out)
    }
}

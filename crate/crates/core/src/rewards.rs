//! Reward models, reward-on-denoised evaluation and zero-order gradients.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::diffusion::{tweedie_denoise, NoiseSchedule, ScoreModel, StateVector};
use crate::error::{Error, Result};
use crate::nfe::NfeTally;
use crate::rng::normal_vec;
use crate::vector::{axpy, dot, sq_dist};

type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Linear(Vec<f64>),
    Target {
        target: Vec<f64>,
        scale: f64,
    },
    Quantized {
        base: Box<RewardModel>,
        step: f64,
    },
    WeightedSum {
        g1: f64,
        r1: Box<RewardModel>,
        g2: f64,
        r2: Box<RewardModel>,
    },
    Custom {
        eval: EvalFn,
        grad: Option<GradFn>,
        dim: Option<usize>,
    },
}

/// A scalar reward on clean samples. Immutable once built.
#[derive(Clone)]
pub struct RewardModel {
    name: String,
    kind: Kind,
}

impl fmt::Debug for RewardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RewardModel")
            .field("name", &self.name)
            .field("differentiable", &self.has_gradient())
            .finish()
    }
}

impl RewardModel {
    /// Reward from closures; `grad = None` marks it non-differentiable.
    pub fn custom<F>(name: impl Into<String>, dim: Option<usize>, eval: F, grad: Option<GradFn>) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            kind: Kind::Custom {
                eval: Arc::new(eval),
                grad,
                dim,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Input dimension, when the reward fixes one.
    pub fn dim(&self) -> Option<usize> {
        match &self.kind {
            Kind::Linear(a) => Some(a.len()),
            Kind::Target { target, .. } => Some(target.len()),
            Kind::Quantized { base, .. } => base.dim(),
            Kind::WeightedSum { r1, r2, .. } => r1.dim().or(r2.dim()),
            Kind::Custom { dim, .. } => *dim,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Linear(a) => dot(a, x),
            Kind::Target { target, scale } => -scale * sq_dist(x, target),
            Kind::Quantized { base, step } => step * (base.evaluate(x) / step).floor(),
            Kind::WeightedSum { g1, r1, g2, r2 } => g1 * r1.evaluate(x) + g2 * r2.evaluate(x),
            Kind::Custom { eval, .. } => eval(x),
        }
    }

    pub fn has_gradient(&self) -> bool {
        match &self.kind {
            Kind::Linear(_) | Kind::Target { .. } => true,
            Kind::Quantized { .. } => false,
            Kind::WeightedSum { r1, r2, .. } => r1.has_gradient() && r2.has_gradient(),
            Kind::Custom { grad, .. } => grad.is_some(),
        }
    }

    /// Analytic gradient, or `UnavailableGradient` for non-differentiable rewards.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            Kind::Linear(a) => Ok(a.clone()),
            Kind::Target { target, scale } => {
                Ok(x.iter().zip(target).map(|(xi, ti)| -2.0 * scale * (xi - ti)).collect())
            }
            Kind::Quantized { .. } => Err(Error::UnavailableGradient(self.name.clone())),
            Kind::WeightedSum { g1, r1, g2, r2 } => {
                if !self.has_gradient() {
                    return Err(Error::UnavailableGradient(self.name.clone()));
                }
                let mut g = vec![0.0; x.len()];
                axpy(*g1, &r1.gradient(x)?, &mut g);
                axpy(*g2, &r2.gradient(x)?, &mut g);
                Ok(g)
            }
            Kind::Custom { grad: Some(g), .. } => Ok(g(x)),
            Kind::Custom { grad: None, .. } => Err(Error::UnavailableGradient(self.name.clone())),
        }
    }

    /// The weight vector when this reward is exactly linear.
    pub fn linear_weights(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Linear(a) => Some(a),
            _ => None,
        }
    }
}

/// `r(x) = a · x`.
pub fn linear_reward(a: Vec<f64>) -> Result<RewardModel> {
    if a.is_empty() || !a.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("linear reward weights must be finite and non-empty"));
    }
    if a.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("linear reward weights must not be all zero"));
    }
    Ok(RewardModel {
        name: "linear".into(),
        kind: Kind::Linear(a),
    })
}

/// `r(x) = -scale ‖x - target‖²`.
pub fn target_reward(target: Vec<f64>, scale: f64) -> Result<RewardModel> {
    if !(scale > 0.0) {
        return Err(Error::invalid("target reward scale must be positive"));
    }
    Ok(RewardModel {
        name: "target".into(),
        kind: Kind::Target { target, scale },
    })
}

/// `r(x) = step · floor(base(x) / step)`; deliberately has no gradient.
pub fn quantized_reward(base: RewardModel, step: f64) -> Result<RewardModel> {
    if !(step > 0.0) {
        return Err(Error::invalid("quantization step must be positive"));
    }
    Ok(RewardModel {
        name: format!("quantized({})", base.name),
        kind: Kind::Quantized {
            base: Box::new(base),
            step,
        },
    })
}

/// `γ₁ r₁ + γ₂ r₂`; differentiable iff both parts are.
pub fn weighted_sum_reward(gamma1: f64, r1: RewardModel, gamma2: f64, r2: RewardModel) -> Result<RewardModel> {
    if let (Some(a), Some(b)) = (r1.dim(), r2.dim()) {
        if a != b {
            return Err(Error::invalid(format!("reward dimensions differ: {a} vs {b}")));
        }
    }
    Ok(RewardModel {
        name: format!("{gamma1}*{}+{gamma2}*{}", r1.name, r2.name),
        kind: Kind::WeightedSum {
            g1: gamma1,
            r1: Box::new(r1),
            g2: gamma2,
            r2: Box::new(r2),
        },
    })
}

/// Reward of the Tweedie estimate of the clean sample. Counts one reward evaluation.
pub fn reward_on_denoised<M: ScoreModel + ?Sized>(
    reward: &RewardModel,
    x_t: &StateVector,
    schedule: &NoiseSchedule,
    model: &M,
    tally: &NfeTally,
) -> Result<f64> {
    let x0 = tweedie_denoise(x_t, schedule, model)?;
    tally.add_reward(1);
    Ok(reward.evaluate(&x0.values))
}

/// Perturbation scale and probe count for zero-order estimation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooConfig {
    pub sigma: f64,
    pub n_probes: usize,
}

impl Default for ZooConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            n_probes: 10,
        }
    }
}

impl ZooConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("zoo.sigma", "must be positive"));
        }
        if self.n_probes == 0 {
            return Err(Error::config("zoo.n_probes", "must be at least 1"));
        }
        Ok(())
    }
}

/// Antithetic central-difference estimate with explicit probe directions:
/// `(1/N') Σ (f(x + σε) - f(x - σε)) / (2σ) · ε`.
pub fn zero_order_estimate<F>(f: F, x: &[f64], sigma: f64, probes: &[Vec<f64>]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if probes.is_empty() {
        return Err(Error::invalid("need at least one probe"));
    }
    let mut g = vec![0.0; x.len()];
    let mut plus = vec![0.0; x.len()];
    let mut minus = vec![0.0; x.len()];
    for eps in probes {
        for i in 0..x.len() {
            plus[i] = x[i] + sigma * eps[i];
            minus[i] = x[i] - sigma * eps[i];
        }
        let diff = (f(&plus)? - f(&minus)?) / (2.0 * sigma);
        if !diff.is_finite() {
            return Err(Error::invalid("reward returned a non-finite value during probing"));
        }
        axpy(diff, eps, &mut g);
    }
    let n = probes.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

/// Zero-order gradient of an arbitrary map, with fresh normal probes.
pub fn zero_order_gradient_fn<F, R>(f: F, x: &[f64], cfg: &ZooConfig, rng: &mut R) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let probes: Vec<Vec<f64>> = (0..cfg.n_probes).map(|_| normal_vec(rng, x.len())).collect();
    zero_order_estimate(f, x, cfg.sigma, &probes)
}

/// Zero-order gradient of a reward. Counts `2 N'` reward evaluations.
pub fn zero_order_gradient<R: Rng + ?Sized>(
    reward: &RewardModel,
    x: &[f64],
    cfg: &ZooConfig,
    rng: &mut R,
    tally: &NfeTally,
) -> Result<Vec<f64>> {
    let g = zero_order_gradient_fn(|y| Ok(reward.evaluate(y)), x, cfg, rng)?;
    tally.add_reward(2 * cfg.n_probes as u64);
    Ok(g)
}

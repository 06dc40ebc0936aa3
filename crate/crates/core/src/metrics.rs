//! Reward, divergence and compute metrics.

use serde::Serialize;

use crate::diffusion::GaussianMixturePrior;
use crate::error::{Error, Result};
use crate::nfe::NfeCounters;
use crate::rewards::RewardModel;
use crate::vector::sq_dist;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub reward_mean: f64,
    pub reward_std: f64,
    pub mmd2: Option<f64>,
    pub tilt_mean_error: Option<f64>,
    pub nfe: NfeCounters,
    pub wall_ms: f64,
}

/// Sample mean and population standard deviation of the reward.
pub fn expected_reward(samples: &[Vec<f64>], reward: &RewardModel) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    let values: Vec<f64> = samples.iter().map(|s| reward.evaluate(s)).collect();
    Ok(mean_std(&values))
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Median pairwise Euclidean distance over the pooled samples.
pub fn median_bandwidth(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    let pooled: Vec<&Vec<f64>> = xs.iter().chain(ys).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::invalid("need at least two samples for the median heuristic"));
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        Ok(*m)
    } else {
        Err(Error::invalid("median pairwise distance is zero"))
    }
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += (-gamma * sq_dist(x, y)).exp();
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) squared MMD with kernel `exp(-‖a-b‖² / (2 h²))`.
pub fn mmd2_rbf(xs: &[Vec<f64>], ys: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::invalid("both sample sets must be non-empty"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let v = mean_kernel(xs, xs, gamma) + mean_kernel(ys, ys, gamma) - 2.0 * mean_kernel(xs, ys, gamma);
    // rounding can push an exact zero slightly negative
    Ok(v.max(0.0))
}

/// [`mmd2_rbf`] with the median-heuristic bandwidth.
pub fn mmd2_rbf_auto(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    mmd2_rbf(xs, ys, median_bandwidth(xs, ys)?)
}

/// Isotropic Gaussian `N(mean, variance I)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltedGaussian {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// The reward-tilted optimum `p(x) exp(λ a·x) / Z` of a single Gaussian prior:
/// still Gaussian, mean shifted by `λ σ² a`, same variance.
pub fn tilted_oracle(prior: &GaussianMixturePrior, a: &[f64], lambda: f64) -> Result<TiltedGaussian> {
    if !prior.is_single_gaussian() {
        return Err(Error::Unsupported("tilted oracle needs a single-Gaussian prior".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let c = &prior.components()[0];
    if a.len() != c.mean.len() {
        return Err(Error::invalid("reward weights have the wrong dimension"));
    }
    Ok(TiltedGaussian {
        mean: c
            .mean
            .iter()
            .zip(a)
            .map(|(m, ai)| m + lambda * c.variance * ai)
            .collect(),
        variance: c.variance,
    })
}

/// A ratio against a baseline, or the raw value when the baseline is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Normalized {
    Ratio(f64),
    Raw(f64),
}

impl Normalized {
    pub fn of(value: f64, baseline: f64) -> Self {
        if baseline == 0.0 || !baseline.is_finite() {
            Normalized::Raw(value)
        } else {
            Normalized::Ratio(value / baseline)
        }
    }

    pub fn ratio(&self) -> Option<f64> {
        match self {
            Normalized::Ratio(r) => Some(*r),
            Normalized::Raw(_) => None,
        }
    }
}

impl std::fmt::Display for Normalized {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Normalized::Ratio(r) => write!(f, "{r}"),
            Normalized::Raw(v) => write!(f, "raw:{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedReport {
    pub reward_mean: Normalized,
    pub reward_std: Normalized,
    pub mmd2: Option<Normalized>,
    pub nfe_denoiser: Normalized,
    pub nfe_reward: Normalized,
    pub nfe_grad: Normalized,
    pub wall_ms: Normalized,
}

/// Every scalar divided by the baseline's; zero baselines are flagged raw.
pub fn normalize_report(metrics: &RunMetrics, baseline: &RunMetrics) -> NormalizedReport {
    NormalizedReport {
        reward_mean: Normalized::of(metrics.reward_mean, baseline.reward_mean),
        reward_std: Normalized::of(metrics.reward_std, baseline.reward_std),
        mmd2: metrics.mmd2.map(|m| Normalized::of(m, baseline.mmd2.unwrap_or(0.0))),
        nfe_denoiser: Normalized::of(metrics.nfe.denoiser_calls as f64, baseline.nfe.denoiser_calls as f64),
        nfe_reward: Normalized::of(metrics.nfe.reward_evals as f64, baseline.nfe.reward_evals as f64),
        nfe_grad: Normalized::of(metrics.nfe.gradient_evals as f64, baseline.nfe.gradient_evals as f64),
        wall_ms: Normalized::of(metrics.wall_ms, baseline.wall_ms),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::{linear_reward, RewardModel};
    use crate::rng::normal_vec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expected_reward_examples() {
        let constant = RewardModel::custom("c", None, |_| 2.5, None);
        let pts = vec![vec![0.0], vec![7.0], vec![-1.0]];
        assert_eq!(expected_reward(&pts, &constant).unwrap(), (2.5, 0.0));
        let id = linear_reward(vec![1.0]).unwrap();
        assert_eq!(expected_reward(&[vec![0.0], vec![2.0]], &id).unwrap(), (1.0, 1.0));
        assert_eq!(expected_reward(&[vec![4.0]], &id).unwrap(), (4.0, 0.0));
        assert!(expected_reward(&[], &id).is_err());
    }

    fn gaussian_draws(seed: u64, n: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| normal_vec(&mut rng, 1).into_iter().map(|v| v + shift).collect())
            .collect()
    }

    #[test]
    fn mmd_examples() {
        let xs = gaussian_draws(1, 300, 0.0);
        let mut shuffled = xs.clone();
        shuffled.reverse();
        assert!(mmd2_rbf(&xs, &shuffled, 0.7).unwrap() <= 1e-12);

        let a = gaussian_draws(2, 1000, 0.0);
        let b = gaussian_draws(3, 1000, 10.0);
        assert!(mmd2_rbf_auto(&a, &b).unwrap() > 0.5);
        let c = gaussian_draws(4, 1000, 0.0);
        assert!(mmd2_rbf_auto(&a, &c).unwrap() < 0.01);

        assert!(mmd2_rbf(&a, &c, 0.0).is_err());
        assert!(mmd2_rbf(&a, &[], 1.0).is_err());
    }

    #[test]
    fn mmd_is_symmetric() {
        let a = gaussian_draws(5, 200, 0.0);
        let b = gaussian_draws(6, 150, 0.8);
        let ab = mmd2_rbf(&a, &b, 1.3).unwrap();
        let ba = mmd2_rbf(&b, &a, 1.3).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn tilted_oracle_examples() {
        let p = GaussianMixturePrior::gaussian(vec![0.0], 1.0).unwrap();
        let t0 = tilted_oracle(&p, &[1.0], 0.0).unwrap();
        assert_eq!((t0.mean, t0.variance), (vec![0.0], 1.0));
        let t1 = tilted_oracle(&p, &[1.0], 1.0).unwrap();
        assert_eq!((t1.mean, t1.variance), (vec![1.0], 1.0));
        let p2 = GaussianMixturePrior::gaussian(vec![1.0, -2.0], 0.5).unwrap();
        let t = tilted_oracle(&p2, &[2.0, 1.0], 0.3).unwrap();
        assert_relative_eq!(t.mean[0], 1.3);
        assert_relative_eq!(t.mean[1], -1.85);
        let mix = GaussianMixturePrior::new(vec![
            crate::diffusion::MixtureComponent {
                weight: 0.5,
                mean: vec![0.0],
                variance: 1.0,
            },
            crate::diffusion::MixtureComponent {
                weight: 0.5,
                mean: vec![1.0],
                variance: 1.0,
            },
        ])
        .unwrap();
        assert!(matches!(tilted_oracle(&mix, &[1.0], 1.0), Err(Error::Unsupported(_))));
    }

    fn metrics(reward: f64, wall: f64) -> RunMetrics {
        RunMetrics {
            reward_mean: reward,
            reward_std: 0.4,
            mmd2: Some(0.02),
            tilt_mean_error: None,
            nfe: NfeCounters {
                denoiser_calls: 400,
                reward_evals: 84,
                gradient_evals: 52,
            },
            wall_ms: wall,
        }
    }

    #[test]
    fn normalize_examples() {
        let base = metrics(1.0, 12.0);
        let same = normalize_report(&base, &base);
        for n in [
            same.reward_mean,
            same.reward_std,
            same.mmd2.unwrap(),
            same.nfe_denoiser,
            same.nfe_reward,
            same.nfe_grad,
            same.wall_ms,
        ] {
            assert_eq!(n, Normalized::Ratio(1.0));
        }
        let r = normalize_report(&metrics(1.6, 12.0), &base);
        assert_eq!(r.reward_mean, Normalized::Ratio(1.6));
        let zero = normalize_report(&metrics(1.6, 12.0), &metrics(0.0, 12.0));
        assert_eq!(zero.reward_mean, Normalized::Raw(1.6));
        assert_eq!(zero.reward_mean.to_string(), "raw:1.6");
    }
}

//! Reward gradients through the Tweedie map, guidance scaling, and
//! clustered gradient sharing.

use rand::Rng;

use super::config::{GradMode, Rescale};
use super::kmeans::kmeans_cluster;
use crate::diffusion::{tweedie_denoise, tweedie_vjp, NoiseSchedule, ParticleSet, ScoreModel, StateVector};
use crate::error::Result;
use crate::nfe::NfeTally;
use crate::rewards::{zero_order_gradient_fn, RewardModel, ZooConfig};
use crate::rng::{mix, Purpose, Substreams};
use crate::vector::{axpy, norm, sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSettings {
    pub mode: GradMode,
    pub zoo: ZooConfig,
}

impl Default for GradSettings {
    fn default() -> Self {
        Self {
            mode: GradMode::Analytic,
            zoo: ZooConfig::default(),
        }
    }
}

/// Gradient of `reward(tweedie(x_t))` with respect to `x_t`.
///
/// Analytic mode chains the reward gradient through the exact Tweedie
/// Jacobian and counts one gradient evaluation. Zero-order mode probes the
/// composite map and counts `2 N'` reward and `2 N'` gradient evaluations.
/// At `t = 0` the Tweedie map is the identity.
pub fn grad_step<M, R>(
    particle: &StateVector,
    reward: &RewardModel,
    schedule: &NoiseSchedule,
    model: &M,
    settings: &GradSettings,
    rng: &mut R,
    tally: &NfeTally,
) -> Result<Vec<f64>>
where
    M: ScoreModel + ?Sized,
    R: Rng + ?Sized,
{
    match settings.mode {
        GradMode::Analytic => {
            let x0 = tweedie_denoise(particle, schedule, model)?;
            let outer = reward.gradient(&x0.values)?;
            let g = tweedie_vjp(particle, schedule, model, &outer)?;
            tally.add_gradient(1);
            Ok(g)
        }
        GradMode::ZeroOrder => {
            let t = particle.t;
            let composite = |y: &[f64]| -> Result<f64> {
                let x0 = tweedie_denoise(&StateVector::new(y.to_vec(), t), schedule, model)?;
                Ok(reward.evaluate(&x0.values))
            };
            let g = zero_order_gradient_fn(composite, &particle.values, &settings.zoo, rng)?;
            let probes = 2 * settings.zoo.n_probes as u64;
            tally.add_reward(probes);
            tally.add_gradient(probes);
            Ok(g)
        }
    }
}

/// `particle + scale · g`, same timestep.
pub fn apply_gradient(particle: &StateVector, g: &[f64], scale: f64) -> StateVector {
    let mut values = particle.values.clone();
    axpy(scale, g, &mut values);
    StateVector::new(values, particle.t)
}

/// `‖correction‖ · scale_cfg · scale_grad / (‖grad‖ + eps)`.
pub fn rescale_guidance(grad: &[f64], correction: &[f64], scale_cfg: f64, scale_grad: f64, eps: f64) -> f64 {
    norm(correction) * scale_cfg * scale_grad / (norm(grad) + eps)
}

/// Step size for one particle under the configured rescale mode.
///
/// In rescaled mode the correction is taken at `max(t, 1)`, since the clean
/// end has no noised marginal.
pub fn effective_scale<M: ScoreModel + ?Sized>(
    rescale: &Rescale,
    gamma: f64,
    particle: &StateVector,
    grad: &[f64],
    base: &M,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    match rescale {
        Rescale::Fixed => Ok(gamma),
        Rescale::CfgRescaled {
            conditional,
            cfg_scale,
            max_scale,
            eps,
        } => {
            let t = particle.t.max(1);
            let cond = conditional.score(&particle.values, t, schedule)?;
            let uncond = base.score(&particle.values, t, schedule)?;
            let correction = sub(&cond, &uncond);
            let raw = rescale_guidance(grad, &correction, *cfg_scale, gamma, *eps);
            Ok(raw.min(max_scale.unwrap_or(10.0 * gamma)))
        }
    }
}

/// One gradient per k-means cluster, evaluated at the centroid and shared by
/// every member. Costs `k` gradient evaluations instead of `N`.
///
/// Randomness (seeding, zero-order probes) comes from substreams keyed by `key`.
#[allow(clippy::too_many_arguments)]
pub fn clustered_gradients<M: ScoreModel + ?Sized>(
    particles: &ParticleSet,
    k: usize,
    reward: &RewardModel,
    schedule: &NoiseSchedule,
    model: &M,
    settings: &GradSettings,
    kmeans_iters: usize,
    streams: &Substreams,
    key: u64,
    tally: &NfeTally,
) -> Result<Vec<Vec<f64>>> {
    let points = particles.values();
    let mut seed_rng = streams.stream(Purpose::Cluster, key, 0);
    let clusters = kmeans_cluster(&points, k, kmeans_iters, &mut seed_rng)?;
    let t = particles.t();
    let grads = clusters
        .centroids
        .iter()
        .enumerate()
        .map(|(c, centroid)| {
            let mut rng = streams.stream(Purpose::Probe, mix(&[key, u64::MAX]), c as u64);
            let at = StateVector::new(centroid.clone(), t);
            grad_step(&at, reward, schedule, model, settings, &mut rng, tally)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(clusters.assignments.iter().map(|&c| grads[c].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_linear_schedule, GaussianMixturePrior, MixtureComponent};
    use crate::error::Error;
    use crate::rewards::{linear_reward, quantized_reward, reward_on_denoised, target_reward};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn linear_reward_standard_normal_gradient() {
        let s = NoiseSchedule::from_betas(vec![0.5, 0.5]).unwrap();
        let prior = GaussianMixturePrior::gaussian(vec![0.0], 1.0).unwrap();
        let r = linear_reward(vec![3.0]).unwrap();
        let tally = NfeTally::new();
        let g = grad_step(
            &StateVector::new(vec![0.7], 2),
            &r,
            &s,
            &prior,
            &GradSettings::default(),
            &mut rng(),
            &tally,
        )
        .unwrap();
        assert_relative_eq!(g[0], 0.5 * 3.0, epsilon = 1e-14);
        assert_eq!(tally.snapshot().gradient_evals, 1);
    }

    #[test]
    fn clean_limit_is_reward_gradient() {
        let s = make_linear_schedule(1000, 1e-9, 1e-8).unwrap();
        let prior = GaussianMixturePrior::gaussian(vec![0.3, 0.1], 0.7).unwrap();
        let r = target_reward(vec![1.0, -1.0], 2.0).unwrap();
        let x = StateVector::new(vec![0.2, 0.5], 1);
        let g = grad_step(
            &x,
            &r,
            &s,
            &prior,
            &GradSettings::default(),
            &mut rng(),
            &NfeTally::new(),
        )
        .unwrap();
        let want = r.gradient(&x.values).unwrap();
        for (a, b) in g.iter().zip(&want) {
            assert_relative_eq!(*a, *b, max_relative = 1e-6);
        }
        let clean = StateVector::clean(vec![0.2, 0.5]);
        let g0 = grad_step(
            &clean,
            &r,
            &s,
            &prior,
            &GradSettings::default(),
            &mut rng(),
            &NfeTally::new(),
        )
        .unwrap();
        assert_eq!(g0, want);
    }

    #[test]
    fn matches_finite_differences_of_reward_on_denoised() {
        let s = make_linear_schedule(50, 1e-3, 0.2).unwrap();
        let prior = GaussianMixturePrior::new(vec![
            MixtureComponent {
                weight: 0.4,
                mean: vec![-1.0, 0.5],
                variance: 0.3,
            },
            MixtureComponent {
                weight: 0.6,
                mean: vec![1.2, -0.2],
                variance: 0.6,
            },
        ])
        .unwrap();
        let r = target_reward(vec![0.5, 1.5], 1.0).unwrap();
        let tally = NfeTally::new();
        let h = 1e-5;
        for t in [1, 10, 25, 50] {
            for x in [[-0.5, 0.2], [0.9, -1.1], [0.0, 0.0]] {
                let at = StateVector::new(x.to_vec(), t);
                let g = grad_step(&at, &r, &s, &prior, &GradSettings::default(), &mut rng(), &tally).unwrap();
                for i in 0..2 {
                    let mut p = x.to_vec();
                    let mut m = x.to_vec();
                    p[i] += h;
                    m[i] -= h;
                    let fp = reward_on_denoised(&r, &StateVector::new(p, t), &s, &prior, &tally).unwrap();
                    let fm = reward_on_denoised(&r, &StateVector::new(m, t), &s, &prior, &tally).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "t={t} {g:?} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn analytic_mode_needs_a_gradient() {
        let s = make_linear_schedule(10, 1e-3, 0.2).unwrap();
        let prior = GaussianMixturePrior::gaussian(vec![0.0], 1.0).unwrap();
        let q = quantized_reward(linear_reward(vec![1.0]).unwrap(), 0.5).unwrap();
        let err = grad_step(
            &StateVector::new(vec![0.0], 3),
            &q,
            &s,
            &prior,
            &GradSettings::default(),
            &mut rng(),
            &NfeTally::new(),
        );
        assert!(matches!(err, Err(Error::UnavailableGradient(_))));

        let settings = GradSettings {
            mode: GradMode::ZeroOrder,
            zoo: ZooConfig {
                sigma: 0.5,
                n_probes: 4,
            },
        };
        let tally = NfeTally::new();
        let g = grad_step(
            &StateVector::new(vec![0.0], 3),
            &q,
            &s,
            &prior,
            &settings,
            &mut rng(),
            &tally,
        )
        .unwrap();
        assert!(g[0].is_finite());
        let n = tally.snapshot();
        assert_eq!((n.reward_evals, n.gradient_evals), (8, 8));
    }

    #[test]
    fn apply_gradient_examples() {
        let p = StateVector::new(vec![0.0, 0.0], 7);
        assert_eq!(apply_gradient(&p, &[1.0, 0.0], 0.0), p);
        let q = apply_gradient(&p, &[1.0, 0.0], 0.2);
        assert_eq!(q.values, vec![0.2, 0.0]);
        assert_eq!(q.t, 7);
        let g = [0.3, -1.0];
        let h = [1.5, 0.25];
        let two = apply_gradient(&apply_gradient(&p, &g, 1.0), &h, 1.0);
        let sum = apply_gradient(&p, &[1.8, -0.75], 1.0);
        assert_eq!(two, sum);
    }

    #[test]
    fn rescale_examples() {
        assert_relative_eq!(rescale_guidance(&[4.0, 0.0], &[0.0, 2.0], 5.0, 0.2, 0.0), 0.5);
        assert_eq!(rescale_guidance(&[4.0], &[0.0], 5.0, 0.2, 1e-8), 0.0);
    }

    #[test]
    fn rescaled_scale_is_clamped() {
        let s = make_linear_schedule(10, 1e-3, 0.2).unwrap();
        let base = GaussianMixturePrior::gaussian(vec![0.0], 1.0).unwrap();
        let cond = GaussianMixturePrior::gaussian(vec![3.0], 1.0).unwrap();
        let mode = Rescale::CfgRescaled {
            conditional: cond,
            cfg_scale: 5.0,
            max_scale: None,
            eps: 1e-8,
        };
        let p = StateVector::new(vec![0.5], 4);
        let scale = effective_scale(&mode, 0.2, &p, &[0.0], &base, &s).unwrap();
        assert!(scale.is_finite());
        assert_eq!(scale, 2.0);
        assert_eq!(
            effective_scale(&Rescale::Fixed, 0.2, &p, &[0.0], &base, &s).unwrap(),
            0.2
        );
        let same = Rescale::CfgRescaled {
            conditional: base.clone(),
            cfg_scale: 5.0,
            max_scale: None,
            eps: 1e-8,
        };
        assert_eq!(effective_scale(&same, 0.2, &p, &[1.0], &base, &s).unwrap(), 0.0);
    }

    #[test]
    fn clustered_gradient_counts_and_singletons() {
        let s = make_linear_schedule(20, 1e-3, 0.2).unwrap();
        let prior = GaussianMixturePrior::new(vec![
            MixtureComponent {
                weight: 0.5,
                mean: vec![-1.0],
                variance: 0.3,
            },
            MixtureComponent {
                weight: 0.5,
                mean: vec![1.0],
                variance: 0.3,
            },
        ])
        .unwrap();
        let r = target_reward(vec![2.0], 1.0).unwrap();
        let set = ParticleSet::from_values(6, vec![vec![-1.3], vec![-1.1], vec![0.9], vec![1.4]]);
        let streams = Substreams::new(1);
        let settings = GradSettings::default();

        let tally = NfeTally::new();
        let two = clustered_gradients(&set, 2, &r, &s, &prior, &settings, 20, &streams, 5, &tally).unwrap();
        assert_eq!(tally.snapshot().gradient_evals, 2);
        assert_eq!(two[0], two[1]);
        assert_eq!(two[2], two[3]);
        assert_ne!(two[0], two[2]);

        let tally = NfeTally::new();
        let all = clustered_gradients(&set, 4, &r, &s, &prior, &settings, 20, &streams, 5, &tally).unwrap();
        assert_eq!(tally.snapshot().gradient_evals, 4);
        for (i, p) in set.particles().iter().enumerate() {
            let g = grad_step(p, &r, &s, &prior, &settings, &mut rng(), &NfeTally::new()).unwrap();
            assert_eq!(all[i], g);
        }

        let one = clustered_gradients(&set, 1, &r, &s, &prior, &settings, 20, &streams, 5, &NfeTally::new()).unwrap();
        let centroid = StateVector::new(vec![(-1.3 - 1.1 + 0.9 + 1.4) / 4.0], 6);
        let g = grad_step(&centroid, &r, &s, &prior, &settings, &mut rng(), &NfeTally::new()).unwrap();
        for gi in one {
            assert_relative_eq!(gi[0], g[0], epsilon = 1e-12);
        }
    }
}

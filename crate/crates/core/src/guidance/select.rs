//! Softmax weights, greedy and multinomial selection, particle schedules.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::config::Selection;
use crate::diffusion::ParticleSet;
use crate::error::{Error, Result};

/// `P_n = exp(r_n / τ) / Σ_j exp(r_j / τ)`, computed after subtracting the max.
pub fn softmax_weights(rewards: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if rewards.is_empty() {
        return Err(Error::invalid("no rewards to weight"));
    }
    if !rewards.iter().all(|r| r.is_finite()) {
        return Err(Error::invalid("rewards must be finite"));
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = rewards.iter().map(|r| ((r - max) / tau).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / total).collect())
}

/// Index of the largest reward; ties go to the lowest index.
pub fn argmax(rewards: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rewards.iter().enumerate() {
        if best.is_none_or(|b| *r > rewards[b]) {
            best = Some(i);
        }
    }
    best
}

/// `count` copies of the highest-reward particle.
pub fn select_greedy(particles: &ParticleSet, rewards: &[f64], count: usize) -> Result<ParticleSet> {
    if particles.is_empty() {
        return Err(Error::invalid("cannot select from an empty particle set"));
    }
    if rewards.len() != particles.len() {
        return Err(Error::invalid(format!(
            "{} rewards for {} particles",
            rewards.len(),
            particles.len()
        )));
    }
    let best = argmax(rewards).expect("non-empty");
    Ok(particles.gather(&vec![best; count]))
}

/// `count` i.i.d. draws, with replacement, of particles weighted by `probs`.
pub fn resample_multinomial<R: Rng + ?Sized>(
    particles: &ParticleSet,
    probs: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    if probs.len() != particles.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} particles",
            probs.len(),
            particles.len()
        )));
    }
    if count == 0 {
        return Ok(particles.gather(&[]));
    }
    if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probabilities must be non-negative and sum to 1"));
    }
    let dist = WeightedIndex::new(probs).map_err(|e| Error::invalid(e.to_string()))?;
    let picks: Vec<usize> = (0..count).map(|_| dist.sample(rng)).collect();
    Ok(particles.gather(&picks))
}

/// Applies the configured selection rule, resizing the population to `count`.
pub fn select<R: Rng + ?Sized>(
    rule: Selection,
    particles: &ParticleSet,
    rewards: &[f64],
    count: usize,
    tau: f64,
    rng: &mut R,
) -> Result<ParticleSet> {
    match rule {
        Selection::Greedy => select_greedy(particles, rewards, count),
        Selection::Multinomial => {
            let probs = softmax_weights(rewards, tau)?;
            resample_multinomial(particles, &probs, count, rng)
        }
    }
}

/// Per-block particle counts: block `i` gets `schedule[floor(i * len / num_blocks)]`.
pub fn schedule_particles(schedule: &[usize], num_blocks: usize) -> Result<Vec<usize>> {
    if schedule.is_empty() {
        return Err(Error::invalid("particle schedule is empty"));
    }
    if num_blocks == 0 {
        return Err(Error::invalid("need at least one block"));
    }
    let len = schedule.len();
    Ok((0..num_blocks).map(|i| schedule[i * len / num_blocks]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three() -> ParticleSet {
        ParticleSet::from_values(4, vec![vec![0.0], vec![1.0], vec![2.0]])
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_weights(&[1.0, 1.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let p = softmax_weights(&[0.0, 3f64.ln()], 1.0).unwrap();
        assert_relative_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.75, epsilon = 1e-15);
        let e = std::f64::consts::E;
        let p = softmax_weights(&[2.0, 4.0], 2.0).unwrap();
        assert_relative_eq!(p[0], 1.0 / (1.0 + e), epsilon = 1e-15);
        assert_relative_eq!(p[1], e / (1.0 + e), epsilon = 1e-15);
        assert_relative_eq!(p[0], 0.26894, epsilon = 1e-5);
        assert!(softmax_weights(&[1.0], 0.0).is_err());
        assert!(softmax_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn softmax_handles_huge_rewards() {
        let p = softmax_weights(&[1e6, 1e6 - 1.0], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(r in proptest::collection::vec(-100.0f64..100.0, 1..12), tau in 1e-3f64..10.0) {
            let p = softmax_weights(&r, tau).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_temperature_scale_invariance(r in proptest::collection::vec(-10.0f64..10.0, 1..8), tau in 0.05f64..5.0, c in 0.1f64..10.0) {
            let p = softmax_weights(&r, tau).unwrap();
            let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
            let q = softmax_weights(&scaled, tau * c).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn greedy_examples() {
        let out = select_greedy(&three(), &[0.2, 0.9, 0.5], 3).unwrap();
        assert_eq!(out.values(), vec![vec![1.0]; 3]);
        let out = select_greedy(&three(), &[0.4, 0.4, 0.4], 2).unwrap();
        assert_eq!(out.values(), vec![vec![0.0]; 2]);
        assert!(select_greedy(&ParticleSet::empty(0), &[], 1).is_err());
        assert!(select_greedy(&three(), &[1.0], 1).is_err());
    }

    #[test]
    fn low_temperature_is_greedy() {
        let rewards = [0.3, 1.2, 1.1, -0.4];
        let p = softmax_weights(&rewards, 1e-9).unwrap();
        assert!(p[1] >= 1.0 - 1e-6);
    }

    #[test]
    fn multinomial_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = resample_multinomial(&three(), &[0.0, 0.0, 1.0], 50, &mut rng).unwrap();
        assert!(out.values().iter().all(|v| v == &vec![2.0]));
        assert_eq!(out.len(), 50);
    }

    #[test]
    fn multinomial_frequencies() {
        let set = ParticleSet::from_values(1, vec![vec![0.0], vec![1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let out = resample_multinomial(&set, &[0.25, 0.75], 100_000, &mut rng).unwrap();
        let ones = out.values().iter().filter(|v| v[0] == 1.0).count() as f64 / 100_000.0;
        assert!((ones - 0.75).abs() < 0.01, "{ones}");
        let ids = out.substream_ids();
        assert_eq!(ids.len(), 100_000);
        assert_eq!(ids[99_999], 99_999);
    }

    #[test]
    fn multinomial_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(resample_multinomial(&three(), &[0.5, 0.5, 0.0], 0, &mut rng)
            .unwrap()
            .is_empty());
        assert!(resample_multinomial(&three(), &[0.5, 0.5], 2, &mut rng).is_err());
        assert!(resample_multinomial(&three(), &[0.5, 0.6, 0.0], 2, &mut rng).is_err());
    }

    #[test]
    fn schedule_examples() {
        let tiered = [2, 2, 2, 4, 4, 4, 4, 6, 6, 6];
        assert_eq!(schedule_particles(&tiered, 10).unwrap(), tiered.to_vec());
        assert_eq!(schedule_particles(&[4], 7).unwrap(), vec![4; 7]);
        assert_eq!(schedule_particles(&[2, 6], 4).unwrap(), vec![2, 2, 6, 6]);
        assert_eq!(schedule_particles(&tiered, 100).unwrap()[35], 4);
        assert!(schedule_particles(&[], 3).is_err());
        assert!(schedule_particles(&[1], 0).is_err());
    }
}

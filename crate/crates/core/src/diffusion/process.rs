//! Forward noising, the DDPM reverse step, Tweedie denoising and SDEdit
//! initialization.

use super::prior::ScoreModel;
use super::schedule::NoiseSchedule;
use super::state::{ParticleSet, StateVector};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, Purpose, Substreams};

fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!("{what} has dimension {got}, expected {want}")));
    }
    Ok(())
}

/// `x_t = sqrt(ᾱ_t) x_0 + sqrt(1 - ᾱ_t) noise`.
pub fn forward_noise(x0: &StateVector, t: usize, schedule: &NoiseSchedule, noise: &[f64]) -> Result<StateVector> {
    if x0.t != 0 {
        return Err(Error::invalid(format!(
            "forward noising starts from t=0, got t={}",
            x0.t
        )));
    }
    schedule.check_step(t)?;
    check_dim("noise", noise.len(), x0.dim())?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0.values.iter().zip(noise).map(|(x, e)| a * x + b * e).collect();
    Ok(StateVector::new(values, t))
}

/// [`forward_noise`] with noise drawn from the `Init` substream of `slot`.
pub fn forward_noise_sampled(
    x0: &StateVector,
    t: usize,
    schedule: &NoiseSchedule,
    streams: &Substreams,
    slot: u64,
) -> Result<StateVector> {
    let noise = normal_vec(&mut streams.stream(Purpose::Init, slot, t as u64), x0.dim());
    forward_noise(x0, t, schedule, &noise)
}

/// `ε̂ = -sqrt(1 - ᾱ_t) · score`.
pub fn epsilon_from_score(score: &[f64], schedule: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let c = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(score.iter().map(|s| -c * s).collect())
}

/// Inverse of [`epsilon_from_score`].
pub fn score_from_epsilon(eps: &[f64], schedule: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let c = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(eps.iter().map(|e| -e / c).collect())
}

/// One ancestral step `t -> t-1` given an ε-prediction at `x_t`.
///
/// The final step (`t = 1`) ignores `noise`.
pub fn reverse_step_from_epsilon(
    x_t: &StateVector,
    schedule: &NoiseSchedule,
    eps: &[f64],
    noise: &[f64],
) -> Result<StateVector> {
    let t = x_t.t;
    schedule.check_step(t)?;
    check_dim("noise", noise.len(), x_t.dim())?;
    check_dim("epsilon", eps.len(), x_t.dim())?;
    let alpha = schedule.alpha(t);
    let coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = if t == 1 { 0.0 } else { schedule.beta(t).sqrt() };
    let values = x_t
        .values
        .iter()
        .zip(eps)
        .zip(noise)
        .map(|((x, e), z)| inv_sqrt_alpha * (x - coef * e) + sigma * z)
        .collect();
    Ok(StateVector::new(values, t - 1))
}

/// Reverse step using the model's score as the denoiser.
pub fn reverse_step<M: ScoreModel + ?Sized>(
    x_t: &StateVector,
    schedule: &NoiseSchedule,
    model: &M,
    noise: &[f64],
) -> Result<StateVector> {
    schedule.check_step(x_t.t)?;
    let score = model.score(&x_t.values, x_t.t, schedule)?;
    let eps = epsilon_from_score(&score, schedule, x_t.t)?;
    reverse_step_from_epsilon(x_t, schedule, &eps, noise)
}

/// Posterior mean `E[x_0 | x_t] = (x_t + (1 - ᾱ_t) score) / sqrt(ᾱ_t)`.
/// Identity at `t = 0`.
pub fn tweedie_denoise<M: ScoreModel + ?Sized>(
    x_t: &StateVector,
    schedule: &NoiseSchedule,
    model: &M,
) -> Result<StateVector> {
    if x_t.t == 0 {
        return Ok(x_t.clone());
    }
    let t = x_t.t;
    let score = model.score(&x_t.values, t, schedule)?;
    let ab = schedule.alpha_bar(t);
    let inv = 1.0 / ab.sqrt();
    let values = x_t
        .values
        .iter()
        .zip(&score)
        .map(|(x, s)| (x + (1.0 - ab) * s) * inv)
        .collect();
    Ok(StateVector::clean(values))
}

/// `(∂x̂_0/∂x_t)ᵀ v`. The Jacobian is `(I + (1 - ᾱ_t) ∇² log p_t) / sqrt(ᾱ_t)`,
/// which is symmetric.
pub fn tweedie_vjp<M: ScoreModel + ?Sized>(
    x_t: &StateVector,
    schedule: &NoiseSchedule,
    model: &M,
    v: &[f64],
) -> Result<Vec<f64>> {
    if x_t.t == 0 {
        return Ok(v.to_vec());
    }
    let t = x_t.t;
    let hv = model.score_hvp(&x_t.values, t, schedule, v)?;
    let ab = schedule.alpha_bar(t);
    let inv = 1.0 / ab.sqrt();
    Ok(v.iter().zip(&hv).map(|(a, h)| (a + (1.0 - ab) * h) * inv).collect())
}

/// Starting step for a partially noised reference: `round(eta T)` clamped to `1..=T`.
pub fn sdedit_start(eta: f64, schedule: &NoiseSchedule) -> Result<usize> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    let steps = schedule.steps();
    Ok(((eta * steps as f64).round() as usize).clamp(1, steps))
}

/// SDEdit initialization with caller-supplied noise, one vector per particle.
pub fn sdedit_init_with_noise(
    reference: &StateVector,
    eta: f64,
    schedule: &NoiseSchedule,
    noises: &[Vec<f64>],
) -> Result<(ParticleSet, usize)> {
    let start = sdedit_start(eta, schedule)?;
    if noises.is_empty() {
        return Err(Error::invalid("particle count must be at least 1"));
    }
    let values = noises
        .iter()
        .map(|n| forward_noise(reference, start, schedule, n).map(|s| s.values))
        .collect::<Result<Vec<_>>>()?;
    Ok((ParticleSet::from_values(start, values), start))
}

/// SDEdit initialization: `count` independent forward-noisings of the
/// reference to step `round(eta T)`, each from its own `Init` substream.
pub fn sdedit_init(
    reference: &StateVector,
    eta: f64,
    schedule: &NoiseSchedule,
    count: usize,
    streams: &Substreams,
) -> Result<(ParticleSet, usize)> {
    let start = sdedit_start(eta, schedule)?;
    if count == 0 {
        return Err(Error::invalid("particle count must be at least 1"));
    }
    let values = (0..count as u64)
        .map(|slot| forward_noise_sampled(reference, start, schedule, streams, slot).map(|s| s.values))
        .collect::<Result<Vec<_>>>()?;
    Ok((ParticleSet::from_values(start, values), start))
}

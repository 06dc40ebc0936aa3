//! Fast oracle checks behind the `selftest` subcommand.

use crate::diffusion::{scaled_linear_schedule, tweedie_denoise, GaussianMixturePrior, ScoreModel, StateVector};
use crate::guidance::{run_code, run_unguided, softmax_weights, GuidanceConfig};
use crate::rewards::{linear_reward, target_reward, zero_order_gradient_fn, ZooConfig};
use crate::rng::{Purpose, Substreams};
use crate::vector::cosine;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> crate::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn tweedie_matches_posterior_mean() -> crate::Result<(bool, String)> {
    let schedule = scaled_linear_schedule(100)?;
    let (m, v) = (0.7, 1.3);
    let prior = GaussianMixturePrior::gaussian(vec![m], v)?;
    let mut worst: f64 = 0.0;
    for t in (1..=100).step_by(9) {
        let ab = schedule.alpha_bar(t);
        for i in 0..9 {
            let x = -4.0 + i as f64;
            let got = tweedie_denoise(&StateVector::new(vec![x], t), &schedule, &prior)?.values[0];
            let want = m + v * ab.sqrt() / (ab * v + 1.0 - ab) * (x - ab.sqrt() * m);
            worst = worst.max((got - want).abs());
        }
    }
    Ok((worst <= 1e-9, format!("max error {worst:.2e}")))
}

fn score_matches_finite_differences() -> crate::Result<(bool, String)> {
    let schedule = scaled_linear_schedule(50)?;
    let prior: GaussianMixturePrior = toml::from_str(
        r#"components = [
            { weight = 0.2, mean = [-1.0, 0.5], variance = 0.4 },
            { weight = 0.5, mean = [1.0, 1.0], variance = 0.9 },
            { weight = 0.3, mean = [0.0, -2.0], variance = 0.6 },
        ]"#,
    )
    .map_err(|e| crate::Error::invalid(e.to_string()))?;
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for t in [1, 10, 25, 50] {
        for x in [[0.3, -0.2], [1.5, 0.7], [-2.0, 1.0]] {
            let s = prior.score(&x, t, &schedule)?;
            for d in 0..2 {
                let (mut p, mut q) = (x, x);
                p[d] += h;
                q[d] -= h;
                let fd = (prior.log_density(&p, t, &schedule)? - prior.log_density(&q, t, &schedule)?) / (2.0 * h);
                worst = worst.max((fd - s[d]).abs() / s[d].abs().max(1.0));
            }
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn softmax_example() -> crate::Result<(bool, String)> {
    let w = softmax_weights(&[0.0, (2.0f64).ln()], 1.0)?;
    let ok = (w[0] - 1.0 / 3.0).abs() < 1e-12 && (w[1] - 2.0 / 3.0).abs() < 1e-12;
    Ok((ok, format!("weights {w:?}")))
}

fn single_particle_code_is_unguided() -> crate::Result<(bool, String)> {
    let schedule = scaled_linear_schedule(40)?;
    let prior = GaussianMixturePrior::gaussian(vec![1.0, -0.5], 1.0)?;
    let reward = linear_reward(vec![1.0, 1.0])?;
    let streams = Substreams::new(2024);
    let cfg = GuidanceConfig {
        n_particles: 1,
        ..Default::default()
    };
    let a = run_code(&cfg, &prior, &reward, &schedule, &streams)?;
    let b = run_unguided(1, &prior, &reward, &schedule, &streams)?;
    Ok((a.samples == b.samples, "N = 1 selection vs unguided, same seed".into()))
}

fn zero_order_direction() -> crate::Result<(bool, String)> {
    let reward = target_reward(vec![1.0, -2.0], 1.0)?;
    let x = [0.3, 0.4];
    let analytic = reward.gradient(&x)?;
    let mut rng = Substreams::new(2024).stream(Purpose::Probe, 0, 0);
    let cfg = ZooConfig {
        sigma: 1e-2,
        n_probes: 2000,
    };
    let est = zero_order_gradient_fn(|p: &[f64]| Ok(reward.evaluate(p)), &x, &cfg, &mut rng)?;
    let c = cosine(&est, &analytic);
    Ok((c >= 0.99, format!("cosine {c:.4}")))
}

/// Runs every check; cheap enough for an interactive sanity pass.
pub fn run_all() -> Vec<Check> {
    vec![
        check("tweedie posterior mean", tweedie_matches_posterior_mean),
        check("mixture score vs finite differences", score_matches_finite_differences),
        check("softmax weights", softmax_example),
        check("selection with one particle", single_particle_code_is_unguided),
        check("zero-order gradient direction", zero_order_direction),
    ]
}

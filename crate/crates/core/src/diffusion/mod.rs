//! Discrete DDPM machinery on analytic Gaussian-mixture priors.

pub mod prior;
pub mod process;
pub mod schedule;
pub mod state;

pub use prior::{GaussianMixturePrior, MixtureComponent, ScoreModel};
pub use process::{
    epsilon_from_score, forward_noise, forward_noise_sampled, reverse_step, reverse_step_from_epsilon,
    score_from_epsilon, sdedit_init, sdedit_init_with_noise, sdedit_start, tweedie_denoise, tweedie_vjp,
};
pub use schedule::{make_linear_schedule, scaled_linear_schedule, NoiseSchedule};
pub use state::{ParticleSet, StateVector};

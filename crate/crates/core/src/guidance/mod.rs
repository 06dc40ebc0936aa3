//! Guidance algorithms: gradient steps, selection, particle schedules,
//! clustering, rescaling and the end-to-end samplers.

pub mod config;
pub mod gradient;
pub mod kmeans;
pub mod samplers;
pub mod select;

pub use config::{GradMode, GradWindow, GuidanceConfig, Rescale, SamplerKind, SdEditInit, Selection};
pub use gradient::{apply_gradient, clustered_gradients, effective_scale, grad_step, rescale_guidance, GradSettings};
pub use kmeans::{kmeans_cluster, Clustering};
pub use samplers::{
    initial_noise, run_bon, run_code, run_gradient_only, run_sampler, run_unguided, run_unicode, RunOutput,
};
pub use select::{argmax, resample_multinomial, schedule_particles, select, select_greedy, softmax_weights};

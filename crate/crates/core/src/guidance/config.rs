use serde::{Deserialize, Serialize};

use crate::diffusion::GaussianMixturePrior;
use crate::error::{Error, Result};
use crate::rewards::ZooConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Unguided,
    Bon,
    Code,
    GradOnly,
    Unicode,
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::Unguided => "unguided",
            SamplerKind::Bon => "bon",
            SamplerKind::Code => "code",
            SamplerKind::GradOnly => "grad_only",
            SamplerKind::Unicode => "unicode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "unguided" => SamplerKind::Unguided,
            "bon" => SamplerKind::Bon,
            "code" => SamplerKind::Code,
            "grad_only" => SamplerKind::GradOnly,
            "unicode" => SamplerKind::Unicode,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Greedy,
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    Analytic,
    ZeroOrder,
}

/// How the per-step gradient scale is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Rescale {
    /// Scale is the guidance scale itself.
    Fixed,
    /// Scale follows `‖correction‖ · cfg_scale · γ / (‖grad‖ + eps)`, clamped
    /// to `max_scale` (default `10 γ`). The correction is the score of
    /// `conditional` minus the base prior's score at the particle.
    CfgRescaled {
        conditional: GaussianMixturePrior,
        #[serde(default = "default_cfg_scale")]
        cfg_scale: f64,
        #[serde(default)]
        max_scale: Option<f64>,
        #[serde(default = "default_rescale_eps")]
        eps: f64,
    },
}

fn default_cfg_scale() -> f64 {
    5.0
}

fn default_rescale_eps() -> f64 {
    1e-8
}

/// Start the reverse process from a partially noised reference instead of pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdEditInit {
    pub reference: Vec<f64>,
    pub eta: f64,
}

/// Noise-ratio interval in which gradients are applied. The ratio is taken
/// after the reverse step, so a step landing on `t` is guided when
/// `end_ratio <= t/T <= start_ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct GradWindow {
    pub start_ratio: f64,
    pub end_ratio: f64,
}

impl From<[f64; 2]> for GradWindow {
    fn from(v: [f64; 2]) -> Self {
        Self {
            start_ratio: v[0],
            end_ratio: v[1],
        }
    }
}

impl From<GradWindow> for [f64; 2] {
    fn from(w: GradWindow) -> Self {
        [w.start_ratio, w.end_ratio]
    }
}

impl GradWindow {
    pub const FULL: GradWindow = GradWindow {
        start_ratio: 1.0,
        end_ratio: 0.0,
    };

    pub fn contains(&self, t: usize, steps: usize) -> bool {
        let ratio = t as f64 / steps as f64;
        ratio <= self.start_ratio && ratio >= self.end_ratio
    }
}

impl Default for GradWindow {
    fn default() -> Self {
        Self {
            start_ratio: 0.6,
            end_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub sampler: SamplerKind,
    pub n_particles: usize,
    pub block_sample: usize,
    pub block_grad: usize,
    pub temperature: f64,
    pub guidance_scale: f64,
    pub selection: Selection,
    pub particle_schedule: Option<Vec<usize>>,
    pub grad_window: GradWindow,
    pub cluster_k: Option<usize>,
    pub kmeans_iters: usize,
    pub grad_repeats: usize,
    pub grad_mode: GradMode,
    pub rescale: Rescale,
    pub zoo: ZooConfig,
    pub sdedit: Option<SdEditInit>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Unicode,
            n_particles: 4,
            block_sample: 5,
            block_grad: 5,
            temperature: 0.1,
            guidance_scale: 0.2,
            selection: Selection::Greedy,
            particle_schedule: None,
            grad_window: GradWindow::default(),
            cluster_k: None,
            kmeans_iters: 20,
            grad_repeats: 1,
            grad_mode: GradMode::Analytic,
            rescale: Rescale::Fixed,
            zoo: ZooConfig::default(),
            sdedit: None,
        }
    }
}

impl GuidanceConfig {
    pub fn with_sampler(mut self, sampler: SamplerKind) -> Self {
        self.sampler = sampler;
        self
    }

    /// Checks every bound; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("n_particles", self.n_particles)?;
        positive("block_sample", self.block_sample)?;
        positive("block_grad", self.block_grad)?;
        positive("grad_repeats", self.grad_repeats)?;
        positive("kmeans_iters", self.kmeans_iters)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(
                "temperature",
                format!("must be positive, got {}", self.temperature),
            ));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::config(
                "guidance_scale",
                format!("must be non-negative, got {}", self.guidance_scale),
            ));
        }
        if let Some(sched) = &self.particle_schedule {
            if sched.is_empty() || sched.contains(&0) {
                return Err(Error::config("particle_schedule", "entries must be >= 1 and non-empty"));
            }
        }
        let w = self.grad_window;
        let unit = 0.0..=1.0;
        if !(unit.contains(&w.start_ratio) && unit.contains(&w.end_ratio)) || w.start_ratio < w.end_ratio {
            return Err(Error::config("grad_window", "need 1 >= start_ratio >= end_ratio >= 0"));
        }
        if self.cluster_k == Some(0) {
            return Err(Error::config("cluster_k", "must be at least 1"));
        }
        self.zoo.validate()?;
        if let Rescale::CfgRescaled {
            cfg_scale,
            max_scale,
            eps,
            ..
        } = &self.rescale
        {
            if !(*eps > 0.0) {
                return Err(Error::config("rescale.eps", "must be positive"));
            }
            if !(cfg_scale.is_finite() && *cfg_scale >= 0.0) {
                return Err(Error::config("rescale.cfg_scale", "must be non-negative"));
            }
            if matches!(max_scale, Some(m) if !(*m >= 0.0)) {
                return Err(Error::config("rescale.max_scale", "must be non-negative"));
            }
        }
        if let Some(init) = &self.sdedit {
            if !(init.eta > 0.0 && init.eta < 1.0) {
                return Err(Error::config("sdedit.eta", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

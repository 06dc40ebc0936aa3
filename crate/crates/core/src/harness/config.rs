//! Experiment configuration (TOML).
//!
//! ```toml
//! seeds = [2024]
//! batch = 32
//!
//! [prior]
//! components = [{ weight = 1.0, mean = [1.0], variance = 1.0 }]
//!
//! [reward]
//! kind = "linear"
//! a = [1.0]
//!
//! [schedule]
//! steps = 100
//!
//! [guidance]
//! sampler = "unicode"
//!
//! [sweep]
//! guidance_scale = [0.0, 0.1, 0.2]
//! n_particles = [1, 4]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::diffusion::{make_linear_schedule, scaled_linear_schedule, GaussianMixturePrior, NoiseSchedule};
use crate::error::{Error, Result};
use crate::guidance::{GradMode, GuidanceConfig, SamplerKind, Selection};
use crate::rewards::{linear_reward, quantized_reward, target_reward, weighted_sum_reward, RewardModel};

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    Linear {
        a: Vec<f64>,
    },
    Target {
        target: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    Quantized {
        step: f64,
        base: Box<RewardSpec>,
    },
    WeightedSum {
        gamma1: f64,
        gamma2: f64,
        first: Box<RewardSpec>,
        second: Box<RewardSpec>,
    },
}

fn one() -> f64 {
    1.0
}

impl RewardSpec {
    pub fn build(&self) -> Result<RewardModel> {
        match self {
            RewardSpec::Linear { a } => linear_reward(a.clone()),
            RewardSpec::Target { target, scale } => target_reward(target.clone(), *scale),
            RewardSpec::Quantized { step, base } => quantized_reward(base.build()?, *step),
            RewardSpec::WeightedSum {
                gamma1,
                gamma2,
                first,
                second,
            } => weighted_sum_reward(*gamma1, first.build()?, *gamma2, second.build()?),
        }
    }
}

/// `beta_start`/`beta_end` default to the standard 1e-4..0.02 range
/// stretched to `steps` steps.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: None,
            beta_end: None,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self, steps: usize) -> Result<NoiseSchedule> {
        match (self.beta_start, self.beta_end) {
            (None, None) => scaled_linear_schedule(steps),
            (Some(lo), Some(hi)) => make_linear_schedule(steps, lo, hi),
            _ => Err(Error::config(
                "schedule",
                "set both beta_start and beta_end, or neither",
            )),
        }
    }
}

/// Fields that may appear under `[sweep]`, in cell-key order.
pub const SWEEPABLE: &[&str] = &[
    "sampler",
    "n_particles",
    "block_sample",
    "block_grad",
    "temperature",
    "guidance_scale",
    "particle_schedule",
    "cluster_k",
    "selection",
    "grad_mode",
    "grad_repeats",
    "zoo_probes",
    "zoo_sigma",
    "steps",
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    prior: GaussianMixturePrior,
    reward: RewardSpec,
    #[serde(default)]
    schedule: ScheduleSpec,
    #[serde(default)]
    guidance: GuidanceConfig,
    #[serde(default)]
    sweep: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    replicates: Option<usize>,
    #[serde(default)]
    batch: Option<usize>,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    mmd_bandwidth: Option<f64>,
    #[serde(default)]
    tilt_lambda: Option<f64>,
    #[serde(default)]
    timing: bool,
}

/// One sweep axis: a field name and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub field: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub prior: GaussianMixturePrior,
    pub reward: RewardSpec,
    pub schedule: ScheduleSpec,
    pub guidance: GuidanceConfig,
    /// Axes in [`SWEEPABLE`] order.
    pub sweep: Vec<SweepAxis>,
    pub seeds: Vec<u64>,
    pub replicates: usize,
    /// Independent sampler runs pooled into each result row.
    pub batch: usize,
    pub output: Option<PathBuf>,
    /// Fixed MMD kernel width; by default the median heuristic on exact prior draws.
    pub mmd_bandwidth: Option<f64>,
    /// Tilt strength for the tilted-mean error column (single Gaussian, linear reward).
    pub tilt_lambda: Option<f64>,
    /// Record wall-clock times. Off by default so output files are reproducible.
    pub timing: bool,
}

/// The concrete settings of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub guidance: GuidanceConfig,
    pub steps: usize,
}

fn as_usize(field: &str, v: &toml::Value) -> Result<usize> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| Error::config(field, format!("expected a non-negative integer, got {v}")))
}

fn as_f64(field: &str, v: &toml::Value) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| Error::config(field, format!("expected a number, got {v}")))
}

fn as_str<'a>(field: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::config(field, format!("expected a string, got {v}")))
}

/// Sets `field` on a cell. `cluster_k = 0` means no clustering.
pub fn apply_sweep_value(cell: &mut CellSpec, field: &str, v: &toml::Value) -> Result<()> {
    let g = &mut cell.guidance;
    match field {
        "sampler" => {
            let s = as_str(field, v)?;
            g.sampler = SamplerKind::parse(s).ok_or_else(|| Error::config(field, format!("unknown sampler `{s}`")))?;
        }
        "n_particles" => g.n_particles = as_usize(field, v)?,
        "block_sample" => g.block_sample = as_usize(field, v)?,
        "block_grad" => g.block_grad = as_usize(field, v)?,
        "temperature" => g.temperature = as_f64(field, v)?,
        "guidance_scale" => g.guidance_scale = as_f64(field, v)?,
        "particle_schedule" => {
            let arr = v
                .as_array()
                .ok_or_else(|| Error::config(field, "expected an array of counts"))?;
            let counts = arr.iter().map(|c| as_usize(field, c)).collect::<Result<Vec<_>>>()?;
            g.particle_schedule = if counts.is_empty() { None } else { Some(counts) };
        }
        "cluster_k" => {
            let k = as_usize(field, v)?;
            g.cluster_k = (k > 0).then_some(k);
        }
        "selection" => {
            g.selection = match as_str(field, v)? {
                "greedy" => Selection::Greedy,
                "multinomial" => Selection::Multinomial,
                other => return Err(Error::config(field, format!("unknown selection `{other}`"))),
            }
        }
        "grad_mode" => {
            g.grad_mode = match as_str(field, v)? {
                "analytic" => GradMode::Analytic,
                "zero_order" => GradMode::ZeroOrder,
                other => return Err(Error::config(field, format!("unknown grad_mode `{other}`"))),
            }
        }
        "grad_repeats" => g.grad_repeats = as_usize(field, v)?,
        "zoo_probes" => g.zoo.n_probes = as_usize(field, v)?,
        "zoo_sigma" => g.zoo.sigma = as_f64(field, v)?,
        "steps" => cell.steps = as_usize(field, v)?,
        other => return Err(Error::config(format!("sweep.{other}"), "not a sweepable field")),
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "<document>".into());
            Error::config(field, e.to_string())
        })?;
        let cfg = Self::from_raw(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let mut sweep = Vec::new();
        for (field, values) in raw.sweep {
            if !SWEEPABLE.contains(&field.as_str()) {
                return Err(Error::config(format!("sweep.{field}"), "not a sweepable field"));
            }
            if values.is_empty() {
                return Err(Error::config(format!("sweep.{field}"), "needs at least one value"));
            }
            sweep.push(SweepAxis { field, values });
        }
        sweep.sort_by_key(|a| SWEEPABLE.iter().position(|f| *f == a.field));
        Ok(Self {
            prior: raw.prior,
            reward: raw.reward,
            schedule: raw.schedule,
            guidance: raw.guidance,
            sweep,
            seeds: raw.seeds.unwrap_or_else(|| vec![DEFAULT_SEED]),
            replicates: raw.replicates.unwrap_or(1),
            batch: raw.batch.unwrap_or(16),
            output: raw.output,
            mmd_bandwidth: raw.mmd_bandwidth,
            tilt_lambda: raw.tilt_lambda,
            timing: raw.timing,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be at least 1"));
        }
        if self.schedule.steps == 0 {
            return Err(Error::config("schedule.steps", "must be at least 1"));
        }
        self.schedule.build(self.schedule.steps)?;
        let reward = self
            .reward
            .build()
            .map_err(|e| Error::config("reward", e.to_string()))?;
        if let Some(d) = reward.dim() {
            let pd = self.prior.components()[0].mean.len();
            if d != pd {
                return Err(Error::config(
                    "reward",
                    format!("dimension {d} does not match prior dimension {pd}"),
                ));
            }
        }
        if matches!(self.mmd_bandwidth, Some(b) if !(b > 0.0)) {
            return Err(Error::config("mmd_bandwidth", "must be positive"));
        }
        if matches!(self.tilt_lambda, Some(l) if !(l >= 0.0)) {
            return Err(Error::config("tilt_lambda", "must be non-negative"));
        }
        self.guidance.validate()?;
        // every cell must at least parse; per-cell validity is checked at run time
        for axis in &self.sweep {
            for v in &axis.values {
                let mut cell = self.base_cell();
                apply_sweep_value(&mut cell, &axis.field, v)?;
            }
        }
        Ok(())
    }

    pub fn base_cell(&self) -> CellSpec {
        CellSpec {
            guidance: self.guidance.clone(),
            steps: self.schedule.steps,
        }
    }

    /// Every combination of sweep values, in grid order.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        let mut cells = vec![self.base_cell()];
        for axis in &self.sweep {
            let mut next = Vec::with_capacity(cells.len() * axis.values.len());
            for cell in &cells {
                for v in &axis.values {
                    let mut c = cell.clone();
                    apply_sweep_value(&mut c, &axis.field, v)?;
                    next.push(c);
                }
            }
            cells = next;
        }
        Ok(cells)
    }

    /// Number of result rows a full run produces (before failures).
    pub fn grid_size(&self) -> usize {
        self.sweep.iter().map(|a| a.values.len()).product::<usize>() * self.seeds.len() * self.replicates
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [prior]
        components = [{ weight = 1.0, mean = [0.5], variance = 1.0 }]
        [reward]
        kind = "linear"
        a = [1.0]
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.schedule.steps, 500);
        assert_eq!(c.guidance.n_particles, 4);
        assert_eq!(c.guidance.block_sample, 5);
        assert_eq!(c.guidance.guidance_scale, 0.2);
        assert_eq!(c.seeds, vec![2024]);
        assert_eq!(c.cells().unwrap().len(), 1);
    }

    #[test]
    fn negative_temperature_is_named() {
        let text = format!("{MINIMAL}\n[guidance]\ntemperature = -1.0\n");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "temperature"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sweep_grid_size() {
        let text = format!("seeds = [1, 2]\nreplicates = 3\n{MINIMAL}\n[sweep]\nn_particles = [1, 4, 16, 40]\n");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        let cells = c.cells().unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[3].guidance.n_particles, 40);
        assert_eq!(c.grid_size(), 4 * 2 * 3);
    }

    #[test]
    fn unknown_sweep_field_is_named() {
        let text = format!("{MINIMAL}\n[sweep]\nwarp_factor = [1, 2]\n");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sweep.warp_factor"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_name_a_field() {
        let text = format!("{MINIMAL}\n[guidance]\nn_particles = \"many\"\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&text),
            Err(Error::Config { .. })
        ));
        let text = format!("{MINIMAL}\n[guidance]\nbogus = 1\n");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "bogus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reward_specs_build() {
        let text = r#"
            [prior]
            components = [{ weight = 1.0, mean = [0.0, 0.0], variance = 1.0 }]
            [reward]
            kind = "weighted_sum"
            gamma1 = 1.0
            gamma2 = 0.5
            first = { kind = "target", target = [1.0, 1.0] }
            second = { kind = "quantized", step = 0.5, base = { kind = "linear", a = [1.0, 0.0] } }
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        let r = c.reward.build().unwrap();
        assert!(!r.has_gradient());
        assert_eq!(r.evaluate(&[1.0, 1.0]), 0.5);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let text = r#"
            [prior]
            components = [{ weight = 1.0, mean = [0.0, 0.0], variance = 1.0 }]
            [reward]
            kind = "linear"
            a = [1.0]
        "#;
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config { field, .. }) if field == "reward"));
    }
}

//! Runs every (cell, seed, replicate) of an experiment against a matched
//! unguided baseline.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{CellSpec, ExperimentConfig};
use crate::diffusion::{GaussianMixturePrior, NoiseSchedule};
use crate::error::Result;
use crate::guidance::{run_sampler, run_unguided};
use crate::metrics::{expected_reward, median_bandwidth, mmd2_rbf, tilted_oracle, Normalized};
use crate::rewards::RewardModel;
use crate::rng::{mix, Substreams};
use crate::vector::{mean, norm, sub};

/// Sort key of a result row; the leading fields mirror the CSV columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub method: String,
    pub n: usize,
    pub block_sample: usize,
    pub block_grad: usize,
    pub tau: f64,
    pub gamma: f64,
    pub schedule: Option<Vec<usize>>,
    pub cluster_k: Option<usize>,
    pub selection: String,
    pub grad_mode: String,
    pub grad_repeats: usize,
    pub zoo_probes: usize,
    pub zoo_sigma: f64,
    pub steps: usize,
}

impl CellKey {
    pub fn of(cell: &CellSpec) -> Self {
        let g = &cell.guidance;
        Self {
            method: g.sampler.as_str().to_owned(),
            n: g.n_particles,
            block_sample: g.block_sample,
            block_grad: g.block_grad,
            tau: g.temperature,
            gamma: g.guidance_scale,
            schedule: g.particle_schedule.clone(),
            cluster_k: g.cluster_k,
            selection: format!("{:?}", g.selection).to_lowercase(),
            grad_mode: format!("{:?}", g.grad_mode).to_lowercase(),
            grad_repeats: g.grad_repeats,
            zoo_probes: g.zoo.n_probes,
            zoo_sigma: g.zoo.sigma,
            steps: cell.steps,
        }
    }

    pub fn schedule_label(&self) -> String {
        self.schedule
            .as_ref()
            .map(|s| s.iter().map(usize::to_string).collect::<Vec<_>>().join(";"))
            .unwrap_or_default()
    }

    fn cmp_key(&self, o: &Self) -> Ordering {
        self.method
            .cmp(&o.method)
            .then(self.n.cmp(&o.n))
            .then(self.block_sample.cmp(&o.block_sample))
            .then(self.block_grad.cmp(&o.block_grad))
            .then(self.tau.total_cmp(&o.tau))
            .then(self.gamma.total_cmp(&o.gamma))
            .then(self.schedule.cmp(&o.schedule))
            .then(self.cluster_k.cmp(&o.cluster_k))
            .then(self.selection.cmp(&o.selection))
            .then(self.grad_mode.cmp(&o.grad_mode))
            .then(self.grad_repeats.cmp(&o.grad_repeats))
            .then(self.zoo_probes.cmp(&o.zoo_probes))
            .then(self.zoo_sigma.total_cmp(&o.zoo_sigma))
            .then(self.steps.cmp(&o.steps))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub key: CellKey,
    pub seed: u64,
    pub replicate: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_norm: Normalized,
    pub mmd2: f64,
    pub tilt_mean_error: Option<f64>,
    /// Per sampler run, averaged over the batch.
    pub nfe_denoiser: f64,
    pub nfe_reward: f64,
    pub nfe_grad: f64,
    pub wall_ms: Option<f64>,
    pub baseline_reward_mean: f64,
}

impl ResultRow {
    pub const FIELDS: &'static [&'static str] = &[
        "N",
        "B_s",
        "B_g",
        "tau",
        "gamma",
        "cluster_k",
        "seed",
        "reward_mean",
        "reward_std",
        "reward_norm",
        "mmd2",
        "tilt_mean_error",
        "nfe_denoiser",
        "nfe_reward",
        "nfe_grad",
        "wall_ms",
        "steps",
        "zoo_probes",
        "grad_repeats",
    ];

    /// Numeric value of a column, by CSV name.
    pub fn field(&self, name: &str) -> Option<Option<f64>> {
        let k = &self.key;
        Some(match name {
            "N" => Some(k.n as f64),
            "B_s" => Some(k.block_sample as f64),
            "B_g" => Some(k.block_grad as f64),
            "tau" => Some(k.tau),
            "gamma" => Some(k.gamma),
            "cluster_k" => k.cluster_k.map(|c| c as f64),
            "seed" => Some(self.seed as f64),
            "reward_mean" => Some(self.reward_mean),
            "reward_std" => Some(self.reward_std),
            "reward_norm" => self.reward_norm.ratio(),
            "mmd2" => Some(self.mmd2),
            "tilt_mean_error" => self.tilt_mean_error,
            "nfe_denoiser" => Some(self.nfe_denoiser),
            "nfe_reward" => Some(self.nfe_reward),
            "nfe_grad" => Some(self.nfe_grad),
            "wall_ms" => self.wall_ms,
            "steps" => Some(k.steps as f64),
            "zoo_probes" => Some(k.zoo_probes as f64),
            "grad_repeats" => Some(k.grad_repeats as f64),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub key: CellKey,
    pub seed: u64,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.key
                .cmp_key(&b.key)
                .then(a.seed.cmp(&b.seed))
                .then(a.replicate.cmp(&b.replicate))
        });
        self.failures.sort_by(|a, b| {
            a.key
                .cmp_key(&b.key)
                .then(a.seed.cmp(&b.seed))
                .then(a.replicate.cmp(&b.replicate))
        });
    }
}

/// Median-heuristic bandwidth from exact prior draws, shared by every cell.
pub fn reference_bandwidth(prior: &GaussianMixturePrior, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0xB4_4D]));
    let draws: Vec<Vec<f64>> = (0..400).map(|_| prior.sample(&mut rng)).collect();
    median_bandwidth(&draws, &[])
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    prior: &'a GaussianMixturePrior,
    reward: &'a RewardModel,
    bandwidth: f64,
}

fn batch_streams(seed: u64, replicate: usize, b: usize) -> Substreams {
    Substreams::new(seed).child(mix(&[replicate as u64, b as u64]))
}

fn run_row(
    sh: &Shared<'_>,
    cell: &CellSpec,
    schedule: &NoiseSchedule,
    seed: u64,
    replicate: usize,
) -> Result<ResultRow> {
    let cfg = sh.cfg;
    let mut guided = Vec::new();
    let mut baseline = Vec::new();
    let mut nfe = crate::nfe::NfeCounters::default();
    let mut wall = 0.0;
    for b in 0..cfg.batch {
        let streams = batch_streams(seed, replicate, b);
        let out = run_sampler(&cell.guidance, sh.prior, sh.reward, schedule, &streams)?;
        let base = run_unguided(1, sh.prior, sh.reward, schedule, &streams)?;
        nfe = nfe + out.nfe;
        wall += out.wall.as_secs_f64() * 1e3;
        guided.extend(out.samples);
        baseline.extend(base.samples);
    }
    let (reward_mean, reward_std) = expected_reward(&guided, sh.reward)?;
    let (baseline_mean, _) = expected_reward(&baseline, sh.reward)?;
    let mmd2 = mmd2_rbf(&guided, &baseline, sh.bandwidth)?;
    let tilt_mean_error = match (cfg.tilt_lambda, sh.reward.linear_weights()) {
        (Some(lambda), Some(a)) if sh.prior.is_single_gaussian() => {
            let oracle = tilted_oracle(sh.prior, a, lambda)?;
            Some(norm(&sub(&mean(&guided), &oracle.mean)))
        }
        _ => None,
    };
    let runs = cfg.batch as f64;
    Ok(ResultRow {
        key: CellKey::of(cell),
        seed,
        replicate,
        reward_mean,
        reward_std,
        reward_norm: Normalized::of(reward_mean, baseline_mean),
        mmd2,
        tilt_mean_error,
        nfe_denoiser: nfe.denoiser_calls as f64 / runs,
        nfe_reward: nfe.reward_evals as f64 / runs,
        nfe_grad: nfe.gradient_evals as f64 / runs,
        wall_ms: cfg.timing.then_some(wall / runs),
        baseline_reward_mean: baseline_mean,
    })
}

/// Runs the full grid. Rows come back sorted by cell key, seed, replicate;
/// cells that error are recorded in `failures` and the rest still run.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let reward = cfg.reward.build()?;
    let bandwidth = match cfg.mmd_bandwidth {
        Some(b) => b,
        None => reference_bandwidth(&cfg.prior, cfg.seeds[0])?,
    };
    let shared = Shared {
        cfg,
        prior: &cfg.prior,
        reward: &reward,
        bandwidth,
    };
    let cells = cfg.cells()?;
    let mut tasks = Vec::new();
    for (ci, _) in cells.iter().enumerate() {
        for &seed in &cfg.seeds {
            for r in 0..cfg.replicates {
                tasks.push((ci, seed, r));
            }
        }
    }
    let results: Vec<std::result::Result<ResultRow, Box<CellFailure>>> = tasks
        .par_iter()
        .map(|&(ci, seed, r)| {
            let cell = &cells[ci];
            let run = cfg
                .schedule
                .build(cell.steps)
                .and_then(|schedule| run_row(&shared, cell, &schedule, seed, r));
            run.map_err(|e| {
                Box::new(CellFailure {
                    key: CellKey::of(cell),
                    seed,
                    replicate: r,
                    message: e.to_string(),
                })
            })
        })
        .collect();
    let mut table = ResultTable::default();
    for res in results {
        match res {
            Ok(row) => table.rows.push(row),
            Err(f) => table.failures.push(*f),
        }
    }
    table.sort();
    Ok(table)
}

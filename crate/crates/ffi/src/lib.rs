//! C ABI over the blockguide library.
//!
//! Objects are opaque heap handles created by `bg_*_new` and released with the
//! matching `bg_*_free`. Every fallible call returns a [`BgStatus`]; on failure
//! `bg_last_error()` describes what went wrong on the calling thread. Arrays are
//! caller-owned, row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use blockguide::diffusion::{
    make_linear_schedule, scaled_linear_schedule, tweedie_denoise, GaussianMixturePrior, MixtureComponent,
    NoiseSchedule, ScoreModel, StateVector,
};
use blockguide::guidance::{run_sampler, softmax_weights, GradMode, GuidanceConfig, SamplerKind, Selection};
use blockguide::metrics::mmd2_rbf;
use blockguide::rewards::{linear_reward, quantized_reward, target_reward, RewardModel, ZooConfig};
use blockguide::{Error, Substreams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnavailableGradient = 3,
    Unsupported = 4,
    Config = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgSampler {
    Unguided = 0,
    Bon = 1,
    Code = 2,
    GradOnly = 3,
    Unicode = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BgSelection {
    Greedy = 0,
    Multinomial = 1,
}

/// Sampler settings. `cluster_k = 0` disables clustering; `zoo_probes = 0`
/// selects analytic gradients, anything else zero-order estimation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BgSamplerConfig {
    pub sampler: BgSampler,
    pub n_particles: usize,
    pub block_sample: usize,
    pub block_grad: usize,
    pub temperature: f64,
    pub guidance_scale: f64,
    pub selection: BgSelection,
    pub cluster_k: usize,
    pub grad_repeats: usize,
    pub zoo_probes: usize,
    pub zoo_sigma: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BgNfe {
    pub denoiser_calls: u64,
    pub reward_evals: u64,
    pub gradient_evals: u64,
}

pub struct BgSchedule(NoiseSchedule);
pub struct BgPrior(GaussianMixturePrior);
pub struct BgReward(RewardModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Status(BgStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) => BgStatus::InvalidArgument,
            Error::UnavailableGradient(_) => BgStatus::UnavailableGradient,
            Error::Unsupported(_) => BgStatus::Unsupported,
            Error::Config { .. } => BgStatus::Config,
            Error::Io { .. } => BgStatus::Io,
        };
        Fail::Status(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(BgStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BgStatus::Ok,
        Ok(Err(Fail::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BgStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn rows(p: *const f64, n: usize, dim: usize, what: &str) -> Result<Vec<Vec<f64>>, Fail> {
    let flat = input(p, n * dim, what)?;
    Ok(flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn bg_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Linear β schedule from `beta_start` to `beta_end` over `steps` steps.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bg_schedule_linear(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut BgSchedule,
) -> BgStatus {
    guard(|| store(out, BgSchedule(make_linear_schedule(steps, beta_start, beta_end)?)))
}

/// The standard 1e-4..0.02 range stretched to `steps` steps.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bg_schedule_default(steps: usize, out: *mut *mut BgSchedule) -> BgStatus {
    guard(|| store(out, BgSchedule(scaled_linear_schedule(steps)?)))
}

/// # Safety
/// `schedule` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_schedule_alpha_bar(schedule: *const BgSchedule, t: usize, out: *mut f64) -> BgStatus {
    guard(|| {
        let s = &handle(schedule, "schedule")?.0;
        if t > s.steps() {
            return Err(Error::InvalidArgument(format!("t = {t} exceeds {} steps", s.steps())).into());
        }
        output(out, 1, "out")?[0] = s.alpha_bar(t);
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bg_schedule_free(schedule: *mut BgSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Isotropic Gaussian mixture in `dim` dimensions. `means` holds
/// `n_components * dim` values, one row per component.
///
/// # Safety
/// The arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_prior_new(
    dim: usize,
    n_components: usize,
    weights: *const f64,
    means: *const f64,
    variances: *const f64,
    out: *mut *mut BgPrior,
) -> BgStatus {
    guard(|| {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()).into());
        }
        let w = input(weights, n_components, "weights")?;
        let v = input(variances, n_components, "variances")?;
        let m = rows(means, n_components, dim, "means")?;
        let components = (0..n_components)
            .map(|k| MixtureComponent {
                weight: w[k],
                mean: m[k].clone(),
                variance: v[k],
            })
            .collect();
        store(out, BgPrior(GaussianMixturePrior::new(components)?))
    })
}

/// # Safety
/// `prior` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bg_prior_free(prior: *mut BgPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Score of the noised marginal at step `t >= 1`.
///
/// # Safety
/// `x` and `out` must each hold `dim` values; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn bg_prior_score(
    prior: *const BgPrior,
    schedule: *const BgSchedule,
    x: *const f64,
    dim: usize,
    t: usize,
    out: *mut f64,
) -> BgStatus {
    guard(|| {
        let p = &handle(prior, "prior")?.0;
        let s = &handle(schedule, "schedule")?.0;
        let score = p.score(input(x, dim, "x")?, t, s)?;
        output(out, dim, "out")?.copy_from_slice(&score);
        Ok(())
    })
}

/// Posterior mean of the clean sample given `x` at step `t`.
///
/// # Safety
/// `x` and `out` must each hold `dim` values; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn bg_tweedie_denoise(
    prior: *const BgPrior,
    schedule: *const BgSchedule,
    x: *const f64,
    dim: usize,
    t: usize,
    out: *mut f64,
) -> BgStatus {
    guard(|| {
        let p = &handle(prior, "prior")?.0;
        let s = &handle(schedule, "schedule")?.0;
        if dim != p.dim() {
            return Err(Error::InvalidArgument(format!("dimension {dim} does not match prior ({})", p.dim())).into());
        }
        let x0 = tweedie_denoise(&StateVector::new(input(x, dim, "x")?.to_vec(), t), s, p)?;
        output(out, dim, "out")?.copy_from_slice(&x0.values);
        Ok(())
    })
}

/// `r(x) = a·x`.
///
/// # Safety
/// `a` must hold `dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_reward_linear(a: *const f64, dim: usize, out: *mut *mut BgReward) -> BgStatus {
    guard(|| store(out, BgReward(linear_reward(input(a, dim, "a")?.to_vec())?)))
}

/// `r(x) = -scale ‖x - target‖²`.
///
/// # Safety
/// `target` must hold `dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_reward_target(
    target: *const f64,
    dim: usize,
    scale: f64,
    out: *mut *mut BgReward,
) -> BgStatus {
    guard(|| {
        store(
            out,
            BgReward(target_reward(input(target, dim, "target")?.to_vec(), scale)?),
        )
    })
}

/// `base` rounded down to multiples of `step`; has no analytic gradient.
/// `base` stays owned by the caller.
///
/// # Safety
/// `base` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_reward_quantized(base: *const BgReward, step: f64, out: *mut *mut BgReward) -> BgStatus {
    guard(|| {
        let base = handle(base, "base")?.0.clone();
        store(out, BgReward(quantized_reward(base, step)?))
    })
}

/// # Safety
/// `reward` must be a live handle, `x` must hold `dim` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bg_reward_evaluate(
    reward: *const BgReward,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> BgStatus {
    guard(|| {
        let r = &handle(reward, "reward")?.0;
        if let Some(d) = r.dim() {
            if d != dim {
                return Err(Error::InvalidArgument(format!("reward expects dimension {d}, got {dim}")).into());
            }
        }
        output(out, 1, "out")?[0] = r.evaluate(input(x, dim, "x")?);
        Ok(())
    })
}

/// # Safety
/// `reward` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bg_reward_free(reward: *mut BgReward) {
    if !reward.is_null() {
        drop(Box::from_raw(reward));
    }
}

/// Defaults matching the library's: UniCoDe, N = 4, blocks of 5, τ = 0.1, γ = 0.2.
#[no_mangle]
pub extern "C" fn bg_sampler_config_default() -> BgSamplerConfig {
    let g = GuidanceConfig::default();
    BgSamplerConfig {
        sampler: BgSampler::Unicode,
        n_particles: g.n_particles,
        block_sample: g.block_sample,
        block_grad: g.block_grad,
        temperature: g.temperature,
        guidance_scale: g.guidance_scale,
        selection: BgSelection::Greedy,
        cluster_k: 0,
        grad_repeats: g.grad_repeats,
        zoo_probes: 0,
        zoo_sigma: g.zoo.sigma,
    }
}

fn guidance_config(c: &BgSamplerConfig) -> GuidanceConfig {
    let defaults = GuidanceConfig::default();
    GuidanceConfig {
        sampler: match c.sampler {
            BgSampler::Unguided => SamplerKind::Unguided,
            BgSampler::Bon => SamplerKind::Bon,
            BgSampler::Code => SamplerKind::Code,
            BgSampler::GradOnly => SamplerKind::GradOnly,
            BgSampler::Unicode => SamplerKind::Unicode,
        },
        n_particles: c.n_particles,
        block_sample: c.block_sample,
        block_grad: c.block_grad,
        temperature: c.temperature,
        guidance_scale: c.guidance_scale,
        selection: match c.selection {
            BgSelection::Greedy => Selection::Greedy,
            BgSelection::Multinomial => Selection::Multinomial,
        },
        cluster_k: (c.cluster_k > 0).then_some(c.cluster_k),
        grad_repeats: c.grad_repeats,
        grad_mode: if c.zoo_probes > 0 {
            GradMode::ZeroOrder
        } else {
            GradMode::Analytic
        },
        zoo: if c.zoo_probes > 0 {
            ZooConfig {
                sigma: c.zoo_sigma,
                n_probes: c.zoo_probes,
            }
        } else {
            defaults.zoo
        },
        ..defaults
    }
}

/// Runs one sampler from `t = T` to `0`.
///
/// Samples are written row-major into `samples` (room for `capacity` rows of
/// the prior's dimension); `*n_samples` receives the number produced. If the
/// buffer is too small, nothing is written except `*n_samples` and the call
/// returns `BUFFER_TOO_SMALL`. `nfe` may be null.
///
/// # Safety
/// Handles must be live; `samples` must hold `capacity * dim` values;
/// `config` and `n_samples` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bg_run_sampler(
    config: *const BgSamplerConfig,
    prior: *const BgPrior,
    reward: *const BgReward,
    schedule: *const BgSchedule,
    seed: u64,
    samples: *mut f64,
    capacity: usize,
    n_samples: *mut usize,
    nfe: *mut BgNfe,
) -> BgStatus {
    guard(|| {
        let cfg = guidance_config(handle(config, "config")?);
        let p = &handle(prior, "prior")?.0;
        let r = &handle(reward, "reward")?.0;
        let s = &handle(schedule, "schedule")?.0;
        if n_samples.is_null() {
            return Err(null("n_samples"));
        }
        let run = run_sampler(&cfg, p, r, s, &Substreams::new(seed))?;
        *n_samples = run.samples.len();
        if let Some(n) = nfe.as_mut() {
            *n = BgNfe {
                denoiser_calls: run.nfe.denoiser_calls,
                reward_evals: run.nfe.reward_evals,
                gradient_evals: run.nfe.gradient_evals,
            };
        }
        if run.samples.len() > capacity {
            return Err(Fail::Status(
                BgStatus::BufferTooSmall,
                format!("{} samples do not fit in {capacity} rows", run.samples.len()),
            ));
        }
        let dim = p.dim();
        let buf = output(samples, run.samples.len() * dim, "samples")?;
        for (row, sample) in buf.chunks_mut(dim).zip(&run.samples) {
            row.copy_from_slice(sample);
        }
        Ok(())
    })
}

/// `softmax(rewards / tau)` into `out` (both of length `n`).
///
/// # Safety
/// `rewards` and `out` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn bg_softmax_weights(rewards: *const f64, n: usize, tau: f64, out: *mut f64) -> BgStatus {
    guard(|| {
        let w = softmax_weights(input(rewards, n, "rewards")?, tau)?;
        output(out, n, "out")?.copy_from_slice(&w);
        Ok(())
    })
}

/// Biased squared MMD with an RBF kernel between two sample sets.
///
/// # Safety
/// `xs` must hold `nx * dim` values, `ys` `ny * dim`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bg_mmd2_rbf(
    xs: *const f64,
    nx: usize,
    ys: *const f64,
    ny: usize,
    dim: usize,
    bandwidth: f64,
    out: *mut f64,
) -> BgStatus {
    guard(|| {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()).into());
        }
        let v = mmd2_rbf(&rows(xs, nx, dim, "xs")?, &rows(ys, ny, dim, "ys")?, bandwidth)?;
        output(out, 1, "out")?[0] = v;
        Ok(())
    })
}

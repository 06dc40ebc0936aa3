use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

/// Function-evaluation counts for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NfeCounters {
    pub denoiser_calls: u64,
    pub reward_evals: u64,
    pub gradient_evals: u64,
}

impl std::ops::Add for NfeCounters {
    type Output = NfeCounters;

    fn add(self, o: NfeCounters) -> NfeCounters {
        NfeCounters {
            denoiser_calls: self.denoiser_calls + o.denoiser_calls,
            reward_evals: self.reward_evals + o.reward_evals,
            gradient_evals: self.gradient_evals + o.gradient_evals,
        }
    }
}

/// Shared accumulator; additions commute so totals do not depend on
/// evaluation order.
#[derive(Debug, Default)]
pub struct NfeTally {
    denoiser: AtomicU64,
    reward: AtomicU64,
    gradient: AtomicU64,
}

impl NfeTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_denoiser(&self, n: u64) {
        self.denoiser.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_reward(&self, n: u64) {
        self.reward.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_gradient(&self, n: u64) {
        self.gradient.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> NfeCounters {
        NfeCounters {
            denoiser_calls: self.denoiser.load(Ordering::Relaxed),
            reward_evals: self.reward.load(Ordering::Relaxed),
            gradient_evals: self.gradient.load(Ordering::Relaxed),
        }
    }
}

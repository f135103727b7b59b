//! Generalised Pólya urn.
//!
//! A draw picks color `i` with probability `counts[i]^gamma / Σ counts[j]^gamma`
//! and adds `increment` balls of that color. `gamma = 1` is the classical
//! linear urn, whose color-0 share is a martingale and, started from one ball
//! of each of two colors, converges to a Uniform(0, 1) limit. `gamma > 1`
//! locks in a single color; `gamma = 0` is an unbiased random walk.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Xoshiro256StarStar};

const TWO_POW_53: f64 = (1u64 << 53) as f64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrnState {
    counts: Vec<u64>,
    step: u64,
}

impl UrnState {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        let state = Self { counts, step: 0 };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(Error::invalid_state("urn has no colors"));
        }
        if let Some(i) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid_state(format!("color {i} has a zero count")));
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of color `i` in the urn.
    pub fn share(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.total() as f64
    }

    pub fn max_share(&self) -> f64 {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        max as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrnRule {
    gamma: f64,
    increment: u64,
}

impl Default for UrnRule {
    fn default() -> Self {
        Self::LINEAR
    }
}

impl UrnRule {
    pub const LINEAR: UrnRule = UrnRule {
        gamma: 1.0,
        increment: 1,
    };

    pub fn new(gamma: f64, increment: u64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::invalid_argument(format!(
                "gamma must be finite and >= 0, got {gamma}"
            )));
        }
        if increment == 0 {
            return Err(Error::invalid_argument("increment must be >= 1"));
        }
        Ok(Self { gamma, increment })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn increment(&self) -> u64 {
        self.increment
    }

    fn is_linear(&self) -> bool {
        self.gamma == 1.0
    }

    /// Draw probabilities for each color of `state`.
    pub fn probabilities(&self, state: &UrnState) -> Vec<f64> {
        if self.is_linear() {
            let total = state.total() as f64;
            return state.counts.iter().map(|&c| c as f64 / total).collect();
        }
        let weights = self.weights(&state.counts);
        let sum: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / sum).collect()
    }

    // Normalised by the largest count so that large gamma cannot overflow.
    fn weights(&self, counts: &[u64]) -> Vec<f64> {
        let max = counts.iter().copied().max().unwrap_or(1) as f64;
        counts
            .iter()
            .map(|&c| (c as f64 / max).powf(self.gamma))
            .collect()
    }

    /// Cumulative inversion of `u` over colors in index order. A `u` landing
    /// exactly on a cumulative edge selects the lower color.
    fn select(&self, counts: &[u64], u: f64) -> usize {
        if self.is_linear() {
            let total: u64 = counts.iter().sum();
            let scaled = u * TWO_POW_53;
            if scaled.fract() == 0.0 {
                // u = k / 2^53 exactly: compare k * total <= cum * 2^53 in integers.
                let lhs = scaled as u128 * total as u128;
                let mut cum: u128 = 0;
                for (i, &c) in counts.iter().enumerate() {
                    cum += c as u128;
                    if lhs <= cum << 53 {
                        return i;
                    }
                }
                return counts.len() - 1;
            }
            let threshold = u * total as f64;
            let mut cum: u64 = 0;
            for (i, &c) in counts.iter().enumerate() {
                cum += c;
                if threshold <= cum as f64 {
                    return i;
                }
            }
            return counts.len() - 1;
        }
        let weights = self.weights(counts);
        let threshold = u * weights.iter().sum::<f64>();
        let mut cum = 0.0;
        for (i, w) in weights.iter().enumerate() {
            cum += w;
            if threshold <= cum {
                return i;
            }
        }
        counts.len() - 1
    }
}

fn check_unit(u: f64) -> Result<()> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::invalid_argument(format!(
            "uniform draw must lie in [0, 1), got {u}"
        )));
    }
    Ok(())
}

impl UrnState {
    /// Advance by one draw in place, returning the chosen color.
    pub fn advance(&mut self, rule: &UrnRule, u: f64) -> Result<usize> {
        self.validate()?;
        check_unit(u)?;
        Ok(self.advance_unchecked(rule, u))
    }

    fn advance_unchecked(&mut self, rule: &UrnRule, u: f64) -> usize {
        let chosen = rule.select(&self.counts, u);
        self.counts[chosen] += rule.increment;
        self.step += 1;
        chosen
    }
}

/// One draw from `state`, returning the successor state and the chosen color.
pub fn urn_step(state: &UrnState, rule: &UrnRule, u: f64) -> Result<(UrnState, usize)> {
    let mut next = state.clone();
    let chosen = next.advance(rule, u)?;
    Ok((next, chosen))
}

/// Color-0 share after each recorded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareTrajectory {
    pub initial_share: f64,
    pub entries: Vec<(u64, f64)>,
}

impl ShareTrajectory {
    pub fn final_share(&self) -> Option<f64> {
        self.entries.last().map(|&(_, s)| s)
    }

    pub fn shares(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrnRun {
    pub trajectory: ShareTrajectory,
    pub final_state: UrnState,
}

/// Simulate `steps` draws, recording the share every `every` steps and at the
/// final step. Simulation itself always runs every step.
pub fn simulate(
    initial: &UrnState,
    rule: &UrnRule,
    steps: u64,
    seed: u64,
    every: u64,
) -> Result<UrnRun> {
    initial.validate()?;
    if steps == 0 {
        return Err(Error::invalid_argument("steps must be >= 1"));
    }
    if every == 0 {
        return Err(Error::invalid_argument("decimation must be >= 1"));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut state = initial.clone();
    let mut entries = Vec::with_capacity((steps / every + 1) as usize);
    for k in 1..=steps {
        state.advance_unchecked(rule, rng.next_f64());
        if k % every == 0 || k == steps {
            entries.push((k, state.share(0)));
        }
    }
    Ok(UrnRun {
        trajectory: ShareTrajectory {
            initial_share: initial.share(0),
            entries,
        },
        final_state: state,
    })
}

/// Full, undecimated trajectory of one run.
pub fn run_urn(
    initial: &UrnState,
    rule: &UrnRule,
    steps: u64,
    seed: u64,
) -> Result<ShareTrajectory> {
    simulate(initial, rule, steps, seed, 1).map(|r| r.trajectory)
}

fn final_state(initial: &UrnState, rule: &UrnRule, steps: u64, seed: u64) -> UrnState {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut state = initial.clone();
    for _ in 0..steps {
        state.advance_unchecked(rule, rng.next_f64());
    }
    state
}

/// Final urn states of `n_runs` independent runs; run `r` uses stream `r` of `master_seed`.
pub fn final_state_ensemble(
    initial: &UrnState,
    rule: &UrnRule,
    steps: u64,
    n_runs: u64,
    master_seed: u64,
) -> Result<Vec<UrnState>> {
    initial.validate()?;
    if steps == 0 {
        return Err(Error::invalid_argument("steps must be >= 1"));
    }
    if n_runs == 0 {
        return Err(Error::invalid_argument("n_runs must be >= 1"));
    }
    Ok((0..n_runs)
        .into_par_iter()
        .map(|r| final_state(initial, rule, steps, derive_seed(master_seed, r)))
        .collect())
}

/// Final color-0 shares of `n_runs` independent runs, ordered by run index.
pub fn final_share_ensemble(
    initial: &UrnState,
    rule: &UrnRule,
    steps: u64,
    n_runs: u64,
    master_seed: u64,
) -> Result<Vec<f64>> {
    Ok(
        final_state_ensemble(initial, rule, steps, n_runs, master_seed)?
            .iter()
            .map(|s| s.share(0))
            .collect(),
    )
}

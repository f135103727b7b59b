//! Artificial cultural market with graded social influence.
//!
//! Agents arrive one at a time, pick an item through a multinomial logit over
//! its latent appeal and the displayed social signal, listen to it, rate it on
//! a 1-5 scale and download it with probability `(rating - 1) / 4`.
//!
//! Under [`InfluenceCondition::Independent`] no download counts are shown.
//! Under `Weak` counts are shown in a random order drawn once per world.
//! Under `Strong` items are ranked by downloads and top slots get extra
//! attention through `rank_bias`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::PuppetSchedule;
use crate::rng::{derive_seed, streams, Xoshiro256StarStar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfluenceCondition {
    Independent,
    Weak,
    Strong,
}

impl InfluenceCondition {
    pub const ALL: [InfluenceCondition; 3] = [
        InfluenceCondition::Independent,
        InfluenceCondition::Weak,
        InfluenceCondition::Strong,
    ];

    /// Canonical position used for ordering and seed streams.
    pub fn index(self) -> u64 {
        match self {
            InfluenceCondition::Independent => 0,
            InfluenceCondition::Weak => 1,
            InfluenceCondition::Strong => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InfluenceCondition::Independent => "independent",
            InfluenceCondition::Weak => "weak",
            InfluenceCondition::Strong => "strong",
        }
    }
}

impl fmt::Display for InfluenceCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InfluenceCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(InfluenceCondition::Independent),
            "weak" => Ok(InfluenceCondition::Weak),
            "strong" => Ok(InfluenceCondition::Strong),
            other => Err(Error::invalid_argument(format!(
                "unknown condition `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: usize,
    pub appeal: f64,
    pub downloads: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    /// Sensitivity to latent appeal.
    pub alpha: f64,
    /// Sensitivity to the social signal; the coupling-rigidity dial.
    pub beta: f64,
    /// Extra weight on top display slots under `Strong`.
    pub rank_bias: f64,
    pub actions_per_agent: u64,
}

impl Default for AgentPolicy {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            rank_bias: 1.0,
            actions_per_agent: 1,
        }
    }
}

impl AgentPolicy {
    pub fn new(alpha: f64, beta: f64, rank_bias: f64, actions_per_agent: u64) -> Result<Self> {
        let policy = Self {
            alpha,
            beta,
            rank_bias,
            actions_per_agent,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("rank_bias", self.rank_bias),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid_argument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.actions_per_agent == 0 {
            return Err(Error::invalid_argument("actions_per_agent must be >= 1"));
        }
        Ok(())
    }
}

/// Signal displayed next to `item` at `display_rank` (0 = top) in a market of
/// `n_items` items.
pub fn social_signal(
    item: &Item,
    condition: InfluenceCondition,
    display_rank: usize,
    n_items: usize,
    policy: &AgentPolicy,
) -> f64 {
    match condition {
        InfluenceCondition::Independent => 0.0,
        InfluenceCondition::Weak => (item.downloads as f64).ln_1p(),
        InfluenceCondition::Strong => {
            (item.downloads as f64).ln_1p()
                + policy.rank_bias * (n_items as f64 / (1 + display_rank) as f64).ln()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    condition: InfluenceCondition,
    items: Vec<Item>,
    display_order: Vec<usize>,
    rank_of: Vec<usize>,
    step: u64,
}

impl MarketState {
    /// Fresh market. `display_order` is used as-is under `Independent` and
    /// `Weak`; under `Strong` the order is always downloads-descending.
    pub fn new(
        appeals: &[f64],
        condition: InfluenceCondition,
        display_order: Vec<usize>,
    ) -> Result<Self> {
        if appeals.is_empty() {
            return Err(Error::invalid_argument("market needs at least one item"));
        }
        let n = appeals.len();
        let mut seen = vec![false; n];
        if display_order.len() != n
            || display_order
                .iter()
                .any(|&i| i >= n || std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::invalid_argument(
                "display order must be a permutation of item ids",
            ));
        }
        let items = appeals
            .iter()
            .enumerate()
            .map(|(id, &appeal)| Item {
                id,
                appeal,
                downloads: 0,
            })
            .collect();
        let display_order = if condition == InfluenceCondition::Strong {
            (0..n).collect()
        } else {
            display_order
        };
        let mut state = Self {
            condition,
            items,
            rank_of: vec![0; n],
            display_order,
            step: 0,
        };
        state.reindex();
        Ok(state)
    }

    fn reindex(&mut self) {
        for (rank, &id) in self.display_order.iter().enumerate() {
            self.rank_of[id] = rank;
        }
    }

    pub fn condition(&self) -> InfluenceCondition {
        self.condition
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn display_order(&self) -> &[usize] {
        &self.display_order
    }

    pub fn display_rank(&self, item: usize) -> usize {
        self.rank_of[item]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn downloads(&self) -> Vec<u64> {
        self.items.iter().map(|i| i.downloads).collect()
    }

    /// Item with the most downloads, lowest id on ties.
    pub fn leader(&self) -> usize {
        leader_of(self.items.iter().map(|i| i.downloads))
    }

    pub fn signal(&self, item: usize, policy: &AgentPolicy) -> f64 {
        social_signal(
            &self.items[item],
            self.condition,
            self.rank_of[item],
            self.items.len(),
            policy,
        )
    }

    /// Register one action; a download also bumps the item up the ranking
    /// under `Strong`.
    pub fn record(&mut self, item: usize, downloaded: bool) {
        self.step += 1;
        if !downloaded {
            return;
        }
        self.items[item].downloads += 1;
        if self.condition == InfluenceCondition::Strong {
            let mut rank = self.rank_of[item];
            while rank > 0 {
                let above = self.display_order[rank - 1];
                let (da, di) = (self.items[above].downloads, self.items[item].downloads);
                if da > di || (da == di && above < item) {
                    break;
                }
                self.display_order.swap(rank - 1, rank);
                self.rank_of[above] = rank;
                rank -= 1;
            }
            self.rank_of[item] = rank;
        }
    }
}

pub(crate) fn leader_of(downloads: impl IntoIterator<Item = u64>) -> usize {
    let mut best = (0usize, 0u64);
    for (i, d) in downloads.into_iter().enumerate() {
        if i == 0 || d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Logit choice probabilities `P(i) ∝ exp(alpha * appeal_i + beta * signal_i)`.
pub fn choice_probabilities(state: &MarketState, policy: &AgentPolicy) -> Vec<f64> {
    let mut weights = logit_utilities(state, policy);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
    }
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    weights
}

fn logit_utilities(state: &MarketState, policy: &AgentPolicy) -> Vec<f64> {
    (0..state.items.len())
        .map(|i| policy.alpha * state.items[i].appeal + policy.beta * state.signal(i, policy))
        .collect()
}

/// Index chosen by cumulative inversion of `u` over `probs` in id order.
pub(crate) fn invert(probs: &[f64], u: f64) -> usize {
    let threshold = u * probs.iter().sum::<f64>();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if threshold <= cum && p > 0.0 {
            return i;
        }
    }
    last_positive
}

/// Rating in `1..=5`: one plus a Binomial(4, appeal) draw by inverse CDF on `u`.
pub fn simulate_listen(appeal: f64, u: f64) -> u8 {
    let p = appeal.clamp(0.0, 1.0);
    let q = 1.0 - p;
    let pmf = [
        q.powi(4),
        4.0 * p * q.powi(3),
        6.0 * p * p * q * q,
        4.0 * p.powi(3) * q,
        p.powi(4),
    ];
    let mut cdf = 0.0;
    for (k, m) in pmf.iter().enumerate() {
        cdf += m;
        if u < cdf {
            return 1 + k as u8;
        }
    }
    5
}

pub fn download_decision(rating: u8, u: f64) -> Result<bool> {
    if !(1..=5).contains(&rating) {
        return Err(Error::invalid_argument(format!(
            "rating must be in 1..=5, got {rating}"
        )));
    }
    Ok(u < f64::from(rating - 1) / 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub agent_id: u64,
    pub item_id: usize,
    pub signal_shown: f64,
    pub rating: u8,
    pub downloaded: bool,
    pub is_puppet: bool,
}

/// Ordered event log of one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationTrace {
    pub condition: InfluenceCondition,
    pub world_seed: u64,
    pub n_items: usize,
    pub events: Vec<Event>,
    pub final_shares: Vec<f64>,
}

impl RealizationTrace {
    pub fn downloads(&self) -> Vec<u64> {
        self.downloads_after(self.events.len())
    }

    /// Per-item downloads over the first `n_events` events.
    pub fn downloads_after(&self, n_events: usize) -> Vec<u64> {
        let mut d = vec![0; self.n_items];
        for e in self.events.iter().take(n_events).filter(|e| e.downloaded) {
            d[e.item_id] += 1;
        }
        d
    }

    pub fn total_downloads(&self) -> u64 {
        self.events.iter().filter(|e| e.downloaded).count() as u64
    }

    /// Final top-download item, lowest id on ties.
    pub fn final_leader(&self) -> usize {
        leader_of(self.downloads())
    }
}

fn shares_of(downloads: &[u64]) -> Vec<f64> {
    let total: u64 = downloads.iter().sum();
    if total == 0 {
        return vec![0.0; downloads.len()];
    }
    downloads.iter().map(|&d| d as f64 / total as f64).collect()
}

/// Fixed item set and agent behaviour shared by all worlds of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub appeals: Vec<f64>,
    pub policy: AgentPolicy,
    pub n_agents: u64,
}

impl Market {
    pub fn new(appeals: Vec<f64>, policy: AgentPolicy, n_agents: u64) -> Result<Self> {
        if appeals.is_empty() {
            return Err(Error::invalid_argument("market needs at least one item"));
        }
        if let Some(a) = appeals.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid_argument(format!(
                "appeal {a} outside [0, 1]"
            )));
        }
        policy.validate()?;
        let market = Self {
            appeals,
            policy,
            n_agents,
        };
        if market.horizon() == 0 {
            return Err(Error::invalid_argument("market horizon must be >= 1"));
        }
        Ok(market)
    }

    pub fn n_items(&self) -> usize {
        self.appeals.len()
    }

    /// Number of actions in one world.
    pub fn horizon(&self) -> u64 {
        self.n_agents * self.policy.actions_per_agent
    }

    /// Item with the lowest appeal, lowest id on ties.
    pub fn lowest_appeal_item(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.appeals.iter().enumerate() {
            if a < self.appeals[best] {
                best = i;
            }
        }
        best
    }

    /// One world. Each action consumes exactly three uniforms (choice, listen,
    /// download) whether or not a puppet occupies the slot, so a puppet run and
    /// its baseline see the same random numbers at every step.
    pub fn run_realization(
        &self,
        condition: InfluenceCondition,
        world_seed: u64,
        puppets: Option<&PuppetSchedule>,
    ) -> Result<RealizationTrace> {
        let horizon = self.horizon();
        if let Some(schedule) = puppets {
            schedule.validate(horizon, self.n_items())?;
        }
        let mut rng = Xoshiro256StarStar::seed_from_u64(world_seed);
        let mut order: Vec<usize> = (0..self.n_items()).collect();
        rng.shuffle(&mut order);
        let mut state = MarketState::new(&self.appeals, condition, order)?;

        let puppet_steps: &[u64] = puppets.map(|p| p.steps.as_slice()).unwrap_or(&[]);
        let mut next_puppet = 0;
        let mut events = Vec::with_capacity(horizon as usize);
        for step in 1..=horizon {
            let (u_choice, u_listen, u_download) = (rng.next_f64(), rng.next_f64(), rng.next_f64());
            let is_puppet = puppet_steps.get(next_puppet) == Some(&step);
            if is_puppet {
                next_puppet += 1;
            }
            let (item_id, rating, downloaded) = if is_puppet {
                (puppets.map(|p| p.target_item).unwrap_or(0), 5, true)
            } else {
                let probs = choice_probabilities(&state, &self.policy);
                let item = invert(&probs, u_choice);
                let rating = simulate_listen(self.appeals[item], u_listen);
                (item, rating, download_decision(rating, u_download)?)
            };
            events.push(Event {
                step,
                agent_id: (step - 1) / self.policy.actions_per_agent,
                item_id,
                signal_shown: state.signal(item_id, &self.policy),
                rating,
                downloaded,
                is_puppet,
            });
            state.record(item_id, downloaded);
        }
        Ok(RealizationTrace {
            condition,
            world_seed,
            n_items: self.n_items(),
            final_shares: shares_of(&state.downloads()),
            events,
        })
    }
}

/// Market parameters of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub n_items: usize,
    pub n_agents: u64,
    pub actions_per_agent: u64,
    pub alpha: f64,
    pub beta: f64,
    pub rank_bias: f64,
    pub appeal_min: f64,
    pub appeal_max: f64,
    pub conditions: Vec<InfluenceCondition>,
    pub worlds: u64,
    /// Cross-world unpredictability requires at least two worlds.
    pub unpredictability: bool,
    pub prediction_fractions: Vec<f64>,
    pub rigidity_bins: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            n_items: 50,
            n_agents: 1200,
            actions_per_agent: 1,
            alpha: 1.0,
            beta: 1.0,
            rank_bias: 1.0,
            appeal_min: 0.2,
            appeal_max: 0.8,
            conditions: InfluenceCondition::ALL.to_vec(),
            worlds: 8,
            unpredictability: true,
            prediction_fractions: vec![
                0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
            ],
            rigidity_bins: 8,
        }
    }
}

impl MarketConfig {
    pub fn policy(&self) -> Result<AgentPolicy> {
        AgentPolicy::new(
            self.alpha,
            self.beta,
            self.rank_bias,
            self.actions_per_agent,
        )
    }

    /// Appeals drawn i.i.d. Uniform(appeal_min, appeal_max) from the appeal stream.
    pub fn draw_appeals(&self, master_seed: u64) -> Vec<f64> {
        let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(master_seed, streams::APPEALS));
        (0..self.n_items)
            .map(|_| self.appeal_min + (self.appeal_max - self.appeal_min) * rng.next_f64())
            .collect()
    }

    pub fn market(&self, master_seed: u64) -> Result<Market> {
        Market::new(
            self.draw_appeals(master_seed),
            self.policy()?,
            self.n_agents,
        )
    }
}

pub fn world_seed(master_seed: u64, condition: InfluenceCondition, world: u64) -> u64 {
    derive_seed(master_seed, streams::world(condition.index(), world))
}

/// Single world with appeals drawn from the experiment's appeal stream.
pub fn run_realization(
    config: &MarketConfig,
    master_seed: u64,
    condition: InfluenceCondition,
    world_seed: u64,
    puppets: Option<&PuppetSchedule>,
) -> Result<RealizationTrace> {
    config
        .market(master_seed)?
        .run_realization(condition, world_seed, puppets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionWorlds {
    pub condition: InfluenceCondition,
    pub traces: Vec<RealizationTrace>,
}

/// Independent worlds per condition over one shared item set.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSet {
    pub appeals: Vec<f64>,
    pub policy: AgentPolicy,
    pub conditions: Vec<ConditionWorlds>,
}

impl WorldSet {
    pub fn traces(&self, condition: InfluenceCondition) -> Option<&[RealizationTrace]> {
        self.conditions
            .iter()
            .find(|c| c.condition == condition)
            .map(|c| c.traces.as_slice())
    }
}

pub fn run_world_set(config: &MarketConfig, master_seed: u64) -> Result<WorldSet> {
    if config.unpredictability && config.worlds < 2 {
        return Err(Error::config(
            "market.worlds",
            "must be >= 2 when unpredictability is requested",
        ));
    }
    let market = config.market(master_seed)?;
    run_world_set_on(&market, &config.conditions, config.worlds, master_seed)
}

/// World set over an explicit market, ordered by (condition, world index).
pub fn run_world_set_on(
    market: &Market,
    conditions: &[InfluenceCondition],
    worlds: u64,
    master_seed: u64,
) -> Result<WorldSet> {
    let mut conditions: Vec<InfluenceCondition> = conditions.to_vec();
    conditions.sort();
    conditions.dedup();
    let units: Vec<(InfluenceCondition, u64)> = conditions
        .iter()
        .flat_map(|&c| (0..worlds).map(move |w| (c, w)))
        .collect();
    let traces = units
        .par_iter()
        .map(|&(c, w)| market.run_realization(c, world_seed(master_seed, c, w), None))
        .collect::<Result<Vec<_>>>()?;
    let mut traces = traces.into_iter();
    let conditions = conditions
        .iter()
        .map(|&condition| ConditionWorlds {
            condition,
            traces: traces.by_ref().take(worlds as usize).collect(),
        })
        .collect();
    Ok(WorldSet {
        appeals: market.appeals.clone(),
        policy: market.policy,
        conditions,
    })
}

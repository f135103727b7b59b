//! Sock-puppet injection and burst detection.
//!
//! A [`PuppetSchedule`] replaces the organic agent at chosen steps with a fake
//! account that picks the target, rates it 5 and downloads it.
//! [`detect_bursts`] scans a trace for windows in which an item gathers more
//! downloads than the organic choice model makes plausible.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    choice_probabilities, InfluenceCondition, Market, MarketState, RealizationTrace,
};
use crate::rng::{derive_seed, streams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PuppetSchedule {
    pub target_item: usize,
    /// 1-based event steps taken over by puppets, strictly increasing.
    pub steps: Vec<u64>,
}

impl PuppetSchedule {
    pub fn new(target_item: usize, steps: Vec<u64>) -> Result<Self> {
        if steps.first() == Some(&0) {
            return Err(Error::config("puppets.steps", "steps are 1-based"));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "puppets.steps",
                "must be strictly increasing",
            ));
        }
        Ok(Self { target_item, steps })
    }

    /// Puppets on steps `1..=k`.
    pub fn front_loaded(target_item: usize, k: u64) -> Self {
        Self {
            target_item,
            steps: (1..=k).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn validate(&self, horizon: u64, n_items: usize) -> Result<()> {
        if self.target_item >= n_items {
            return Err(Error::config(
                "puppets.target_item",
                format!("must be < {n_items}, got {}", self.target_item),
            ));
        }
        if let Some(&last) = self.steps.last() {
            if last > horizon {
                return Err(Error::config(
                    "puppets.steps",
                    format!("step {last} is beyond the horizon of {horizon} events"),
                ));
            }
        }
        Self::new(self.target_item, self.steps.clone()).map(|_| ())
    }
}

/// One world with puppets spliced in at their scheduled steps.
pub fn apply_puppets(
    market: &Market,
    condition: InfluenceCondition,
    world_seed: u64,
    schedule: &PuppetSchedule,
) -> Result<RealizationTrace> {
    market.run_realization(condition, world_seed, Some(schedule))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedRun {
    pub seed: u64,
    pub baseline: RealizationTrace,
    pub treated: RealizationTrace,
}

/// Baseline and treated worlds sharing the seed of paired stream `r`.
pub fn paired_runs(
    market: &Market,
    condition: InfluenceCondition,
    schedule: &PuppetSchedule,
    n_runs: u64,
    master_seed: u64,
) -> Result<Vec<PairedRun>> {
    schedule.validate(market.horizon(), market.n_items())?;
    (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(master_seed, streams::paired_run(r));
            Ok(PairedRun {
                seed,
                baseline: market.run_realization(condition, seed, None)?,
                treated: market.run_realization(condition, seed, Some(schedule))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinShift {
    pub baseline: f64,
    pub treated: f64,
    pub delta: f64,
    pub n_runs: u64,
}

pub fn win_shift_of(runs: &[PairedRun], target: usize) -> WinShift {
    let n = runs.len() as f64;
    let wins = |f: fn(&PairedRun) -> &RealizationTrace| {
        runs.iter()
            .filter(|r| f(r).final_leader() == target)
            .count() as f64
            / n
    };
    let baseline = wins(|r| &r.baseline);
    let treated = wins(|r| &r.treated);
    WinShift {
        baseline,
        treated,
        delta: treated - baseline,
        n_runs: runs.len() as u64,
    }
}

/// Probability that the target ends as top item, without and with puppets.
pub fn win_probability_shift(
    market: &Market,
    condition: InfluenceCondition,
    schedule: &PuppetSchedule,
    n_runs: u64,
    master_seed: u64,
) -> Result<WinShift> {
    if n_runs < 2 {
        return Err(Error::invalid_argument("n_runs must be >= 2"));
    }
    let runs = paired_runs(market, condition, schedule, n_runs, master_seed)?;
    Ok(win_shift_of(&runs, schedule.target_item))
}

/// Default detector window, in events.
pub const DEFAULT_WINDOW: usize = 20;
/// Default detector threshold in nats. Organic Strong-condition cascades in
/// the first few dozen events reach 60-70 nats under the constant-rate
/// window model, so lower thresholds flag ordinary herding.
pub const DEFAULT_THRESHOLD: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub item_id: usize,
    /// First and last event step of the flagged span, inclusive.
    pub window_start: u64,
    pub window_end: u64,
    /// `-ln P(X >= observed)` in nats, maximised over merged windows.
    pub surprise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub flagged: Vec<Flag>,
    pub threshold: f64,
    pub window: usize,
}

impl DetectionReport {
    pub fn flags_item_within(&self, item: usize, first: u64, last: u64) -> bool {
        self.flagged
            .iter()
            .any(|f| f.item_id == item && f.window_start <= last && f.window_end >= first)
    }
}

fn ln_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln P(X >= x)` for `X ~ Binomial(n, p)`, computed in log space.
pub fn ln_binomial_upper_tail(n: usize, x: usize, p: f64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if x > n {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let p = p.max(f64::MIN_POSITIVE);
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let terms: Vec<f64> = (x..=n)
        .map(|j| ln_fact[n] - ln_fact[j] - ln_fact[n - j] + j as f64 * lp + (n - j) as f64 * lq)
        .collect();
    ln_sum_exp(&terms).min(0.0)
}

/// Slide a `window`-event window over the trace. For every item downloaded in
/// the window, the per-event download probability is the organic model's
/// choice probability at the pre-window state times the item's appeal (the
/// expected download rate after listening), held fixed across the window.
/// Windows whose surprise reaches `threshold` are flagged; overlapping flagged
/// windows of the same item are merged.
pub fn detect_bursts(
    market: &Market,
    trace: &RealizationTrace,
    window: usize,
    threshold: f64,
) -> Result<DetectionReport> {
    if window < 5 {
        return Err(Error::invalid_argument(format!(
            "window must be >= 5, got {window}"
        )));
    }
    let n = trace.events.len();
    if window > n {
        return Err(Error::invalid_argument(format!(
            "window of {window} events is longer than the trace ({n})"
        )));
    }
    if trace.n_items != market.n_items() {
        return Err(Error::invalid_argument(
            "trace and market have different item counts",
        ));
    }
    let n_items = market.n_items();
    let mut state = MarketState::new(&market.appeals, trace.condition, (0..n_items).collect())?;
    let mut in_window = vec![0usize; n_items];
    for e in trace.events[..window].iter().filter(|e| e.downloaded) {
        in_window[e.item_id] += 1;
    }

    let mut flagged: Vec<Flag> = Vec::new();
    let mut open: HashMap<usize, usize> = HashMap::new();
    for start in 0..=n - window {
        if in_window.iter().any(|&c| c > 0) {
            let probs = choice_probabilities(&state, &market.policy);
            for (item, &count) in in_window.iter().enumerate().filter(|(_, &c)| c > 0) {
                let p = probs[item] * market.appeals[item];
                let surprise = -ln_binomial_upper_tail(window, count, p);
                if surprise < threshold {
                    continue;
                }
                let (first, last) = (start as u64 + 1, (start + window) as u64);
                match open.get(&item).map(|&i| &mut flagged[i]) {
                    Some(f) if f.window_end >= first => {
                        f.window_end = last;
                        f.surprise = f.surprise.max(surprise);
                    }
                    _ => {
                        open.insert(item, flagged.len());
                        flagged.push(Flag {
                            item_id: item,
                            window_start: first,
                            window_end: last,
                            surprise,
                        });
                    }
                }
            }
        }
        if start + window == n {
            break;
        }
        let leaving = &trace.events[start];
        if leaving.downloaded {
            in_window[leaving.item_id] -= 1;
        }
        let entering = &trace.events[start + window];
        if entering.downloaded {
            in_window[entering.item_id] += 1;
        }
        state.record(leaving.item_id, leaving.downloaded);
    }
    Ok(DetectionReport {
        flagged,
        threshold,
        window,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    /// Treated worlds with a flag on the target overlapping the puppet steps.
    pub recall: f64,
    /// Baseline worlds with any flag.
    pub false_flag_rate: f64,
    pub n_runs: usize,
}

pub fn score_detection(
    market: &Market,
    runs: &[PairedRun],
    schedule: &PuppetSchedule,
    window: usize,
    threshold: f64,
) -> Result<DetectionScore> {
    let (first, last) = match (schedule.steps.first(), schedule.steps.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::invalid_argument("schedule has no puppets to detect")),
    };
    let outcomes = runs
        .par_iter()
        .map(|r| {
            let hit = detect_bursts(market, &r.treated, window, threshold)?.flags_item_within(
                schedule.target_item,
                first,
                last,
            );
            let false_flag = !detect_bursts(market, &r.baseline, window, threshold)?
                .flagged
                .is_empty();
            Ok((hit, false_flag))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = outcomes.len() as f64;
    Ok(DetectionScore {
        recall: outcomes.iter().filter(|o| o.0).count() as f64 / n,
        false_flag_rate: outcomes.iter().filter(|o| o.1).count() as f64 / n,
        n_runs: outcomes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{AgentPolicy, MarketConfig};

    fn market(n_agents: u64) -> Market {
        MarketConfig {
            n_items: 20,
            n_agents,
            ..MarketConfig::default()
        }
        .market(17)
        .unwrap()
    }

    /// Binomial tail by direct summation of the pmf.
    fn tail_direct(n: usize, x: usize, p: f64) -> f64 {
        let mut c = 1.0f64;
        let mut total = 0.0;
        for j in 0..=n {
            if j > 0 {
                c = c * (n - j + 1) as f64 / j as f64;
            }
            if j >= x {
                total += c * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32);
            }
        }
        total
    }

    #[test]
    fn binomial_tail_matches_direct_sum() {
        for &(n, x, p) in &[
            (20, 15, 0.1),
            (10, 1, 0.3),
            (7, 7, 0.02),
            (30, 4, 0.5),
            (5, 0, 0.2),
        ] {
            let got = ln_binomial_upper_tail(n, x, p).exp();
            let want = tail_direct(n, x, p);
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1e-300),
                "{n} {x} {p}: {got} vs {want}"
            );
        }
        let w = 12;
        assert!((ln_binomial_upper_tail(w, w, 0.02) - w as f64 * 0.02f64.ln()).abs() < 1e-9);
        assert!(ln_binomial_upper_tail(5, 6, 0.5).is_infinite());
    }

    #[test]
    fn schedule_validation() {
        assert!(PuppetSchedule::new(0, vec![3, 2]).is_err());
        assert!(PuppetSchedule::new(0, vec![0, 2]).is_err());
        let s = PuppetSchedule::new(1, vec![2, 5]).unwrap();
        assert!(s.validate(4, 5).unwrap_err().is_config());
        assert!(s.validate(5, 5).is_ok());
        assert!(s.validate(5, 1).is_err());
        assert_eq!(PuppetSchedule::front_loaded(3, 4).steps, vec![1, 2, 3, 4]);
    }

    #[test]
    fn empty_schedule_is_the_baseline() {
        let m = market(300);
        for c in InfluenceCondition::ALL {
            let base = m.run_realization(c, 5, None).unwrap();
            let none = apply_puppets(&m, c, 5, &PuppetSchedule::front_loaded(2, 0)).unwrap();
            assert_eq!(base, none);
        }
        let shift = win_probability_shift(
            &m,
            InfluenceCondition::Strong,
            &PuppetSchedule::front_loaded(2, 0),
            20,
            1,
        )
        .unwrap();
        assert_eq!(shift.delta, 0.0);
    }

    #[test]
    fn all_puppets_capture_the_market() {
        let m = market(50);
        let t = apply_puppets(
            &m,
            InfluenceCondition::Strong,
            9,
            &PuppetSchedule::front_loaded(4, 50),
        )
        .unwrap();
        assert_eq!(t.final_shares[4], 1.0);
        assert!(t
            .events
            .iter()
            .all(|e| e.is_puppet && e.rating == 5 && e.downloaded));
    }

    #[test]
    fn puppets_beyond_horizon_are_rejected() {
        let m = market(50);
        let err = apply_puppets(
            &m,
            InfluenceCondition::Weak,
            1,
            &PuppetSchedule::new(0, vec![51]).unwrap(),
        )
        .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn independent_puppets_only_add_to_the_target() {
        let m = market(400);
        let schedule = PuppetSchedule::new(3, vec![10, 50, 51, 200]).unwrap();
        for seed in 0..30 {
            let base = m
                .run_realization(InfluenceCondition::Independent, seed, None)
                .unwrap();
            let treated =
                apply_puppets(&m, InfluenceCondition::Independent, seed, &schedule).unwrap();
            assert!(treated.downloads()[3] >= base.downloads()[3]);
            for (b, t) in base.events.iter().zip(&treated.events) {
                if !t.is_puppet {
                    assert_eq!(b, t);
                }
            }
        }
    }

    #[test]
    fn strong_puppets_raise_target_downloads() {
        let m = market(600);
        let target = m.lowest_appeal_item();
        let schedule = PuppetSchedule::front_loaded(target, 10);
        for seed in 0..100 {
            let base = m
                .run_realization(InfluenceCondition::Strong, seed, None)
                .unwrap();
            let treated = apply_puppets(&m, InfluenceCondition::Strong, seed, &schedule).unwrap();
            assert!(
                treated.downloads()[target] >= base.downloads()[target],
                "seed {seed}"
            );
        }
    }

    #[test]
    fn detector_arguments() {
        let m = market(100);
        let t = m
            .run_realization(InfluenceCondition::Strong, 3, None)
            .unwrap();
        assert!(detect_bursts(&m, &t, 4, 10.0).is_err());
        assert!(detect_bursts(&m, &t, 101, 10.0).is_err());
        let r = detect_bursts(&m, &t, 10, f64::INFINITY).unwrap();
        assert!(r.flagged.is_empty());
    }

    #[test]
    fn single_item_window_scores_its_path_probability() {
        // One window, filled by item 0, whose model download rate is 0.02.
        let policy = AgentPolicy::new(0.0, 0.0, 0.0, 1).unwrap();
        let m = Market::new(vec![0.04, 1.0], policy, 8).unwrap();
        let mut t = m
            .run_realization(
                InfluenceCondition::Independent,
                1,
                Some(&PuppetSchedule::front_loaded(0, 8)),
            )
            .unwrap();
        t.events.iter_mut().for_each(|e| e.is_puppet = false);
        let r = detect_bursts(&m, &t, 8, 1.0).unwrap();
        assert_eq!(r.flagged.len(), 1);
        let f = r.flagged[0];
        assert_eq!((f.item_id, f.window_start, f.window_end), (0, 1, 8));
        assert!((f.surprise + 8.0 * 0.02f64.ln()).abs() < 1e-9);
        assert!(r.flagged.iter().all(|f| f.surprise >= r.threshold));
    }

    #[test]
    fn overlapping_flags_merge() {
        let m = market(200);
        let t = apply_puppets(
            &m,
            InfluenceCondition::Strong,
            4,
            &PuppetSchedule::front_loaded(m.lowest_appeal_item(), 30),
        )
        .unwrap();
        let r = detect_bursts(&m, &t, 10, 15.0).unwrap();
        let target_flags: Vec<_> = r
            .flagged
            .iter()
            .filter(|f| f.item_id == m.lowest_appeal_item())
            .collect();
        assert_eq!(target_flags.len(), 1, "{:?}", r.flagged);
        assert_eq!(target_flags[0].window_start, 1);
        assert!(target_flags[0].window_end > 10, "{:?}", target_flags);
    }
}

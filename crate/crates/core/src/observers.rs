//! Inside-view and outside-view statistics over simulated worlds.
//!
//! Inside view: concentration ([`gini`]), cross-world variability
//! ([`unpredictability`]) and how well latent appeal ranks outcomes
//! ([`ex_ante_predictability`]). Outside view: how early the final winner can
//! be called from a trace prefix ([`early_leader_prediction`]) and how much the
//! displayed signal tells about the next choice ([`rigidity_index`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{leader_of, InfluenceCondition, MarketState, RealizationTrace, WorldSet};

const SUM_TOLERANCE: f64 = 1e-9;

fn check_shares(shares: &[f64], what: &str) -> Result<()> {
    if shares.is_empty() {
        return Err(Error::invalid_argument(format!("{what} is empty")));
    }
    if let Some(s) = shares.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::invalid_argument(format!(
            "{what} contains invalid share {s}"
        )));
    }
    let sum: f64 = shares.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid_argument(format!(
            "{what} sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Gini coefficient of a share vector, `Σ_i Σ_j |m_i - m_j| / (2n)`.
///
/// Evaluated through the sorted form `Σ_i (2i - n - 1) m_(i) / n` (1-based,
/// ascending), which is the same quantity in `O(n log n)`.
pub fn gini(shares: &[f64]) -> Result<f64> {
    check_shares(shares, "shares")?;
    let n = shares.len() as f64;
    let mut sorted = shares.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, m)| (2.0 * (i as f64 + 1.0) - n - 1.0) * m)
        .sum();
    Ok((weighted / n).max(0.0))
}

/// Mean over items of the mean absolute pairwise difference of that item's
/// share across worlds.
pub fn unpredictability(worlds: &[Vec<f64>]) -> Result<f64> {
    let r = worlds.len();
    if r < 2 {
        return Err(Error::invalid_argument(format!(
            "unpredictability needs at least 2 worlds, got {r}"
        )));
    }
    let s = worlds[0].len();
    for (j, w) in worlds.iter().enumerate() {
        if w.len() != s {
            return Err(Error::invalid_argument(format!(
                "world {j} has {} items, expected {s}",
                w.len()
            )));
        }
        check_shares(w, &format!("world {j}"))?;
    }
    let pairs = (r * (r - 1) / 2) as f64;
    let mut total = 0.0;
    for i in 0..s {
        let mut sum = 0.0;
        for (j, a) in worlds.iter().enumerate() {
            for b in &worlds[j + 1..] {
                sum += (a[i] - b[i]).abs();
            }
        }
        total += sum / pairs;
    }
    Ok(total / s as f64)
}

fn prefix_len(f: f64, n_events: usize) -> Result<usize> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::invalid_argument(format!(
            "fraction must lie in (0, 1], got {f}"
        )));
    }
    let x = f * n_events as f64;
    let m = if (x - x.round()).abs() < 1e-9 {
        x.round()
    } else {
        x.ceil()
    };
    if m < 1.0 {
        return Err(Error::invalid_argument(format!(
            "fraction {f} of {n_events} events leaves an empty prefix"
        )));
    }
    Ok(m as usize)
}

/// Share of traces whose leader after the first `⌈f n⌉` events is the final
/// leader. Returns `(accuracy, n_worlds)`.
pub fn early_leader_accuracy(traces: &[RealizationTrace], f: f64) -> Result<(f64, usize)> {
    if traces.is_empty() {
        return Err(Error::invalid_argument("no worlds to predict"));
    }
    let mut correct = 0usize;
    for t in traces {
        let m = prefix_len(f, t.events.len())?;
        if leader_of(t.downloads_after(m)) == t.final_leader() {
            correct += 1;
        }
    }
    Ok((correct as f64 / traces.len() as f64, traces.len()))
}

pub fn early_leader_prediction(
    worlds: &WorldSet,
    condition: InfluenceCondition,
    f: f64,
) -> Result<(f64, usize)> {
    early_leader_accuracy(condition_traces(worlds, condition)?, f)
}

fn condition_traces(
    worlds: &WorldSet,
    condition: InfluenceCondition,
) -> Result<&[RealizationTrace]> {
    worlds
        .traces(condition)
        .ok_or_else(|| Error::invalid_argument(format!("no worlds for condition {condition}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub f: f64,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub points: Vec<PredictionPoint>,
}

pub fn prediction_curve(traces: &[RealizationTrace], fractions: &[f64]) -> Result<PredictionCurve> {
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid_argument(
            "fractions must be strictly increasing",
        ));
    }
    let points = fractions
        .iter()
        .map(|&f| {
            early_leader_accuracy(traces, f).map(|(accuracy, n)| PredictionPoint { f, accuracy, n })
        })
        .collect::<Result<_>>()?;
    Ok(PredictionCurve { points })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mean over worlds of the Spearman correlation between item appeal and final
/// share. A world whose shares are all equal carries no ranking and counts as 0.
pub fn ex_ante_spearman(appeals: &[f64], traces: &[RealizationTrace]) -> Result<f64> {
    if appeals.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two items".into()));
    }
    if appeals.iter().all(|&a| a == appeals[0]) {
        return Err(Error::UndefinedCorrelation("all appeals are equal".into()));
    }
    if traces.is_empty() {
        return Err(Error::invalid_argument("no worlds"));
    }
    let total: f64 = traces
        .iter()
        .map(|t| spearman(appeals, &t.final_shares).unwrap_or(0.0))
        .sum();
    Ok(total / traces.len() as f64)
}

pub fn ex_ante_predictability(worlds: &WorldSet, condition: InfluenceCondition) -> Result<f64> {
    ex_ante_spearman(&worlds.appeals, condition_traces(worlds, condition)?)
}

/// Bins by empirical quantiles of the pooled values; equal values share a bin.
fn quantile_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..n_bins).map(|k| sorted[k * n / n_bins]).collect();
    values
        .iter()
        .map(|v| edges.iter().filter(|&&e| e <= *v).count())
        .collect()
}

fn entropy(counts: impl Iterator<Item = usize>, total: usize) -> f64 {
    let n = total as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub const MIN_RIGIDITY_EVENTS: usize = 100;

/// Share of the uncertainty about the chosen item's popularity rank removed by
/// knowing the leader's displayed signal: `1 - H(rank | signal) / H(rank)`.
///
/// Each event is replayed against the downloads before it. The chosen item's
/// downloads rank (descending, id tie-break) and the leader's signal
/// `ln(1 + downloads)` (0 when no counts are shown) are binned into `n_bins`
/// empirical quantile bins over all pooled events. Quantile bins depend only
/// on the ordering of values, so the constant top-slot bonus of the ranked
/// display does not change them. `H(rank) = 0` yields 1.
pub fn rigidity_index(traces: &[RealizationTrace], n_bins: usize) -> Result<f64> {
    if n_bins < 2 {
        return Err(Error::invalid_argument("n_bins must be >= 2"));
    }
    let total: usize = traces.iter().map(|t| t.events.len()).sum();
    if total < MIN_RIGIDITY_EVENTS {
        return Err(Error::InsufficientData(format!(
            "rigidity needs at least {MIN_RIGIDITY_EVENTS} events, got {total}"
        )));
    }
    let mut ranks = Vec::with_capacity(total);
    let mut signals = Vec::with_capacity(total);
    for t in traces {
        let neutral = vec![0.0; t.n_items];
        let mut ranking = MarketState::new(
            &neutral,
            InfluenceCondition::Strong,
            (0..t.n_items).collect(),
        )?;
        for e in &t.events {
            let leader_downloads = ranking.items()[ranking.display_order()[0]].downloads;
            signals.push(match t.condition {
                InfluenceCondition::Independent => 0.0,
                _ => (leader_downloads as f64).ln_1p(),
            });
            ranks.push(ranking.display_rank(e.item_id) as f64);
            ranking.record(e.item_id, e.downloaded);
        }
    }
    let rank_bins = quantile_bins(&ranks, n_bins);
    let signal_bins = quantile_bins(&signals, n_bins);

    let mut joint = vec![0usize; n_bins * n_bins];
    let mut rank_marginal = vec![0usize; n_bins];
    let mut signal_marginal = vec![0usize; n_bins];
    for (&r, &s) in rank_bins.iter().zip(&signal_bins) {
        joint[r * n_bins + s] += 1;
        rank_marginal[r] += 1;
        signal_marginal[s] += 1;
    }
    let h_rank = entropy(rank_marginal.into_iter(), total);
    if h_rank <= 1e-12 {
        return Ok(1.0);
    }
    let h_joint = entropy(joint.into_iter(), total);
    let h_signal = entropy(signal_marginal.into_iter(), total);
    let conditional = h_joint - h_signal;
    Ok((1.0 - conditional / h_rank).clamp(0.0, 1.0))
}

/// Kolmogorov-Smirnov distance between the sample's empirical CDF and
/// Uniform(0, 1), evaluated on both sides of every sorted sample point.
pub fn ks_uniform_statistic(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid_argument("no samples"));
    }
    if let Some(x) = samples.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid_argument(format!(
            "sample {x} outside [0, 1]"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max))
}

/// Two-sample Kolmogorov-Smirnov distance `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid_argument("both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::invalid_argument("samples contain NaN"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// `|mean(final) - initial|` over runs that share one initial share.
pub fn martingale_residual(initial_shares: &[f64], final_shares: &[f64]) -> Result<f64> {
    if initial_shares.len() != final_shares.len() {
        return Err(Error::invalid_argument(
            "initial and final share counts differ",
        ));
    }
    if final_shares.len() < 2 {
        return Err(Error::invalid_argument(
            "martingale residual needs at least 2 runs",
        ));
    }
    let initial = initial_shares[0];
    if initial_shares.iter().any(|&s| s != initial) {
        return Err(Error::invalid_argument(
            "runs start from different initial states",
        ));
    }
    let mean = final_shares.iter().sum::<f64>() / final_shares.len() as f64;
    Ok((mean - initial).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub condition: InfluenceCondition,
    pub gini_mean: Option<f64>,
    #[serde(rename = "unpredictability_U")]
    pub unpredictability_u: Option<f64>,
    pub ex_ante_spearman: Option<f64>,
    pub rigidity: Option<f64>,
    pub prediction_curve: Vec<PredictionPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions<'a> {
    pub prediction_fractions: &'a [f64],
    pub rigidity_bins: usize,
    pub unpredictability: bool,
}

/// All per-condition statistics. Metrics whose preconditions the world set
/// does not meet (zero downloads, constant appeals, too few events) are `None`.
pub fn condition_metrics(
    worlds: &WorldSet,
    condition: InfluenceCondition,
    options: MetricOptions<'_>,
) -> Result<ConditionMetrics> {
    let traces = condition_traces(worlds, condition)?;
    let with_downloads: Vec<&RealizationTrace> =
        traces.iter().filter(|t| t.total_downloads() > 0).collect();
    let ginis = with_downloads
        .iter()
        .map(|t| gini(&t.final_shares))
        .collect::<Result<Vec<_>>>()?;
    let gini_mean = (!ginis.is_empty()).then(|| ginis.iter().sum::<f64>() / ginis.len() as f64);

    let unpredictability_u =
        if options.unpredictability && traces.len() >= 2 && with_downloads.len() == traces.len() {
            let shares: Vec<Vec<f64>> = traces.iter().map(|t| t.final_shares.clone()).collect();
            Some(unpredictability(&shares)?)
        } else {
            None
        };

    let ex_ante_spearman = match ex_ante_spearman(&worlds.appeals, traces) {
        Ok(v) => Some(v),
        Err(Error::UndefinedCorrelation(_)) => None,
        Err(e) => return Err(e),
    };
    let rigidity = match rigidity_index(traces, options.rigidity_bins) {
        Ok(v) => Some(v),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let prediction_curve = prediction_curve(traces, options.prediction_fractions)?.points;
    Ok(ConditionMetrics {
        condition,
        gini_mean,
        unpredictability_u,
        ex_ante_spearman,
        rigidity,
        prediction_curve,
    })
}

/// Statistics of one experiment; urn diagnostics appear only for urn runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_uniform: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub martingale_residual: Option<f64>,
}

pub fn market_report(worlds: &WorldSet, options: MetricOptions<'_>) -> Result<MetricsReport> {
    let conditions = worlds
        .conditions
        .iter()
        .map(|c| condition_metrics(worlds, c.condition, options))
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        conditions,
        ..MetricsReport::default()
    })
}

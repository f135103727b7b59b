//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;
use urnmarket::config::{parse_config, ExperimentConfig};
use urnmarket::harness::{read_manifest, run};
use urnmarket::intervention::{
    paired_runs, score_detection, win_shift_of, PuppetSchedule, DEFAULT_THRESHOLD, DEFAULT_WINDOW,
};
use urnmarket::market::{
    run_world_set, run_world_set_on, AgentPolicy, InfluenceCondition, Market, MarketConfig,
};
use urnmarket::observers::{
    early_leader_prediction, ex_ante_predictability, gini, ks_two_sample, ks_uniform_statistic,
    martingale_residual, prediction_curve, rigidity_index, spearman, unpredictability,
};
use urnmarket::rng::derive_seed;
use urnmarket::urn::{final_share_ensemble, final_state_ensemble, run_urn, UrnRule, UrnState};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn polya_finals() -> Vec<f64> {
    let start = UrnState::new(vec![1, 1]).unwrap();
    final_share_ensemble(&start, &UrnRule::LINEAR, 10_000, 2000, SEED).unwrap()
}

fn uniform_limit() -> Outcome {
    let d = ks_uniform_statistic(&polya_finals()).unwrap();
    outcome(
        d < 0.05,
        format!("ks_uniform = {d:.4} (< 0.05), 2000 runs x 10000 steps"),
    )
}

fn martingale() -> Outcome {
    let finals = polya_finals();
    let r = martingale_residual(&vec![0.5; finals.len()], &finals).unwrap();
    outcome(r < 0.02, format!("martingale_residual = {r:.4} (< 0.02)"))
}

fn sd(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn path_dependence() -> Outcome {
    let start = UrnState::new(vec![1, 1]).unwrap();
    let per_run: Vec<(f64, f64, bool)> = (0..500u64)
        .into_par_iter()
        .map(|r| {
            let t = run_urn(&start, &UrnRule::LINEAR, 10_000, derive_seed(SEED, r)).unwrap();
            let share: Vec<f64> = t.shares().collect();
            let at = |step: usize| share[step - 1];
            let early = sd(&share[9..110]);
            let late = sd(&share[9000..10_000]);
            (
                (at(100) - at(10_000)).abs(),
                (at(1000) - at(10_000)).abs(),
                late < early,
            )
        })
        .collect();
    let n = per_run.len() as f64;
    let gap_100 = per_run.iter().map(|r| r.0).sum::<f64>() / n;
    let gap_1000 = per_run.iter().map(|r| r.1).sum::<f64>() / n;
    let settled = per_run.iter().filter(|r| r.2).count() as f64 / n;
    outcome(
        gap_100 > gap_1000 && settled >= 0.9,
        format!(
            "mean|s100-s10000| = {gap_100:.4} > mean|s1000-s10000| = {gap_1000:.4}; late sd < early sd in {:.1}% (>= 90%)",
            100.0 * settled
        ),
    )
}

fn monopoly() -> Outcome {
    let start = UrnState::new(vec![1, 1]).unwrap();
    let rule = UrnRule::new(1.5, 1).unwrap();
    let states = final_state_ensemble(&start, &rule, 10_000, 500, SEED).unwrap();
    let frac = states.iter().filter(|s| s.max_share() > 0.95).count() as f64 / states.len() as f64;
    outcome(
        frac >= 0.9,
        format!("max share > 0.95 in {:.1}% of runs (>= 90%)", 100.0 * frac),
    )
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn inside_view() -> Outcome {
    let t0 = Instant::now();
    let cfg = MarketConfig::default();
    let mut hits = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let ws = run_world_set(&cfg, seed).unwrap();
        let u = |c| {
            let shares: Vec<Vec<f64>> = ws
                .traces(c)
                .unwrap()
                .iter()
                .map(|t| t.final_shares.clone())
                .collect();
            unpredictability(&shares).unwrap()
        };
        let g = |c| {
            mean(
                ws.traces(c)
                    .unwrap()
                    .iter()
                    .map(|t| gini(&t.final_shares).unwrap()),
            )
        };
        let (ui, uw, us) = (
            u(InfluenceCondition::Independent),
            u(InfluenceCondition::Weak),
            u(InfluenceCondition::Strong),
        );
        let (gi, gs) = (
            g(InfluenceCondition::Independent),
            g(InfluenceCondition::Strong),
        );
        let ok = us > uw && uw > ui && gs - gi > 0.02;
        hits += usize::from(ok);
        lines.push(format!(
            "seed {seed}: U {ui:.4}/{uw:.4}/{us:.4} gini {gi:.3}/{gs:.3}"
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        hits >= 4 && secs < 60.0,
        format!("{hits}/5 seeds (>= 4) with U(S) > U(W) > U(I) and gini(S) - gini(I) > 0.02, {secs:.1}s; {}", lines.join("; ")),
    )
}

fn outside_view() -> Outcome {
    let cfg = MarketConfig {
        appeal_min: 0.45,
        appeal_max: 0.55,
        worlds: 100,
        ..MarketConfig::default()
    };
    let ws = run_world_set(&cfg, SEED).unwrap();
    let (acc_s, _) = early_leader_prediction(&ws, InfluenceCondition::Strong, 0.15).unwrap();
    let (acc_i, _) = early_leader_prediction(&ws, InfluenceCondition::Independent, 0.15).unwrap();
    let curve = prediction_curve(
        ws.traces(InfluenceCondition::Strong).unwrap(),
        &cfg.prediction_fractions,
    )
    .unwrap();
    let mut worst_drop = 0.0f64;
    let mut monotone = true;
    for w in curve.points.windows(2) {
        let (a, b) = (w[0].accuracy, w[1].accuracy);
        let p = (a + b) / 2.0;
        let se = (p * (1.0 - p) / w[0].n as f64).sqrt();
        worst_drop = worst_drop.max(a - b);
        if a - b > 2.0 * se {
            monotone = false;
        }
    }
    let ex_s = ex_ante_predictability(&ws, InfluenceCondition::Strong).unwrap();
    let ex_i = ex_ante_predictability(&ws, InfluenceCondition::Independent).unwrap();
    outcome(
        acc_s - acc_i >= 0.15 && monotone && ex_s < ex_i,
        format!(
            "acc@0.15 Strong {acc_s:.3} - Independent {acc_i:.3} = {:.3} (>= 0.15); Strong curve largest drop {worst_drop:.3} (within 2 SE: {monotone}); ex-ante Strong {ex_s:.3} < Independent {ex_i:.3}",
            acc_s - acc_i
        ),
    )
}

fn urn_equivalence() -> Outcome {
    let horizon = 1000;
    let policy = AgentPolicy::new(0.0, 1.0, 1.0, 1).unwrap();
    let market = Market::new(vec![1.0, 1.0], policy, horizon).unwrap();
    let ws = run_world_set_on(&market, &[InfluenceCondition::Weak], 1000, SEED).unwrap();
    let market_shares: Vec<f64> = ws
        .traces(InfluenceCondition::Weak)
        .unwrap()
        .iter()
        .map(|t| t.final_shares[0])
        .collect();
    let start = UrnState::new(vec![1, 1]).unwrap();
    let urn_shares = final_share_ensemble(
        &start,
        &UrnRule::LINEAR,
        horizon,
        1000,
        derive_seed(SEED, 7),
    )
    .unwrap();
    let d = ks_two_sample(&market_shares, &urn_shares).unwrap();
    outcome(
        d < 0.08,
        format!("two-sample KS = {d:.4} (< 0.08), 1000 worlds vs 1000 urn runs"),
    )
}

fn astroturf() -> Outcome {
    let market = MarketConfig::default().market(SEED).unwrap();
    let target = market.lowest_appeal_item();
    let n_runs = 400;
    let mut shifts = Vec::new();
    let mut score = None;
    for k in [0u64, 5, 10, 20, 40] {
        let schedule = PuppetSchedule::front_loaded(target, k);
        let runs =
            paired_runs(&market, InfluenceCondition::Strong, &schedule, n_runs, SEED).unwrap();
        shifts.push((k, win_shift_of(&runs, target)));
        if k == 20 {
            score = Some(
                score_detection(&market, &runs, &schedule, DEFAULT_WINDOW, DEFAULT_THRESHOLD)
                    .unwrap(),
            );
        }
    }
    let score = score.unwrap();
    let delta20 = shifts.iter().find(|s| s.0 == 20).unwrap().1.delta;
    let mut monotone = true;
    for w in shifts.windows(2) {
        let (p1, p2) = (w[0].1.treated, w[1].1.treated);
        let se = (p1 * (1.0 - p1) / n_runs as f64 + p2 * (1.0 - p2) / n_runs as f64).sqrt();
        if w[1].1.delta < w[0].1.delta - 2.0 * se {
            monotone = false;
        }
    }
    let deltas: Vec<String> = shifts
        .iter()
        .map(|(k, s)| format!("k={k}:{:.3}", s.delta))
        .collect();
    outcome(
        delta20 >= 0.15 && monotone && score.recall >= 0.6 && score.false_flag_rate <= 0.1,
        format!(
            "delta(k=20) = {delta20:.3} (>= 0.15); deltas [{}] monotone within 2 SE: {monotone}; recall {:.3} (>= 0.6), false-flag rate {:.3} (<= 0.1) at window {DEFAULT_WINDOW}, {DEFAULT_THRESHOLD} nats",
            deltas.join(" "),
            score.recall,
            score.false_flag_rate
        ),
    )
}

fn rigidity_link() -> Outcome {
    let base = MarketConfig {
        worlds: 40,
        conditions: vec![InfluenceCondition::Strong],
        ..MarketConfig::default()
    };
    let mut rig = Vec::new();
    let mut acc = Vec::new();
    for beta in [0.0, 0.5, 1.0, 2.0] {
        let cfg = MarketConfig {
            beta,
            ..base.clone()
        };
        let ws = run_world_set(&cfg, SEED).unwrap();
        let traces = ws.traces(InfluenceCondition::Strong).unwrap();
        rig.push(rigidity_index(traces, cfg.rigidity_bins).unwrap());
        acc.push(
            early_leader_prediction(&ws, InfluenceCondition::Strong, 0.15)
                .unwrap()
                .0,
        );
    }
    let monotone = rig.windows(2).all(|w| w[1] >= w[0]);
    let rho = spearman(&rig, &acc);
    let pass = monotone && rho.is_some_and(|r| r >= 0.8);
    outcome(
        pass,
        format!("rigidity {rig:.4?} monotone: {monotone}; acc@0.15 {acc:.3?}; spearman = {rho:?} (>= 0.8)"),
    )
}

fn determinism() -> Outcome {
    let configs = [
        r#"{"mode":"urn","master_seed":5,"n_runs":200,"decimation":10,"urn":{"steps":2000}}"#,
        r#"{"mode":"urn","master_seed":5,"n_runs":50,"urn":{"initial":[3,1,2],"gamma":1.5,"steps":1000}}"#,
        r#"{"mode":"market","master_seed":9}"#,
        r#"{"mode":"sweep","master_seed":9,"market":{"worlds":6,"conditions":["weak","strong"]},"sweep":{"parameter":"beta","values":[0,1,2]}}"#,
        r#"{"mode":"sweep","master_seed":9,"n_runs":100,"sweep":{"parameter":"gamma","values":[0.5,1,1.5]}}"#,
        r#"{"mode":"inject","master_seed":9,"n_runs":40,"market":{"conditions":["strong"]},"puppets":{"k":20}}"#,
    ];
    let root = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for (i, text) in configs.iter().enumerate() {
        let cfg: ExperimentConfig = parse_config(text).unwrap();
        let bundles: Vec<_> = [(1, Some(1)), (2, Some(1)), (3, Some(8)), (4, None)]
            .iter()
            .map(|&(tag, threads)| {
                let dir = root.path().join(format!("c{i}_{tag}"));
                run(&cfg, &dir, threads).unwrap();
                let manifest = read_manifest(&dir).unwrap();
                let manifest_bytes = fs::read(dir.join("manifest.json")).unwrap();
                (manifest, manifest_bytes)
            })
            .collect();
        if bundles.iter().any(|b| b != &bundles[0]) {
            failures.push(cfg.mode);
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} configs x (two reruns on 1 thread, 8 threads, default pool): manifests identical; mismatches {failures:?}",
            configs.len()
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("uniform limit law", uniform_limit),
        ("martingale conservation", martingale),
        ("path dependence", path_dependence),
        ("superlinear monopoly", monopoly),
        ("inside-view signature", inside_view),
        ("outside-view signature", outside_view),
        ("market/urn equivalence", urn_equivalence),
        ("astroturf lever", astroturf),
        ("rigidity-predictability link", rigidity_link),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} AC{:<2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Reproducible experiment runner.
//!
//! [`run`] evaluates a config on a dedicated worker pool and writes a bundle
//! of CSV/JSON files plus `manifest.json`, which lists every other file with
//! its SHA-256 digest. All work units own a derived seed and results are
//! assembled in canonical index order, so the bundle is a pure function of
//! the config: worker count and scheduling do not change a single byte.
//!
//! Bundle layout by mode:
//!
//! * `urn`: `trajectories.csv`, `metrics.json`
//! * `market`: `traces/<condition>_world<NNNN>.csv`, `metrics.json`
//! * `sweep`: `metrics.json` with one report per sweep value
//! * `inject`: `traces/inject_<condition>_{baseline,treated}_run0000.csv`,
//!   `detections.json`, `metrics.json`
//!
//! Every bundle also holds `config.json`, the effective config with defaults
//! filled in (without `output_dir`, so bundles written to different places
//! stay identical).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode, PuppetTarget, SweepParameter};
use crate::error::{Error, Result};
use crate::intervention::{
    detect_bursts, paired_runs, score_detection, win_shift_of, PuppetSchedule,
};
use crate::market::{run_world_set, MarketConfig, RealizationTrace, WorldSet};
use crate::observers::{
    ks_uniform_statistic, market_report, martingale_residual, MetricOptions, MetricsReport,
};
use crate::rng::derive_seed;
use crate::urn::{simulate, UrnRule, UrnState};

pub const TRAJECTORY_HEADER: &str = "run_id,step,share_color0";
pub const TRACE_HEADER: &str =
    "condition,world_id,step,agent_id,item_id,signal_shown,rating,downloaded,is_puppet";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputBundle {
    pub out_dir: PathBuf,
    pub files: Vec<ManifestEntry>,
    pub metrics: Value,
}

impl OutputBundle {
    /// Short JSON summary for standard output.
    pub fn summary(&self, mode: Mode) -> Value {
        json!({
            "mode": mode,
            "output_dir": self.out_dir.display().to_string(),
            "manifest": MANIFEST,
            "files": self.files.len(),
            "metrics": self.metrics,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run `config`, writing its bundle to `out_dir`. `threads = None` uses the
/// default worker count.
pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<OutputBundle> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::invalid_argument("thread count must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid_state(format!("cannot start worker pool: {e}")))?;
    let (files, metrics) = pool.install(|| compute(config))?;
    let entries = write_bundle(out_dir, &files)?;
    Ok(OutputBundle {
        out_dir: out_dir.to_path_buf(),
        files: entries,
        metrics,
    })
}

type Files = Vec<(String, Vec<u8>)>;

fn to_json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("values serialise");
    s.push('\n');
    s.into_bytes()
}

fn compute(config: &ExperimentConfig) -> Result<(Files, Value)> {
    let mut files: Files = Vec::new();
    let echoed = ExperimentConfig {
        output_dir: None,
        ..config.clone()
    };
    files.push(("config.json".into(), {
        let mut s = echoed.to_json();
        s.push('\n');
        s.into_bytes()
    }));
    let metrics = match config.mode {
        Mode::Urn => urn_mode(config, &mut files)?,
        Mode::Market => market_mode(config, &mut files)?,
        Mode::Sweep => sweep_mode(config)?,
        Mode::Inject => inject_mode(config, &mut files)?,
    };
    files.push(("metrics.json".into(), to_json_bytes(&metrics)));
    Ok((files, metrics))
}

fn urn_mode(config: &ExperimentConfig, files: &mut Files) -> Result<Value> {
    let uc = &config.urn;
    let initial = UrnState::new(uc.initial.clone())?;
    let rule = UrnRule::new(uc.gamma, uc.increment)?;
    let runs = (0..config.n_runs)
        .into_par_iter()
        .map(|r| {
            let run = simulate(
                &initial,
                &rule,
                uc.steps,
                derive_seed(config.master_seed, r),
                config.decimation,
            )?;
            let mut csv = String::new();
            for &(step, share) in &run.trajectory.entries {
                writeln!(csv, "{r},{step},{share}").expect("write to string");
            }
            Ok((run.trajectory.initial_share, run.final_state.share(0), csv))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from(TRAJECTORY_HEADER);
    csv.push('\n');
    for (_, _, chunk) in &runs {
        csv.push_str(chunk);
    }
    files.push(("trajectories.csv".into(), csv.into_bytes()));

    let initial_shares: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let finals: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let report = urn_report(&initial_shares, &finals)?;
    Ok(json!({
        "mode": "urn",
        "ks_uniform": report.ks_uniform,
        "martingale_residual": report.martingale_residual,
        "final_shares": finals,
    }))
}

fn urn_report(initial_shares: &[f64], finals: &[f64]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        ks_uniform: Some(ks_uniform_statistic(finals)?),
        martingale_residual: if finals.len() >= 2 {
            Some(martingale_residual(initial_shares, finals)?)
        } else {
            None
        },
        ..MetricsReport::default()
    })
}

fn options(mc: &MarketConfig) -> MetricOptions<'_> {
    MetricOptions {
        prediction_fractions: &mc.prediction_fractions,
        rigidity_bins: mc.rigidity_bins,
        unpredictability: mc.unpredictability,
    }
}

pub fn trace_csv(trace: &RealizationTrace, world_id: u64) -> String {
    let mut s = String::with_capacity(48 * (trace.events.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for e in &trace.events {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            trace.condition,
            world_id,
            e.step,
            e.agent_id,
            e.item_id,
            e.signal_shown,
            e.rating,
            u8::from(e.downloaded),
            u8::from(e.is_puppet)
        )
        .expect("write to string");
    }
    s
}

fn trace_files(ws: &WorldSet, files: &mut Files) {
    let rendered: Vec<(String, Vec<u8>)> = ws
        .conditions
        .par_iter()
        .flat_map_iter(|c| {
            c.traces.iter().enumerate().map(move |(w, t)| {
                (
                    format!("traces/{}_world{:04}.csv", c.condition, w),
                    trace_csv(t, w as u64).into_bytes(),
                )
            })
        })
        .collect();
    files.extend(rendered);
}

fn market_mode(config: &ExperimentConfig, files: &mut Files) -> Result<Value> {
    let mc = &config.market;
    let ws = run_world_set(mc, config.master_seed)?;
    trace_files(&ws, files);
    let report = market_report(&ws, options(mc))?;
    Ok(json!({
        "mode": "market",
        "appeals": ws.appeals,
        "conditions": report.conditions,
    }))
}

fn sweep_mode(config: &ExperimentConfig) -> Result<Value> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "required in sweep mode"))?;
    let mut points = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let point = if sweep.parameter == SweepParameter::Gamma {
            let uc = &config.urn;
            let initial = UrnState::new(uc.initial.clone())?;
            let rule = UrnRule::new(value, uc.increment)?;
            let states = crate::urn::final_state_ensemble(
                &initial,
                &rule,
                uc.steps,
                config.n_runs,
                config.master_seed,
            )?;
            let finals: Vec<f64> = states.iter().map(|s| s.share(0)).collect();
            let initial_shares = vec![initial.share(0); finals.len()];
            let report = urn_report(&initial_shares, &finals)?;
            let max_share_mean =
                states.iter().map(UrnState::max_share).sum::<f64>() / states.len() as f64;
            json!({
                "value": value,
                "ks_uniform": report.ks_uniform,
                "martingale_residual": report.martingale_residual,
                "max_share_mean": max_share_mean,
            })
        } else {
            let mut mc = config.market.clone();
            match sweep.parameter {
                SweepParameter::Alpha => mc.alpha = value,
                SweepParameter::Beta => mc.beta = value,
                SweepParameter::RankBias => mc.rank_bias = value,
                SweepParameter::Gamma => unreachable!(),
            }
            let ws = run_world_set(&mc, config.master_seed)?;
            let report = market_report(&ws, options(&mc))?;
            json!({ "value": value, "conditions": report.conditions })
        };
        points.push(point);
    }
    Ok(json!({
        "mode": "sweep",
        "parameter": sweep.parameter.name(),
        "points": points,
    }))
}

fn inject_mode(config: &ExperimentConfig, files: &mut Files) -> Result<Value> {
    let pc = config
        .puppets
        .as_ref()
        .ok_or_else(|| Error::config("puppets", "required in inject mode"))?;
    let mc = &config.market;
    let market = mc.market(config.master_seed)?;
    let target = match pc.target_item {
        PuppetTarget::Item(i) => i,
        PuppetTarget::LowestAppeal => market.lowest_appeal_item(),
    };
    let schedule = PuppetSchedule::new(target, pc.steps())?;
    let mut per_condition = Vec::new();
    let mut detections = Vec::new();
    for &condition in &mc.conditions {
        let runs = paired_runs(
            &market,
            condition,
            &schedule,
            config.n_runs,
            config.master_seed,
        )?;
        let shift = win_shift_of(&runs, target);
        let score = if schedule.k() > 0 {
            Some(score_detection(
                &market,
                &runs,
                &schedule,
                pc.window,
                pc.threshold,
            )?)
        } else {
            None
        };
        let reports = runs
            .par_iter()
            .enumerate()
            .map(|(r, run)| {
                Ok(json!({
                    "run_id": r,
                    "baseline": detect_bursts(&market, &run.baseline, pc.window, pc.threshold)?.flagged,
                    "treated": detect_bursts(&market, &run.treated, pc.window, pc.threshold)?.flagged,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        detections.push(json!({ "condition": condition, "runs": reports }));
        if let Some(first) = runs.first() {
            for (arm, t) in [("baseline", &first.baseline), ("treated", &first.treated)] {
                files.push((
                    format!("traces/inject_{condition}_{arm}_run0000.csv"),
                    trace_csv(t, 0).into_bytes(),
                ));
            }
        }
        per_condition.push(json!({
            "condition": condition,
            "baseline": shift.baseline,
            "treated": shift.treated,
            "delta": shift.delta,
            "n_runs": shift.n_runs,
            "detection": score,
        }));
    }
    files.push((
        "detections.json".into(),
        to_json_bytes(&json!({
            "window": pc.window,
            "threshold": pc.threshold,
            "conditions": detections,
        })),
    ));
    Ok(json!({
        "mode": "inject",
        "target_item": target,
        "k": schedule.k(),
        "conditions": per_condition,
    }))
}

fn write_bundle(out_dir: &Path, files: &Files) -> Result<Vec<ManifestEntry>> {
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut entries = Vec::with_capacity(files.len());
        for (rel, bytes) in files {
            let path = out_dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            entries.push(ManifestEntry {
                path: rel.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = to_json_bytes(&json!({ "files": entries }));
        let path = out_dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        Ok(entries)
    })();
    if result.is_err() {
        for path in &written {
            let _ = fs::remove_file(path);
        }
    }
    result
}

/// Parse a `manifest.json` document.
pub fn read_manifest(out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = out_dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    #[derive(Deserialize)]
    struct Manifest {
        files: Vec<ManifestEntry>,
    }
    serde_json::from_str::<Manifest>(&text)
        .map(|m| m.files)
        .map_err(|e| Error::invalid_state(format!("malformed manifest: {e}")))
}

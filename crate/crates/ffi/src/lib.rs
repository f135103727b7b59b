//! C ABI over `urnmarket`.
//!
//! Every fallible function returns a [`UmStatus`]. On failure the message is
//! kept per thread and can be copied out with [`um_last_error_message`].
//! Objects crossing the boundary are opaque handles created by a `*_new` or
//! `*_parse` call and released by the matching `*_free`. Panics are caught at
//! the boundary and reported as [`UmStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use urnmarket::config::{parse_config, ExperimentConfig};
use urnmarket::market::{AgentPolicy, InfluenceCondition, Market, RealizationTrace};
use urnmarket::urn::{final_share_ensemble, UrnRule, UrnState};
use urnmarket::{harness, observers, rng, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidState = 2,
    InsufficientData = 3,
    UndefinedCorrelation = 4,
    Config = 5,
    Io = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Influence condition codes accepted by [`um_market_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UmCondition {
    Independent = 0,
    Weak = 1,
    Strong = 2,
}

/// One market action.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UmEvent {
    pub step: u64,
    pub agent_id: u64,
    pub item_id: u64,
    pub signal_shown: f64,
    pub rating: u8,
    pub downloaded: bool,
    pub is_puppet: bool,
}

/// Parsed and validated experiment config.
pub struct UmConfig(ExperimentConfig);

/// Item appeals plus agent policy.
pub struct UmMarket(Market);

/// Event log of one simulated world.
pub struct UmTrace(RealizationTrace);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> UmStatus {
    match err {
        Error::InvalidArgument(_) => UmStatus::InvalidArgument,
        Error::InvalidState(_) => UmStatus::InvalidState,
        Error::InsufficientData(_) => UmStatus::InsufficientData,
        Error::UndefinedCorrelation(_) => UmStatus::UndefinedCorrelation,
        Error::Config(_) => UmStatus::Config,
        Error::Io { .. } => UmStatus::Io,
    }
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UmStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            UmStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(format!("invalid argument: {msg}"));
            UmStatus::InvalidArgument
        }
        Err(_) => {
            set_error("internal panic".into());
            UmStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(
    p: *mut T,
    len: usize,
    name: &'static str,
) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn c_str<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{name} is not valid UTF-8")))
}

/// Copy `s` into `buf` (NUL-terminated, truncated to `len`). Returns the
/// buffer size needed for the whole string including the terminator.
unsafe fn copy_string(s: &str, buf: *mut c_char, len: usize) -> usize {
    if !buf.is_null() && len > 0 {
        let n = s.len().min(len - 1);
        ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    s.len() + 1
}

/// Message of the last failed call on this thread. Returns the buffer size
/// required; pass a null `buf` to query it.
#[no_mangle]
pub unsafe extern "C" fn um_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_string(&e.borrow(), buf, len))
}

/// Seed of stream `stream_id` under `master_seed`.
#[no_mangle]
pub extern "C" fn um_derive_seed(master_seed: u64, stream_id: u64) -> u64 {
    rng::derive_seed(master_seed, stream_id)
}

/// Final share of color 0 for `n_runs` independent urn runs, written to
/// `out[0..n_runs]`.
#[no_mangle]
pub unsafe extern "C" fn um_urn_final_shares(
    initial: *const u64,
    n_colors: usize,
    gamma: f64,
    increment: u64,
    steps: u64,
    n_runs: u64,
    master_seed: u64,
    out: *mut f64,
) -> UmStatus {
    guard(|| {
        let initial = slice_in(initial, n_colors, "initial")?;
        let out = slice_out(out, n_runs as usize, "out")?;
        let state = UrnState::new(initial.to_vec())?;
        let rule = UrnRule::new(gamma, increment)?;
        let shares = final_share_ensemble(&state, &rule, steps, n_runs, master_seed)?;
        out.copy_from_slice(&shares);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn um_gini(shares: *const f64, n: usize, out: *mut f64) -> UmStatus {
    guard(|| {
        *out_ref(out, "out")? = observers::gini(slice_in(shares, n, "shares")?)?;
        Ok(())
    })
}

/// `shares` is row-major: `n_worlds` rows of `n_items` shares.
#[no_mangle]
pub unsafe extern "C" fn um_unpredictability(
    shares: *const f64,
    n_worlds: usize,
    n_items: usize,
    out: *mut f64,
) -> UmStatus {
    guard(|| {
        let len = n_worlds
            .checked_mul(n_items)
            .ok_or_else(|| Failure::Arg("n_worlds * n_items overflows".into()))?;
        let flat = slice_in(shares, len, "shares")?;
        let worlds: Vec<Vec<f64>> = if n_items == 0 {
            vec![Vec::new(); n_worlds]
        } else {
            flat.chunks(n_items).map(<[f64]>::to_vec).collect()
        };
        *out_ref(out, "out")? = observers::unpredictability(&worlds)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn um_ks_uniform(samples: *const f64, n: usize, out: *mut f64) -> UmStatus {
    guard(|| {
        *out_ref(out, "out")? = observers::ks_uniform_statistic(slice_in(samples, n, "samples")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn um_ks_two_sample(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    out: *mut f64,
) -> UmStatus {
    guard(|| {
        *out_ref(out, "out")? =
            observers::ks_two_sample(slice_in(a, n_a, "a")?, slice_in(b, n_b, "b")?)?;
        Ok(())
    })
}

/// `initial_shares` and `final_shares` both hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn um_martingale_residual(
    initial_shares: *const f64,
    final_shares: *const f64,
    n: usize,
    out: *mut f64,
) -> UmStatus {
    guard(|| {
        *out_ref(out, "out")? = observers::martingale_residual(
            slice_in(initial_shares, n, "initial_shares")?,
            slice_in(final_shares, n, "final_shares")?,
        )?;
        Ok(())
    })
}

/// Parse a JSON config. On success `*out` owns a handle for [`um_config_free`].
#[no_mangle]
pub unsafe extern "C" fn um_config_parse(json: *const c_char, out: *mut *mut UmConfig) -> UmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let cfg = parse_config(c_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(UmConfig(cfg)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn um_config_free(config: *mut UmConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

#[no_mangle]
pub unsafe extern "C" fn um_config_set_seed(config: *mut UmConfig, master_seed: u64) -> UmStatus {
    guard(|| {
        out_ref(config, "config")?.0.master_seed = master_seed;
        Ok(())
    })
}

/// Effective config as JSON. Same buffer convention as
/// [`um_last_error_message`]; returns 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn um_config_to_json(
    config: *const UmConfig,
    buf: *mut c_char,
    len: usize,
) -> usize {
    match config.as_ref() {
        Some(c) => copy_string(&c.0.to_json(), buf, len),
        None => 0,
    }
}

/// Run the experiment and write its output bundle to `out_dir`.
/// `threads = 0` uses the default worker count.
#[no_mangle]
pub unsafe extern "C" fn um_run(
    config: *const UmConfig,
    out_dir: *const c_char,
    threads: u32,
) -> UmStatus {
    guard(|| {
        let cfg = handle(config, "config")?;
        let dir = c_str(out_dir, "out_dir")?;
        let threads = (threads > 0).then_some(threads as usize);
        harness::run(&cfg.0, Path::new(dir), threads)?;
        Ok(())
    })
}

/// Market over `appeals[0..n_items]`, each in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn um_market_new(
    appeals: *const f64,
    n_items: usize,
    alpha: f64,
    beta: f64,
    rank_bias: f64,
    n_agents: u64,
    out: *mut *mut UmMarket,
) -> UmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let appeals = slice_in(appeals, n_items, "appeals")?;
        let policy = AgentPolicy::new(alpha, beta, rank_bias, 1)?;
        let market = Market::new(appeals.to_vec(), policy, n_agents)?;
        *out = Box::into_raw(Box::new(UmMarket(market)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn um_market_free(market: *mut UmMarket) {
    if !market.is_null() {
        drop(Box::from_raw(market));
    }
}

/// Simulate one world. `condition` is a [`UmCondition`] code.
#[no_mangle]
pub unsafe extern "C" fn um_market_run(
    market: *const UmMarket,
    condition: u32,
    world_seed: u64,
    out: *mut *mut UmTrace,
) -> UmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let market = handle(market, "market")?;
        let condition = match condition {
            0 => InfluenceCondition::Independent,
            1 => InfluenceCondition::Weak,
            2 => InfluenceCondition::Strong,
            c => return Err(Failure::Arg(format!("unknown condition code {c}"))),
        };
        let trace = market.0.run_realization(condition, world_seed, None)?;
        *out = Box::into_raw(Box::new(UmTrace(trace)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn um_trace_free(trace: *mut UmTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of events, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn um_trace_len(trace: *const UmTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.events.len())
}

/// Number of items, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn um_trace_n_items(trace: *const UmTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.n_items)
}

#[no_mangle]
pub unsafe extern "C" fn um_trace_event(
    trace: *const UmTrace,
    index: usize,
    out: *mut UmEvent,
) -> UmStatus {
    guard(|| {
        let trace = handle(trace, "trace")?;
        let e = trace.0.events.get(index).ok_or_else(|| {
            Failure::Arg(format!(
                "event index {index} out of range ({})",
                trace.0.events.len()
            ))
        })?;
        *out_ref(out, "out")? = UmEvent {
            step: e.step,
            agent_id: e.agent_id,
            item_id: e.item_id as u64,
            signal_shown: e.signal_shown,
            rating: e.rating,
            downloaded: e.downloaded,
            is_puppet: e.is_puppet,
        };
        Ok(())
    })
}

/// Copy the final shares into `out`, which must hold `len == n_items` values.
#[no_mangle]
pub unsafe extern "C" fn um_trace_final_shares(
    trace: *const UmTrace,
    out: *mut f64,
    len: usize,
) -> UmStatus {
    guard(|| {
        let trace = handle(trace, "trace")?;
        let shares = &trace.0.final_shares;
        if len != shares.len() {
            return Err(Failure::Arg(format!(
                "buffer holds {len} values, trace has {}",
                shares.len()
            )));
        }
        slice_out(out, len, "out")?.copy_from_slice(shares);
        Ok(())
    })
}

//! JSON experiment descriptions.
//!
//! A config is one JSON object. Unknown keys are rejected at every level and
//! validation reports every problem it finds, not only the first.
//!
//! ```json
//! {
//!   "mode": "urn",
//!   "master_seed": 42,
//!   "n_runs": 1,
//!   "urn": { "initial": [1, 1], "gamma": 1.0, "steps": 1000 }
//! }
//! ```

use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{ConfigErrors, ConfigIssue, Error, Result};
use crate::intervention::{DEFAULT_THRESHOLD, DEFAULT_WINDOW};
use crate::market::{InfluenceCondition, MarketConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Urn,
    Market,
    Sweep,
    Inject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrnConfig {
    pub initial: Vec<u64>,
    pub gamma: f64,
    pub increment: u64,
    pub steps: u64,
}

impl Default for UrnConfig {
    fn default() -> Self {
        Self {
            initial: vec![1, 1],
            gamma: 1.0,
            increment: 1,
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    Beta,
    RankBias,
    Gamma,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Beta => "beta",
            SweepParameter::RankBias => "rank_bias",
            SweepParameter::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuppetTarget {
    Item(usize),
    LowestAppeal,
}

impl Serialize for PuppetTarget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PuppetTarget::Item(i) => s.serialize_u64(*i as u64),
            PuppetTarget::LowestAppeal => s.serialize_str("lowest_appeal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PuppetConfig {
    pub target_item: PuppetTarget,
    pub k: u64,
    /// Explicit steps; `None` means front-loaded on steps `1..=k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<u64>>,
    pub window: usize,
    pub threshold: f64,
}

impl Default for PuppetConfig {
    fn default() -> Self {
        Self {
            target_item: PuppetTarget::LowestAppeal,
            k: 20,
            steps: None,
            window: DEFAULT_WINDOW,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl PuppetConfig {
    pub fn steps(&self) -> Vec<u64> {
        self.steps.clone().unwrap_or_else(|| (1..=self.k).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub master_seed: u64,
    pub n_runs: u64,
    pub decimation: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub urn: UrnConfig,
    pub market: MarketConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub puppets: Option<PuppetConfig>,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, master_seed: u64) -> Self {
        Self {
            mode,
            master_seed,
            n_runs: 1,
            decimation: 1,
            output_dir: None,
            urn: UrnConfig::default(),
            market: MarketConfig::default(),
            sweep: None,
            puppets: None,
        }
    }

    /// The config with every default filled in, as canonical JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

const TOP_KEYS: &[&str] = &[
    "mode",
    "master_seed",
    "n_runs",
    "decimation",
    "output_dir",
    "urn",
    "market",
    "sweep",
    "puppets",
];
const URN_KEYS: &[&str] = &["initial", "gamma", "increment", "steps"];
const MARKET_KEYS: &[&str] = &[
    "n_items",
    "n_agents",
    "actions_per_agent",
    "alpha",
    "beta",
    "rank_bias",
    "appeal_min",
    "appeal_max",
    "conditions",
    "worlds",
    "unpredictability",
    "prediction_fractions",
    "rigidity_bins",
];
const SWEEP_KEYS: &[&str] = &["parameter", "values"];
const PUPPET_KEYS: &[&str] = &["target_item", "k", "steps", "window", "threshold"];

struct Validator {
    issues: Vec<ConfigIssue>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Validator {
    fn domain(&mut self, field: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue::Domain {
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn wrong_type(&mut self, field: &str, expected: &str) {
        self.issues.push(ConfigIssue::Type {
            field: field.to_string(),
            expected: expected.to_string(),
        });
    }

    fn object<'v>(
        &mut self,
        v: &'v Value,
        path: &str,
        allowed: &[&str],
    ) -> Option<&'v Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.wrong_type(if path.is_empty() { "<root>" } else { path }, "an object");
            return None;
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.issues.push(ConfigIssue::UnknownKey {
                    path: join(path, key),
                });
            }
        }
        Some(map)
    }

    fn u64_field(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
        key: &str,
        default: u64,
        min: u64,
    ) -> u64 {
        let field = join(path, key);
        match map.get(key) {
            None => default,
            Some(v) => match v.as_u64() {
                Some(x) if x >= min => x,
                Some(x) => {
                    self.domain(&field, format!("must be >= {min}, got {x}"));
                    default
                }
                None if v.is_number() => {
                    self.domain(&field, format!("must be an integer >= {min}, got {v}"));
                    default
                }
                None => {
                    self.wrong_type(&field, "a non-negative integer");
                    default
                }
            },
        }
    }

    fn f64_value(&mut self, v: &Value, field: &str, lo: f64, hi: f64) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() && x >= lo && x <= hi => Some(x),
            Some(x) => {
                let range = if hi.is_infinite() {
                    format!("must be >= {lo}")
                } else {
                    format!("must lie in [{lo}, {hi}]")
                };
                self.domain(field, format!("{range}, got {x}"));
                None
            }
            None => {
                self.wrong_type(field, "a number");
                None
            }
        }
    }

    fn f64_field(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
        key: &str,
        default: f64,
        lo: f64,
        hi: f64,
    ) -> f64 {
        match map.get(key) {
            None => default,
            Some(v) => self
                .f64_value(v, &join(path, key), lo, hi)
                .unwrap_or(default),
        }
    }

    fn array<'v>(
        &mut self,
        map: &'v Map<String, Value>,
        path: &str,
        key: &str,
    ) -> Option<&'v Vec<Value>> {
        let v = map.get(key)?;
        let arr = v.as_array();
        if arr.is_none() {
            self.wrong_type(&join(path, key), "an array");
        }
        arr
    }

    fn u64_list(
        &mut self,
        map: &Map<String, Value>,
        path: &str,
        key: &str,
        min: u64,
    ) -> Option<Vec<u64>> {
        let field = join(path, key);
        let arr = self.array(map, path, key)?;
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, v) in arr.iter().enumerate() {
            match v.as_u64() {
                Some(x) if x >= min => out.push(x),
                _ => {
                    self.domain(
                        &format!("{field}[{i}]"),
                        format!("must be an integer >= {min}, got {v}"),
                    );
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        Error::Config(ConfigErrors(vec![ConfigIssue::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }]))
    })?;
    let mut v = Validator { issues: Vec::new() };
    let config = validate(&mut v, &value);
    if v.issues.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(ConfigErrors(v.issues)))
    }
}

fn validate(v: &mut Validator, root: &Value) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Mode::Urn, 0);
    let Some(top) = v.object(root, "", TOP_KEYS) else {
        return cfg;
    };

    match top.get("mode") {
        None => v.issues.push(ConfigIssue::Missing {
            field: "mode".into(),
        }),
        Some(m) => match serde_json::from_value::<Mode>(m.clone()) {
            Ok(mode) => cfg.mode = mode,
            Err(_) => v.domain(
                "mode",
                format!("must be one of urn, market, sweep, inject; got {m}"),
            ),
        },
    }
    match top.get("master_seed") {
        None => v.issues.push(ConfigIssue::Missing {
            field: "master_seed".into(),
        }),
        Some(s) => match s.as_u64() {
            Some(seed) => cfg.master_seed = seed,
            None => v.wrong_type("master_seed", "an unsigned 64-bit integer"),
        },
    }
    cfg.n_runs = v.u64_field(top, "", "n_runs", 1, 1);
    cfg.decimation = v.u64_field(top, "", "decimation", 1, 1);
    if let Some(dir) = top.get("output_dir") {
        match dir.as_str() {
            Some(d) if !d.is_empty() => cfg.output_dir = Some(d.to_string()),
            _ => v.wrong_type("output_dir", "a non-empty string"),
        }
    }

    if let Some(urn) = top.get("urn").and_then(|u| v.object(u, "urn", URN_KEYS)) {
        let d = UrnConfig::default();
        cfg.urn = UrnConfig {
            initial: match urn.get("initial") {
                None => d.initial,
                Some(_) => match v.u64_list(urn, "urn", "initial", 1) {
                    Some(list) if !list.is_empty() => list,
                    Some(_) => {
                        v.domain("urn.initial", "must contain at least one color");
                        d.initial
                    }
                    None => d.initial,
                },
            },
            gamma: v.f64_field(urn, "urn", "gamma", d.gamma, 0.0, f64::INFINITY),
            increment: v.u64_field(urn, "urn", "increment", d.increment, 1),
            steps: v.u64_field(urn, "urn", "steps", d.steps, 1),
        };
    }

    if let Some(m) = top
        .get("market")
        .and_then(|m| v.object(m, "market", MARKET_KEYS))
    {
        cfg.market = validate_market(v, m);
    }
    let mc = &cfg.market;
    if mc.unpredictability && mc.worlds < 2 && matches!(cfg.mode, Mode::Market | Mode::Sweep) {
        v.domain(
            "market.worlds",
            "must be >= 2 when unpredictability is requested",
        );
    }

    match top.get("sweep") {
        Some(s) => {
            if let Some(s) = v.object(s, "sweep", SWEEP_KEYS) {
                cfg.sweep = validate_sweep(v, s);
            }
        }
        None if cfg.mode == Mode::Sweep => v.issues.push(ConfigIssue::Missing {
            field: "sweep".into(),
        }),
        None => {}
    }

    match top.get("puppets") {
        Some(p) => {
            if let Some(p) = v.object(p, "puppets", PUPPET_KEYS) {
                cfg.puppets = Some(validate_puppets(v, p, &cfg.market));
            }
        }
        None if cfg.mode == Mode::Inject => v.issues.push(ConfigIssue::Missing {
            field: "puppets".into(),
        }),
        None => {}
    }
    if cfg.mode == Mode::Inject && cfg.n_runs < 2 {
        v.domain("n_runs", "must be >= 2 for paired injection runs");
    }
    cfg
}

fn validate_market(v: &mut Validator, m: &Map<String, Value>) -> MarketConfig {
    let d = MarketConfig::default();
    let p = "market";
    let mut mc = MarketConfig {
        n_items: v.u64_field(m, p, "n_items", d.n_items as u64, 1) as usize,
        n_agents: v.u64_field(m, p, "n_agents", d.n_agents, 1),
        actions_per_agent: v.u64_field(m, p, "actions_per_agent", d.actions_per_agent, 1),
        alpha: v.f64_field(m, p, "alpha", d.alpha, 0.0, f64::INFINITY),
        beta: v.f64_field(m, p, "beta", d.beta, 0.0, f64::INFINITY),
        rank_bias: v.f64_field(m, p, "rank_bias", d.rank_bias, 0.0, f64::INFINITY),
        appeal_min: v.f64_field(m, p, "appeal_min", d.appeal_min, 0.0, 1.0),
        appeal_max: v.f64_field(m, p, "appeal_max", d.appeal_max, 0.0, 1.0),
        worlds: v.u64_field(m, p, "worlds", d.worlds, 1),
        rigidity_bins: v.u64_field(m, p, "rigidity_bins", d.rigidity_bins as u64, 2) as usize,
        ..d
    };
    if mc.appeal_min > mc.appeal_max {
        v.domain("market.appeal_min", "must not exceed market.appeal_max");
    }
    if let Some(u) = m.get("unpredictability") {
        match u.as_bool() {
            Some(b) => mc.unpredictability = b,
            None => v.wrong_type("market.unpredictability", "a boolean"),
        }
    }
    if let Some(arr) = v.array(m, p, "conditions") {
        let mut conditions = Vec::new();
        for (i, c) in arr.iter().enumerate() {
            match c.as_str().map(str::parse::<InfluenceCondition>) {
                Some(Ok(c)) if !conditions.contains(&c) => conditions.push(c),
                Some(Ok(c)) => v.domain(
                    &format!("market.conditions[{i}]"),
                    format!("duplicates `{c}`"),
                ),
                _ => v.domain(
                    &format!("market.conditions[{i}]"),
                    format!("must be one of independent, weak, strong; got {c}"),
                ),
            }
        }
        if arr.is_empty() {
            v.domain("market.conditions", "must name at least one condition");
        }
        conditions.sort();
        mc.conditions = conditions;
    }
    if let Some(arr) = v.array(m, p, "prediction_fractions") {
        let fs: Vec<f64> = arr
            .iter()
            .enumerate()
            .filter_map(|(i, x)| {
                v.f64_value(
                    x,
                    &format!("market.prediction_fractions[{i}]"),
                    f64::MIN_POSITIVE,
                    1.0,
                )
            })
            .collect();
        if fs.len() == arr.len() {
            if fs.is_empty() || fs.windows(2).any(|w| w[0] >= w[1]) {
                v.domain(
                    "market.prediction_fractions",
                    "must be non-empty and strictly increasing",
                );
            } else {
                mc.prediction_fractions = fs;
            }
        }
    }
    mc
}

fn validate_sweep(v: &mut Validator, s: &Map<String, Value>) -> Option<SweepConfig> {
    let parameter = match s.get("parameter").map(|p| (p, p.as_str())) {
        None => {
            v.issues.push(ConfigIssue::Missing {
                field: "sweep.parameter".into(),
            });
            None
        }
        Some((_, Some("alpha"))) => Some(SweepParameter::Alpha),
        Some((_, Some("beta"))) => Some(SweepParameter::Beta),
        Some((_, Some("rank_bias"))) => Some(SweepParameter::RankBias),
        Some((_, Some("gamma"))) => Some(SweepParameter::Gamma),
        Some((p, _)) => {
            v.domain(
                "sweep.parameter",
                format!("must be one of alpha, beta, rank_bias, gamma; got {p}"),
            );
            None
        }
    };
    let values = match v.array(s, "sweep", "values") {
        None => {
            if !s.contains_key("values") {
                v.issues.push(ConfigIssue::Missing {
                    field: "sweep.values".into(),
                });
            }
            None
        }
        Some(arr) if arr.is_empty() => {
            v.domain("sweep.values", "must contain at least one value");
            None
        }
        Some(arr) => {
            let vals: Vec<f64> = arr
                .iter()
                .enumerate()
                .filter_map(|(i, x)| {
                    v.f64_value(x, &format!("sweep.values[{i}]"), 0.0, f64::INFINITY)
                })
                .collect();
            (vals.len() == arr.len()).then_some(vals)
        }
    };
    Some(SweepConfig {
        parameter: parameter?,
        values: values?,
    })
}

fn validate_puppets(
    v: &mut Validator,
    p: &Map<String, Value>,
    market: &MarketConfig,
) -> PuppetConfig {
    let d = PuppetConfig::default();
    let target_item = match p.get("target_item") {
        None => d.target_item,
        Some(Value::String(s)) if s == "lowest_appeal" => PuppetTarget::LowestAppeal,
        Some(t) => match t.as_u64() {
            Some(i) if (i as usize) < market.n_items => PuppetTarget::Item(i as usize),
            _ => {
                v.domain(
                    "puppets.target_item",
                    format!(
                        "must be \"lowest_appeal\" or an item id < {}; got {t}",
                        market.n_items
                    ),
                );
                d.target_item
            }
        },
    };
    let horizon = market.n_agents * market.actions_per_agent;
    let steps = if p.contains_key("steps") {
        v.u64_list(p, "puppets", "steps", 1)
    } else {
        None
    };
    let k = match (&steps, p.get("k")) {
        (Some(s), None) => s.len() as u64,
        _ => v.u64_field(p, "puppets", "k", d.k, 0),
    };
    if let Some(s) = &steps {
        if s.len() as u64 != k {
            v.domain(
                "puppets.steps",
                format!("has {} entries but k = {k}", s.len()),
            );
        }
        if s.windows(2).any(|w| w[0] >= w[1]) {
            v.domain("puppets.steps", "must be strictly increasing");
        }
        if let Some(&last) = s.last() {
            if last > horizon {
                v.domain(
                    "puppets.steps",
                    format!("step {last} is beyond the horizon of {horizon} events"),
                );
            }
        }
    } else if k > horizon {
        v.domain(
            "puppets.k",
            format!("must not exceed the horizon of {horizon} events"),
        );
    }
    let window = v.u64_field(p, "puppets", "window", d.window as u64, 5) as usize;
    if window as u64 > horizon {
        v.domain(
            "puppets.window",
            format!("must not exceed the horizon of {horizon} events"),
        );
    }
    PuppetConfig {
        target_item,
        k,
        steps,
        window,
        threshold: v.f64_field(p, "puppets", "threshold", d.threshold, 0.0, f64::INFINITY),
    }
}

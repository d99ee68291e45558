//! Experiment configuration.
//!
//! Two file formats are accepted. A flat text file holds one `key = value`
//! per line, `#` starts a comment, and values are read as JSON with a bare
//! string fallback. A JSON document is flattened into the same dotted keys.
//! Every key must appear in [`SCHEMA`].

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cost::{Fleet, LearnerProfile, ModelSpec, OffloadMode};
use crate::error::{MelError, Result};
use crate::learner::{SimulatedFleet, SyntheticTask, TaskKind, TaskSpec};
use crate::orchestrator::{ChannelResample, DeltaEstimator, TrainingConfig};
use crate::schedule::Policy;
use crate::wireless::ChannelSpec;

/// Every accepted key with a one-line description.
pub const SCHEMA: &[(&str, &str)] = &[
    ("channel.bandwidth_hz", "channel bandwidth W in Hz"),
    ("channel.tx_power_dbm", "transmit power in dBm"),
    (
        "channel.noise_psd_dbm_hz",
        "noise power spectral density in dBm/Hz",
    ),
    (
        "channel.distance_m",
        "learner distance in meters, scalar or one per learner",
    ),
    (
        "channel.gain_override",
        "linear channel gain overriding path loss, scalar or per learner",
    ),
    (
        "channel.distance_jitter",
        "relative half-width of the per-learner distance jitter",
    ),
    (
        "channel.resample_each_round",
        "re-draw the distance jitter every global cycle",
    ),
    ("model.features", "features per sample"),
    ("model.data_precision_bits", "bits per feature"),
    ("model.model_precision_bits", "bits per model parameter"),
    (
        "model.size_fixed",
        "model parameters independent of the batch",
    ),
    (
        "model.size_per_sample",
        "model parameters per allocated sample",
    ),
    (
        "model.complexity_cycles",
        "processor cycles per sample per local update",
    ),
    ("mode", "OL (data sent with the model) or FL (model only)"),
    ("fleet.K", "number of learners"),
    (
        "fleet.cpu_hz",
        "learner clock rates in Hz, assigned round-robin",
    ),
    ("bounds.eta", "learning rate"),
    ("bounds.b0", "loss-gap constant of the convergence bound"),
    (
        "bounds.beta_override",
        "fixed smoothness instead of estimating it",
    ),
    (
        "bounds.delta_override",
        "fixed gradient divergence instead of estimating it",
    ),
    ("bounds.delta_estimator", "gradient or loss"),
    (
        "bounds.initial_beta",
        "smoothness used before the first estimate",
    ),
    ("opt.tau_max", "largest tau considered, or auto"),
    (
        "opt.tau_hard_cap",
        "ceiling applied to the automatic tau_max",
    ),
    ("opt.policy", "HA or HU"),
    ("task.kind", "logistic or quadratic"),
    ("task.dim", "feature dimension of the synthetic task"),
    ("task.heterogeneity", "mean shift of each learner's data"),
    ("task.seed", "seed of the synthetic data and fleet layout"),
    ("task.total_samples", "total samples d"),
    ("task.holdout_samples", "held-out samples for accuracy"),
    ("task.minibatch", "samples per local step, 0 for full batch"),
    ("train.budget_s", "training time budget T in seconds"),
    ("sweep.budgets", "budgets T swept"),
    ("sweep.policies", "policies swept"),
    (
        "sweep.seeds",
        "seeds swept, a list or a range like \"0..20\"",
    ),
    ("output.dir", "directory for reports"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub distance_m: Vec<f64>,
    pub gain_override: Option<Vec<f64>>,
    pub distance_jitter: f64,
    pub resample_each_round: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub cpu_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub eta: f64,
    pub b0: f64,
    pub beta_override: Option<f64>,
    pub delta_override: Option<f64>,
    pub delta_estimator: DeltaEstimator,
    pub initial_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub tau_max: Option<u32>,
    pub tau_hard_cap: u32,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub budget_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub budgets: Vec<f64>,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub model: ModelSpec,
    pub mode: OffloadMode,
    pub fleet: FleetConfig,
    pub bounds: BoundsConfig,
    pub opt: OptConfig,
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            channel: ChannelConfig {
                bandwidth_hz: 5e6,
                tx_power_dbm: 23.0,
                noise_psd_dbm_hz: -174.0,
                distance_m: vec![500.0],
                gain_override: None,
                distance_jitter: 0.2,
                resample_each_round: false,
            },
            model: ModelSpec {
                features: 784.0,
                data_precision_bits: 8.0,
                model_precision_bits: 32.0,
                size_fixed: 280_934.0,
                size_per_sample: 1.0,
                complexity_cycles: 1e6,
            },
            mode: OffloadMode::OL,
            fleet: FleetConfig {
                k: 20,
                cpu_hz: vec![2.4e9, 1.2e9],
            },
            bounds: BoundsConfig {
                eta: 0.01,
                b0: 0.0075,
                beta_override: None,
                delta_override: None,
                delta_estimator: DeltaEstimator::Gradient,
                initial_beta: 1.0,
            },
            opt: OptConfig {
                tau_max: None,
                tau_hard_cap: 10_000,
                policy: Policy::HA,
            },
            task: TaskSpec::default(),
            train: TrainConfig { budget_s: 300.0 },
            sweep: SweepConfig {
                budgets: vec![300.0, 400.0, 500.0, 600.0],
                policies: vec![Policy::HA, Policy::HU],
                seeds: (0..20).collect(),
            },
            output: OutputConfig {
                dir: PathBuf::from("out"),
            },
        }
    }
}

struct Entry<'a> {
    key: &'a str,
    value: &'a Value,
    line: Option<usize>,
}

impl Entry<'_> {
    fn fail(&self, expected: &str) -> MelError {
        let at = self.line.map(|l| format!("line {l}: ")).unwrap_or_default();
        MelError::Config(format!(
            "{at}key {}: expected {expected}, got {}",
            self.key, self.value
        ))
    }

    fn f64(&self) -> Result<f64> {
        match self.value {
            Value::Number(n) => n.as_f64().ok_or_else(|| self.fail("a number")),
            _ => Err(self.fail("a number")),
        }
    }

    fn u64(&self) -> Result<u64> {
        match self.value {
            Value::Number(n) => n
                .as_u64()
                .or_else(|| {
                    n.as_f64()
                        .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v < 2f64.powi(53))
                        .map(|v| v as u64)
                })
                .ok_or_else(|| self.fail("a non-negative integer")),
            _ => Err(self.fail("a non-negative integer")),
        }
    }

    fn u32(&self) -> Result<u32> {
        u32::try_from(self.u64()?).map_err(|_| self.fail("an integer below 2^32"))
    }

    fn bool(&self) -> Result<bool> {
        self.value
            .as_bool()
            .ok_or_else(|| self.fail("true or false"))
    }

    fn str(&self) -> Result<&str> {
        self.value.as_str().ok_or_else(|| self.fail("a string"))
    }

    fn parsed<T: std::str::FromStr<Err = MelError>>(&self) -> Result<T> {
        let at = self.line.map(|l| format!("line {l}: ")).unwrap_or_default();
        self.str()?
            .parse()
            .map_err(|e: MelError| MelError::Config(format!("{at}key {}: {e}", self.key)))
    }

    fn is_none(&self) -> bool {
        matches!(self.value, Value::Null)
            || self
                .value
                .as_str()
                .is_some_and(|s| s.eq_ignore_ascii_case("none"))
    }

    fn f64_list(&self) -> Result<Vec<f64>> {
        match self.value {
            Value::Array(items) => items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| self.fail("a list of numbers")))
                .collect(),
            _ => Ok(vec![self
                .f64()
                .map_err(|_| self.fail("a number or a list of numbers"))?]),
        }
    }

    fn seeds(&self) -> Result<Vec<u64>> {
        match self.value {
            Value::Array(items) => items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .ok_or_else(|| self.fail("a list of non-negative integers"))
                })
                .collect(),
            Value::String(s) => {
                let (a, b) = s
                    .split_once("..")
                    .ok_or_else(|| self.fail("a list or a range a..b"))?;
                let a: u64 = a.trim().parse().map_err(|_| self.fail("a range a..b"))?;
                let b: u64 = b.trim().parse().map_err(|_| self.fail("a range a..b"))?;
                Ok((a..b).collect())
            }
            _ => Ok(vec![self.u64()?]),
        }
    }

    fn policies(&self) -> Result<Vec<Policy>> {
        let items: Vec<&Value> = match self.value {
            Value::Array(items) => items.iter().collect(),
            other => vec![other],
        };
        items
            .into_iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| self.fail("HA, HU or a list of them"))?
                    .parse()
                    .map_err(|_| self.fail("HA, HU or a list of them"))
            })
            .collect()
    }
}

impl ExperimentConfig {
    fn apply(&mut self, e: &Entry<'_>) -> Result<bool> {
        match e.key {
            "channel.bandwidth_hz" => self.channel.bandwidth_hz = e.f64()?,
            "channel.tx_power_dbm" => self.channel.tx_power_dbm = e.f64()?,
            "channel.noise_psd_dbm_hz" => self.channel.noise_psd_dbm_hz = e.f64()?,
            "channel.distance_m" => self.channel.distance_m = e.f64_list()?,
            "channel.gain_override" => {
                self.channel.gain_override = if e.is_none() {
                    None
                } else {
                    Some(e.f64_list()?)
                }
            }
            "channel.distance_jitter" => self.channel.distance_jitter = e.f64()?,
            "channel.resample_each_round" => self.channel.resample_each_round = e.bool()?,
            "model.features" => self.model.features = e.f64()?,
            "model.data_precision_bits" => self.model.data_precision_bits = e.f64()?,
            "model.model_precision_bits" => self.model.model_precision_bits = e.f64()?,
            "model.size_fixed" => self.model.size_fixed = e.f64()?,
            "model.size_per_sample" => self.model.size_per_sample = e.f64()?,
            "model.complexity_cycles" => self.model.complexity_cycles = e.f64()?,
            "mode" => self.mode = e.parsed()?,
            "fleet.K" => self.fleet.k = e.u64()? as usize,
            "fleet.cpu_hz" => self.fleet.cpu_hz = e.f64_list()?,
            "bounds.eta" => self.bounds.eta = e.f64()?,
            "bounds.b0" => self.bounds.b0 = e.f64()?,
            "bounds.beta_override" => {
                self.bounds.beta_override = if e.is_none() { None } else { Some(e.f64()?) }
            }
            "bounds.delta_override" => {
                self.bounds.delta_override = if e.is_none() { None } else { Some(e.f64()?) }
            }
            "bounds.delta_estimator" => self.bounds.delta_estimator = e.parsed()?,
            "bounds.initial_beta" => self.bounds.initial_beta = e.f64()?,
            "opt.tau_max" => {
                self.opt.tau_max = match e.value.as_str() {
                    Some(s) if s.eq_ignore_ascii_case("auto") => None,
                    _ if e.is_none() => None,
                    _ => Some(e.u32()?),
                }
            }
            "opt.tau_hard_cap" => self.opt.tau_hard_cap = e.u32()?,
            "opt.policy" => self.opt.policy = e.parsed()?,
            "task.kind" => self.task.kind = e.parsed::<TaskKind>()?,
            "task.dim" => self.task.dim = e.u64()? as usize,
            "task.heterogeneity" => self.task.heterogeneity = e.f64()?,
            "task.seed" => self.task.seed = e.u64()?,
            "task.total_samples" => self.task.total_samples = e.u64()?,
            "task.holdout_samples" => self.task.holdout_samples = e.u64()?,
            "task.minibatch" => self.task.minibatch = e.u64()?,
            "train.budget_s" => self.train.budget_s = e.f64()?,
            "sweep.budgets" => self.sweep.budgets = e.f64_list()?,
            "sweep.policies" => self.sweep.policies = e.policies()?,
            "sweep.seeds" => self.sweep.seeds = e.seeds()?,
            "output.dir" => self.output.dir = PathBuf::from(e.str()?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Apply `key = value` pairs on top of the current values.
    fn apply_all(&mut self, entries: &[(String, Value, Option<usize>)]) -> Result<()> {
        let mut unknown = Vec::new();
        for (key, value, line) in entries {
            let e = Entry {
                key,
                value,
                line: *line,
            };
            if !self.apply(&e)? {
                unknown.push(match line {
                    Some(l) => format!("{key} (line {l})"),
                    None => key.clone(),
                });
            }
        }
        if !unknown.is_empty() {
            return Err(MelError::Config(format!(
                "unknown keys: {}; the accepted keys are listed in the configuration reference",
                unknown.join(", ")
            )));
        }
        self.validate()
    }

    /// Set a single key, as from a command-line override.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        self.apply_all(&[(key.to_string(), parse_value(raw), None)])
    }

    pub fn from_str_flat(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_all(&parse_flat(text)?)?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| MelError::Config(format!("invalid JSON at line {}: {e}", e.line())))?;
        let Value::Object(map) = doc else {
            return Err(MelError::Config("JSON config must be an object".into()));
        };
        let mut entries = Vec::new();
        flatten("", &map, &mut entries);
        let mut cfg = ExperimentConfig::default();
        cfg.apply_all(&entries)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MelError::Config(msg));
        if self.fleet.k == 0 {
            return bad("fleet.K must be at least 1".into());
        }
        if self.fleet.cpu_hz.is_empty() || self.fleet.cpu_hz.iter().any(|&f| !(f > 0.0)) {
            return bad("fleet.cpu_hz must list positive clock rates".into());
        }
        let per_learner = |n: usize| n == 1 || n == self.fleet.k;
        if !per_learner(self.channel.distance_m.len()) {
            return bad(format!(
                "channel.distance_m has {} entries; give one or fleet.K = {}",
                self.channel.distance_m.len(),
                self.fleet.k
            ));
        }
        if let Some(g) = &self.channel.gain_override {
            if !per_learner(g.len()) {
                return bad(format!(
                    "channel.gain_override has {} entries; give one or fleet.K",
                    g.len()
                ));
            }
        }
        if !(0.0..1.0).contains(&self.channel.distance_jitter) {
            return bad("channel.distance_jitter must lie in [0, 1)".into());
        }
        if !(self.train.budget_s > 0.0) {
            return bad("train.budget_s must be positive".into());
        }
        if self
            .sweep
            .budgets
            .iter()
            .any(|&t| !(t > 0.0 && t.is_finite()))
        {
            return bad("every sweep.budgets entry must be positive".into());
        }
        if self.task.total_samples < self.fleet.k as u64 {
            return bad("task.total_samples must be at least fleet.K".into());
        }
        if self.task.dim == 0 {
            return bad("task.dim must be at least 1".into());
        }
        if self.opt.tau_max == Some(0) || self.opt.tau_hard_cap == 0 {
            return bad("opt.tau_max and opt.tau_hard_cap must be at least 1".into());
        }
        self.model.validate()?;
        Ok(())
    }

    /// The learners for `seed`: clock rates round-robin over `fleet.cpu_hz`,
    /// distances jittered by a seeded draw.
    pub fn build_fleet(&self, seed: u64) -> Result<Fleet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1ee7);
        let c = &self.channel;
        let learners = (0..self.fleet.k)
            .map(|k| {
                let base = c.distance_m[k % c.distance_m.len()];
                let u: f64 = rng.random_range(-1.0..=1.0);
                let mut spec = ChannelSpec::new(
                    c.bandwidth_hz,
                    c.tx_power_dbm,
                    c.noise_psd_dbm_hz,
                    base * (1.0 + c.distance_jitter * u),
                )?;
                if let Some(g) = &c.gain_override {
                    spec = spec.with_gain(g[k % g.len()])?;
                }
                LearnerProfile::new(k, self.fleet.cpu_hz[k % self.fleet.cpu_hz.len()], spec)
            })
            .collect::<Result<Vec<_>>>()?;
        Fleet::new(learners, self.model.clone(), self.mode)
    }

    pub fn build_backend(&self, seed: u64) -> Result<SimulatedFleet> {
        let spec = TaskSpec {
            seed,
            ..self.task.clone()
        };
        Ok(SimulatedFleet::new(
            SyntheticTask::generate(spec, self.fleet.k)?,
            seed,
        ))
    }

    pub fn training_config(&self, policy: Policy, budget_s: f64, seed: u64) -> TrainingConfig {
        TrainingConfig {
            policy,
            eta: self.bounds.eta,
            b0: self.bounds.b0,
            budget_s,
            total_samples: self.task.total_samples,
            tau_max: self.opt.tau_max,
            tau_hard_cap: self.opt.tau_hard_cap,
            beta_override: self.bounds.beta_override,
            delta_override: self.bounds.delta_override,
            delta_estimator: self.bounds.delta_estimator,
            initial_beta: self.bounds.initial_beta,
            resample: self.channel.resample_each_round.then_some(ChannelResample {
                jitter: self.channel.distance_jitter,
                seed,
            }),
        }
    }
}

/// JSON value, or the trimmed text as a string when it is not valid JSON.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn parse_flat(text: &str) -> Result<Vec<(String, Value, Option<usize>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = match line.find('#') {
            Some(p) => &line[..p],
            None => line,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            MelError::Config(format!(
                "line {line_no}: expected `key = value`, got {content:?}"
            ))
        })?;
        out.push((key.trim().to_string(), parse_value(value), Some(line_no)));
    }
    Ok(out)
}

fn flatten(prefix: &str, map: &Map<String, Value>, out: &mut Vec<(String, Value, Option<usize>)>) {
    for (k, v) in map {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(inner) => flatten(&key, inner, out),
            other => out.push((key, other.clone(), None)),
        }
    }
}

/// Read a config file; JSON when the first non-blank character is `{`.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MelError::Io(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        ExperimentConfig::from_json(&text)
    } else {
        ExperimentConfig::from_str_flat(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_str_flat("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.channel.bandwidth_hz, 5e6);
        assert_eq!(cfg.channel.tx_power_dbm, 23.0);
        assert_eq!(cfg.channel.noise_psd_dbm_hz, -174.0);
        assert_eq!(cfg.channel.distance_m, vec![500.0]);
        assert_eq!(cfg.fleet.cpu_hz, vec![2.4e9, 1.2e9]);
        assert_eq!(cfg.task.total_samples, 54_000);
        assert_eq!(cfg.model.features, 784.0);
        assert_eq!(cfg.bounds.eta, 0.01);
        assert_eq!(cfg.bounds.b0, 0.0075);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn fleet_alternates_clock_rates() {
        let cfg = ExperimentConfig::from_str_flat("fleet.K = 20\n").unwrap();
        let fleet = cfg.build_fleet(0).unwrap();
        assert_eq!(fleet.len(), 20);
        for (k, p) in fleet.learners.iter().enumerate() {
            assert_eq!(p.cpu_hz, if k % 2 == 0 { 2.4e9 } else { 1.2e9 });
            assert!((p.channel.distance_m - 500.0).abs() <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn malformed_number_names_key_and_line() {
        let err =
            ExperimentConfig::from_str_flat("# budget\n\ntrain.budget_s = 3x0\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("train.budget_s") && msg.contains("line 3"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_keys_are_listed() {
        let msg = ExperimentConfig::from_str_flat("fleet.k = 3\nfoo = 1\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("fleet.k") && msg.contains("foo"), "{msg}");
        let msg = ExperimentConfig::from_json(r#"{"fleet": {"KK": 3}}"#)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("fleet.KK"), "{msg}");
    }

    #[test]
    fn flat_and_json_agree() {
        let flat = "fleet.K = 4\nsweep.seeds = \"0..3\"\nsweep.policies = [\"HU\"]\nopt.tau_max = 50\n\
                    bounds.beta_override = 2.5\ntask.kind = quadratic\nchannel.distance_m = [100, 200, 300, 400]\n";
        let json = r#"{"fleet": {"K": 4}, "sweep": {"seeds": [0, 1, 2], "policies": "HU"},
                       "opt": {"tau_max": 50}, "bounds": {"beta_override": 2.5},
                       "task": {"kind": "quadratic"}, "channel": {"distance_m": [100, 200, 300, 400]}}"#;
        let a = ExperimentConfig::from_str_flat(flat).unwrap();
        let b = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sweep.seeds, vec![0, 1, 2]);
        assert_eq!(a.task.kind, TaskKind::Quadratic);
    }

    #[test]
    fn per_learner_lists_must_match() {
        assert!(
            ExperimentConfig::from_str_flat("fleet.K = 3\nchannel.distance_m = [1, 2]").is_err()
        );
        assert!(ExperimentConfig::from_str_flat("fleet.K = 0").is_err());
    }

    fn flattened_keys(cfg: &ExperimentConfig) -> BTreeSet<String> {
        let Value::Object(map) = serde_json::to_value(cfg).unwrap() else {
            unreachable!()
        };
        let mut entries = Vec::new();
        flatten("", &map, &mut entries);
        entries.into_iter().map(|(k, _, _)| k).collect()
    }

    #[test]
    fn schema_covers_every_field() {
        let fields = flattened_keys(&ExperimentConfig::default());
        let schema: BTreeSet<String> = SCHEMA.iter().map(|(k, _)| k.to_string()).collect();
        assert_eq!(fields, schema);
    }

    #[test]
    fn every_schema_key_is_settable() {
        let samples = [
            ("channel.gain_override", "[1e-12]"),
            ("channel.resample_each_round", "true"),
            ("channel.distance_m", "[450]"),
            ("channel.distance_jitter", "0.1"),
            ("mode", "FL"),
            ("fleet.K", "6"),
            ("fleet.cpu_hz", "[1e9]"),
            ("bounds.beta_override", "1.5"),
            ("bounds.delta_override", "0.5"),
            ("bounds.delta_estimator", "loss"),
            ("opt.tau_max", "40"),
            ("opt.policy", "HU"),
            ("task.kind", "quadratic"),
            ("sweep.budgets", "[100]"),
            ("sweep.policies", "[\"HA\"]"),
            ("sweep.seeds", "[7]"),
            ("output.dir", "elsewhere"),
            ("task.total_samples", "60000"),
        ];
        for (key, _) in SCHEMA {
            let mut cfg = ExperimentConfig::default();
            let raw = samples
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.to_string())
                .unwrap_or_else(|| "3".to_string());
            cfg.set(key, &raw).unwrap_or_else(|e| panic!("{key}: {e}"));
            assert_ne!(cfg, ExperimentConfig::default(), "{key} had no effect");
        }
    }
}

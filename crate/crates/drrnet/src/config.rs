//! Line-oriented `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::Path;

use drrnet_core::blocks::{NetConfig, Pattern};
use drrnet_core::revcore::Coefficients;
use drrnet_core::schedule::{PolicyShape, SchedulePolicy, StepUnit, UpdateOrder};
use drrnet_core::Precision;

use crate::error::{HarnessError, Result};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model.width", "token width d"),
    ("model.hidden", "mlp hidden width (default 2·width)"),
    ("model.seq_len", "tokens per input"),
    ("model.stages", "number of stages"),
    ("model.depth_per_stage", "modules per stage"),
    ("model.pattern", "interleaved | mlp | attention"),
    ("model.classes", "number of classes"),
    ("train.lr", "optimizer step size"),
    ("train.beta1", "first-moment decay"),
    ("train.beta2", "second-moment decay"),
    ("train.eps", "optimizer epsilon"),
    ("train.steps", "finetune steps"),
    ("train.batch", "samples per step"),
    ("train.eval_size", "evaluation samples"),
    ("train.timing", "record wall-clock step times (true | false)"),
    ("pretrain.steps", "pretraining steps"),
    ("schedule.policy", "linear | exponential | logarithm"),
    ("schedule.order", "simultaneous | alpha_first | beta_first"),
    ("schedule.eta", "update period"),
    ("schedule.eta_unit", "epochs | iterations (applies to eta and tau)"),
    ("schedule.tau", "update end point"),
    ("schedule.alpha_end", "alpha at the end point"),
    ("schedule.beta_end", "beta at the end point"),
    ("task.sigma", "relative teacher perturbation for the downstream task"),
    ("seed", "master seed"),
    ("precision", "f32 | f64"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub pretrain_steps: u64,
    pub batch: usize,
    pub eval_size: usize,
    pub timing: bool,
    pub schedule: SchedulePolicy,
    pub sigma: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 1000,
            pretrain_steps: 2000,
            batch: 64,
            eval_size: 1000,
            timing: false,
            schedule: SchedulePolicy::default(),
            sigma: 0.1,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

fn valid_keys() -> String {
    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

fn num<V: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<V, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn choice<V>(key: &str, value: &str, parse: impl Fn(&str) -> Option<V>) -> std::result::Result<V, String> {
    parse(value).ok_or_else(|| format!("{key}: unknown value {value:?}"))
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|(line, message)| HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    /// Parses config text. Errors carry the 1-based line number.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        let mut hidden_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| (n + 1, format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err((n + 1, format!("duplicate key {key}")));
            }
            cfg.set(key, value).map_err(|m| (n + 1, m))?;
            hidden_set |= key == "model.hidden";
            seen.push(key.to_string());
        }
        if !hidden_set {
            cfg.net.hidden = 2 * cfg.net.width;
        }
        cfg.validate().map_err(|e| (0, e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let s = &mut self.schedule;
        match key {
            "model.width" => self.net.width = num(key, value)?,
            "model.hidden" => self.net.hidden = num(key, value)?,
            "model.seq_len" => self.net.seq_len = num(key, value)?,
            "model.stages" => self.net.stages = num(key, value)?,
            "model.depth_per_stage" => self.net.depth_per_stage = num(key, value)?,
            "model.pattern" => self.net.pattern = choice(key, value, Pattern::parse)?,
            "model.classes" => self.net.classes = num(key, value)?,
            "train.lr" => self.lr = num(key, value)?,
            "train.beta1" => self.beta1 = num(key, value)?,
            "train.beta2" => self.beta2 = num(key, value)?,
            "train.eps" => self.eps = num(key, value)?,
            "train.steps" => self.steps = num(key, value)?,
            "train.batch" => self.batch = num(key, value)?,
            "train.eval_size" => self.eval_size = num(key, value)?,
            "train.timing" => self.timing = num(key, value)?,
            "pretrain.steps" => self.pretrain_steps = num(key, value)?,
            "schedule.policy" => s.shape = choice(key, value, PolicyShape::parse)?,
            "schedule.order" => s.order = choice(key, value, UpdateOrder::parse)?,
            "schedule.eta" => s.eta = num(key, value)?,
            "schedule.eta_unit" => s.unit = choice(key, value, StepUnit::parse)?,
            "schedule.tau" => s.tau = num(key, value)?,
            "schedule.alpha_end" => s.end = Coefficients::new(num(key, value)?, s.end.beta),
            "schedule.beta_end" => s.end = Coefficients::new(s.end.alpha, num(key, value)?),
            "task.sigma" => self.sigma = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("{key}: unknown value {value:?} (f32 | f64)")),
                }
            }
            _ => return Err(format!("unknown key {key:?}; valid keys: {}", valid_keys())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.schedule.validate()?;
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("train.eps must be positive");
        }
        if self.batch == 0 || self.eval_size == 0 {
            return bad("train.batch and train.eval_size must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("task.sigma must be non-negative");
        }
        Ok(())
    }

    /// Renders the config so that `parse(to_text())` reproduces it.
    pub fn to_text(&self) -> String {
        let s = &self.schedule;
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        line("model.width", self.net.width.to_string());
        line("model.hidden", self.net.hidden.to_string());
        line("model.seq_len", self.net.seq_len.to_string());
        line("model.stages", self.net.stages.to_string());
        line("model.depth_per_stage", self.net.depth_per_stage.to_string());
        line("model.pattern", self.net.pattern.name().into());
        line("model.classes", self.net.classes.to_string());
        line("train.lr", self.lr.to_string());
        line("train.beta1", self.beta1.to_string());
        line("train.beta2", self.beta2.to_string());
        line("train.eps", self.eps.to_string());
        line("train.steps", self.steps.to_string());
        line("train.batch", self.batch.to_string());
        line("train.eval_size", self.eval_size.to_string());
        line("train.timing", self.timing.to_string());
        line("pretrain.steps", self.pretrain_steps.to_string());
        line("schedule.policy", s.shape.name().into());
        line("schedule.order", s.order.name().into());
        line("schedule.eta", s.eta.to_string());
        line("schedule.eta_unit", s.unit.name().into());
        line("schedule.tau", s.tau.to_string());
        line("schedule.alpha_end", s.end.alpha.to_string());
        line("schedule.beta_end", s.end.beta.to_string());
        line("task.sigma", self.sigma.to_string());
        line("seed", self.seed.to_string());
        line("precision", self.precision.name().into());
        out
    }
}

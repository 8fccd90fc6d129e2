//! Experiment configuration: presets, `key=value` files and overrides.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::abc_calibration::{format_directions, parse_directions, Anchor, CalibrationOptions, Direction};
use crate::abs_bias::{Arity, Scaffold};
use crate::error::{LabError, Result};
use crate::kv::{self, KvMap};
use super::train::Scoring;
use crate::task_data::TaskKind;
use crate::transformer::{AttentionSite, ModelConfig, PeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Smoke,
    Full,
}

impl FromStr for Scale {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Scale::Smoke),
            "full" => Ok(Scale::Full),
            other => Err(LabError::Config(format!("unknown scale {other:?}"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Smoke => "smoke",
            Scale::Full => "full",
        })
    }
}

/// Which biasing scheme a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vanilla,
    Abs,
    Abc,
}

impl FromStr for Method {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "abs" => Ok(Method::Abs),
            "abc" => Ok(Method::Abc),
            other => Err(LabError::Config(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Vanilla => "vanilla",
            Method::Abs => "abs",
            Method::Abc => "abc",
        })
    }
}

/// Window scaffolding settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsSettings {
    pub w: usize,
    pub open_operator: bool,
    pub encoder_window: bool,
}

/// Calibration and retraining settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcSettings {
    pub directions: Vec<Direction>,
    /// `None` keeps every line.
    pub threshold_mult: Option<f64>,
    pub vertical_anchor: Anchor,
    pub sites: Vec<AttentionSite>,
    pub min_correct: usize,
    pub samples: usize,
    pub retrain_pe: PeKind,
    pub warm_start: bool,
}

/// One experiment: task, model, method, budgets and evaluation lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub base: u32,
    /// Training operands are drawn from `[0, 10^train_digits)`.
    pub train_digits: u32,
    pub method: Method,
    pub model: ModelConfig,
    pub abs: AbsSettings,
    pub abc: AbcSettings,
    pub batch_size: usize,
    pub interp_budget: u64,
    pub retrain_budget: u64,
    pub eval_every: u64,
    pub target_accuracy: f64,
    /// Consecutive evaluations at or above target needed to stop.
    pub patience: usize,
    pub seed: u64,
    pub eval_lengths: Vec<usize>,
    pub eval_cap: usize,
    pub eval_seed: u64,
    pub eval_scoring: Scoring,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale, task: TaskKind) -> Self {
        let full = scale == Scale::Full;
        let model = if full {
            ModelConfig::default()
        } else {
            ModelConfig {
                encoder_layers: 1,
                decoder_layers: 2,
                heads: 8,
                d_model: 64,
                d_ff: 256,
                dropout: 0.1,
                learning_rate: 1e-3,
                ..ModelConfig::default()
            }
        };
        let parity = task == TaskKind::Parity;
        let eval_lengths = match (full, parity) {
            (true, _) => vec![6, 10, 15, 20, 50],
            (false, false) => vec![4, 8, 12],
            (false, true) => vec![8, 14, 20, 30, 40, 50],
        };
        Self {
            task,
            base: 10,
            train_digits: if full { 6 } else { 4 },
            method: Method::Vanilla,
            model,
            abs: AbsSettings {
                w: 1,
                open_operator: true,
                encoder_window: true,
            },
            abc: AbcSettings {
                directions: if full {
                    Direction::ALL.to_vec()
                } else {
                    vec![Direction::ANTI_DIAGONAL, Direction::VERTICAL]
                },
                threshold_mult: Some(match (full, task) {
                    (true, _) => 4.0,
                    (false, TaskKind::NxOne) => 1.5,
                    (false, _) => 1.75,
                }),
                vertical_anchor: if full { Anchor::Left } else { Anchor::Nearest },
                sites: if full {
                    vec![AttentionSite::SelfAttn, AttentionSite::Cross]
                } else {
                    vec![AttentionSite::Cross]
                },
                min_correct: 32,
                samples: 256,
                retrain_pe: PeKind::NoPe,
                warm_start: false,
            },
            batch_size: 64,
            interp_budget: if full { 200_000 } else { 8_000 },
            retrain_budget: if full { 20_000 } else { 4_000 },
            eval_every: if full { 1_000 } else { 50 },
            target_accuracy: if full { 0.995 } else { 1.0 },
            patience: 2,
            seed: 1,
            eval_lengths,
            eval_cap: 10_000,
            eval_seed: 2024,
            eval_scoring: Scoring::Exact,
        }
    }

    /// ABS validation configurations: (A) vanilla, (B) + w, (C) + w + CPI,
    /// (D) NoPE + w.
    pub fn abs_variant(mut self, variant: char) -> Result<Self> {
        let (method, pe, cpi) = match variant.to_ascii_uppercase() {
            'A' => (Method::Vanilla, PeKind::Sinusoidal, None),
            'B' => (Method::Abs, PeKind::Sinusoidal, None),
            'C' => (Method::Abs, PeKind::Sinusoidal, Some(3)),
            'D' => (Method::Abs, PeKind::NoPe, None),
            other => return Err(LabError::Config(format!("unknown ABS configuration {other:?}"))),
        };
        self.method = method;
        self.model.pe = pe;
        self.model.cpi_period = cpi;
        Ok(self)
    }

    pub fn range_max(&self) -> u64 {
        10u64.pow(self.train_digits)
    }

    /// Interleaved operand layout, used with window scaffolding.
    pub fn aligned(&self) -> bool {
        self.method == Method::Abs && self.task.is_binary()
    }

    pub fn scaffold(&self) -> Scaffold {
        let arity = if self.task.is_binary() {
            Arity::Binary
        } else {
            Arity::Unary
        };
        Scaffold {
            w: self.abs.w,
            arity,
            open_operator: self.abs.open_operator,
            encoder_window: self.abs.encoder_window,
        }
    }

    pub fn calibration_options(&self) -> CalibrationOptions {
        CalibrationOptions {
            directions: self.abc.directions.clone(),
            sites: self.abc.sites.clone(),
            threshold_mult: self.abc.threshold_mult,
            vertical_anchor: self.abc.vertical_anchor,
            min_correct: self.abc.min_correct,
            max_samples: self.abc.samples,
            batch_size: self.batch_size,
        }
    }

    /// Model used for ABC retraining.
    pub fn retrain_model(&self) -> ModelConfig {
        ModelConfig {
            pe: self.abc.retrain_pe,
            cpi_period: None,
            init_seed: self.model.init_seed.wrapping_add(1),
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.eval_lengths.is_empty() || self.eval_lengths.contains(&0) {
            return Err(LabError::Config("eval lengths must be non-empty and >= 1".into()));
        }
        if self.train_digits == 0 || self.train_digits > 18 {
            return Err(LabError::Config("train_digits must be in 1..=18".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(LabError::Config("batch_size and eval_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        for (k, v) in self.model.to_kv() {
            m.insert(format!("model.{k}"), v);
        }
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.to_string());
        put("base", self.base.to_string());
        put("train_digits", self.train_digits.to_string());
        put("method", self.method.to_string());
        put("abs.w", self.abs.w.to_string());
        put("abs.open_operator", self.abs.open_operator.to_string());
        put("abs.encoder_window", self.abs.encoder_window.to_string());
        put("abc.directions", format_directions(&self.abc.directions));
        put(
            "abc.threshold_mult",
            self.abc.threshold_mult.map_or("none".into(), |k| k.to_string()),
        );
        put("abc.vertical_anchor", self.abc.vertical_anchor.to_string());
        put(
            "abc.sites",
            self.abc.sites.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
        );
        put("abc.min_correct", self.abc.min_correct.to_string());
        put("abc.samples", self.abc.samples.to_string());
        put("abc.retrain_pe", self.abc.retrain_pe.to_string());
        put("abc.warm_start", self.abc.warm_start.to_string());
        put("batch_size", self.batch_size.to_string());
        put("interp_budget", self.interp_budget.to_string());
        put("retrain_budget", self.retrain_budget.to_string());
        put("eval_every", self.eval_every.to_string());
        put("target_accuracy", self.target_accuracy.to_string());
        put("patience", self.patience.to_string());
        put("seed", self.seed.to_string());
        put(
            "eval.lengths",
            self.eval_lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
        );
        put("eval.cap", self.eval_cap.to_string());
        put("eval.scoring", self.eval_scoring.to_string());
        put("eval.seed", self.eval_seed.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.to_kv())
    }

    /// Applies `key=value` overrides on top of `self`. Keys may use either
    /// the short flag names (`task`, `pe`, `w`, `cpi_period`, `directions`,
    /// `threshold_mult`, `seed`, `abs_config`) or the full names written by
    /// [`to_kv`](Self::to_kv).
    pub fn apply(mut self, overrides: &KvMap) -> Result<Self> {
        let mut model_kv = self.model.to_kv();
        if let Some(v) = overrides.get("abs_config") {
            let c = v.chars().next().ok_or_else(|| LabError::Config("empty abs_config".into()))?;
            self = self.abs_variant(c)?;
            model_kv = self.model.to_kv();
        }
        for (key, value) in overrides {
            let parse_err = || LabError::Config(format!("bad value {value:?} for {key}"));
            macro_rules! num {
                () => {
                    value.parse().map_err(|_| parse_err())?
                };
            }
            match key.as_str() {
                "abs_config" | "scale" | "out_dir" => {}
                "task" => self.task = value.parse()?,
                "base" => self.base = num!(),
                "train_digits" => self.train_digits = num!(),
                "method" => self.method = value.parse()?,
                "pe" => {
                    model_kv.insert("pe".into(), value.clone());
                }
                "cpi_period" => {
                    model_kv.insert("cpi_period".into(), value.clone());
                }
                "w" | "abs.w" => self.abs.w = num!(),
                "abs.open_operator" => self.abs.open_operator = num!(),
                "abs.encoder_window" => self.abs.encoder_window = num!(),
                "directions" | "abc.directions" => self.abc.directions = parse_directions(value)?,
                "threshold_mult" | "abc.threshold_mult" => {
                    self.abc.threshold_mult = match value.as_str() {
                        "none" => None,
                        v => Some(v.parse().map_err(|_| parse_err())?),
                    }
                }
                "abc.vertical_anchor" => self.abc.vertical_anchor = value.parse()?,
                "abc.sites" => {
                    self.abc.sites = value.split(',').map(AttentionSite::parse).collect::<Result<_>>()?
                }
                "abc.min_correct" => self.abc.min_correct = num!(),
                "abc.samples" => self.abc.samples = num!(),
                "abc.retrain_pe" => self.abc.retrain_pe = value.parse()?,
                "abc.warm_start" => self.abc.warm_start = num!(),
                "batch_size" => self.batch_size = num!(),
                "interp_budget" => self.interp_budget = num!(),
                "retrain_budget" => self.retrain_budget = num!(),
                "eval_every" => self.eval_every = num!(),
                "target_accuracy" => self.target_accuracy = num!(),
                "patience" => self.patience = num!(),
                "seed" => self.seed = num!(),
                "eval.lengths" | "eval_lengths" => {
                    self.eval_lengths = value
                        .split(',')
                        .map(|t| t.trim().parse().map_err(|_| parse_err()))
                        .collect::<Result<_>>()?
                }
                "eval.cap" => self.eval_cap = num!(),
                "eval.scoring" => self.eval_scoring = num!(),
                "eval.seed" => self.eval_seed = num!(),
                k if k.starts_with("model.") => {
                    model_kv.insert(k["model.".len()..].to_string(), value.clone());
                }
                other => return Err(LabError::Config(format!("unknown config key {other:?}"))),
            }
        }
        self.model = ModelConfig::from_kv(&model_kv)?;
        self.validate()?;
        Ok(self)
    }

    /// Preset chosen by `scale` and `task` in `map`, then everything else
    /// in `map` applied on top.
    pub fn from_kv(map: &KvMap) -> Result<Self> {
        let scale: Scale = kv::get(map, "scale")?.unwrap_or(Scale::Smoke);
        let task: TaskKind = kv::require(map, "task")?;
        Self::preset(scale, task).apply(map)
    }

    /// Hash of the settings that determine training; evaluation settings
    /// are excluded so new lengths reuse trained stages.
    pub fn training_hash(&self) -> String {
        let text: String = self
            .to_kv()
            .into_iter()
            .filter(|(k, _)| !k.starts_with("eval."))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        short_hash(text.as_bytes())
    }

    pub fn full_hash(&self) -> String {
        short_hash(self.to_text().as_bytes())
    }

    pub fn label(&self) -> String {
        match self.method {
            Method::Vanilla => format!("vanilla-{}", self.model.pe),
            Method::Abs => {
                let mut s = format!("abs-{}-w{}", self.model.pe, self.abs.w);
                if let Some(t) = self.model.cpi_period {
                    s.push_str(&format!("-t{t}"));
                }
                s
            }
            Method::Abc => "abc".to_string(),
        }
    }
}

/// First 12 hex digits of SHA-256.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

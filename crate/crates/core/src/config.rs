//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Optional numeric keys accept `none`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::ProbeConfig;
use crate::trainer::{Selection, TrainConfig};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "RECONBOOST_SEED";

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "method",
    "output_dir",
    "dataset",
    "num_samples",
    "test_fraction",
    "standardize",
    "corrupt_modality",
    "corrupt_fraction",
    "corrupt_sigma",
    "seed",
    "lambda",
    "alpha",
    "stage_lr",
    "grs_lr",
    "t1",
    "t2",
    "cycles",
    "batch_size",
    "selection",
    "clip_norm",
    "early_stop_patience",
    "hidden",
    "baseline_epochs",
    "fusion",
    "lw_steps",
    "lw_lr",
    "lw_fraction",
    "diagnostics",
    "probe_train_fraction",
    "probe_epochs",
    "probe_lr",
    "save_model",
    "verify",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "modality")]
pub enum Method {
    Reconboost,
    Concat,
    Unimodal(usize),
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconboost" => Ok(Self::Reconboost),
            "concat" => Ok(Self::Concat),
            other => match other.strip_prefix("unimodal:") {
                Some(k) => k
                    .parse()
                    .map(Self::Unimodal)
                    .map_err(|_| Error::Config(format!("bad modality index in method `{other}`"))),
                None => Err(Error::Config(format!(
                    "unknown method `{other}` (expected reconboost, concat or unimodal:<k>)"
                ))),
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Reconboost => f.write_str("reconboost"),
            Self::Concat => f.write_str("concat"),
            Self::Unimodal(k) => write!(f, "unimodal:{k}"),
        }
    }
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum DatasetSource {
    /// The synthetic dominance benchmark, generated from the experiment seed.
    Dominance,
    /// A feature-table directory.
    Table(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// All fusion weights one.
    Na,
    /// Weights fitted on a validation split carved from the training data.
    Lw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub modality: usize,
    pub fraction: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    pub num_samples: usize,
    pub test_fraction: f64,
    pub standardize: bool,
    pub corruption: Option<Corruption>,
    pub train: TrainConfig,
    pub fusion: Fusion,
    pub lw_steps: usize,
    pub lw_lr: f64,
    pub lw_fraction: f64,
    pub diagnostics: bool,
    pub probe: ProbeConfig,
    pub save_model: bool,
    pub verify: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Reconboost,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSource::Dominance,
            num_samples: 2000,
            test_fraction: 0.5,
            standardize: false,
            corruption: None,
            train: TrainConfig {
                early_stop_patience: None,
                ..TrainConfig::default()
            },
            fusion: Fusion::Na,
            lw_steps: 200,
            lw_lr: 1e-2,
            lw_fraction: 0.1,
            diagnostics: true,
            probe: ProbeConfig::default(),
            save_model: true,
            verify: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for key `{key}`"))),
    }
}

impl ExperimentConfig {
    /// Parses config text. Later occurrences of a key are rejected as
    /// duplicates.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key `{key}` on line {}", lineno + 1)));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}` on line {}", lineno + 1)));
            }
        }
        Self::from_entries(&entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut corrupt_modality = None;
        let mut corrupt_fraction = 0.5;
        let mut corrupt_sigma = None;
        for (key, value) in entries {
            let (k, v) = (key.as_str(), value.as_str());
            let t = &mut cfg.train;
            match k {
                "method" => cfg.method = v.parse()?,
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                "dataset" => {
                    cfg.dataset = if v == "dominance" {
                        DatasetSource::Dominance
                    } else {
                        DatasetSource::Table(PathBuf::from(v))
                    }
                }
                "num_samples" => cfg.num_samples = parse(k, v)?,
                "test_fraction" => cfg.test_fraction = parse(k, v)?,
                "standardize" => cfg.standardize = parse_bool(k, v)?,
                "corrupt_modality" => corrupt_modality = parse_optional(k, v)?,
                "corrupt_fraction" => corrupt_fraction = parse(k, v)?,
                "corrupt_sigma" => corrupt_sigma = Some(parse(k, v)?),
                "seed" => t.seed = parse(k, v)?,
                "lambda" => t.lambda = parse(k, v)?,
                "alpha" => t.alpha = parse(k, v)?,
                "stage_lr" => t.stage_lr = parse(k, v)?,
                "grs_lr" => t.grs_lr = parse(k, v)?,
                "t1" => t.t1 = parse(k, v)?,
                "t2" => t.t2 = parse(k, v)?,
                "cycles" => t.cycles = parse(k, v)?,
                "batch_size" => t.batch_size = parse(k, v)?,
                "selection" => t.selection = v.parse::<Selection>()?,
                "clip_norm" => t.clip_norm = parse_optional(k, v)?,
                "early_stop_patience" => t.early_stop_patience = parse_optional(k, v)?,
                "hidden" => {
                    t.hidden = if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',').map(|h| parse(k, h.trim())).collect::<Result<_>>()?
                    }
                }
                "baseline_epochs" => t.baseline_epochs = parse_optional(k, v)?,
                "fusion" => {
                    cfg.fusion = match v {
                        "na" => Fusion::Na,
                        "lw" => Fusion::Lw,
                        _ => return Err(Error::Config(format!("unknown fusion `{v}` (expected na or lw)"))),
                    }
                }
                "lw_steps" => cfg.lw_steps = parse(k, v)?,
                "lw_lr" => cfg.lw_lr = parse(k, v)?,
                "lw_fraction" => cfg.lw_fraction = parse(k, v)?,
                "diagnostics" => cfg.diagnostics = parse_bool(k, v)?,
                "probe_train_fraction" => cfg.probe.train_fraction = parse(k, v)?,
                "probe_epochs" => cfg.probe.epochs = parse(k, v)?,
                "probe_lr" => cfg.probe.lr = parse(k, v)?,
                "save_model" => cfg.save_model = parse_bool(k, v)?,
                "verify" => cfg.verify = parse_bool(k, v)?,
                _ => unreachable!("key list and match arms diverged: {k}"),
            }
        }
        if let Some(modality) = corrupt_modality {
            cfg.corruption = Some(Corruption {
                modality,
                fraction: corrupt_fraction,
                sigma: corrupt_sigma.unwrap_or(0.0),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the seed with `RECONBOOST_SEED` when that variable is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not a 64-bit unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        if self.dataset == DatasetSource::Dominance && self.num_samples == 0 {
            return Err(Error::Config("num_samples must be >= 1".into()));
        }
        if let Some(c) = &self.corruption {
            if !(0.0..=1.0).contains(&c.fraction) || !(c.sigma >= 0.0) {
                return Err(Error::Config("corruption needs fraction in [0, 1] and sigma >= 0".into()));
            }
        }
        if !(self.lw_fraction > 0.0 && self.lw_fraction < 1.0) || !(self.lw_lr > 0.0) {
            return Err(Error::Config("lw_fraction must be in (0, 1) and lw_lr > 0".into()));
        }
        Ok(())
    }

    /// Serializes back to config text that parses to an equal value.
    pub fn to_config_text(&self) -> String {
        let t = &self.train;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut lines = vec![
            format!("method = {}", self.method),
            format!("output_dir = {}", self.output_dir.display()),
            format!(
                "dataset = {}",
                match &self.dataset {
                    DatasetSource::Dominance => "dominance".to_string(),
                    DatasetSource::Table(p) => p.display().to_string(),
                }
            ),
            format!("num_samples = {}", self.num_samples),
            format!("test_fraction = {}", self.test_fraction),
            format!("standardize = {}", self.standardize),
        ];
        if let Some(c) = &self.corruption {
            lines.push(format!("corrupt_modality = {}", c.modality));
            lines.push(format!("corrupt_fraction = {}", c.fraction));
            lines.push(format!("corrupt_sigma = {}", c.sigma));
        }
        lines.extend([
            format!("seed = {}", t.seed),
            format!("lambda = {}", t.lambda),
            format!("alpha = {}", t.alpha),
            format!("stage_lr = {}", t.stage_lr),
            format!("grs_lr = {}", t.grs_lr),
            format!("t1 = {}", t.t1),
            format!("t2 = {}", t.t2),
            format!("cycles = {}", t.cycles),
            format!("batch_size = {}", t.batch_size),
            format!("selection = {}", t.selection),
            format!("clip_norm = {}", opt(t.clip_norm.map(|v| v.to_string()))),
            format!("early_stop_patience = {}", opt(t.early_stop_patience.map(|v| v.to_string()))),
            format!(
                "hidden = {}",
                t.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
            ),
            format!("baseline_epochs = {}", opt(t.baseline_epochs.map(|v| v.to_string()))),
            format!("fusion = {}", if self.fusion == Fusion::Lw { "lw" } else { "na" }),
            format!("lw_steps = {}", self.lw_steps),
            format!("lw_lr = {}", self.lw_lr),
            format!("lw_fraction = {}", self.lw_fraction),
            format!("diagnostics = {}", self.diagnostics),
            format!("probe_train_fraction = {}", self.probe.train_fraction),
            format!("probe_epochs = {}", self.probe.epochs),
            format!("probe_lr = {}", self.probe.lr),
            format!("save_model = {}", self.save_model),
            format!("verify = {}", self.verify),
        ]);
        lines.join("\n") + "\n"
    }
}

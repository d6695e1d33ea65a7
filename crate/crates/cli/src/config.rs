//! Flat `key = value` run configuration.
//!
//! Values resolve in three layers: the preset's built-in defaults, then the
//! config file, then command-line flags. Unknown keys are errors in every
//! layer.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use qreduce::encoder::EncoderConfig;
use qreduce::querylog::{NoisePlacement, SplitSpec, SynthConfig};
use qreduce::reducer::{AggregationWeight, DEFAULT_ALPHA};
use qreduce::trainer::{DropRateSchedule, TrainConfig, TrainObjective};

/// Aggregation weights swept by default: the tuning grid plus zero.
pub const DEFAULT_ALPHA_GRID: [f64; 8] = [0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Synthetic,
}

impl FromStr for Preset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "synthetic" => Ok(Preset::Synthetic),
            _ => bail!("unknown preset {s:?} (expected paper or synthetic)"),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,

    pub synth: SynthConfig,
    pub split: SplitSpec,

    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub dropout: f64,
    pub core_max_len: usize,
    pub sub_max_len: usize,

    pub train: TrainConfig,
    pub schedule: DropRateSchedule,

    pub alpha: f64,
    pub alpha_grid: Vec<f64>,
    pub threshold: f64,
    pub nq: usize,

    pub data: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let train = match preset {
            Preset::Paper => TrainConfig::paper(TrainObjective::Core),
            Preset::Synthetic => TrainConfig::synthetic(TrainObjective::Core),
        };
        let toy = EncoderConfig::toy(0, 0);
        Self {
            preset,
            seed: 0,
            synth: SynthConfig::default(),
            split: SplitSpec::default(),
            hidden: toy.hidden,
            layers: toy.layers,
            heads: toy.heads,
            ff: toy.ff,
            dropout: toy.dropout,
            core_max_len: 60,
            sub_max_len: 120,
            train,
            schedule: DropRateSchedule::default(),
            alpha: DEFAULT_ALPHA,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            threshold: qreduce::coreterm::DEFAULT_THRESHOLD,
            nq: qreduce::baselines::DEFAULT_NQ,
            data: None,
            models: None,
            out: None,
        }
    }

    /// Builds the configuration from an optional file and flag overrides.
    /// A `preset` key in either layer selects the defaults layer (flags win).
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let file_entries = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                parse_entries(&text).with_context(|| format!("in config {}", path.display()))?
            }
            None => Vec::new(),
        };
        let preset_of = |entries: &[(String, String)]| entries.iter().rev().find(|(k, _)| k == "preset").map(|(_, v)| v.clone());
        let preset = match preset_of(flags).or_else(|| preset_of(&file_entries)) {
            Some(p) => p.parse()?,
            None => Preset::Synthetic,
        };
        let mut cfg = Self::preset(preset);
        for (k, v) in &file_entries {
            cfg.set(k, v).with_context(|| format!("config file key {k:?}"))?;
        }
        for (k, v) in flags {
            cfg.set(k, v).with_context(|| format!("flag for {k:?}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| anyhow!("invalid value {v:?} for {key}: {e}"))
        }
        let v = value.trim();
        match key {
            "preset" => self.preset = p(key, v)?,
            "seed" => self.seed = p(key, v)?,

            "content_vocab_size" => self.synth.content_vocab_size = p(key, v)?,
            "noise_vocab_size" => self.synth.noise_vocab_size = p(key, v)?,
            "min_content" => self.synth.min_content = p(key, v)?,
            "max_content" => self.synth.max_content = p(key, v)?,
            "min_noise" => self.synth.min_noise = p(key, v)?,
            "max_noise" => self.synth.max_noise = p(key, v)?,
            "sessions" => self.synth.n_sessions = p(key, v)?,
            "max_sessions_per_query" => self.synth.max_sessions_per_query = p(key, v)?,
            "label_noise" => self.synth.label_noise_rate = p(key, v)?,
            "placement" => self.synth.placement = p::<NoisePlacement>(key, v)?,

            "train_ratio" => self.split.train_ratio = p(key, v)?,
            "valid_ratio" => self.split.valid_ratio = p(key, v)?,
            "test_ratio" => self.split.test_ratio = p(key, v)?,

            "hidden" => self.hidden = p(key, v)?,
            "layers" => self.layers = p(key, v)?,
            "heads" => self.heads = p(key, v)?,
            "ff" => self.ff = p(key, v)?,
            "dropout" => self.dropout = p(key, v)?,
            "core_max_len" => self.core_max_len = p(key, v)?,
            "sub_max_len" => self.sub_max_len = p(key, v)?,

            "objective" => self.train.objective = p(key, v)?,
            "batch_size" => self.train.batch_size = p(key, v)?,
            "learning_rate" => self.train.learning_rate = p(key, v)?,
            "warmup_ratio" => self.train.warmup_ratio = p(key, v)?,
            "epochs" => self.train.max_epochs = p(key, v)?,
            "denoise" => self.train.denoise = p(key, v)?,
            "negatives" => self.train.negatives_n = p(key, v)?,

            "eps_max" => self.schedule.eps_max = p(key, v)?,
            "gamma" => self.schedule.gamma = p(key, v)?,
            "eps_n" => self.schedule.eps_n = p(key, v)?,

            "alpha" => self.alpha = p(key, v)?,
            "alpha_grid" => {
                self.alpha_grid = v
                    .split(',')
                    .map(|a| p::<f64>(key, a.trim()))
                    .collect::<Result<_>>()?
            }
            "threshold" => self.threshold = p(key, v)?,
            "nq" => self.nq = p(key, v)?,

            "data" => self.data = Some(PathBuf::from(v)),
            "models" => self.models = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        SplitSpec::new(self.split.train_ratio, self.split.valid_ratio, self.split.test_ratio, self.seed)?;
        self.train_config().validate()?;
        self.schedule.validate()?;
        self.encoder_config(TrainObjective::Core, 1).validate()?;
        self.encoder_config(TrainObjective::Sub, 1).validate()?;
        AggregationWeight::new(self.alpha)?;
        if self.alpha_grid.is_empty() {
            bail!("alpha grid is empty");
        }
        for &a in &self.alpha_grid {
            AggregationWeight::new(a)?;
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            bail!("threshold {} outside [0, 1]", self.threshold);
        }
        if self.nq == 0 {
            bail!("nq must be at least 1");
        }
        if self.core_max_len < 3 || self.sub_max_len < 5 {
            bail!("max lengths must leave room for query terms");
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.seed,
            ..self.split
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn max_len(&self, objective: TrainObjective) -> usize {
        match objective {
            TrainObjective::Core => self.core_max_len,
            TrainObjective::Sub => self.sub_max_len,
        }
    }

    pub fn encoder_config(&self, objective: TrainObjective, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ff: self.ff,
            vocab_size,
            max_len: self.max_len(objective),
            dropout: self.dropout,
            seed: self.seed,
        }
    }
}

/// `key = value` lines; blank lines and `#` comments are ignored.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

//! Flat `key = value` run configuration.
//!
//! Keys are the long flag names (`learning-rate`, `beam-size`, ...); `_` and
//! `-` are interchangeable. Blank lines and `#` comments are ignored.

use std::fs;
use std::path::Path;

use auxsumm_core::decode::DecodeConfig;
use auxsumm_core::model::{ModelConfig, Precision};
use auxsumm_core::train::TrainConfig;

pub const DEFAULT_BUDGET: usize = 400;
pub const DEFAULT_MAX_VOCAB: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Phase-I word budget and chunk size.
    pub budget: usize,
    pub max_vocab: usize,
    /// Key-phrases kept per chunk by the TF-IDF scorer; 0 keeps all.
    pub keyphrase_top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            budget: DEFAULT_BUDGET,
            max_vocab: DEFAULT_MAX_VOCAB,
            keyphrase_top_k: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "hidden-dim",
    "embed-dim",
    "w1",
    "w2",
    "lambda-cov",
    "max-source-len",
    "max-target-len",
    "uniform-gamma-fallback",
    "init-range",
    "precision",
    "learning-rate",
    "initial-accumulator",
    "batch-size",
    "iterations",
    "grad-clip-norm",
    "seed",
    "checkpoint-every",
    "coverage-start-iteration",
    "threads",
    "beam-size",
    "min-length",
    "max-length",
    "keyphrase-at-decode",
    "length-normalize",
    "budget",
    "max-vocab",
    "keyphrase-top-k",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("invalid value `{value}` for `{key}`: expected true or false")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.trim().replace('_', "-");
        let v = value.trim();
        let k = key.as_str();
        match k {
            "hidden-dim" => self.model.hidden_dim = parse(k, v)?,
            "embed-dim" => self.model.embed_dim = parse(k, v)?,
            "w1" => self.model.w1 = parse(k, v)?,
            "w2" => self.model.w2 = parse(k, v)?,
            "lambda-cov" => self.model.lambda_cov = parse(k, v)?,
            "max-source-len" => self.model.max_source_len = parse(k, v)?,
            "max-target-len" => self.model.max_target_len = parse(k, v)?,
            "uniform-gamma-fallback" => self.model.uniform_gamma_fallback = parse_bool(k, v)?,
            "init-range" => self.model.init_range = parse(k, v)?,
            "precision" => {
                self.model.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(format!("invalid value `{v}` for `precision`: expected f32 or f64")),
                }
            }
            "learning-rate" => self.train.learning_rate = parse(k, v)?,
            "initial-accumulator" => self.train.initial_accumulator = parse(k, v)?,
            "batch-size" => self.train.batch_size = parse(k, v)?,
            "iterations" => self.train.max_iterations = parse(k, v)?,
            "grad-clip-norm" => {
                self.train.grad_clip_norm = match v {
                    "off" | "none" => None,
                    _ => Some(parse(k, v)?),
                }
            }
            "seed" => self.train.seed = parse(k, v)?,
            "checkpoint-every" => self.train.checkpoint_every = parse(k, v)?,
            "coverage-start-iteration" => self.train.coverage_start_iteration = parse(k, v)?,
            "threads" => self.train.threads = parse(k, v)?,
            "beam-size" => self.decode.beam_size = parse(k, v)?,
            "min-length" => self.decode.min_length = parse(k, v)?,
            "max-length" => self.decode.max_length = parse(k, v)?,
            "keyphrase-at-decode" => self.decode.keyphrase_at_decode = parse_bool(k, v)?,
            "length-normalize" => self.decode.length_normalize = parse_bool(k, v)?,
            "budget" => self.budget = parse(k, v)?,
            "max-vocab" => self.max_vocab = parse(k, v)?,
            "keyphrase-top-k" => self.keyphrase_top_k = parse(k, v)?,
            _ => return Err(format!("unknown config key `{key}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let bool_s = |b: bool| b.to_string();
        Some(match key {
            "hidden-dim" => self.model.hidden_dim.to_string(),
            "embed-dim" => self.model.embed_dim.to_string(),
            "w1" => self.model.w1.to_string(),
            "w2" => self.model.w2.to_string(),
            "lambda-cov" => self.model.lambda_cov.to_string(),
            "max-source-len" => self.model.max_source_len.to_string(),
            "max-target-len" => self.model.max_target_len.to_string(),
            "uniform-gamma-fallback" => bool_s(self.model.uniform_gamma_fallback),
            "init-range" => self.model.init_range.to_string(),
            "precision" => match self.model.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "learning-rate" => self.train.learning_rate.to_string(),
            "initial-accumulator" => self.train.initial_accumulator.to_string(),
            "batch-size" => self.train.batch_size.to_string(),
            "iterations" => self.train.max_iterations.to_string(),
            "grad-clip-norm" => self
                .train
                .grad_clip_norm
                .map_or_else(|| "off".into(), |c| c.to_string()),
            "seed" => self.train.seed.to_string(),
            "checkpoint-every" => self.train.checkpoint_every.to_string(),
            "coverage-start-iteration" => self.train.coverage_start_iteration.to_string(),
            "threads" => self.train.threads.to_string(),
            "beam-size" => self.decode.beam_size.to_string(),
            "min-length" => self.decode.min_length.to_string(),
            "max-length" => self.decode.max_length.to_string(),
            "keyphrase-at-decode" => bool_s(self.decode.keyphrase_at_decode),
            "length-normalize" => bool_s(self.decode.length_normalize),
            "budget" => self.budget.to_string(),
            "max-vocab" => self.max_vocab.to_string(),
            "keyphrase-top-k" => self.keyphrase_top_k.to_string(),
            _ => return None,
        })
    }

    /// Apply a config file on top of the current values.
    pub fn load_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                format!("{}:{}: expected `key = value`", path.display(), n + 1)
            })?;
            self.set(k, v)
                .map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        self.decode.validate().map_err(|e| e.to_string())?;
        if self.budget == 0 || self.max_vocab == 0 {
            return Err("budget and max-vocab must be positive".into());
        }
        Ok(())
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }
}

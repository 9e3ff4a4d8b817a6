//! `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; unknown keys are errors. The
//! model section determines the checkpoint fingerprint.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::beam::BeamConfig;
use crate::checkpoint::{fingerprint, Fingerprint};
use crate::encoder::{EncoderConfig, GraphSlot};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::ranker::RankerConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ranker: RankerConfig,
    pub beam: BeamConfig,
}

impl Default for Config {
    /// Desk-scale settings.
    fn default() -> Self {
        let mut c = Config {
            model: ModelConfig {
                encoder: EncoderConfig {
                    vocab: 2000,
                    d: 64,
                    d_ff: 128,
                    n_head: 4,
                    lprime: 4,
                    total_tokens: 256,
                    ..EncoderConfig::default()
                },
                dec_layers: 2,
                max_target: 100,
                seed: 1,
            },
            train: TrainConfig {
                lr_base: 0.5,
                warmup: 200,
                batch_tokens: 256,
                ..TrainConfig::default()
            },
            ranker: RankerConfig::default(),
            beam: BeamConfig::default(),
        };
        c.set_seed(1);
        c
    }
}

const MODEL_KEYS: &[&str] = &[
    "vocab",
    "d",
    "d_ff",
    "n_head",
    "n_local",
    "n_global",
    "lprime",
    "total_tokens",
    "use_paragraph_pos",
    "pool_heads",
    "use_global_layers",
    "graph",
    "normalized_pooling",
    "scale_inter_attention",
    "dec_layers",
    "max_target",
];

const OTHER_KEYS: &[&str] = &[
    "seed",
    "dropout",
    "steps",
    "accumulation",
    "batch_tokens",
    "smoothing",
    "lr_base",
    "warmup",
    "validate_every",
    "keep_best",
    "ranker_d_emb",
    "ranker_hidden",
    "ranker_dropout",
    "ranker_lr",
    "ranker_init_accumulator",
    "ranker_epochs",
    "ranker_batch",
    "ranker_max_tokens",
    "beam",
    "alpha",
    "max_len",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl Config {
    /// Settings from the paper's full-scale configuration.
    pub fn paper() -> Self {
        let mut c = Config::default();
        let e = &mut c.model.encoder;
        e.vocab = 32000;
        e.d = 256;
        e.d_ff = 1024;
        e.n_head = 8;
        e.lprime = 24;
        e.total_tokens = 1600;
        c.train.lr_base = 2.0;
        c.train.warmup = 8000;
        c.train.steps = 500_000;
        c.ranker.hidden = 256;
        c
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.ranker.seed = seed;
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.model.encoder;
        match key {
            "vocab" => {
                e.vocab = num(key, v)?;
                self.ranker.vocab = e.vocab;
            }
            "d" => e.d = num(key, v)?,
            "d_ff" => e.d_ff = num(key, v)?,
            "n_head" => e.n_head = num(key, v)?,
            "n_local" => e.n_local = num(key, v)?,
            "n_global" => e.n_global = num(key, v)?,
            "lprime" => e.lprime = num(key, v)?,
            "total_tokens" => e.total_tokens = num(key, v)?,
            "use_paragraph_pos" => e.use_paragraph_pos = flag(key, v)?,
            "pool_heads" => {
                let h: usize = num(key, v)?;
                e.pool_heads = (h > 0).then_some(h);
            }
            "use_global_layers" => e.use_global_layers = flag(key, v)?,
            "graph" => e.graph = GraphSlot::parse(v)?,
            "normalized_pooling" => e.normalized_pooling = flag(key, v)?,
            "scale_inter_attention" => e.scale_inter_attention = flag(key, v)?,
            "dec_layers" => self.model.dec_layers = num(key, v)?,
            "max_target" => self.model.max_target = num(key, v)?,
            "seed" => self.set_seed(num(key, v)?),
            "dropout" => self.train.dropout = num(key, v)?,
            "steps" => self.train.steps = num(key, v)?,
            "accumulation" => self.train.accumulation = num(key, v)?,
            "batch_tokens" => self.train.batch_tokens = num(key, v)?,
            "smoothing" => self.train.smoothing = num(key, v)?,
            "lr_base" => self.train.lr_base = num(key, v)?,
            "warmup" => self.train.warmup = num(key, v)?,
            "validate_every" => self.train.validate_every = num(key, v)?,
            "keep_best" => self.train.keep_best = num(key, v)?,
            "ranker_d_emb" => self.ranker.d_emb = num(key, v)?,
            "ranker_hidden" => self.ranker.hidden = num(key, v)?,
            "ranker_dropout" => self.ranker.dropout = num(key, v)?,
            "ranker_lr" => self.ranker.lr = num(key, v)?,
            "ranker_init_accumulator" => self.ranker.init_accumulator = num(key, v)?,
            "ranker_epochs" => self.ranker.epochs = num(key, v)?,
            "ranker_batch" => self.ranker.batch = num(key, v)?,
            "ranker_max_tokens" => self.ranker.max_tokens = num(key, v)?,
            "beam" => self.beam.beam = num(key, v)?,
            "alpha" => self.beam.alpha = num(key, v)?,
            "max_len" => self.beam.max_len = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let e = &self.model.encoder;
        match key {
            "vocab" => e.vocab.to_string(),
            "d" => e.d.to_string(),
            "d_ff" => e.d_ff.to_string(),
            "n_head" => e.n_head.to_string(),
            "n_local" => e.n_local.to_string(),
            "n_global" => e.n_global.to_string(),
            "lprime" => e.lprime.to_string(),
            "total_tokens" => e.total_tokens.to_string(),
            "use_paragraph_pos" => e.use_paragraph_pos.to_string(),
            "pool_heads" => e.pool_heads.unwrap_or(0).to_string(),
            "use_global_layers" => e.use_global_layers.to_string(),
            "graph" => e.graph.name().to_string(),
            "normalized_pooling" => e.normalized_pooling.to_string(),
            "scale_inter_attention" => e.scale_inter_attention.to_string(),
            "dec_layers" => self.model.dec_layers.to_string(),
            "max_target" => self.model.max_target.to_string(),
            "seed" => self.model.seed.to_string(),
            "dropout" => self.train.dropout.to_string(),
            "steps" => self.train.steps.to_string(),
            "accumulation" => self.train.accumulation.to_string(),
            "batch_tokens" => self.train.batch_tokens.to_string(),
            "smoothing" => self.train.smoothing.to_string(),
            "lr_base" => self.train.lr_base.to_string(),
            "warmup" => self.train.warmup.to_string(),
            "validate_every" => self.train.validate_every.to_string(),
            "keep_best" => self.train.keep_best.to_string(),
            "ranker_d_emb" => self.ranker.d_emb.to_string(),
            "ranker_hidden" => self.ranker.hidden.to_string(),
            "ranker_dropout" => self.ranker.dropout.to_string(),
            "ranker_lr" => self.ranker.lr.to_string(),
            "ranker_init_accumulator" => self.ranker.init_accumulator.to_string(),
            "ranker_epochs" => self.ranker.epochs.to_string(),
            "ranker_batch" => self.ranker.batch.to_string(),
            "ranker_max_tokens" => self.ranker.max_tokens.to_string(),
            "beam" => self.beam.beam.to_string(),
            "alpha" => self.beam.alpha.to_string(),
            "max_len" => self.beam.max_len.to_string(),
            _ => unreachable!("key lists and accessors agree"),
        }
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        self.validate()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text, path)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.encoder.validate()?;
        self.train.validate()?;
        if self.beam.beam == 0 || self.beam.alpha < 0.0 {
            return Err(Error::Config("beam must be positive and alpha nonnegative".into()));
        }
        Ok(())
    }

    fn render(&self, keys: &[&str]) -> String {
        let mut s = String::new();
        for k in keys {
            writeln!(s, "{k} = {}", self.get(k)).expect("string write");
        }
        s
    }

    /// Every setting, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = self.render(MODEL_KEYS);
        s.push_str(&self.render(OTHER_KEYS));
        s
    }

    pub fn model_text(&self) -> String {
        self.render(MODEL_KEYS)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint(&self.model_text())
    }
}

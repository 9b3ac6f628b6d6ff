//! `key = value` config files for the generator and the trainer.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors, as are values that fail to parse or validate. Every key has a
//! default, so an empty file is a valid config.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::SyntheticConfig;
use crate::error::{Error, Result};
use crate::loss::LossParams;
use crate::mining::MiningStrategy;
use crate::trainer::{Activation, TrainConfig};

/// Resolved settings, ordered by key.
pub type KeyValues = BTreeMap<String, String>;

pub fn parse_key_values(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, found `{line}`",
                i + 1
            ))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(Error::Config(format!(
                "line {}: key `{key}` set twice",
                i + 1
            )));
        }
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<KeyValues> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text)
}

struct Fields {
    kv: KeyValues,
}

impl Fields {
    fn new(kv: &KeyValues, known: &[&str]) -> Result<Self> {
        if let Some(key) = kv.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        Ok(Self { kv: kv.clone() })
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.kv.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.kv.get(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }
}

fn as_config_error(e: Error) -> Error {
    match e {
        Error::InvalidParams(msg) => Error::Config(msg),
        other => other,
    }
}

const SYNTHETIC_KEYS: &[&str] = &[
    "n_groups",
    "langs",
    "dim",
    "paraphrase_noise",
    "hard_negative_offset",
    "lang_offset",
    "cross_lang_ratio",
    "positive_ratio",
    "dev_fraction",
    "test_fraction",
    "seed",
];

pub fn synthetic_config(kv: &KeyValues) -> Result<SyntheticConfig> {
    let f = Fields::new(kv, SYNTHETIC_KEYS)?;
    let d = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        n_groups: f.get("n_groups", d.n_groups)?,
        langs: f.list("langs").unwrap_or(d.langs),
        dim: f.get("dim", d.dim)?,
        paraphrase_noise: f.get("paraphrase_noise", d.paraphrase_noise)?,
        hard_negative_offset: f.get("hard_negative_offset", d.hard_negative_offset)?,
        lang_offset: f.get("lang_offset", d.lang_offset)?,
        cross_lang_ratio: f.get("cross_lang_ratio", d.cross_lang_ratio)?,
        positive_ratio: f.get("positive_ratio", d.positive_ratio)?,
        dev_fraction: f.get("dev_fraction", d.dev_fraction)?,
        test_fraction: f.get("test_fraction", d.test_fraction)?,
        seed: f.get("seed", d.seed)?,
    };
    cfg.validate().map_err(as_config_error)?;
    Ok(cfg)
}

pub fn synthetic_key_values(cfg: &SyntheticConfig) -> KeyValues {
    [
        ("n_groups", cfg.n_groups.to_string()),
        ("langs", cfg.langs.join(",")),
        ("dim", cfg.dim.to_string()),
        ("paraphrase_noise", cfg.paraphrase_noise.to_string()),
        ("hard_negative_offset", cfg.hard_negative_offset.to_string()),
        ("lang_offset", cfg.lang_offset.to_string()),
        ("cross_lang_ratio", cfg.cross_lang_ratio.to_string()),
        ("positive_ratio", cfg.positive_ratio.to_string()),
        ("dev_fraction", cfg.dev_fraction.to_string()),
        ("test_fraction", cfg.test_fraction.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "mini_batch_size",
    "mega_batch_m",
    "scale",
    "margin",
    "hard_weight",
    "mining",
    "top_n",
    "tau",
    "cap",
    "learning_rate",
    "momentum",
    "seed",
    "languages",
    "head_dim",
    "activation",
];

/// Mining threshold used when `mining = threshold` and no `tau` is given.
pub const DEFAULT_TAU: f64 = 0.5;

/// `mining` accepts `top_n`, `threshold` or `none`.
pub fn train_config(kv: &KeyValues) -> Result<TrainConfig> {
    let f = Fields::new(kv, TRAIN_KEYS)?;
    let d = TrainConfig::default();
    let default_n = match d.mining {
        Some(MiningStrategy::TopN { n }) => n,
        _ => 5,
    };
    let mining = match f.get("mining", "top_n".to_string())?.as_str() {
        "top_n" => Some(MiningStrategy::TopN {
            n: f.get("top_n", default_n)?,
        }),
        "threshold" => Some(MiningStrategy::Threshold {
            tau: f.get("tau", DEFAULT_TAU)?,
            cap: match kv.get("cap") {
                None => None,
                Some(_) => Some(f.get("cap", 0usize)?),
            },
        }),
        "none" => None,
        other => {
            return Err(Error::Config(format!(
                "key `mining`: unknown strategy `{other}`"
            )))
        }
    };
    let cfg = TrainConfig {
        epochs: f.get("epochs", d.epochs)?,
        mini_batch_size: f.get("mini_batch_size", d.mini_batch_size)?,
        mega_batch_m: f.get("mega_batch_m", d.mega_batch_m)?,
        loss: LossParams {
            scale: f.get("scale", d.loss.scale)?,
            margin: f.get("margin", d.loss.margin)?,
            hard_weight: f.get("hard_weight", d.loss.hard_weight)?,
        },
        mining,
        learning_rate: f.get("learning_rate", d.learning_rate)?,
        momentum: f.get("momentum", d.momentum)?,
        seed: f.get("seed", d.seed)?,
        language_include: f
            .list("languages")
            .map(|l| l.into_iter().collect::<BTreeSet<_>>()),
        head_dim: match kv.get("head_dim") {
            None => None,
            Some(_) => Some(f.get("head_dim", 0usize)?),
        },
        activation: f.get("activation", Activation::Identity)?,
    };
    cfg.validate().map_err(as_config_error)?;
    Ok(cfg)
}

pub fn train_key_values(cfg: &TrainConfig) -> KeyValues {
    let mut kv: KeyValues = [
        ("epochs", cfg.epochs.to_string()),
        ("mini_batch_size", cfg.mini_batch_size.to_string()),
        ("mega_batch_m", cfg.mega_batch_m.to_string()),
        ("scale", cfg.loss.scale.to_string()),
        ("margin", cfg.loss.margin.to_string()),
        ("hard_weight", cfg.loss.hard_weight.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("momentum", cfg.momentum.to_string()),
        ("seed", cfg.seed.to_string()),
        ("activation", cfg.activation.as_str().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut set = |k: &str, v: String| {
        kv.insert(k.to_string(), v);
    };
    match cfg.mining {
        Some(MiningStrategy::TopN { n }) => {
            set("mining", "top_n".into());
            set("top_n", n.to_string());
        }
        Some(MiningStrategy::Threshold { tau, cap }) => {
            set("mining", "threshold".into());
            set("tau", tau.to_string());
            if let Some(cap) = cap {
                set("cap", cap.to_string());
            }
        }
        None => set("mining", "none".into()),
    }
    if let Some(langs) = &cfg.language_include {
        set(
            "languages",
            langs.iter().cloned().collect::<Vec<_>>().join(","),
        );
    }
    if let Some(d) = cfg.head_dim {
        set("head_dim", d.to_string());
    }
    kv
}

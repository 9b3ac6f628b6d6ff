//! Seeded multilingual cluster generator for desk-scale experiments.
//!
//! Each group has a meaning center `c` on the unit sphere shared by every
//! language. Per language `l` with fixed offset `o_l` it emits
//!
//! - `src`: `c + o_l`, the translation of the group's source sentence,
//! - `para`: `c + o_l + noise`, a paraphrase,
//! - `hard`: `h + o_l + noise`, where `h` sits at angle `δ` from `c`.
//!
//! Noise is isotropic Gaussian with expected norm `σ_p`. Positive pairs are
//! `(src_l, para_l)`, `(src_l, src_l')` and `(src_l, para_l')`; labelled
//! negatives are `(src_l, hard_l')`, topped up with random cross-group pairs
//! when more negatives are needed to reach `positive_ratio`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{BaseEmbeddings, Corpus, Dataset, PairRecord, Sentence, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_groups: usize,
    pub langs: Vec<String>,
    pub dim: usize,
    /// Expected norm `σ_p` of paraphrase noise.
    pub paraphrase_noise: f64,
    /// Angle `δ` in radians between a group center and its hard-negative center.
    pub hard_negative_offset: f64,
    /// Norm of each language's fixed offset vector.
    pub lang_offset: f64,
    /// Probability of emitting each cross-language pair.
    pub cross_lang_ratio: f64,
    /// Target fraction of label-1 records.
    pub positive_ratio: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_groups: 50,
            langs: ["en", "de", "fr", "ko"].map(String::from).to_vec(),
            dim: 32,
            paraphrase_noise: 0.1,
            hard_negative_offset: 0.35,
            lang_offset: 0.3,
            cross_lang_ratio: 1.0,
            positive_ratio: 0.5,
            dev_fraction: 0.2,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.n_groups < 2 {
            return bad(format!("n_groups must be >= 2, got {}", self.n_groups));
        }
        if self.dim < 4 {
            return bad(format!("dim must be >= 4, got {}", self.dim));
        }
        if self.langs.is_empty() || self.langs.iter().any(String::is_empty) {
            return bad("langs must be a non-empty list of codes".into());
        }
        if self.langs.iter().collect::<HashSet<_>>().len() != self.langs.len() {
            return bad("langs contains duplicates".into());
        }
        if !(self.paraphrase_noise > 0.0) {
            return bad(format!(
                "paraphrase_noise must be > 0, got {}",
                self.paraphrase_noise
            ));
        }
        if !(self.hard_negative_offset > 0.0 && self.hard_negative_offset < std::f64::consts::PI) {
            return bad(format!(
                "hard_negative_offset must lie in (0, π), got {}",
                self.hard_negative_offset
            ));
        }
        if !(self.lang_offset >= 0.0) {
            return bad(format!(
                "lang_offset must be >= 0, got {}",
                self.lang_offset
            ));
        }
        if !(0.0..=1.0).contains(&self.cross_lang_ratio) {
            return bad(format!(
                "cross_lang_ratio must lie in [0, 1], got {}",
                self.cross_lang_ratio
            ));
        }
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return bad(format!(
                "positive_ratio must lie in (0, 1), got {}",
                self.positive_ratio
            ));
        }
        let (d, t) = (self.dev_fraction, self.test_fraction);
        if !(d >= 0.0 && t >= 0.0 && d + t < 1.0) {
            return bad(format!(
                "dev_fraction + test_fraction must be in [0, 1), got {d} + {t}"
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim, 1.0);
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            return unit(v);
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[derive(Clone, Copy)]
enum Kind {
    Src,
    Para,
    Hard,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Src => "src",
            Kind::Para => "para",
            Kind::Hard => "hard",
        }
    }
}

fn sentence_id(group: usize, kind: Kind, lang: &str) -> String {
    format!("g{group:04}-{}-{lang}", kind.as_str())
}

/// Builds a corpus, labelled pairs and base embeddings. Identical configs
/// yield bit-identical output.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let noise_std = cfg.paraphrase_noise / (dim as f64).sqrt();

    let offsets: Vec<Vec<f64>> = cfg
        .langs
        .iter()
        .map(|_| {
            random_unit(&mut rng, dim)
                .into_iter()
                .map(|x| x * cfg.lang_offset)
                .collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.n_groups).collect();
    order.shuffle(&mut rng);
    let n_dev = (cfg.n_groups as f64 * cfg.dev_fraction).round() as usize;
    let n_test = (cfg.n_groups as f64 * cfg.test_fraction).round() as usize;
    let n_test = n_test.min(cfg.n_groups.saturating_sub(n_dev + 1));
    let mut split_of = vec![Split::Train; cfg.n_groups];
    for (rank, &g) in order.iter().enumerate() {
        if rank < n_dev {
            split_of[g] = Split::Dev;
        } else if rank < n_dev + n_test {
            split_of[g] = Split::Test;
        }
    }

    let mut sentences = Vec::new();
    let mut ids = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    let mut push = |group: usize, kind: Kind, lang: &str, v: Vec<f64>| {
        let id = sentence_id(group, kind, lang);
        sentences.push(Sentence {
            id: id.clone(),
            lang: lang.to_string(),
            group_id: format!("g{group:04}-{}", kind.as_str()),
            text: format!("{} {group} {lang}", kind.as_str()),
        });
        ids.push(id);
        data.extend(unit(v).into_iter().map(|x| x as f32));
    };

    for g in 0..cfg.n_groups {
        let center = random_unit(&mut rng, dim);
        // hard-negative center at angle δ from the group center
        let mut dir = random_unit(&mut rng, dim);
        let along: f64 = dir.iter().zip(&center).map(|(a, b)| a * b).sum();
        dir = unit(
            dir.iter()
                .zip(&center)
                .map(|(a, b)| a - along * b)
                .collect(),
        );
        let (sin, cos) = cfg.hard_negative_offset.sin_cos();
        let hard_center: Vec<f64> = center
            .iter()
            .zip(&dir)
            .map(|(c, u)| cos * c + sin * u)
            .collect();

        for (lang, offset) in cfg.langs.iter().zip(&offsets) {
            let src = add(&center, offset);
            let para = add(&src, &gaussian(&mut rng, dim, noise_std));
            let hard = add(
                &add(&hard_center, offset),
                &gaussian(&mut rng, dim, noise_std),
            );
            push(g, Kind::Src, lang, src);
            push(g, Kind::Para, lang, para);
            push(g, Kind::Hard, lang, hard);
        }
    }

    let pair = |a: String, b: String, label: bool, split: Split| PairRecord {
        anchor_id: a,
        candidate_id: b,
        label,
        split,
    };
    let mut positives = Vec::new();
    let mut hard_pool = Vec::new();
    for g in 0..cfg.n_groups {
        let split = split_of[g];
        for (i, la) in cfg.langs.iter().enumerate() {
            let src = sentence_id(g, Kind::Src, la);
            for (j, lb) in cfg.langs.iter().enumerate() {
                let same = i == j;
                if !same && !rng.random_bool(cfg.cross_lang_ratio) {
                    continue;
                }
                if j > i {
                    positives.push(pair(
                        src.clone(),
                        sentence_id(g, Kind::Src, lb),
                        true,
                        split,
                    ));
                }
                positives.push(pair(
                    src.clone(),
                    sentence_id(g, Kind::Para, lb),
                    true,
                    split,
                ));
                hard_pool.push(pair(
                    src.clone(),
                    sentence_id(g, Kind::Hard, lb),
                    false,
                    split,
                ));
            }
        }
    }

    // negatives needed for the configured label balance
    let r = cfg.positive_ratio;
    let wanted = (positives.len() as f64 * (1.0 - r) / r).round() as usize;
    let mut negatives = if wanted <= hard_pool.len() {
        let mut picks: Vec<usize> = (0..hard_pool.len()).collect();
        picks.shuffle(&mut rng);
        picks.truncate(wanted);
        picks.sort_unstable();
        picks.into_iter().map(|k| hard_pool[k].clone()).collect()
    } else {
        hard_pool
    };
    let mut taken: HashSet<(String, String)> = negatives
        .iter()
        .map(|p: &PairRecord| (p.anchor_id.clone(), p.candidate_id.clone()))
        .collect();
    let groups_in: Vec<Vec<usize>> = Split::ALL
        .iter()
        .map(|s| (0..cfg.n_groups).filter(|&g| split_of[g] == *s).collect())
        .collect();
    let mut attempts = 0usize;
    while negatives.len() < wanted {
        attempts += 1;
        if attempts > 1000 * wanted.max(1) {
            return Err(Error::InvalidParams(
                "cannot draw enough distinct negatives; lower positive_ratio".into(),
            ));
        }
        let g = rng.random_range(0..cfg.n_groups);
        let split = split_of[g];
        let peers = &groups_in[split as usize];
        let other = if peers.len() > 1 {
            peers[rng.random_range(0..peers.len())]
        } else {
            rng.random_range(0..cfg.n_groups)
        };
        let la = &cfg.langs[rng.random_range(0..cfg.langs.len())];
        let lb = &cfg.langs[rng.random_range(0..cfg.langs.len())];
        if other == g {
            continue;
        }
        let key = (
            sentence_id(g, Kind::Src, la),
            sentence_id(other, Kind::Para, lb),
        );
        if taken.insert(key.clone()) {
            negatives.push(pair(key.0, key.1, false, split));
        }
    }

    let mut records = positives;
    records.extend(negatives);
    records.sort_by_key(|r| r.split);
    Ok(Dataset {
        corpus: Corpus::new(sentences)?,
        records,
        embeddings: BaseEmbeddings::new(ids, dim, data)?,
    })
}

//! Projection head over frozen base embeddings, trained with the
//! additive-margin loss and mega-batch hard-negative mining.
//!
//! One epoch: shuffle the positive training pairs with the seeded
//! generator, pack them into mini-batches, group every `M` mini-batches into
//! a mega-batch, mine hard negatives with a single head snapshot, then take
//! one SGD-with-momentum step per mini-batch.
//!
//! Packing keeps anchors unique within a mega-batch and meaning clusters
//! unique within a mini-batch, so no in-batch negative is a known
//! paraphrase of its anchor. Pairs that do not fit are deferred to the next
//! mega-batch in shuffled order.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{filter_languages, BaseEmbeddings, Corpus, PairRecord, Split};
use crate::error::{Error, Result};
use crate::eval::{self, ThresholdStrategy, UniformScope};
use crate::geometry::{self, Embedding};
use crate::loss::{self, LossBatch, LossParams};
use crate::mining::{self, MiniBatchBlueprint, MiningStrategy};
use crate::par;

pub const HEAD_FILE: &str = "head.bin";
pub const BEST_HEAD_FILE: &str = "best_head.bin";
pub const HISTORY_FILE: &str = "history.tsv";
const HEAD_MAGIC: &[u8; 4] = b"HEAD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!(
                "unknown activation `{other}` (expected identity or tanh)"
            )),
        }
    }
}

/// `x -> normalize(act(W x + b))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out x d_in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl ProjectionHead {
    pub fn new(
        d_in: usize,
        d_out: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if d_in == 0 || d_out < 2 {
            return Err(Error::InvalidParams(format!(
                "head shape {d_out}x{d_in} needs d_in >= 1 and d_out >= 2"
            )));
        }
        if weights.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::InvalidParams(format!(
                "head {d_out}x{d_in} needs {} weights and {d_out} biases, got {} and {}",
                d_in * d_out,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams(
                "head parameters must be finite".into(),
            ));
        }
        Ok(Self {
            d_in,
            d_out,
            weights,
            bias,
            activation,
        })
    }

    pub fn identity(d: usize, activation: Activation) -> Result<Self> {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Self::new(d, d, w, vec![0.0; d], activation)
    }

    /// Weights uniform in `[-1/sqrt(d_in), 1/sqrt(d_in)]`, zero bias.
    pub fn init<R: Rng>(
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = (0..d_in * d_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self::new(d_in, d_out, w, vec![0.0; d_out], activation)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, base: &[f64]) -> Vec<f64> {
        (0..self.d_out)
            .map(|r| {
                geometry::dot(&self.weights[r * self.d_in..(r + 1) * self.d_in], base)
                    + self.bias[r]
            })
            .collect()
    }

    fn check_input(&self, base: &[f64]) -> Result<()> {
        if base.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                actual: base.len(),
            });
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(HEAD_MAGIC)?;
        w.write_all(&(self.d_in as u32).to_le_bytes())?;
        w.write_all(&(self.d_out as u32).to_le_bytes())?;
        w.write_all(&[self.activation.tag()])?;
        for x in self.weights.iter().chain(&self.bias) {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io(HEAD_FILE, e))?;
        if bytes.len() < 13 || &bytes[..4] != HEAD_MAGIC {
            return Err(Error::Format(format!("{HEAD_FILE}: missing HEAD header")));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
        let (d_in, d_out) = (word(4), word(8));
        let activation = Activation::from_tag(bytes[12]).ok_or_else(|| {
            Error::Format(format!("{HEAD_FILE}: unknown activation tag {}", bytes[12]))
        })?;
        let body = &bytes[13..];
        let expected = (d_in * d_out + d_out) * 4;
        if body.len() != expected {
            return Err(Error::Format(format!(
                "{HEAD_FILE}: expected {expected} parameter bytes for a {d_out}x{d_in} head, found {}",
                body.len()
            )));
        }
        let params: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (w, b) = params.split_at(d_in * d_out);
        Self::new(d_in, d_out, w.to_vec(), b.to_vec(), activation)
            .map_err(|e| Error::Format(format!("{HEAD_FILE}: {e}")))
    }
}

pub fn encode(head: &ProjectionHead, base: &[f64]) -> Result<Embedding> {
    head.check_input(base)?;
    let a: Vec<f64> = head
        .pre_activation(base)
        .into_iter()
        .map(|z| head.activation.apply(z))
        .collect();
    geometry::l2_normalize(&a)
}

/// Encodes each distinct id once.
pub fn encode_ids<'a>(
    head: &ProjectionHead,
    base: &BaseEmbeddings,
    ids: impl IntoIterator<Item = &'a str>,
) -> Result<HashMap<String, Embedding>> {
    let mut seen = HashSet::new();
    let unique: Vec<&str> = ids.into_iter().filter(|id| seen.insert(*id)).collect();
    let encoded = par::map(&unique, |id| encode(head, &base.vector(id)?));
    unique
        .into_iter()
        .zip(encoded)
        .map(|(id, e)| e.map(|e| (id.to_string(), e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Backpropagates `upstream[i] = ∂L/∂encode(bases[i])` to the head
/// parameters, through the normalization map and the activation.
pub fn head_gradient(
    head: &ProjectionHead,
    bases: &[Vec<f64>],
    upstream: &[Vec<f64>],
) -> Result<HeadGradient> {
    if bases.len() != upstream.len() {
        return Err(Error::IndexMismatch {
            expected: bases.len(),
            actual: upstream.len(),
        });
    }
    for (x, g) in bases.iter().zip(upstream) {
        head.check_input(x)?;
        if g.len() != head.d_out {
            return Err(Error::DimensionMismatch {
                expected: head.d_out,
                actual: g.len(),
            });
        }
    }
    let (d_in, d_out) = (head.d_in, head.d_out);
    let partials = par::map_chunks(bases.len(), |range| -> Result<HeadGradient> {
        let mut gw = vec![0.0; d_in * d_out];
        let mut gb = vec![0.0; d_out];
        for i in range {
            let (x, up) = (&bases[i], &upstream[i]);
            let z = head.pre_activation(x);
            let a: Vec<f64> = z.iter().map(|&v| head.activation.apply(v)).collect();
            let r = geometry::norm(&a);
            if !(r >= 1e-12) {
                return Err(Error::ZeroVector);
            }
            let e: Vec<f64> = a.iter().map(|v| v / r).collect();
            let along = geometry::dot(&e, up);
            for o in 0..d_out {
                let gz = (up[o] - along * e[o]) / r * head.activation.derivative(z[o]);
                if gz == 0.0 {
                    continue;
                }
                gb[o] += gz;
                for (w, xi) in gw[o * d_in..(o + 1) * d_in].iter_mut().zip(x) {
                    *w += gz * xi;
                }
            }
        }
        Ok(HeadGradient {
            weights: gw,
            bias: gb,
        })
    });
    let mut total = HeadGradient {
        weights: vec![0.0; d_in * d_out],
        bias: vec![0.0; d_out],
    };
    for part in partials {
        let part = part?;
        for (t, p) in total.weights.iter_mut().zip(&part.weights) {
            *t += p;
        }
        for (t, p) in total.bias.iter_mut().zip(&part.bias) {
            *t += p;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub mini_batch_size: usize,
    /// Mini-batches aggregated per mega-batch.
    pub mega_batch_m: usize,
    pub loss: LossParams,
    /// `None` trains on dataset hard negatives and in-batch negatives only.
    pub mining: Option<MiningStrategy>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Languages allowed in training pairs; `None` keeps all.
    pub language_include: Option<BTreeSet<String>>,
    /// Output dimension of the head; `None` keeps the base dimension.
    pub head_dim: Option<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            mini_batch_size: 8,
            mega_batch_m: 20,
            loss: LossParams::default(),
            mining: Some(MiningStrategy::TopN { n: 5 }),
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 7,
            language_include: None,
            head_dim: None,
            activation: Activation::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.mini_batch_size < 2 {
            return bad(format!(
                "mini_batch_size must be >= 2, got {}",
                self.mini_batch_size
            ));
        }
        if self.mega_batch_m == 0 {
            return bad("mega_batch_m must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if matches!(self.head_dim, Some(d) if d < 2) {
            return bad("head_dim must be >= 2".into());
        }
        if matches!(&self.language_include, Some(l) if l.is_empty()) {
            return bad("language_include is empty".into());
        }
        self.loss.validate()?;
        if let Some(m) = &self.mining {
            m.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub dev_accuracy: f64,
    pub align: f64,
    pub uniform: f64,
    pub steps: usize,
    /// Positive pairs that could not be packed into a mini-batch.
    pub dropped_pairs: usize,
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// `epoch loss dev_acc align uniform`; wall-clock is left out so the
    /// file is reproducible.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch\tloss\tdev_acc\talign\tuniform")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                e.epoch, e.loss, e.dev_accuracy, e.align, e.uniform
            )?;
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochStats>, e| match best {
                Some(b) if b.dev_accuracy >= e.dev_accuracy => Some(b),
                _ => Some(e),
            })
    }
}

/// Training pairs and lookup tables derived once per fit.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub base: &'a BaseEmbeddings,
    pub corpus: &'a Corpus,
    /// Positive training pairs after language filtering.
    pub positives: Vec<PairRecord>,
    /// Labelled hard negatives per sentence id.
    pub dataset_hards: HashMap<String, Vec<String>>,
    /// Meaning cluster per sentence id.
    pub clusters: HashMap<String, u64>,
    pub dev: Vec<PairRecord>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Union of labelled paraphrase links and shared translation groups.
pub fn meaning_clusters(corpus: &Corpus, positives: &[PairRecord]) -> HashMap<String, u64> {
    let ids: Vec<&str> = corpus.sentences().iter().map(|s| s.id.as_str()).collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    let union = |a: usize, b: usize, parent: &mut Vec<usize>| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    };
    let mut group_root: HashMap<&str, usize> = HashMap::new();
    for (i, s) in corpus.sentences().iter().enumerate() {
        match group_root.get(s.group_id.as_str()) {
            Some(&r) => union(r, i, &mut parent),
            None => {
                group_root.insert(&s.group_id, i);
            }
        }
    }
    for p in positives.iter().filter(|p| p.label) {
        if let (Some(&a), Some(&b)) = (
            index.get(p.anchor_id.as_str()),
            index.get(p.candidate_id.as_str()),
        ) {
            union(a, b, &mut parent);
        }
    }
    (0..ids.len())
        .map(|i| (ids[i].to_string(), find(&mut parent, i) as u64))
        .collect()
}

impl<'a> TrainData<'a> {
    pub fn prepare(
        corpus: &'a Corpus,
        records: &[PairRecord],
        base: &'a BaseEmbeddings,
        language_include: Option<&BTreeSet<String>>,
    ) -> Result<Self> {
        let train: Vec<PairRecord> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .cloned()
            .collect();
        let train = match language_include {
            Some(include) => filter_languages(&train, corpus, include)?.records,
            None => train,
        };
        let positives: Vec<PairRecord> = train.iter().filter(|r| r.label).cloned().collect();
        if positives.is_empty() {
            return Err(Error::EmptyResult("no positive training pairs".into()));
        }
        let mut dataset_hards: HashMap<String, Vec<String>> = HashMap::new();
        for r in train.iter().filter(|r| !r.label) {
            dataset_hards
                .entry(r.anchor_id.clone())
                .or_default()
                .push(r.candidate_id.clone());
            dataset_hards
                .entry(r.candidate_id.clone())
                .or_default()
                .push(r.anchor_id.clone());
        }
        let dev: Vec<PairRecord> = records
            .iter()
            .filter(|r| r.split == Split::Dev)
            .cloned()
            .collect();
        for id in train
            .iter()
            .chain(&dev)
            .flat_map(|r| [&r.anchor_id, &r.candidate_id])
        {
            if base.get(id).is_none() {
                return Err(Error::MissingEmbedding(id.clone()));
            }
        }
        if base.dim() < 2 {
            return Err(Error::InvalidDimension(base.dim()));
        }
        Ok(Self {
            base,
            corpus,
            clusters: meaning_clusters(corpus, &train),
            positives,
            dataset_hards,
            dev,
        })
    }
}

/// Head parameters, optimizer velocity, and the epoch random stream.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub head: ProjectionHead,
    velocity_w: Vec<f64>,
    velocity_b: Vec<f64>,
    rng: ChaCha8Rng,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn new(d_in: usize, config: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d_out = config.head_dim.unwrap_or(d_in);
        let head = ProjectionHead::init(d_in, d_out, config.activation, &mut rng)?;
        Ok(Self::from_head(head, rng))
    }

    pub fn with_head(head: ProjectionHead, seed: u64) -> Self {
        Self::from_head(head, ChaCha8Rng::seed_from_u64(seed))
    }

    fn from_head(head: ProjectionHead, rng: ChaCha8Rng) -> Self {
        Self {
            velocity_w: vec![0.0; head.weights.len()],
            velocity_b: vec![0.0; head.bias.len()],
            head,
            rng,
            epochs_done: 0,
        }
    }

    fn step(&mut self, grad: &HeadGradient, lr: f64, momentum: f64) {
        for ((w, v), g) in self
            .head
            .weights
            .iter_mut()
            .zip(&mut self.velocity_w)
            .zip(&grad.weights)
        {
            *v = momentum * *v - lr * g;
            *w += *v;
        }
        for ((b, v), g) in self
            .head
            .bias
            .iter_mut()
            .zip(&mut self.velocity_b)
            .zip(&grad.bias)
        {
            *v = momentum * *v - lr * g;
            *b += *v;
        }
    }
}

/// Packs shuffled pair indices into mega-batches of mini-batches.
///
/// Anchors are unique per mega-batch and clusters unique per mini-batch.
/// Returns the packing and the number of pairs that could not be placed.
pub fn pack_epoch(
    order: &[usize],
    pairs: &[PairRecord],
    clusters: &HashMap<String, u64>,
    mini_batch_size: usize,
    mega_batch_m: usize,
) -> (Vec<Vec<Vec<usize>>>, usize) {
    let cluster_of = |i: usize| {
        clusters
            .get(&pairs[i].anchor_id)
            .copied()
            .unwrap_or(u64::MAX - i as u64)
    };
    let mut pending: Vec<usize> = order.to_vec();
    let mut megas = Vec::new();
    while !pending.is_empty() {
        let mut taken = vec![false; pending.len()];
        let mut anchors: HashSet<&str> = HashSet::new();
        let mut minis: Vec<Vec<usize>> = Vec::new();
        while minis.len() < mega_batch_m {
            let mut mini = Vec::with_capacity(mini_batch_size);
            let mut mini_clusters = HashSet::new();
            for (slot, &i) in pending.iter().enumerate() {
                if mini.len() == mini_batch_size {
                    break;
                }
                if taken[slot]
                    || anchors.contains(pairs[i].anchor_id.as_str())
                    || mini_clusters.contains(&cluster_of(i))
                {
                    continue;
                }
                mini_clusters.insert(cluster_of(i));
                mini.push(slot);
            }
            if mini.len() < 2 {
                break;
            }
            for &slot in &mini {
                taken[slot] = true;
                anchors.insert(&pairs[pending[slot]].anchor_id);
            }
            minis.push(mini.into_iter().map(|slot| pending[slot]).collect());
        }
        if minis.is_empty() {
            break;
        }
        megas.push(minis);
        pending = pending
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(&i, _)| i)
            .collect();
    }
    (megas, pending.len())
}

fn blueprint_step(
    state: &mut TrainState,
    data: &TrainData<'_>,
    blueprint: &MiniBatchBlueprint,
    config: &TrainConfig,
) -> Result<f64> {
    let ids = blueprint.members.iter().flat_map(|m| {
        std::iter::once(m.anchor.as_str())
            .chain([m.positive.as_str()])
            .chain(m.hard_negatives.iter().map(String::as_str))
    });
    let encoded = encode_ids(&state.head, data.base, ids)?;
    let batch = LossBatch::new(
        blueprint
            .members
            .iter()
            .map(|m| encoded[&m.anchor].clone())
            .collect(),
        blueprint
            .members
            .iter()
            .map(|m| encoded[&m.positive].clone())
            .collect(),
        blueprint
            .members
            .iter()
            .map(|m| {
                m.hard_negatives
                    .iter()
                    .map(|h| encoded[h].clone())
                    .collect()
            })
            .collect(),
    )?;
    let (value, grad) = loss::ams_loss_and_grad(&batch, &config.loss)?;

    let mut bases = Vec::new();
    let mut upstream = Vec::new();
    for (m, g) in blueprint.members.iter().zip(grad.anchors) {
        bases.push(data.base.vector(&m.anchor)?);
        upstream.push(g);
    }
    for (m, g) in blueprint.members.iter().zip(grad.positives) {
        bases.push(data.base.vector(&m.positive)?);
        upstream.push(g);
    }
    for (m, gs) in blueprint.members.iter().zip(grad.hard_negatives) {
        for (h, g) in m.hard_negatives.iter().zip(gs) {
            bases.push(data.base.vector(h)?);
            upstream.push(g);
        }
    }
    let hg = head_gradient(&state.head, &bases, &upstream)?;
    state.step(&hg, config.learning_rate, config.momentum);
    Ok(value.total)
}

/// Runs one epoch and returns its stats. Dev metrics are left at NaN; see
/// [`dev_metrics`].
pub fn train_epoch(
    state: &mut TrainState,
    data: &TrainData<'_>,
    config: &TrainConfig,
) -> Result<EpochStats> {
    let started = Instant::now();
    let mut order: Vec<usize> = (0..data.positives.len()).collect();
    order.shuffle(&mut state.rng);
    let (megas, dropped) = pack_epoch(
        &order,
        &data.positives,
        &data.clusters,
        config.mini_batch_size,
        config.mega_batch_m,
    );
    let use_hards = config.loss.hard_weight > 0.0;

    let mut losses = Vec::new();
    for minis in &megas {
        let records: Vec<Vec<PairRecord>> = minis
            .iter()
            .map(|m| m.iter().map(|&i| data.positives[i].clone()).collect())
            .collect();
        let clusters = records
            .iter()
            .flatten()
            .map(|r| data.clusters.get(&r.anchor_id).copied().unwrap_or(u64::MAX))
            .collect();
        let mega = mining::aggregate_mega_batch(&records)?.with_clusters(clusters)?;

        let mined = match (&config.mining, use_hards) {
            (Some(strategy), true) => {
                let ids = mega
                    .members()
                    .iter()
                    .flat_map(|m| [m.anchor.as_str(), m.positive.as_str()]);
                let snapshot = encode_ids(&state.head, data.base, ids)?;
                mining::mine(&mega, &snapshot, strategy)?
            }
            _ => vec![Vec::new(); mega.len()],
        };
        let dataset_hards: Vec<Vec<String>> = mega
            .members()
            .iter()
            .map(|m| match use_hards {
                true => data
                    .dataset_hards
                    .get(&m.anchor)
                    .cloned()
                    .unwrap_or_default(),
                false => Vec::new(),
            })
            .collect();

        for blueprint in mining::split_mini_batches(&mega, &mined, &dataset_hards)? {
            losses.push(blueprint_step(state, data, &blueprint, config)?);
        }
    }
    state.epochs_done += 1;
    let loss = if losses.is_empty() {
        f64::NAN
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    Ok(EpochStats {
        epoch: state.epochs_done,
        loss,
        dev_accuracy: f64::NAN,
        align: f64::NAN,
        uniform: f64::NAN,
        steps: losses.len(),
        dropped_pairs: dropped,
        wall_clock: started.elapsed(),
    })
}

/// Dev accuracy at the max-accuracy threshold, plus alignment and
/// uniformity over dev pairs.
pub fn dev_metrics(head: &ProjectionHead, data: &TrainData<'_>) -> Result<(f64, f64, f64)> {
    let scored = eval::score_pairs(head, data.base, data.corpus, &data.dev)?;
    let acc = eval::calibrate_threshold(&scored, ThresholdStrategy::MaxAccuracy)?.achieved;
    let (align, uniform) = eval::embedding_quality(head, data.base, &data.dev, UniformScope::All)?;
    Ok((
        acc,
        align.map_or(f64::NAN, |a| a.0),
        uniform.map_or(f64::NAN, |u| u.0),
    ))
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub head: ProjectionHead,
    pub best_head: ProjectionHead,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

pub fn fit(
    corpus: &Corpus,
    records: &[PairRecord],
    base: &BaseEmbeddings,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    let data = TrainData::prepare(corpus, records, base, config.language_include.as_ref())?;
    if data.dev.is_empty() {
        return Err(Error::EmptyInput("dev split is empty"));
    }
    let mut state = TrainState::new(base.dim(), config)?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ProjectionHead)> = None;
    for _ in 0..config.epochs {
        let mut stats = train_epoch(&mut state, &data, config)?;
        if !stats.loss.is_finite() {
            return Err(Error::InvalidParams(format!(
                "epoch {} produced a non-finite loss",
                stats.epoch
            )));
        }
        let (acc, align, uniform) = dev_metrics(&state.head, &data)?;
        stats.dev_accuracy = acc;
        stats.align = align;
        stats.uniform = uniform;
        if best.as_ref().is_none_or(|b| acc > b.0) {
            best = Some((acc, stats.epoch, state.head.clone()));
        }
        history.epochs.push(stats);
    }
    let (_, best_epoch, best_head) = best.expect("at least one epoch");
    Ok(FitOutcome {
        head: state.head,
        best_head,
        best_epoch,
        history,
    })
}

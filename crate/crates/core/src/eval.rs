//! Threshold calibration, per-class accuracy, and embedding-space quality.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::dataset::{BaseEmbeddings, Corpus, PairClass, PairRecord, Split};
use crate::error::{Error, Result};
use crate::geometry::{self, Embedding};
use crate::par;
use crate::trainer::{encode_ids, ProjectionHead};

pub const REPORT_FILE: &str = "report.tsv";
const REPORT_HEADER: &str = "metric\tclass\tvalue\tcount";

/// Default exponent of the alignment loss.
pub const ALIGN_ALPHA: f64 = 2.0;
/// Default temperature of the uniformity loss.
pub const UNIFORM_T: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: PairRecord,
    pub score: f64,
    pub pair_class: PairClass,
}

/// Cosine between the encoded anchor and candidate of every pair.
pub fn score_pairs(
    head: &ProjectionHead,
    base: &BaseEmbeddings,
    corpus: &Corpus,
    pairs: &[PairRecord],
) -> Result<Vec<ScoredPair>> {
    let encoded = encode_ids(
        head,
        base,
        pairs
            .iter()
            .flat_map(|p| [p.anchor_id.as_str(), p.candidate_id.as_str()]),
    )?;
    par::map(pairs, |p| {
        let score = geometry::cosine(&encoded[&p.anchor_id], &encoded[&p.candidate_id])?;
        Ok(ScoredPair {
            pair: p.clone(),
            score,
            pair_class: corpus.classify(p)?,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThresholdStrategy {
    MaxAccuracy,
    Eer,
    MaxF1,
}

impl ThresholdStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThresholdStrategy::MaxAccuracy => "max_acc",
            ThresholdStrategy::Eer => "eer",
            ThresholdStrategy::MaxF1 => "max_f1",
        }
    }
}

impl fmt::Display for ThresholdStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThresholdStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "max_acc" => Ok(ThresholdStrategy::MaxAccuracy),
            "eer" => Ok(ThresholdStrategy::Eer),
            "max_f1" => Ok(ThresholdStrategy::MaxF1),
            other => Err(format!(
                "unknown strategy `{other}` (expected max_acc, eer or max_f1)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub strategy: ThresholdStrategy,
    pub threshold: f64,
    /// Accuracy, F1 or EER at `threshold` on the calibration data.
    pub achieved: f64,
    /// Split the threshold was fit on, when known.
    pub calibrated_on: Option<Split>,
}

/// Confusion counts at one threshold; prediction is `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / (self.tp + self.fp + self.tn + self.fn_) as f64
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// False-accept rate.
    pub fn far(&self) -> f64 {
        self.fp as f64 / (self.fp + self.tn) as f64
    }

    /// False-reject rate.
    pub fn frr(&self) -> f64 {
        self.fn_ as f64 / (self.tp + self.fn_) as f64
    }
}

/// `-1`, the midpoints between adjacent distinct sorted scores, then `+1`.
pub fn candidate_thresholds(sorted_scores: &[f64]) -> Vec<f64> {
    let mut out = vec![-1.0];
    let mut prev: Option<f64> = None;
    for &s in sorted_scores {
        if let Some(p) = prev {
            if s != p {
                out.push((p + s) / 2.0);
            }
        }
        prev = Some(s);
    }
    out.push(1.0);
    out
}

pub fn calibrate_scores(
    scores: &[f64],
    labels: &[bool],
    strategy: ThresholdStrategy,
) -> Result<ThresholdReport> {
    if scores.len() != labels.len() {
        return Err(Error::IndexMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels(u8::from(positives > 0)));
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted: Vec<f64> = order.iter().map(|p| p.0).collect();
    // positives strictly below each prefix boundary
    let mut pos_prefix = Vec::with_capacity(order.len() + 1);
    pos_prefix.push(0usize);
    for &(_, l) in &order {
        pos_prefix.push(pos_prefix.last().unwrap() + l as usize);
    }

    let confusion_at = |t: f64| {
        let below = sorted.partition_point(|&s| s < t);
        let tp = positives - pos_prefix[below];
        let predicted = sorted.len() - below;
        Confusion {
            tp,
            fp: predicted - tp,
            fn_: positives - tp,
            tn: negatives - (predicted - tp),
        }
    };

    let mut best: Option<(f64, f64, f64)> = None; // (key to minimize, threshold, achieved)
    for t in candidate_thresholds(&sorted) {
        let c = confusion_at(t);
        let (key, achieved) = match strategy {
            ThresholdStrategy::MaxAccuracy => (-c.accuracy(), c.accuracy()),
            ThresholdStrategy::MaxF1 => (-c.f1(), c.f1()),
            ThresholdStrategy::Eer => ((c.far() - c.frr()).abs(), (c.far() + c.frr()) / 2.0),
        };
        if best.is_none_or(|b| key < b.0) {
            best = Some((key, t, achieved));
        }
    }
    let (_, threshold, achieved) = best.expect("at least two candidate thresholds");
    Ok(ThresholdReport {
        strategy,
        threshold,
        achieved,
        calibrated_on: None,
    })
}

/// Fits a threshold on `scored` and tags it with the split all pairs share.
pub fn calibrate_threshold(
    scored: &[ScoredPair],
    strategy: ThresholdStrategy,
) -> Result<ThresholdReport> {
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.pair.label).collect();
    let mut report = calibrate_scores(&scores, &labels, strategy)?;
    if let Some(first) = scored.first() {
        let split = first.pair.split;
        if scored.iter().all(|s| s.pair.split == split) {
            report.calibrated_on = Some(split);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassAccuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub count: usize,
}

impl ClassAccuracy {
    fn new(correct: usize, count: usize) -> Self {
        Self {
            accuracy: correct as f64 / count as f64,
            correct,
            count,
        }
    }
}

/// A metric value and the number of items it was computed over.
pub type Metric = (f64, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub overall: ClassAccuracy,
    /// Only classes with at least one pair are present.
    pub per_class: BTreeMap<PairClass, ClassAccuracy>,
    /// Alignment loss and the number of positive pairs it covers.
    pub align: Option<Metric>,
    /// Uniformity loss and the number of points it covers.
    pub uniform: Option<Metric>,
}

pub fn evaluate(scored: &[ScoredPair], threshold: f64) -> Result<EvalReport> {
    if scored.is_empty() {
        return Err(Error::EmptyInput("no scored pairs to evaluate"));
    }
    let mut tally: BTreeMap<PairClass, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for s in scored {
        let hit = (s.score >= threshold) == s.pair.label;
        correct += hit as usize;
        let entry = tally.entry(s.pair_class).or_default();
        entry.0 += hit as usize;
        entry.1 += 1;
    }
    Ok(EvalReport {
        threshold,
        overall: ClassAccuracy::new(correct, scored.len()),
        per_class: tally
            .into_iter()
            .map(|(c, (k, n))| (c, ClassAccuracy::new(k, n)))
            .collect(),
        align: None,
        uniform: None,
    })
}

fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Mean of `|u - v|^alpha` over positive pairs.
pub fn align_loss_with(pairs: &[(Embedding, Embedding)], alpha: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput(
            "alignment needs at least one positive pair",
        ));
    }
    let mut acc = 0.0;
    for (u, v) in pairs {
        if u.dim() != v.dim() {
            return Err(Error::DimensionMismatch {
                expected: u.dim(),
                actual: v.dim(),
            });
        }
        let d2 = squared_distance(u.as_slice(), v.as_slice());
        acc += if alpha == 2.0 {
            d2
        } else {
            d2.powf(alpha / 2.0)
        };
    }
    Ok(acc / pairs.len() as f64)
}

pub fn align_loss(pairs: &[(Embedding, Embedding)]) -> Result<f64> {
    align_loss_with(pairs, ALIGN_ALPHA)
}

/// `log` of the mean Gaussian potential `exp(-t |u - v|^2)` over all
/// unordered pairs of distinct points.
pub fn uniform_loss_with(points: &[Embedding], t: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::EmptyInput("uniformity needs at least two points"));
    }
    let d = points[0].dim();
    if let Some(bad) = points.iter().find(|p| p.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.dim(),
        });
    }
    let n = points.len();
    let rows = par::map_range(n, |i| {
        let u = points[i].as_slice();
        let mut acc = 0.0;
        for v in &points[i + 1..] {
            acc += (-t * squared_distance(u, v.as_slice())).exp();
        }
        acc
    });
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((rows.iter().sum::<f64>() / pairs).ln())
}

pub fn uniform_loss(points: &[Embedding]) -> Result<f64> {
    uniform_loss_with(points, UNIFORM_T)
}

/// Which embeddings enter the uniformity loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UniformScope {
    /// Every sentence referenced by the evaluated pairs.
    #[default]
    All,
    /// Only sentences of positive pairs.
    Positives,
}

/// Alignment over positive pairs and uniformity over the sentences in
/// `pairs`, each encoded once, in first-appearance order.
pub fn embedding_quality(
    head: &ProjectionHead,
    base: &BaseEmbeddings,
    pairs: &[PairRecord],
    scope: UniformScope,
) -> Result<(Option<Metric>, Option<Metric>)> {
    let encoded = encode_ids(
        head,
        base,
        pairs
            .iter()
            .flat_map(|p| [p.anchor_id.as_str(), p.candidate_id.as_str()]),
    )?;
    let positive: Vec<(Embedding, Embedding)> = pairs
        .iter()
        .filter(|p| p.label)
        .map(|p| {
            (
                encoded[&p.anchor_id].clone(),
                encoded[&p.candidate_id].clone(),
            )
        })
        .collect();
    let align = if positive.is_empty() {
        None
    } else {
        Some((align_loss(&positive)?, positive.len()))
    };

    let mut seen = HashMap::new();
    let mut points = Vec::new();
    for p in pairs {
        if scope == UniformScope::Positives && !p.label {
            continue;
        }
        for id in [&p.anchor_id, &p.candidate_id] {
            if seen.insert(id.as_str(), ()).is_none() {
                points.push(encoded[id].clone());
            }
        }
    }
    let uniform = if points.len() < 2 {
        None
    } else {
        Some((uniform_loss(&points)?, points.len()))
    };
    Ok((align, uniform))
}

impl EvalReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        writeln!(w, "threshold\t-\t{}\t-", self.threshold)?;
        writeln!(
            w,
            "accuracy\toverall\t{}\t{}",
            self.overall.accuracy, self.overall.count
        )?;
        for (class, acc) in &self.per_class {
            writeln!(w, "accuracy\t{class}\t{}\t{}", acc.accuracy, acc.count)?;
        }
        if let Some((v, n)) = self.align {
            writeln!(w, "align\t-\t{v}\t{n}")?;
        }
        if let Some((v, n)) = self.uniform {
            writeln!(w, "uniform\t-\t{v}\t{n}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::MalformedLine {
            file: REPORT_FILE.to_string(),
            line,
            reason,
        };
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h == REPORT_HEADER => {}
            _ => return Err(bad(1, "missing report header".into())),
        }
        let mut threshold = None;
        let mut overall = None;
        let mut per_class = BTreeMap::new();
        let (mut align, mut uniform) = (None, None);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io(REPORT_FILE, e))?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(
                    line_no,
                    format!("expected 4 fields, found {}", f.len()),
                ));
            }
            let value: f64 = f[2]
                .parse()
                .map_err(|_| bad(line_no, format!("bad value `{}`", f[2])))?;
            let count = || {
                f[3].parse::<usize>()
                    .map_err(|_| bad(line_no, format!("bad count `{}`", f[3])))
            };
            match (f[0], f[1]) {
                ("threshold", _) => threshold = Some(value),
                ("accuracy", "overall") => {
                    let n = count()?;
                    overall = Some(ClassAccuracy {
                        accuracy: value,
                        correct: (value * n as f64).round() as usize,
                        count: n,
                    });
                }
                ("accuracy", class) => {
                    let class: PairClass = class.parse().map_err(|e| bad(line_no, e))?;
                    let n = count()?;
                    per_class.insert(
                        class,
                        ClassAccuracy {
                            accuracy: value,
                            correct: (value * n as f64).round() as usize,
                            count: n,
                        },
                    );
                }
                ("align", _) => align = Some((value, count()?)),
                ("uniform", _) => uniform = Some((value, count()?)),
                (metric, _) => return Err(bad(line_no, format!("unknown metric `{metric}`"))),
            }
        }
        Ok(EvalReport {
            threshold: threshold.ok_or_else(|| bad(0, "missing threshold row".into()))?,
            overall: overall.ok_or_else(|| bad(0, "missing overall accuracy row".into()))?,
            per_class,
            align,
            uniform,
        })
    }
}

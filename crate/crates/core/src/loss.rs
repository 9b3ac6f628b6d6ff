//! Additive Margin Scale loss over in-batch and hard negatives.
//!
//! For anchor `x_i` with positive `y_i`, in-batch negatives `y_n (n != i)`
//! and hard negatives `h_ik`:
//!
//! ```text
//! p_i = exp(s * cos(θ(x_i, y_i) + m))
//! n_i = Σ_{n != i} exp(s * cos θ(x_i, y_n))
//! h_i = Σ_k exp(s * cos θ(x_i, h_ik))
//! L   = -(1/N) Σ_i log(p_i / (p_i + n_i + g * h_i))
//! ```
//!
//! The margin only touches the positive logit. Per-anchor losses are
//! evaluated in log space so large scales do not overflow.
//!
//! Gradients are taken with respect to the raw vectors fed through
//! `z -> z / |z|`; at unit-norm inputs that is the tangent projection of the
//! gradient with respect to the normalized vector.

use crate::error::{Error, Result};
use crate::geometry::{self, dot, Embedding};
use crate::par;

/// Cosines beyond this magnitude are clamped before differentiating `acos`.
const ACOS_SAFE: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    /// Logit scale `s`.
    pub scale: f64,
    /// Additive angular margin `m`, radians.
    pub margin: f64,
    /// Hard-negative weight `g`.
    pub hard_weight: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            scale: 0.5,
            margin: 0.5,
            hard_weight: 1.0,
        }
    }
}

impl LossParams {
    pub fn new(scale: f64, margin: f64, hard_weight: f64) -> Result<Self> {
        let p = Self {
            scale,
            margin,
            hard_weight,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "scale must be > 0, got {}",
                self.scale
            )));
        }
        if !(self.margin >= 0.0 && self.margin < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParams(format!(
                "margin must lie in [0, π/2), got {}",
                self.margin
            )));
        }
        if !(self.hard_weight >= 0.0 && self.hard_weight.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "hard weight must be >= 0, got {}",
                self.hard_weight
            )));
        }
        Ok(())
    }
}

/// Anchors, their positives, and a possibly ragged list of hard negatives
/// per anchor.
#[derive(Debug, Clone)]
pub struct LossBatch {
    anchors: Vec<Embedding>,
    positives: Vec<Embedding>,
    hard_negatives: Vec<Vec<Embedding>>,
}

impl LossBatch {
    pub fn new(
        anchors: Vec<Embedding>,
        positives: Vec<Embedding>,
        hard_negatives: Vec<Vec<Embedding>>,
    ) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for (what, len) in [
            ("positives", positives.len()),
            ("hard negative lists", hard_negatives.len()),
        ] {
            if len != anchors.len() {
                return Err(Error::InvalidParams(format!(
                    "{what}: expected {} entries, got {len}",
                    anchors.len()
                )));
            }
        }
        let d = anchors[0].dim();
        let all = anchors
            .iter()
            .chain(&positives)
            .chain(hard_negatives.iter().flatten());
        for e in all {
            if e.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: e.dim(),
                });
            }
        }
        Ok(Self {
            anchors,
            positives,
            hard_negatives,
        })
    }

    /// Batch without hard negatives.
    pub fn in_batch_only(anchors: Vec<Embedding>, positives: Vec<Embedding>) -> Result<Self> {
        let k = anchors.len();
        Self::new(anchors, positives, vec![Vec::new(); k])
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[Embedding] {
        &self.anchors
    }

    pub fn positives(&self) -> &[Embedding] {
        &self.positives
    }

    pub fn hard_negatives(&self) -> &[Vec<Embedding>] {
        &self.hard_negatives
    }
}

/// The three exponentiated components for one anchor. `h` is unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTerms {
    pub p: f64,
    pub n: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_anchor: Vec<f64>,
    pub terms: Vec<AnchorTerms>,
}

/// Gradient of the mean loss, one vector per embedding slot of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub hard_negatives: Vec<Vec<Vec<f64>>>,
}

fn positive_logit(cos: f64, params: &LossParams) -> f64 {
    params.scale * (cos.acos() + params.margin).cos()
}

pub fn positive_term(x: &Embedding, y: &Embedding, params: &LossParams) -> Result<f64> {
    let c = geometry::cosine(x, y)?;
    Ok(positive_logit(c, params).exp())
}

/// Sum of `exp(s cos θ)` over `others`. The caller excludes the paired
/// positive.
pub fn negative_term(x: &Embedding, in_batch: &[Embedding], params: &LossParams) -> Result<f64> {
    let mut acc = 0.0;
    for e in in_batch {
        acc += (params.scale * geometry::cosine(x, e)?).exp();
    }
    Ok(acc)
}

/// Same form as [`negative_term`]; the hard weight is applied by the loss.
pub fn hard_term(x: &Embedding, hards: &[Embedding], params: &LossParams) -> Result<f64> {
    negative_term(x, hards, params)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for &x in xs {
        acc += (x - max).exp();
    }
    max + acc.ln()
}

/// Per-anchor logits: `[positive, in-batch..., hard...]`, where in-batch
/// skips the anchor's own index and hard logits carry `ln g`.
struct AnchorLogits {
    pos_cos: f64,
    neg_cos: Vec<f64>,
    hard_cos: Vec<f64>,
    logits: Vec<f64>,
}

fn anchor_logits(
    batch: &LossBatch,
    sims: &geometry::SimilarityMatrix,
    i: usize,
    params: &LossParams,
) -> AnchorLogits {
    let s = params.scale;
    let x = batch.anchors[i].as_slice();
    let pos_cos = sims.get(i, i);
    let neg_cos: Vec<f64> = (0..batch.len())
        .filter(|&n| n != i)
        .map(|n| sims.get(i, n))
        .collect();
    let hard_cos: Vec<f64> = batch.hard_negatives[i]
        .iter()
        .map(|h| dot(x, h.as_slice()).clamp(-1.0, 1.0))
        .collect();

    let mut logits = Vec::with_capacity(1 + neg_cos.len() + hard_cos.len());
    logits.push(positive_logit(pos_cos, params));
    logits.extend(neg_cos.iter().map(|c| s * c));
    if params.hard_weight > 0.0 {
        let lg = params.hard_weight.ln();
        logits.extend(hard_cos.iter().map(|c| s * c + lg));
    }
    AnchorLogits {
        pos_cos,
        neg_cos,
        hard_cos,
        logits,
    }
}

fn evaluate(batch: &LossBatch, params: &LossParams) -> Result<(Vec<AnchorLogits>, LossValue)> {
    params.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sims = geometry::pairwise_cosine(&batch.anchors, &batch.positives)?;
    let rows = par::map_range(batch.len(), |i| anchor_logits(batch, &sims, i, params));

    let s = params.scale;
    let mut per_anchor = Vec::with_capacity(rows.len());
    let mut terms = Vec::with_capacity(rows.len());
    for row in &rows {
        per_anchor.push(log_sum_exp(&row.logits) - row.logits[0]);
        terms.push(AnchorTerms {
            p: row.logits[0].exp(),
            n: row.neg_cos.iter().map(|c| (s * c).exp()).sum(),
            h: row.hard_cos.iter().map(|c| (s * c).exp()).sum(),
        });
    }
    let total = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;
    Ok((
        rows,
        LossValue {
            total,
            per_anchor,
            terms,
        },
    ))
}

pub fn ams_loss(batch: &LossBatch, params: &LossParams) -> Result<LossValue> {
    evaluate(batch, params).map(|(_, v)| v)
}

pub fn ams_loss_grad(batch: &LossBatch, params: &LossParams) -> Result<LossGradient> {
    ams_loss_and_grad(batch, params).map(|(_, g)| g)
}

/// `∂L/∂(logit)` for every logit of one anchor, already divided by `N`.
struct AnchorCoefs {
    /// Coefficient on the cosine of the positive pair.
    pos: f64,
    /// Indexed by batch position; the anchor's own slot is 0.
    neg: Vec<f64>,
    hard: Vec<f64>,
}

fn anchor_coefs(row: &AnchorLogits, i: usize, n: usize, params: &LossParams) -> AnchorCoefs {
    let s = params.scale;
    let inv_n = 1.0 / n as f64;
    let lse = log_sum_exp(&row.logits);
    let w = |k: usize| (row.logits[k] - lse).exp();

    // d/dc [s cos(acos(c) + m)] = s sin(acos(c) + m) / sqrt(1 - c²)
    let c = row.pos_cos.clamp(-ACOS_SAFE, ACOS_SAFE);
    let dpos_dc = s * (c.acos() + params.margin).sin() / (1.0 - c * c).sqrt();
    let pos = (w(0) - 1.0) * dpos_dc * inv_n;

    let mut neg = vec![0.0; n];
    let mut k = 1;
    for (slot, coef) in neg.iter_mut().enumerate() {
        if slot == i {
            continue;
        }
        *coef = w(k) * s * inv_n;
        k += 1;
    }
    let hard = if params.hard_weight > 0.0 {
        (0..row.hard_cos.len())
            .map(|j| w(k + j) * s * inv_n)
            .collect()
    } else {
        vec![0.0; row.hard_cos.len()]
    };
    AnchorCoefs { pos, neg, hard }
}

/// `acc += coef * (other - cos * own)`: the tangent-space derivative of
/// `cos(own, other)` with respect to `own`.
#[inline]
fn add_tangent(acc: &mut [f64], coef: f64, other: &[f64], own: &[f64], cos: f64) {
    if coef == 0.0 {
        return;
    }
    for ((a, o), w) in acc.iter_mut().zip(other).zip(own) {
        *a += coef * (o - cos * w);
    }
}

/// Loss value and its gradient in one pass.
pub fn ams_loss_and_grad(
    batch: &LossBatch,
    params: &LossParams,
) -> Result<(LossValue, LossGradient)> {
    let (rows, value) = evaluate(batch, params)?;
    let n = batch.len();
    let d = batch.anchors[0].dim();
    let coefs: Vec<AnchorCoefs> = par::map_range(n, |i| anchor_coefs(&rows[i], i, n, params));

    let anchors = par::map_range(n, |i| {
        let x = batch.anchors[i].as_slice();
        let mut g = vec![0.0; d];
        add_tangent(
            &mut g,
            coefs[i].pos,
            batch.positives[i].as_slice(),
            x,
            dot(x, batch.positives[i].as_slice()),
        );
        for m in (0..n).filter(|&m| m != i) {
            let y = batch.positives[m].as_slice();
            add_tangent(&mut g, coefs[i].neg[m], y, x, dot(x, y));
        }
        for (h, &coef) in batch.hard_negatives[i].iter().zip(&coefs[i].hard) {
            add_tangent(&mut g, coef, h.as_slice(), x, dot(x, h.as_slice()));
        }
        g
    });

    let positives = par::map_range(n, |m| {
        let y = batch.positives[m].as_slice();
        let mut g = vec![0.0; d];
        for i in 0..n {
            let x = batch.anchors[i].as_slice();
            let coef = if i == m {
                coefs[i].pos
            } else {
                coefs[i].neg[m]
            };
            add_tangent(&mut g, coef, x, y, dot(x, y));
        }
        g
    });

    let hard_negatives = par::map_range(n, |i| {
        let x = batch.anchors[i].as_slice();
        batch.hard_negatives[i]
            .iter()
            .zip(&coefs[i].hard)
            .map(|(h, &coef)| {
                let mut g = vec![0.0; d];
                add_tangent(&mut g, coef, x, h.as_slice(), dot(x, h.as_slice()));
                g
            })
            .collect()
    });

    Ok((
        value,
        LossGradient {
            anchors,
            positives,
            hard_negatives,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::l2_normalize;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{E, FRAC_PI_2};

    fn e(v: &[f64]) -> Embedding {
        l2_normalize(v).unwrap()
    }

    fn p(s: f64, m: f64, g: f64) -> LossParams {
        LossParams::new(s, m, g).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).unwrap().into_inner()
    }

    /// Raw vectors of a batch, so finite differences can perturb them.
    #[derive(Clone)]
    struct RawBatch {
        anchors: Vec<Vec<f64>>,
        positives: Vec<Vec<f64>>,
        hards: Vec<Vec<Vec<f64>>>,
    }

    impl RawBatch {
        fn random(rng: &mut ChaCha8Rng, d: usize, n: usize, kmax: usize) -> Self {
            Self {
                anchors: (0..n).map(|_| random_unit(rng, d)).collect(),
                positives: (0..n).map(|_| random_unit(rng, d)).collect(),
                hards: (0..n)
                    .map(|_| {
                        let k = rng.random_range(0..=kmax);
                        (0..k).map(|_| random_unit(rng, d)).collect()
                    })
                    .collect(),
            }
        }

        fn batch(&self) -> LossBatch {
            LossBatch::new(
                self.anchors.iter().map(|v| e(v)).collect(),
                self.positives.iter().map(|v| e(v)).collect(),
                self.hards
                    .iter()
                    .map(|hs| hs.iter().map(|v| e(v)).collect())
                    .collect(),
            )
            .unwrap()
        }

        fn slots(&mut self) -> Vec<&mut Vec<f64>> {
            let mut out: Vec<&mut Vec<f64>> = Vec::new();
            out.extend(self.anchors.iter_mut());
            out.extend(self.positives.iter_mut());
            out.extend(self.hards.iter_mut().flatten());
            out
        }
    }

    fn flatten(g: &LossGradient) -> Vec<Vec<f64>> {
        let mut out = g.anchors.clone();
        out.extend(g.positives.iter().cloned());
        out.extend(g.hard_negatives.iter().flatten().cloned());
        out
    }

    /// Straight-line evaluation of the loss from its defining formulas.
    fn scalar_loss(raw: &RawBatch, params: &LossParams) -> f64 {
        let unit = |v: &Vec<f64>| -> Vec<f64> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        };
        let cosv = |a: &Vec<f64>, b: &Vec<f64>| -> f64 {
            let (a, b) = (unit(a), unit(b));
            a.iter()
                .zip(&b)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                .clamp(-1.0, 1.0)
        };
        let (s, m, g) = (params.scale, params.margin, params.hard_weight);
        let n = raw.anchors.len();
        let mut total = 0.0;
        for i in 0..n {
            let pi = (s * (cosv(&raw.anchors[i], &raw.positives[i]).acos() + m).cos()).exp();
            let mut ni = 0.0;
            for j in 0..n {
                if j != i {
                    ni += (s * cosv(&raw.anchors[i], &raw.positives[j]).acos().cos()).exp();
                }
            }
            let mut hi = 0.0;
            for h in &raw.hards[i] {
                hi += (s * cosv(&raw.anchors[i], h).acos().cos()).exp();
            }
            total += -(pi / (pi + ni + g * hi)).ln();
        }
        total / n as f64
    }

    fn finite_difference(raw: &RawBatch, params: &LossParams, step: f64) -> Vec<Vec<f64>> {
        let mut work = raw.clone();
        let shape: Vec<usize> = work.slots().iter().map(|v| v.len()).collect();
        let mut out = Vec::new();
        for (slot, &d) in shape.iter().enumerate() {
            let mut g = vec![0.0; d];
            for (k, gk) in g.iter_mut().enumerate() {
                let orig = work.slots()[slot][k];
                work.slots()[slot][k] = orig + step;
                let up = ams_loss(&work.batch(), params).unwrap().total;
                work.slots()[slot][k] = orig - step;
                let down = ams_loss(&work.batch(), params).unwrap().total;
                work.slots()[slot][k] = orig;
                *gk = (up - down) / (2.0 * step);
            }
            out.push(g);
        }
        out
    }

    fn max_rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn params_validation() {
        assert_eq!(LossParams::default(), p(0.5, 0.5, 1.0));
        assert!(LossParams::new(0.0, 0.5, 1.0).is_err());
        assert!(LossParams::new(1.0, FRAC_PI_2, 1.0).is_err());
        assert!(LossParams::new(1.0, -0.1, 1.0).is_err());
        assert!(LossParams::new(1.0, 0.1, -1.0).is_err());
        assert!(LossParams::new(1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn positive_term_examples() {
        let x = e(&[1.0, 0.0, 0.0]);
        let y = e(&[0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(
            positive_term(&x, &x, &p(1.0, 0.0, 1.0)).unwrap(),
            E,
            epsilon = 1e-12
        );
        // exp(0.5 * cos 0.5)
        assert_abs_diff_eq!(
            positive_term(&x, &x, &p(0.5, 0.5, 1.0)).unwrap(),
            1.550_831_565_506_9,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            positive_term(&x, &y, &p(1.0, 0.0, 1.0)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn negative_and_hard_term_examples() {
        let x = e(&[1.0, 0.0]);
        let orth = e(&[0.0, 1.0]);
        let anti = e(&[-1.0, 0.0]);
        let s1 = p(1.0, 0.0, 1.0);
        assert_eq!(negative_term(&x, &[], &s1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            negative_term(&x, std::slice::from_ref(&orth), &s1).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            negative_term(&x, &[x.clone(), x.clone()], &s1).unwrap(),
            5.436_563_657,
            epsilon = 1e-9
        );
        assert_eq!(hard_term(&x, &[], &s1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            hard_term(&x, std::slice::from_ref(&x), &p(0.5, 0.5, 1.0)).unwrap(),
            1.648_721,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            hard_term(&x, &[orth, anti], &s1).unwrap(),
            1.367_879,
            epsilon = 1e-6
        );
        assert!(negative_term(&x, &[e(&[1.0, 0.0, 0.0])], &s1).is_err());
    }

    #[test]
    fn single_pair_without_negatives_has_zero_loss() {
        let x = e(&[0.2, 0.7, -0.1]);
        let y = e(&[0.5, 0.1, 0.3]);
        let batch = LossBatch::in_batch_only(vec![x], vec![y]).unwrap();
        let v = ams_loss(&batch, &LossParams::default()).unwrap();
        assert_eq!(v.total, 0.0);
        assert_eq!(v.terms[0].n, 0.0);
        assert_eq!(v.terms[0].h, 0.0);
        assert!(v.terms[0].p > 0.0);
    }

    #[test]
    fn symmetric_pair_gives_ln2() {
        // every cross-similarity equals 0.6
        let a = e(&[0.6, 0.8]);
        let x0 = e(&[1.0, 0.0]);
        let batch = LossBatch::in_batch_only(vec![x0.clone(), x0], vec![a.clone(), a]).unwrap();
        let v = ams_loss(&batch, &p(1.3, 0.0, 1.0)).unwrap();
        for l in &v.per_anchor {
            assert_abs_diff_eq!(*l, std::f64::consts::LN_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_and_mismatched_batches() {
        assert!(matches!(
            LossBatch::new(vec![], vec![], vec![]),
            Err(Error::EmptyBatch)
        ));
        let r = LossBatch::in_batch_only(vec![e(&[1.0, 0.0])], vec![e(&[1.0, 0.0, 0.0])]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let raw = RawBatch::random(&mut rng, 6, 4, 3);
            let params = LossParams::default();
            let v = ams_loss(&raw.batch(), &params).unwrap();
            assert_abs_diff_eq!(v.total, scalar_loss(&raw, &params), epsilon = 1e-12);
            let mean = v.per_anchor.iter().sum::<f64>() / v.per_anchor.len() as f64;
            assert_abs_diff_eq!(v.total, mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn large_scale_does_not_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = RawBatch::random(&mut rng, 8, 4, 2);
        let v = ams_loss(&raw.batch(), &p(2000.0, 0.3, 1.0)).unwrap();
        assert!(v.total.is_finite() && v.total >= 0.0);
    }

    #[test]
    fn stationary_configuration_has_zero_gradient() {
        let x = e(&[0.3, -0.4, 0.5, 0.1]);
        let batch = LossBatch::in_batch_only(vec![x.clone()], vec![x]).unwrap();
        let g = ams_loss_grad(&batch, &LossParams::default()).unwrap();
        assert!(g.anchors[0]
            .iter()
            .chain(&g.positives[0])
            .all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw = RawBatch::random(&mut rng, 8, 4, 3);
        let params = LossParams::default();
        let analytic = flatten(&ams_loss_grad(&raw.batch(), &params).unwrap());
        let numeric = finite_difference(&raw, &params, 1e-4);
        assert!(max_rel_err(&analytic, &numeric) <= 1e-4);
    }

    #[test]
    fn doubled_scale_gradient_tracks_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = RawBatch::random(&mut rng, 8, 4, 3);
        let base = LossParams::default();
        let doubled = p(2.0 * base.scale, base.margin, base.hard_weight);
        let g1 = flatten(&ams_loss_grad(&raw.batch(), &base).unwrap());
        let g2 = flatten(&ams_loss_grad(&raw.batch(), &doubled).unwrap());
        assert!(max_rel_err(&g2, &finite_difference(&raw, &doubled, 1e-4)) <= 1e-4);
        assert!(max_rel_err(&g1, &g2) > 1e-3);
    }

    #[test]
    fn reduces_to_softmax_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let raw = RawBatch::random(&mut rng, 5, 4, 2);
            let batch = raw.batch();
            let params = p(3.0, 0.0, 0.0);
            let v = ams_loss(&batch, &params).unwrap();
            let n = batch.len();
            let mut ce = 0.0;
            for i in 0..n {
                let row: Vec<f64> = (0..n)
                    .map(|j| {
                        3.0 * geometry::cosine(&batch.anchors()[i], &batch.positives()[j]).unwrap()
                    })
                    .collect();
                let z: f64 = row.iter().map(|x| x.exp()).sum();
                ce += -(row[i].exp() / z).ln();
            }
            assert_abs_diff_eq!(v.total, ce / n as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn margin_and_hard_weight_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let mut raw = RawBatch::random(&mut rng, 6, 4, 3);
            raw.hards[0].push(random_unit(&mut rng, 6));
            let batch = raw.batch();
            let lo = ams_loss(&batch, &p(1.0, 0.1, 1.0)).unwrap().total;
            let hi = ams_loss(&batch, &p(1.0, 0.2, 1.0)).unwrap().total;
            let angles_ok = (0..batch.len()).all(|i| {
                let t = geometry::angle(&batch.anchors()[i], &batch.positives()[i]).unwrap();
                t > 0.0 && t < std::f64::consts::PI - 0.2
            });
            if angles_ok {
                assert!(hi >= lo);
            }
            let g1 = ams_loss(&batch, &p(1.0, 0.1, 0.5)).unwrap().total;
            let g2 = ams_loss(&batch, &p(1.0, 0.1, 1.5)).unwrap().total;
            assert!(g2 > g1);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let raw = RawBatch::random(&mut rng, 6, 5, 3);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted = RawBatch {
            anchors: perm.iter().map(|&i| raw.anchors[i].clone()).collect(),
            positives: perm.iter().map(|&i| raw.positives[i].clone()).collect(),
            hards: perm.iter().map(|&i| raw.hards[i].clone()).collect(),
        };
        let params = LossParams::default();
        let a = ams_loss(&raw.batch(), &params).unwrap();
        let b = ams_loss(&permuted.batch(), &params).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_abs_diff_eq!(b.per_anchor[k], a.per_anchor[i], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a.total, b.total, epsilon = 1e-12);
    }

    #[test]
    fn identical_pair_gradient_stays_finite() {
        let x = e(&[0.1, 0.9, -0.3]);
        let other = e(&[-0.5, 0.2, 0.8]);
        let batch = LossBatch::new(
            vec![x.clone(), other.clone()],
            vec![x.clone(), other],
            vec![vec![x], vec![]],
        )
        .unwrap();
        let g = ams_loss_grad(&batch, &LossParams::default()).unwrap();
        assert!(flatten(&g).iter().flatten().all(|v| v.is_finite()));
    }
}

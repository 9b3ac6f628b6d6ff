//! Vector primitives on the unit hypersphere.

use crate::error::{Error, Result};
use crate::par;

const MIN_NORM: f64 = 1e-12;

/// A unit-norm embedding vector. Only constructible through [`l2_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Dot product accumulated in ascending index order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Embedding> {
    if v.len() < 2 {
        return Err(Error::InvalidDimension(v.len()));
    }
    let n = norm(v);
    if !(n >= MIN_NORM) {
        return Err(Error::ZeroVector);
    }
    Ok(Embedding(v.iter().map(|x| x / n).collect()))
}

fn check_dims(u: &Embedding, v: &Embedding) -> Result<()> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    check_dims(u, v)?;
    Ok(dot(&u.0, &v.0).clamp(-1.0, 1.0))
}

/// Angle between two unit vectors in `[0, π]`.
pub fn angle(u: &Embedding, v: &Embedding) -> Result<f64> {
    cosine(u, v).map(f64::acos)
}

/// Dense row-major matrix of cosines between anchors (rows) and candidates
/// (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn pairwise_cosine(
    anchors: &[Embedding],
    candidates: &[Embedding],
) -> Result<SimilarityMatrix> {
    if anchors.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyInput(
            "pairwise_cosine needs anchors and candidates",
        ));
    }
    let d = anchors[0].dim();
    for e in anchors.iter().chain(candidates) {
        if e.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: e.dim(),
            });
        }
    }
    let rows = par::map(anchors, |a| {
        candidates
            .iter()
            .map(|c| dot(&a.0, &c.0).clamp(-1.0, 1.0))
            .collect::<Vec<_>>()
    });
    Ok(SimilarityMatrix {
        rows: anchors.len(),
        cols: candidates.len(),
        data: rows.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn e(v: &[f64]) -> Embedding {
        l2_normalize(v).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(e(&[3.0, 4.0]).as_slice(), &[0.6, 0.8]);
        assert_eq!(e(&[0.0, 0.0, 5.0]).as_slice(), &[0.0, 0.0, 1.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            l2_normalize(&[1.0]),
            Err(Error::InvalidDimension(1))
        ));
        assert!(matches!(
            l2_normalize(&[f64::NAN, 1.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn cosine_and_angle_examples() {
        let x = e(&[1.0, 0.0]);
        let y = e(&[0.0, 1.0]);
        let z = e(&[-1.0, 0.0]);
        assert_eq!(cosine(&x, &x).unwrap(), 1.0);
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        assert_eq!(cosine(&x, &z).unwrap(), -1.0);
        assert_eq!(angle(&x, &x).unwrap(), 0.0);
        assert_abs_diff_eq!(angle(&x, &y).unwrap(), PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(angle(&x, &z).unwrap(), PI, epsilon = 1e-15);
        let w = e(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine(&x, &w),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }

    #[test]
    fn angle_of_drifted_identical_vectors_is_finite() {
        let v = e(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        let a = angle(&v, &v).unwrap();
        assert!(a.is_finite() && a < 1e-7);
    }

    #[test]
    fn pairwise_examples() {
        let basis = vec![e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let m = pairwise_cosine(&basis, &basis).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 2));
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);

        let one = vec![e(&[0.3, -0.2, 0.9])];
        assert_eq!(pairwise_cosine(&one, &one).unwrap().get(0, 0), 1.0);
        assert!(matches!(
            pairwise_cosine(&[], &one),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn pairwise_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut gen = |n: usize| -> Vec<Embedding> {
            (0..n)
                .map(|_| {
                    e(&(0..6)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>())
                })
                .collect()
        };
        let a = gen(5);
        let c = gen(7);
        let m = pairwise_cosine(&a, &c).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                assert_eq!(m.get(i, j), cosine(&a[i], &c[j]).unwrap());
            }
        }
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 2..12).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in nonzero_vec()) {
            let once = l2_normalize(&v).unwrap();
            let twice = l2_normalize(once.as_slice()).unwrap();
            prop_assert!((norm(once.as_slice()) - 1.0).abs() < 1e-12);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_is_scale_invariant(
            pair in (2usize..10).prop_flat_map(|d| (
                prop::collection::vec(-5.0f64..5.0, d),
                prop::collection::vec(-5.0f64..5.0, d),
            )),
            scale in 1e-3f64..1e3,
        ) {
            let (v, w) = pair;
            prop_assume!(norm(&v) > 1e-3 && norm(&w) > 1e-3);
            let w = l2_normalize(&w).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            let c1 = cosine(&l2_normalize(&scaled).unwrap(), &w).unwrap();
            let c2 = cosine(&l2_normalize(&v).unwrap(), &w).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-9);
            prop_assert!((c2 - cosine(&w, &l2_normalize(&v).unwrap()).unwrap()).abs() == 0.0);
        }

        #[test]
        fn angle_consistent_with_cosine(
            pair in (2usize..10).prop_flat_map(|d| (
                prop::collection::vec(-5.0f64..5.0, d),
                prop::collection::vec(-5.0f64..5.0, d),
            )),
        ) {
            let (u, v) = pair;
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let (u, v) = (l2_normalize(&u).unwrap(), l2_normalize(&v).unwrap());
            let a = angle(&u, &v).unwrap();
            prop_assert!((0.0..=PI).contains(&a));
            prop_assert!((a.cos() - cosine(&u, &v).unwrap()).abs() < 1e-9);
        }
    }
}

//! Class-conditional label-noise transition matrices.
//!
//! `T[j][k] = p(noisy = j | clean = k)`: columns are indexed by the clean
//! class and each column is a distribution over noisy labels.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Predictor;
use crate::linalg::{LinalgError, ProbVector, SquareMatrix};

/// Column-sum tolerance.
pub const COLUMN_TOL: f64 = 1e-9;

/// Largest 1-norm condition number accepted by [`TransitionMatrix::invert`].
pub const MAX_CONDITION: f64 = 1e12;

/// Default share of instances used as anchors per class.
pub const DEFAULT_ANCHOR_FRACTION: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransitionError {
    #[error("entry ({row}, {col}) = {value} is outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("column {col} sums to {sum}, expected 1")]
    ColumnNotStochastic { col: usize, sum: f64 },
    #[error("need at least one class")]
    Empty,
    #[error("noise rate {0} must lie in [0, 1)")]
    InvalidRate(f64),
    #[error("pair map has {actual} entries for {expected} classes")]
    PairMapSize { expected: usize, actual: usize },
    #[error("pair map sends class {class} to {target}, outside 0..{classes}")]
    PairOutOfRange {
        class: usize,
        target: usize,
        classes: usize,
    },
    #[error("dimension mismatch: matrix has {expected} classes, vector has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("transition matrix is near-singular (condition estimate {condition:e})")]
    NearSingular { condition: f64 },
    #[error("anchor fraction {0} must lie in (0, 1]")]
    InvalidFraction(f64),
    #[error("no anchor candidates for class {class}")]
    NoAnchorCandidates { class: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareMatrix", into = "SquareMatrix")]
pub struct TransitionMatrix(SquareMatrix);

impl TransitionMatrix {
    /// Validate a column-stochastic matrix.
    pub fn new(m: SquareMatrix) -> Result<Self, TransitionError> {
        let c = m.dim();
        if c == 0 {
            return Err(TransitionError::Empty);
        }
        for col in 0..c {
            let mut sum = 0.0;
            for row in 0..c {
                let value = m.get(row, col);
                if !(0.0..=1.0).contains(&value) {
                    return Err(TransitionError::EntryOutOfRange { row, col, value });
                }
                sum += value;
            }
            if (sum - 1.0).abs() > COLUMN_TOL {
                return Err(TransitionError::ColumnNotStochastic { col, sum });
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TransitionError> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    pub fn identity(num_classes: usize) -> Self {
        Self(SquareMatrix::identity(num_classes))
    }

    /// Uniform flipping: `1 - rate` on the diagonal, `rate / (C - 1)` elsewhere.
    pub fn symmetric(num_classes: usize, rate: f64) -> Result<Self, TransitionError> {
        check_rate(rate)?;
        if num_classes == 0 {
            return Err(TransitionError::Empty);
        }
        if num_classes == 1 {
            return Ok(Self::identity(1));
        }
        let off = rate / (num_classes - 1) as f64;
        Ok(Self(SquareMatrix::from_fn(num_classes, |j, k| {
            if j == k {
                1.0 - rate
            } else {
                off
            }
        })))
    }

    /// Pair flipping: class `k` keeps its label with probability `1 - rate`
    /// and flips to `pairs[k]` otherwise. A class paired with itself never flips.
    pub fn pair_flip(rate: f64, pairs: &[usize]) -> Result<Self, TransitionError> {
        check_rate(rate)?;
        let c = pairs.len();
        if c == 0 {
            return Err(TransitionError::Empty);
        }
        let mut m = SquareMatrix::zeros(c);
        for (class, &target) in pairs.iter().enumerate() {
            if target >= c {
                return Err(TransitionError::PairOutOfRange {
                    class,
                    target,
                    classes: c,
                });
            }
            if target == class {
                m.set(class, class, 1.0);
            } else {
                m.set(class, class, 1.0 - rate);
                m.set(target, class, rate);
            }
        }
        Ok(Self(m))
    }

    pub fn num_classes(&self) -> usize {
        self.0.dim()
    }

    #[inline]
    pub fn get(&self, noisy: usize, clean: usize) -> f64 {
        self.0.get(noisy, clean)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    /// The distribution of the noisy label given clean class `clean`.
    pub fn column(&self, clean: usize) -> Vec<f64> {
        self.0.column(clean)
    }

    /// `T p`: the noisy-label posterior implied by a clean posterior.
    pub fn apply(&self, p: &ProbVector) -> Result<ProbVector, TransitionError> {
        if p.len() != self.num_classes() {
            return Err(TransitionError::DimensionMismatch {
                expected: self.num_classes(),
                actual: p.len(),
            });
        }
        let mut out = self.apply_slice(p.as_slice());
        // Column-stochastic T maps the simplex to itself; clear rounding drift.
        let sum: f64 = out.iter().sum();
        for v in &mut out {
            *v = v.max(0.0) / sum;
        }
        Ok(ProbVector::from_raw_unchecked(out))
    }

    /// `(T p)_j` for a single noisy class.
    #[inline]
    pub fn apply_row(&self, noisy: usize, p: &[f64]) -> f64 {
        self.0.row(noisy).iter().zip(p).map(|(t, q)| t * q).sum()
    }

    pub(crate) fn apply_slice(&self, p: &[f64]) -> Vec<f64> {
        self.0.mul_vec(p)
    }

    /// 1-norm condition number estimate, `||T||_1 ||T^-1||_1`.
    pub fn condition_number(&self) -> f64 {
        match self.0.inverse() {
            Ok(inv) => self.0.norm_one() * inv.norm_one(),
            Err(_) => f64::INFINITY,
        }
    }

    /// `T^-1`. Entries of the inverse may be negative.
    pub fn invert(&self) -> Result<SquareMatrix, TransitionError> {
        let inv = self
            .0
            .inverse()
            .map_err(|_| TransitionError::NearSingular {
                condition: f64::INFINITY,
            })?;
        let condition = self.0.norm_one() * inv.norm_one();
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(TransitionError::NearSingular { condition });
        }
        Ok(inv)
    }

    /// Move `eps` of mass off each diagonal entry and spread it evenly over
    /// the rest of the column. Negative `eps` moves mass back.
    pub fn corrupt(&self, eps: f64) -> Result<Self, TransitionError> {
        let c = self.num_classes();
        if c == 1 {
            return if eps == 0.0 {
                Ok(self.clone())
            } else {
                Err(TransitionError::EntryOutOfRange {
                    row: 0,
                    col: 0,
                    value: 1.0 - eps,
                })
            };
        }
        let spread = eps / (c - 1) as f64;
        let m = SquareMatrix::from_fn(c, |j, k| {
            if j == k {
                self.get(j, k) - eps
            } else {
                self.get(j, k) + spread
            }
        });
        for j in 0..c {
            for k in 0..c {
                let value = m.get(j, k);
                // allow rounding just outside the unit interval
                if !(-1e-12..=1.0 + 1e-12).contains(&value) {
                    return Err(TransitionError::EntryOutOfRange {
                        row: j,
                        col: k,
                        value,
                    });
                }
            }
        }
        let clamped = SquareMatrix::from_fn(c, |j, k| m.get(j, k).clamp(0.0, 1.0));
        Self::new(clamped)
    }

    /// Anchor-point estimate of `T` from a model of the noisy posterior.
    ///
    /// For each class `k`, instances are ranked by the predicted probability
    /// of class `k`; the full prediction vectors of the top `fraction` of them
    /// are averaged and become column `k`.
    pub fn estimate_anchor<P, X>(
        predictor: &P,
        features: &[X],
        fraction: f64,
    ) -> Result<Self, TransitionError>
    where
        P: Predictor + ?Sized,
        X: AsRef<[f64]>,
    {
        let predictions: Vec<Vec<f64>> = features
            .iter()
            .map(|x| predictor.predict(x.as_ref()))
            .collect();
        Self::estimate_anchor_from_predictions(&predictions, predictor.num_classes(), fraction)
    }

    /// [`TransitionMatrix::estimate_anchor`] on precomputed predictions.
    pub fn estimate_anchor_from_predictions(
        predictions: &[Vec<f64>],
        num_classes: usize,
        fraction: f64,
    ) -> Result<Self, TransitionError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(TransitionError::InvalidFraction(fraction));
        }
        if num_classes == 0 {
            return Err(TransitionError::Empty);
        }
        if let Some(p) = predictions.iter().find(|p| p.len() != num_classes) {
            return Err(TransitionError::DimensionMismatch {
                expected: num_classes,
                actual: p.len(),
            });
        }
        let mut m = SquareMatrix::zeros(num_classes);
        for class in 0..num_classes {
            let mut candidates: Vec<usize> = (0..predictions.len())
                .filter(|&i| predictions[i][class] > 0.0)
                .collect();
            if candidates.is_empty() {
                return Err(TransitionError::NoAnchorCandidates { class });
            }
            candidates.sort_by(|&a, &b| predictions[b][class].total_cmp(&predictions[a][class]));
            let take = (libm::ceil(fraction * candidates.len() as f64) as usize)
                .clamp(1, candidates.len());
            let mut column = vec![0.0; num_classes];
            for &i in &candidates[..take] {
                for (acc, v) in column.iter_mut().zip(&predictions[i]) {
                    *acc += v;
                }
            }
            let sum: f64 = column.iter().sum();
            for (row, v) in column.iter().enumerate() {
                m.set(row, class, v / sum);
            }
        }
        Self::new(m)
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.0
    }
}

impl TryFrom<SquareMatrix> for TransitionMatrix {
    type Error = TransitionError;

    fn try_from(m: SquareMatrix) -> Result<Self, Self::Error> {
        Self::new(m)
    }
}

impl From<TransitionMatrix> for SquareMatrix {
    fn from(t: TransitionMatrix) -> Self {
        t.0
    }
}

fn check_rate(rate: f64) -> Result<(), TransitionError> {
    if rate.is_finite() && (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(TransitionError::InvalidRate(rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_stochastic(c: usize, rng: &mut SeededRng) -> TransitionMatrix {
        let mut m = SquareMatrix::zeros(c);
        for k in 0..c {
            let col: Vec<f64> = (0..c).map(|_| rng.open_unit()).collect();
            let s: f64 = col.iter().sum();
            for j in 0..c {
                m.set(j, k, col[j] / s);
            }
        }
        TransitionMatrix::new(m).unwrap()
    }

    #[test]
    fn rejects_non_stochastic() {
        assert!(matches!(
            TransitionMatrix::from_rows(&[vec![0.9, 0.2], vec![0.2, 0.8]]),
            Err(TransitionError::ColumnNotStochastic { col: 0, .. })
        ));
        assert!(matches!(
            TransitionMatrix::from_rows(&[vec![1.2, 0.0], vec![-0.2, 1.0]]),
            Err(TransitionError::EntryOutOfRange { .. })
        ));
    }

    #[test]
    fn symmetric_entries() {
        let t = TransitionMatrix::symmetric(10, 0.2).unwrap();
        assert!((t.get(3, 3) - 0.8).abs() < 1e-15);
        assert!((t.get(2, 3) - 0.2 / 9.0).abs() < 1e-15);
        assert!(TransitionMatrix::symmetric(3, 1.0).is_err());
        assert_eq!(
            TransitionMatrix::symmetric(4, 0.0).unwrap(),
            TransitionMatrix::identity(4)
        );
    }

    #[test]
    fn pair_flip_entries() {
        let t = TransitionMatrix::pair_flip(0.4, &[1, 0, 2]).unwrap();
        assert_eq!(t.get(0, 0), 0.6);
        assert_eq!(t.get(1, 0), 0.4);
        assert_eq!(t.get(0, 1), 0.4);
        assert_eq!(t.get(2, 2), 1.0);
        assert!(TransitionMatrix::pair_flip(0.4, &[5, 0]).is_err());
    }

    #[test]
    fn apply_examples() {
        let p = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(TransitionMatrix::identity(3).apply(&p).unwrap(), p);
        let t = TransitionMatrix::symmetric(2, 0.5).unwrap();
        let out = t.apply(&ProbVector::one_hot(2, 0)).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.5]);
        let mut rng = SeededRng::new(4);
        let t = random_stochastic(6, &mut rng);
        let out = t.apply(&ProbVector::uniform(6)).unwrap();
        assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            t.apply(&ProbVector::uniform(3)),
            Err(TransitionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invert_examples() {
        assert_eq!(
            TransitionMatrix::identity(3).invert().unwrap(),
            SquareMatrix::identity(3)
        );
        let t = TransitionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let inv = t.invert().unwrap();
        let expected = SquareMatrix::from_rows(&[
            vec![0.8 / 0.6, -0.2 / 0.6],
            vec![-0.2 / 0.6, 0.8 / 0.6],
        ])
        .unwrap();
        assert!(inv.max_abs_diff(&expected) < 1e-12);
        let singular = TransitionMatrix::symmetric(2, 0.5).unwrap();
        assert!(matches!(
            singular.invert(),
            Err(TransitionError::NearSingular { .. })
        ));
    }

    #[test]
    fn invert_round_trip() {
        let mut rng = SeededRng::new(8);
        let mut checked = 0;
        while checked < 20 {
            let t = random_stochastic(5, &mut rng);
            if t.condition_number() >= 1e6 {
                continue;
            }
            let inv = t.invert().unwrap();
            let prod = inv.matmul(t.matrix());
            assert!(prod.max_abs_diff(&SquareMatrix::identity(5)) < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn corrupt_examples() {
        let t = TransitionMatrix::symmetric(4, 0.3).unwrap();
        assert_eq!(t.corrupt(0.0).unwrap(), t);
        let c = TransitionMatrix::identity(10).corrupt(0.6).unwrap();
        assert!((c.get(0, 0) - 0.4).abs() < 1e-12);
        assert!((c.get(1, 0) - 0.6 / 9.0).abs() < 1e-12);
        assert!(TransitionMatrix::identity(3).corrupt(-0.1).is_err());
        assert!(TransitionMatrix::identity(3).corrupt(1.5).is_err());
    }

    #[test]
    fn anchor_recovers_exact_noisy_posterior() {
        let t = TransitionMatrix::from_rows(&[
            vec![0.7, 0.1, 0.2],
            vec![0.2, 0.8, 0.1],
            vec![0.1, 0.1, 0.7],
        ])
        .unwrap();
        let preds: Vec<Vec<f64>> = (0..300).map(|i| t.column(i % 3)).collect();
        let est = TransitionMatrix::estimate_anchor_from_predictions(&preds, 3, 0.03).unwrap();
        assert!(est.matrix().max_abs_diff(t.matrix()) < 1e-6);
    }

    #[test]
    fn anchor_full_fraction_averages_everything() {
        let preds: Vec<Vec<f64>> = (0..10).map(|_| vec![0.5, 0.5]).collect();
        let est = TransitionMatrix::estimate_anchor_from_predictions(&preds, 2, 1.0).unwrap();
        for k in 0..2 {
            assert_eq!(est.column(k), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn anchor_errors() {
        let preds = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert!(matches!(
            TransitionMatrix::estimate_anchor_from_predictions(&preds, 2, 0.5),
            Err(TransitionError::NoAnchorCandidates { class: 1 })
        ));
        assert!(TransitionMatrix::estimate_anchor_from_predictions(&preds, 2, 0.0).is_err());
        assert!(TransitionMatrix::estimate_anchor_from_predictions(&preds, 2, 1.5).is_err());
    }
}

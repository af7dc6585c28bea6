//! Synthetic Gaussian-mixture datasets with an exact Bayes posterior, and
//! class-conditional label-noise injection.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Predictor;
use crate::linalg::ProbVector;
use crate::rng::SeededRng;
use crate::sampling::{categorical_sample, standard_normal};
use crate::transition::{TransitionError, TransitionMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("need at least as many instances as classes ({classes}), got {count}")]
    TooFewInstances { count: usize, classes: usize },
    #[error("separation must be finite and non-negative, got {0}")]
    InvalidSeparation(f64),
    #[error("dimension {dim} cannot hold a {classes}-class simplex (need at least {needed})")]
    DimensionTooSmall {
        dim: usize,
        classes: usize,
        needed: usize,
    },
    #[error("instance {index} has label {label} outside 0..{classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("instance {index} has {actual} features, expected {expected}")]
    FeatureCount {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("instance {index} has a non-finite feature")]
    NonFiniteFeature { index: usize },
    #[error("transition matrix has {actual} classes, dataset has {expected}")]
    ClassMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub features: Vec<f64>,
    pub clean_label: usize,
    pub noisy_label: usize,
}

impl Instance {
    pub fn is_mislabeled(&self) -> bool {
        self.clean_label != self.noisy_label
    }
}

/// Isotropic unit-variance Gaussian mixture with uniform class priors.
///
/// Component means are the vertices of a regular simplex with pairwise
/// distance `separation`, embedded in the first `C - 1` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
    separation: f64,
}

impl GaussianMixture {
    pub fn new(num_classes: usize, dim: usize, separation: f64) -> Result<Self, DataError> {
        if num_classes < 2 {
            return Err(DataError::TooFewClasses(num_classes));
        }
        if !separation.is_finite() || separation < 0.0 {
            return Err(DataError::InvalidSeparation(separation));
        }
        if dim < num_classes - 1 {
            return Err(DataError::DimensionTooSmall {
                dim,
                classes: num_classes,
                needed: num_classes - 1,
            });
        }
        // Helmert coordinates of the centred basis vectors e_k - 1/C; those
        // are pairwise sqrt(2) apart.
        let scale = separation / libm::sqrt(2.0);
        let means = (0..num_classes)
            .map(|k| {
                let mut m = vec![0.0; dim];
                for (j, slot) in m.iter_mut().enumerate().take(num_classes - 1) {
                    let j1 = (j + 1) as f64;
                    let norm = libm::sqrt(j1 * (j1 + 1.0));
                    let h = if k <= j {
                        1.0
                    } else if k == j + 1 {
                        -j1
                    } else {
                        0.0
                    };
                    *slot = scale * h / norm;
                }
                m
            })
            .collect();
        Ok(Self { means, separation })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// One draw from component `class`.
    pub fn sample_from(&self, class: usize, rng: &mut SeededRng) -> Vec<f64> {
        self.means[class]
            .iter()
            .map(|m| m + standard_normal(rng))
            .collect()
    }

    /// Exact `p(Y | x)` by Bayes' rule.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                -0.5 * m
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect();
        softmax(&logits)
    }

    /// `count` clean instances with uniformly drawn labels.
    pub fn generate(&self, count: usize, rng: &mut SeededRng) -> NoisyDataset {
        let c = self.num_classes();
        let instances = (0..count)
            .map(|_| {
                let label = rng.index(c);
                Instance {
                    features: self.sample_from(label, rng),
                    clean_label: label,
                    noisy_label: label,
                }
            })
            .collect();
        NoisyDataset {
            instances,
            num_classes: c,
            dim: self.dim(),
            oracle: Some(self.clone()),
        }
    }
}

impl Predictor for GaussianMixture {
    fn num_classes(&self) -> usize {
        self.means.len()
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.posterior(x)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| libm::exp(z - top)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Draw a clean mixture dataset of `count` instances.
pub fn generate_gaussian_mixture(
    num_classes: usize,
    dim: usize,
    count: usize,
    separation: f64,
    rng: &mut SeededRng,
) -> Result<NoisyDataset, DataError> {
    let mixture = GaussianMixture::new(num_classes, dim, separation)?;
    if count < num_classes {
        return Err(DataError::TooFewInstances {
            count,
            classes: num_classes,
        });
    }
    Ok(mixture.generate(count, rng))
}

/// A labelled dataset whose clean labels are retained for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyDataset {
    instances: Vec<Instance>,
    num_classes: usize,
    dim: usize,
    oracle: Option<GaussianMixture>,
}

impl NoisyDataset {
    pub fn new(
        instances: Vec<Instance>,
        num_classes: usize,
        dim: usize,
    ) -> Result<Self, DataError> {
        for (index, inst) in instances.iter().enumerate() {
            if inst.features.len() != dim {
                return Err(DataError::FeatureCount {
                    index,
                    expected: dim,
                    actual: inst.features.len(),
                });
            }
            if inst.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFiniteFeature { index });
            }
            for label in [inst.clean_label, inst.noisy_label] {
                if label >= num_classes {
                    return Err(DataError::LabelOutOfRange {
                        index,
                        label,
                        classes: num_classes,
                    });
                }
            }
        }
        Ok(Self {
            instances,
            num_classes,
            dim,
            oracle: None,
        })
    }

    pub fn with_oracle(mut self, oracle: GaussianMixture) -> Result<Self, DataError> {
        if oracle.num_classes() != self.num_classes {
            return Err(DataError::ClassMismatch {
                expected: self.num_classes,
                actual: oracle.num_classes(),
            });
        }
        self.oracle = Some(oracle);
        Ok(self)
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The exact clean posterior, when the generating process is known.
    pub fn posterior_oracle(&self) -> Option<&GaussianMixture> {
        self.oracle.as_ref()
    }

    pub fn noisy_labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.noisy_label).collect()
    }

    pub fn clean_labels(&self) -> Vec<usize> {
        self.instances.iter().map(|i| i.clean_label).collect()
    }

    /// Share of instances whose noisy label differs from the clean one.
    pub fn noise_fraction(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        self.instances.iter().filter(|i| i.is_mislabeled()).count() as f64
            / self.instances.len() as f64
    }

    /// Empirical `p(noisy = j | clean = k)`; columns of unseen classes are zero.
    pub fn empirical_transition(&self) -> Vec<Vec<f64>> {
        let c = self.num_classes;
        let mut counts = vec![vec![0.0; c]; c];
        let mut totals = vec![0.0; c];
        for inst in &self.instances {
            counts[inst.noisy_label][inst.clean_label] += 1.0;
            totals[inst.clean_label] += 1.0;
        }
        for row in &mut counts {
            for (k, v) in row.iter_mut().enumerate() {
                if totals[k] > 0.0 {
                    *v /= totals[k];
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric { rate: f64 },
    AsymmetricPairs { rate: f64, pairs: Vec<usize> },
    FromMatrix { matrix: TransitionMatrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    /// The transition matrix these settings describe for `num_classes` classes.
    pub fn transition(&self, num_classes: usize) -> Result<TransitionMatrix, DataError> {
        let t = match &self.kind {
            NoiseKind::Symmetric { rate } => TransitionMatrix::symmetric(num_classes, *rate)?,
            NoiseKind::AsymmetricPairs { rate, pairs } => {
                if pairs.len() != num_classes {
                    return Err(TransitionError::PairMapSize {
                        expected: num_classes,
                        actual: pairs.len(),
                    }
                    .into());
                }
                TransitionMatrix::pair_flip(*rate, pairs)?
            }
            NoiseKind::FromMatrix { matrix } => {
                TransitionMatrix::new(matrix.matrix().clone())?
            }
        };
        if t.num_classes() != num_classes {
            return Err(DataError::ClassMismatch {
                expected: num_classes,
                actual: t.num_classes(),
            });
        }
        Ok(t)
    }
}

/// Redraw every noisy label from column `clean_label` of the noise model's `T`.
///
/// Features and clean labels are left untouched. Returns the new dataset and
/// the exact matrix used.
pub fn inject_noise(
    ds: &NoisyDataset,
    spec: &NoiseSpec,
) -> Result<(NoisyDataset, TransitionMatrix), DataError> {
    let t = spec.transition(ds.num_classes())?;
    let mut rng = SeededRng::new(spec.seed);
    let columns: Vec<Vec<f64>> = (0..t.num_classes()).map(|k| t.column(k)).collect();
    let mut out = ds.clone();
    for inst in &mut out.instances {
        inst.noisy_label = categorical_sample(&columns[inst.clean_label], &mut rng);
    }
    Ok((out, t))
}

/// Evaluate the exact clean posterior on every instance.
pub fn oracle_posteriors(ds: &NoisyDataset) -> Option<Vec<ProbVector>> {
    let oracle = ds.posterior_oracle()?;
    Some(
        ds.instances()
            .iter()
            .map(|inst| ProbVector::from_raw_unchecked(oracle.posterior(&inst.features)))
            .collect(),
    )
}

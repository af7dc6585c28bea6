//! Diagnostics over weights, resampled multisets and trained models.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{Classifier, ClassifierError, Example, Predictor, MAX_NLL, PROB_FLOOR};
use crate::data::NoisyDataset;
use crate::linalg::ProbVector;
use crate::rng::SeededRng;
use crate::risk::{mean_dirichlet_draw, weights_from_posteriors, DwsConfig, RiskError, SampleWeights};
use crate::sampling::{dirichlet_moments, DirichletParams, ResampleCounts};
use crate::transition::TransitionMatrix;

pub const HISTOGRAM_BUCKETS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("{what} covers {actual} samples, dataset has {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("resampled multiset is empty")]
    ZeroMass,
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("at least 2 redraws are needed, got {0}")]
    TooFewRedraws(usize),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogramReport {
    /// `HISTOGRAM_BUCKETS + 1` bucket edges over `[0, max weight]`.
    pub edges: Vec<f64>,
    /// Counts of samples whose noisy label equals the clean one.
    pub clean_counts: Vec<u64>,
    /// Counts of mislabelled samples.
    pub noisy_counts: Vec<u64>,
    /// `1 / B`.
    pub threshold: f64,
    /// Share of mislabelled samples with weight strictly below `threshold`;
    /// `None` when nothing is mislabelled.
    pub noisy_below_threshold: Option<f64>,
}

impl WeightHistogramReport {
    pub fn total(&self) -> u64 {
        self.clean_counts.iter().chain(&self.noisy_counts).sum()
    }
}

/// Histogram of normalized weights split by hidden label correctness.
pub fn weight_histogram(
    weights: &SampleWeights,
    ds: &NoisyDataset,
    batch_size: usize,
) -> Result<WeightHistogramReport, AnalysisError> {
    if weights.len() != ds.len() {
        return Err(AnalysisError::LengthMismatch {
            what: "weights",
            expected: ds.len(),
            actual: weights.len(),
        });
    }
    if batch_size == 0 {
        return Err(AnalysisError::ZeroBatch);
    }
    let w = weights.normalized().as_slice();
    let max = w.iter().copied().fold(0.0, f64::max);
    let width = max / HISTOGRAM_BUCKETS as f64;
    let edges = (0..=HISTOGRAM_BUCKETS).map(|i| i as f64 * width).collect();
    let mut clean_counts = vec![0u64; HISTOGRAM_BUCKETS];
    let mut noisy_counts = vec![0u64; HISTOGRAM_BUCKETS];
    let threshold = 1.0 / batch_size as f64;
    let (mut noisy, mut below) = (0usize, 0usize);
    for (&v, inst) in w.iter().zip(ds.instances()) {
        let bucket = if width > 0.0 {
            ((v / width) as usize).min(HISTOGRAM_BUCKETS - 1)
        } else {
            0
        };
        if inst.is_mislabeled() {
            noisy_counts[bucket] += 1;
            noisy += 1;
            if v < threshold {
                below += 1;
            }
        } else {
            clean_counts[bucket] += 1;
        }
    }
    Ok(WeightHistogramReport {
        edges,
        clean_counts,
        noisy_counts,
        threshold,
        noisy_below_threshold: (noisy > 0).then(|| below as f64 / noisy as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleQualityReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is the correctly-labelled share of the resampled mass; recall
/// is the share of correctly-labelled instances drawn at least once.
pub fn resample_quality(
    counts: &ResampleCounts,
    ds: &NoisyDataset,
) -> Result<ResampleQualityReport, AnalysisError> {
    if counts.len() != ds.len() {
        return Err(AnalysisError::LengthMismatch {
            what: "counts",
            expected: ds.len(),
            actual: counts.len(),
        });
    }
    let total = counts.budget();
    if total == 0 {
        return Err(AnalysisError::ZeroMass);
    }
    let (mut clean_mass, mut clean, mut covered) = (0u64, 0usize, 0usize);
    for (&n, inst) in counts.counts().iter().zip(ds.instances()) {
        if !inst.is_mislabeled() {
            clean += 1;
            clean_mass += n;
            if n > 0 {
                covered += 1;
            }
        }
    }
    let precision = clean_mass as f64 / total as f64;
    let recall = if clean == 0 {
        0.0
    } else {
        covered as f64 / clean as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ResampleQualityReport {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceSplitReport {
    /// Mislabelled samples with `f(x)_{noisy label} >= threshold`.
    pub certain: usize,
    pub uncertain: usize,
}

/// Split mislabelled samples by the model's probability on their noisy label.
pub fn confidence_split<P: Predictor + ?Sized>(
    model: &P,
    ds: &NoisyDataset,
    threshold: f64,
) -> ConfidenceSplitReport {
    let (mut certain, mut uncertain) = (0, 0);
    for inst in ds.instances().iter().filter(|i| i.is_mislabeled()) {
        if model.predict(&inst.features)[inst.noisy_label] >= threshold {
            certain += 1;
        } else {
            uncertain += 1;
        }
    }
    ConfidenceSplitReport { certain, uncertain }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// Sample variance of the weighted loss over weight redraws.
    pub empirical: f64,
    /// `(1/M_w) l^T Cov(w) l` with the Dirichlet covariance.
    pub closed_form: f64,
}

/// Variance of the Dirichlet-weighted batch loss at fixed parameters.
pub fn risk_variance_estimate(
    model: &Classifier,
    t: &TransitionMatrix,
    batch: &[Example<'_>],
    cfg: &DwsConfig,
    redraws: usize,
    rng: &mut SeededRng,
) -> Result<VarianceEstimate, AnalysisError> {
    if redraws < 2 {
        return Err(AnalysisError::TooFewRedraws(redraws));
    }
    cfg.validate()?;
    if batch.is_empty() {
        return Err(RiskError::EmptyPool.into());
    }
    let fwd = model.forward_batch(batch)?;
    let losses: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, e)| (-libm::log(fwd.probs_of(i)[e.label].max(PROB_FLOOR))).min(MAX_NLL))
        .collect();
    let w = weights_from_posteriors(
        batch.iter().enumerate().map(|(i, e)| (fwd.probs_of(i), e.label)),
        t,
    )?;
    variance_from_losses(&losses, w.normalized(), cfg, redraws, rng)
}

/// [`risk_variance_estimate`] for given per-sample losses and base measure.
pub fn variance_from_losses(
    losses: &[f64],
    mu: &ProbVector,
    cfg: &DwsConfig,
    redraws: usize,
    rng: &mut SeededRng,
) -> Result<VarianceEstimate, AnalysisError> {
    if redraws < 2 {
        return Err(AnalysisError::TooFewRedraws(redraws));
    }
    if losses.len() != mu.len() {
        return Err(AnalysisError::LengthMismatch {
            what: "losses",
            expected: mu.len(),
            actual: losses.len(),
        });
    }
    let params = DirichletParams::new(cfg.alpha, mu.clone()).map_err(RiskError::from)?;
    let (_, cov) = dirichlet_moments(&params);
    let closed_form = cov.quadratic_form(losses) / cfg.weight_draws as f64;

    let values: Vec<f64> = (0..redraws)
        .map(|_| {
            mean_dirichlet_draw(mu, cfg, rng)
                .map(|w| w.iter().zip(losses).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect::<Result<_, _>>()?;
    let mean = values.iter().sum::<f64>() / redraws as f64;
    let empirical =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (redraws - 1) as f64;
    Ok(VarianceEstimate {
        empirical,
        closed_form: closed_form.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Architecture;
    use crate::data::Instance;

    fn dataset(pairs: &[(usize, usize)]) -> NoisyDataset {
        let instances = pairs
            .iter()
            .enumerate()
            .map(|(i, &(clean, noisy))| Instance {
                features: vec![i as f64],
                clean_label: clean,
                noisy_label: noisy,
            })
            .collect();
        NoisyDataset::new(instances, 10, 1).unwrap()
    }

    #[test]
    fn uniform_weights_sit_on_threshold() {
        let ds = dataset(&[(0, 0), (1, 2), (2, 2), (3, 1)]);
        let w = SampleWeights::from_raw(vec![1.0; 4]).unwrap();
        let h = weight_histogram(&w, &ds, 4).unwrap();
        assert_eq!(h.noisy_below_threshold, Some(0.0));
        assert_eq!(h.total(), 4);
        assert_eq!(h.edges.len(), HISTOGRAM_BUCKETS + 1);
        assert_eq!(h.noisy_counts[HISTOGRAM_BUCKETS - 1], 2);
    }

    #[test]
    fn clean_dataset_has_no_noisy_fraction() {
        let ds = dataset(&[(0, 0), (1, 1)]);
        let w = SampleWeights::from_raw(vec![1.0, 3.0]).unwrap();
        let h = weight_histogram(&w, &ds, 2).unwrap();
        assert_eq!(h.noisy_below_threshold, None);
        assert!(weight_histogram(&w, &dataset(&[(0, 0)]), 2).is_err());
    }

    #[test]
    fn quality_of_exact_clean_cover() {
        let ds = dataset(&[(0, 0), (1, 2), (2, 2), (3, 3)]);
        let q = resample_quality(&ResampleCounts::new(vec![1, 0, 1, 1]), &ds).unwrap();
        assert_eq!((q.precision, q.recall, q.f1), (1.0, 1.0, 1.0));
        let q = resample_quality(&ResampleCounts::new(vec![1, 1, 1, 1]), &ds).unwrap();
        assert_eq!(q.precision, 0.75);
        assert!(resample_quality(&ResampleCounts::new(vec![0; 4]), &ds).is_err());
    }

    #[test]
    fn uniform_model_is_never_certain() {
        let ds = dataset(&[(0, 1), (1, 2), (2, 2)]);
        let model = Classifier::zeros(Architecture::Linear, 1, 10).unwrap();
        let r = confidence_split(&model, &ds, 0.5);
        assert_eq!((r.certain, r.uncertain), (0, 2));
    }

    #[test]
    fn constant_losses_have_zero_closed_form_variance() {
        let mu = ProbVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let cfg = DwsConfig {
            alpha: 2.0,
            weight_draws: 1,
        };
        let v = variance_from_losses(&[1.5; 4], &mu, &cfg, 10, &mut SeededRng::new(1)).unwrap();
        assert!(v.closed_form < 1e-15);
        assert!(v.empirical < 1e-20);
        assert!(variance_from_losses(&[1.5; 4], &mu, &cfg, 1, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn huge_alpha_has_negligible_variance() {
        let mu = ProbVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let cfg = DwsConfig {
            alpha: 1e9,
            weight_draws: 1,
        };
        let v = variance_from_losses(&[0.1, 2.0, 0.7, 3.0], &mu, &cfg, 200, &mut SeededRng::new(2))
            .unwrap();
        assert!(v.empirical < 1e-8);
        assert!(v.closed_form < 1e-8);
    }
}

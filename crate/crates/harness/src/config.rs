//! Experiment configuration, loaded from a single JSON document.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rent_core::classifier::Architecture;
use rent_core::data::NoiseKind;
use rent_core::optim::OptimizerKind;
use rent_core::risk::{Budget, Strategy};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Freshly generated Gaussian mixture; the test split is drawn from the
    /// same mixture and keeps its clean labels.
    Mixture {
        num_classes: usize,
        dim: usize,
        train: usize,
        test: usize,
        separation: f64,
    },
    /// Datasets in the `f0..,clean,noisy` CSV layout.
    Csv { train: PathBuf, test: PathBuf },
}

/// Where the transition matrix handed to the risk comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionSource {
    True,
    /// Anchor-point estimate from a cross-entropy model trained for
    /// `warmup_epochs` on the noisy labels.
    Anchor { fraction: f64, warmup_epochs: usize },
    /// True matrix with `eps` moved off the diagonal.
    Corrupted { eps: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// `None` keeps the labels as loaded (clean ones for generated data).
    pub noise: Option<NoiseKind>,
    pub transition: TransitionSource,
    pub risk: Strategy,
    pub architecture: Architecture,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Worker threads for seeds; `None` uses every core.
    pub workers: Option<usize>,
    /// Probability on the noisy label at which a sample counts as fitted.
    pub confidence_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Mixture {
                num_classes: 4,
                dim: 16,
                train: 20_000,
                test: 4_000,
                separation: 3.0,
            },
            noise: Some(NoiseKind::Symmetric { rate: 0.4 }),
            transition: TransitionSource::True,
            risk: Strategy::Rent(Default::default()),
            architecture: Architecture::Mlp { hidden: 64 },
            optimizer: OptimizerKind::default(),
            epochs: 100,
            batch_size: 128,
            seeds: (0..10).collect(),
            out_dir: PathBuf::from("runs"),
            workers: None,
            confidence_threshold: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.data {
            DataSource::Mixture { num_classes, .. } => Some(num_classes),
            DataSource::Csv { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        match &self.data {
            DataSource::Mixture {
                num_classes,
                train,
                test,
                separation,
                ..
            } => {
                if *num_classes < 2 {
                    return bad(format!("need at least 2 classes, got {num_classes}"));
                }
                if *train == 0 || *test == 0 {
                    return bad("train and test sizes must be positive".into());
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return bad(format!("invalid separation {separation}"));
                }
            }
            DataSource::Csv { train, test } => {
                for p in [train, test] {
                    if !p.is_file() {
                        return bad(format!("data file {} does not exist", p.display()));
                    }
                }
            }
        }
        match &self.transition {
            TransitionSource::File { path } if !path.is_file() => {
                return bad(format!("transition file {} does not exist", path.display()));
            }
            TransitionSource::Anchor { fraction, .. } if !(*fraction > 0.0 && *fraction <= 1.0) => {
                return bad(format!("anchor fraction {fraction} outside (0, 1]"));
            }
            TransitionSource::Corrupted { eps } if !eps.is_finite() => {
                return bad(format!("invalid eps {eps}"));
            }
            _ => {}
        }
        match &self.risk {
            Strategy::Dws(d) => d.validate()?,
            Strategy::Rent(r) => {
                r.budget.resolve(self.batch_size.max(1))?;
                if let Budget::Count(0) = r.budget {
                    return bad("budget count must be positive".into());
                }
            }
            Strategy::Snl { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                return bad(format!("sigma must be non-negative, got {sigma}"));
            }
            _ => {}
        }
        if let Architecture::Mlp { hidden: 0 } = self.architecture {
            return bad("hidden width must be positive".into());
        }
        if self.optimizer.learning_rate() <= 0.0 || !self.optimizer.learning_rate().is_finite() {
            return bad("learning rate must be positive".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds given".into());
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return bad("confidence threshold must lie in (0, 1)".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of everything that influences a single seed's output.
    pub fn hash(&self) -> String {
        let mut key = self.clone();
        key.seeds.clear();
        key.out_dir = PathBuf::new();
        key.workers = None;
        let digest = Sha256::digest(serde_json::to_vec(&key).expect("config serializes"));
        hex::encode(&digest[..8])
    }
}

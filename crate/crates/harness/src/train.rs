//! Fixed-epoch minibatch training.

use serde::{Deserialize, Serialize};

use rent_core::classifier::{Classifier, Example};
use rent_core::data::NoisyDataset;
use rent_core::optim::{Optimizer, OptimizerKind};
use rent_core::risk::{self, SamplingStrategy, Strategy};
use rent_core::{SeededRng, TransitionMatrix};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Agreement with the (possibly noisy) training labels.
    pub train_acc_noisy: f64,
    /// Agreement with the hidden clean training labels.
    pub train_acc_clean: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSpec {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
}

pub struct TrainOutcome {
    pub model: Classifier,
    pub metrics: Vec<EpochMetrics>,
    /// Log terms that hit the probability floor over the whole run.
    pub clamped: usize,
}

fn examples(ds: &NoisyDataset, noisy: bool) -> Vec<Example<'_>> {
    ds.instances()
        .iter()
        .map(|i| Example {
            features: &i.features,
            label: if noisy { i.noisy_label } else { i.clean_label },
        })
        .collect()
}

/// Train `model` on the noisy labels of `train` with `strategy`, evaluating
/// on the clean labels of `test` after every epoch.
pub fn train(
    mut model: Classifier,
    spec: &TrainSpec,
    strategy: &Strategy,
    t: &TransitionMatrix,
    train: &NoisyDataset,
    test: &NoisyDataset,
    rng: &mut SeededRng,
) -> Result<TrainOutcome, HarnessError> {
    let pool = examples(train, true);
    let clean = examples(train, false);
    let test_set = examples(test, false);
    let mut opt = Optimizer::new(spec.optimizer, model.params().len());
    let mut metrics = Vec::with_capacity(spec.epochs);
    let mut clamped = 0;
    let epoch_level = match strategy {
        Strategy::Rent(cfg) => cfg.strategy != SamplingStrategy::Batch,
        _ => false,
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 1..=spec.epochs {
        let mut drawn = Vec::new();
        let (step_strategy, indices) = match strategy {
            Strategy::Rent(cfg) if epoch_level => {
                // draw the resampled multiset once for the epoch, then plain CE
                let w = risk::compute_weights(&model, t, &pool)?;
                let counts = risk::rent_resample(&w, &train.noisy_labels(), cfg, rng)?;
                drawn.extend(
                    counts
                        .counts()
                        .iter()
                        .enumerate()
                        .flat_map(|(i, &n)| std::iter::repeat_n(i, n as usize)),
                );
                (Strategy::Ce, &mut drawn)
            }
            _ => (*strategy, &mut order),
        };
        rng.shuffle(indices);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(spec.batch_size) {
            let batch: Vec<Example<'_>> = chunk.iter().map(|&i| pool[i]).collect();
            let g = step_strategy.loss_grad(&model, t, &batch, rng)?;
            opt.step(&mut model, &g)?;
            loss_sum += g.loss;
            clamped += g.clamped;
            batches += 1;
        }
        metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            train_acc_noisy: model.accuracy(&pool)?,
            train_acc_clean: model.accuracy(&clean)?,
            test_acc: model.accuracy(&test_set)?,
        });
    }
    if clamped > 0 {
        log::warn!("{clamped} loss terms hit the probability floor");
    }
    Ok(TrainOutcome {
        model,
        metrics,
        clamped,
    })
}

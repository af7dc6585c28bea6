//! Seed-replicated experiment runs and their on-disk layout:
//!
//! ```text
//! <out_dir>/<config hash>/config.json
//! <out_dir>/<config hash>/manifest.json
//! <out_dir>/<config hash>/<seed>/metrics.csv
//! <out_dir>/<config hash>/<seed>/histogram.csv
//! <out_dir>/<config hash>/<seed>/oracle_histogram.csv
//! <out_dir>/<config hash>/<seed>/transition.csv
//! <out_dir>/<config hash>/<seed>/result.json
//! ```
//!
//! The CSV files depend only on the config and seed. Wall-clock time is
//! kept in `result.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rent_core::analysis::{
    confidence_split, resample_quality, weight_histogram, ConfidenceSplitReport,
    ResampleQualityReport, WeightHistogramReport,
};
use rent_core::classifier::{Classifier, Example};
use rent_core::data::{inject_noise, GaussianMixture, NoiseSpec, NoisyDataset};
use rent_core::risk::{self, RentConfig, SampleWeights, Strategy};
use rent_core::{SeededRng, TransitionError, TransitionMatrix};
use rent_core::rng::RngCore;

use crate::config::{DataSource, ExperimentConfig, TransitionSource};
use crate::io;
use crate::train::{train, EpochMetrics, TrainSpec};
use crate::HarnessError;

const DATA_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const WARMUP_STREAM: u64 = 4;
const ANALYSIS_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub confidence: ConfidenceSplitReport,
    /// Weights of the trained model over the training set.
    pub weight_histogram: WeightHistogramReport,
    /// One budget-`N` multinomial draw from those weights.
    pub resample_quality: ResampleQualityReport,
    /// Same two reports with the exact posterior, when it is known.
    pub oracle_histogram: Option<WeightHistogramReport>,
    pub oracle_resample_quality: Option<ResampleQualityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub config_hash: String,
    pub metrics: Vec<EpochMetrics>,
    pub final_test_acc: f64,
    /// Matrix handed to the risk.
    pub transition: Vec<Vec<f64>>,
    /// Largest entry-wise gap to the true matrix, when that is known.
    pub transition_error: Option<f64>,
    pub noise_fraction: f64,
    pub clamped: usize,
    pub analysis: AnalysisSummary,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub model: Option<Classifier>,
}

struct Prepared {
    train: NoisyDataset,
    test: NoisyDataset,
    true_t: Option<TransitionMatrix>,
}

fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared, HarnessError> {
    let (train, test) = match &cfg.data {
        DataSource::Mixture {
            num_classes,
            dim,
            train,
            test,
            separation,
        } => {
            let mix = GaussianMixture::new(*num_classes, *dim, *separation)?;
            let mut rng = SeededRng::stream(seed, DATA_STREAM);
            (mix.generate(*train, &mut rng), mix.generate(*test, &mut rng))
        }
        DataSource::Csv { train, test } => {
            let tr = io::read_dataset(train, None)?;
            let te = io::read_dataset(test, Some(tr.num_classes()))?;
            (tr, te)
        }
    };
    match &cfg.noise {
        Some(kind) => {
            let spec = NoiseSpec {
                kind: kind.clone(),
                seed: SeededRng::stream(seed, NOISE_STREAM).next_u64(),
            };
            let (noisy, t) = inject_noise(&train, &spec)?;
            Ok(Prepared {
                train: noisy,
                test,
                true_t: Some(t),
            })
        }
        None => {
            let true_t = match cfg.data {
                DataSource::Mixture { num_classes, .. } => {
                    Some(TransitionMatrix::identity(num_classes))
                }
                DataSource::Csv { .. } => {
                    TransitionMatrix::from_rows(&train.empirical_transition()).ok()
                }
            };
            Ok(Prepared {
                train,
                test,
                true_t,
            })
        }
    }
}

fn examples(ds: &NoisyDataset) -> Vec<Example<'_>> {
    ds.instances()
        .iter()
        .map(|i| Example {
            features: &i.features,
            label: i.noisy_label,
        })
        .collect()
}

fn resolve_transition(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &Prepared,
) -> Result<TransitionMatrix, HarnessError> {
    let need_true = || {
        data.true_t.clone().ok_or_else(|| {
            HarnessError::Config("the true transition matrix is unknown for this data".into())
        })
    };
    let t = match &cfg.transition {
        TransitionSource::True => need_true()?,
        TransitionSource::Corrupted { eps } => need_true()?.corrupt(*eps)?,
        TransitionSource::File { path } => io::read_transition(path)?,
        TransitionSource::Anchor {
            fraction,
            warmup_epochs,
        } => {
            let mut rng = SeededRng::stream(seed, WARMUP_STREAM);
            let init = Classifier::init(
                cfg.architecture,
                data.train.dim(),
                data.train.num_classes(),
                &mut rng,
            )?;
            let spec = TrainSpec {
                optimizer: cfg.optimizer,
                epochs: *warmup_epochs,
                batch_size: cfg.batch_size,
            };
            let c = data.train.num_classes();
            let warm = train(
                init,
                &spec,
                &Strategy::Ce,
                &TransitionMatrix::identity(c),
                &data.train,
                &data.test,
                &mut rng,
            )?;
            let features: Vec<&[f64]> = data
                .train
                .instances()
                .iter()
                .map(|i| i.features.as_slice())
                .collect();
            TransitionMatrix::estimate_anchor(&warm.model, &features, *fraction)?
        }
    };
    if t.num_classes() != data.train.num_classes() {
        return Err(TransitionError::DimensionMismatch {
            expected: data.train.num_classes(),
            actual: t.num_classes(),
        }
        .into());
    }
    Ok(t)
}

fn analyse(
    cfg: &ExperimentConfig,
    seed: u64,
    model: &Classifier,
    t: &TransitionMatrix,
    data: &Prepared,
) -> Result<AnalysisSummary, HarnessError> {
    let pool = examples(&data.train);
    let labels = data.train.noisy_labels();
    let mut rng = SeededRng::stream(seed, ANALYSIS_STREAM);
    let resample = RentConfig::default();

    let w = risk::compute_weights(model, t, &pool)?;
    // weights are normalized over the whole pool, so the reference is 1/N
    let weight_hist = weight_histogram(&w, &data.train, data.train.len())?;
    let counts = risk::rent_resample(&w, &labels, &resample, &mut rng)?;
    let quality = resample_quality(&counts, &data.train)?;

    let (oracle_histogram, oracle_resample_quality) = match &data.true_t {
        Some(true_t) if data.train.posterior_oracle().is_some() => {
            let ow = risk::oracle_weights(&data.train, true_t)?;
            let ow = SampleWeights::from_raw(ow.raw)?;
            let h = weight_histogram(&ow, &data.train, data.train.len())?;
            let counts = risk::rent_resample(&ow, &labels, &resample, &mut rng)?;
            (Some(h), Some(resample_quality(&counts, &data.train)?))
        }
        _ => (None, None),
    };
    Ok(AnalysisSummary {
        confidence: confidence_split(model, &data.train, cfg.confidence_threshold),
        weight_histogram: weight_hist,
        resample_quality: quality,
        oracle_histogram,
        oracle_resample_quality,
    })
}

/// Train and evaluate one seed. Nothing is written to disk.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult, HarnessError> {
    let start = Instant::now();
    let data = prepare_data(cfg, seed)?;
    let t = resolve_transition(cfg, seed, &data)?;
    let mut init_rng = SeededRng::stream(seed, INIT_STREAM);
    let model = Classifier::init(
        cfg.architecture,
        data.train.dim(),
        data.train.num_classes(),
        &mut init_rng,
    )?;
    let spec = TrainSpec {
        optimizer: cfg.optimizer,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
    };
    let mut rng = SeededRng::stream(seed, TRAIN_STREAM);
    let out = train(model, &spec, &cfg.risk, &t, &data.train, &data.test, &mut rng)?;
    let analysis = analyse(cfg, seed, &out.model, &t, &data)?;
    Ok(RunResult {
        seed,
        config_hash: cfg.hash(),
        final_test_acc: out.metrics.last().map_or(0.0, |m| m.test_acc),
        metrics: out.metrics,
        transition: t.matrix().rows(),
        transition_error: data
            .true_t
            .as_ref()
            .map(|tt| tt.matrix().max_abs_diff(t.matrix())),
        noise_fraction: data.train.noise_fraction(),
        clamped: out.clamped,
        analysis,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        model: Some(out.model),
    })
}

fn write_seed(dir: &Path, r: &RunResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    io::write_metrics(&dir.join("metrics.csv"), &r.metrics)?;
    io::write_histogram(&dir.join("histogram.csv"), &r.analysis.weight_histogram)?;
    if let Some(h) = &r.analysis.oracle_histogram {
        io::write_histogram(&dir.join("oracle_histogram.csv"), h)?;
    }
    let t = TransitionMatrix::from_rows(&r.transition)?;
    io::write_transition(&dir.join("transition.csv"), &t)?;
    if let Some(model) = &r.model {
        io::write_checkpoint(&dir.join("model.ckpt"), model)?;
    }
    io::write_json(&dir.join("result.json"), r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub completed: bool,
    pub final_test_acc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: Vec<SeedStatus>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub results: Vec<RunResult>,
    pub failures: Vec<(u64, String)>,
}

impl ExperimentReport {
    pub fn all_completed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn final_test_accuracies(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.final_test_acc).collect()
    }
}

pub(crate) fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| HarnessError::Config(format!("cannot start workers: {e}")))
}

/// Run every seed of `cfg` in parallel and write the results.
///
/// A seed that fails is recorded in the manifest; the other seeds still run
/// and are written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let dir = cfg.out_dir.join(cfg.hash());
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")
        .map_err(|e| HarnessError::io(&dir, e))?;

    let pool = thread_pool(cfg.workers)?;
    let outcomes: Vec<(u64, Result<RunResult, String>)> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let out = run_seed(cfg, seed)
                    .and_then(|r| write_seed(&dir.join(seed.to_string()), &r).map(|_| r))
                    .map_err(|e| e.to_string());
                if let Err(e) = &out {
                    log::error!("seed {seed} failed: {e}");
                }
                (seed, out)
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut statuses = Vec::new();
    for (seed, out) in outcomes {
        match out {
            Ok(r) => {
                statuses.push(SeedStatus {
                    seed,
                    completed: true,
                    final_test_acc: Some(r.final_test_acc),
                    error: None,
                });
                results.push(r);
            }
            Err(e) => {
                statuses.push(SeedStatus {
                    seed,
                    completed: false,
                    final_test_acc: None,
                    error: Some(e.clone()),
                });
                failures.push((seed, e));
            }
        }
    }
    io::write_json(
        &dir.join("manifest.json"),
        &Manifest {
            config_hash: cfg.hash(),
            seeds: statuses,
        },
    )?;
    Ok(ExperimentReport {
        dir,
        results,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub epochs: usize,
    pub final_test_acc: f64,
    pub best_epoch: usize,
    pub best_test_acc: f64,
    pub final_train_acc_noisy: f64,
    pub final_train_acc_clean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seeds: Vec<SeedSummary>,
    pub mean_final_test_acc: f64,
    pub std_final_test_acc: f64,
    pub mean_best_test_acc: f64,
}

/// Summarize the per-seed `metrics.csv` files under a run directory and
/// write `summary.csv` next to them.
pub fn analyze(run_dir: &Path) -> Result<RunSummary, HarnessError> {
    let entries = fs::read_dir(run_dir).map_err(|e| HarnessError::io(run_dir, e))?;
    let mut seeds = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(run_dir, e))?;
        let Some(seed) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        let path = entry.path().join("metrics.csv");
        if !path.is_file() {
            continue;
        }
        let metrics = io::read_metrics(&path)?;
        let Some(last) = metrics.last() else {
            continue;
        };
        let best = metrics
            .iter()
            .fold(last, |b, m| if m.test_acc > b.test_acc { m } else { b });
        seeds.push(SeedSummary {
            seed,
            epochs: metrics.len(),
            final_test_acc: last.test_acc,
            best_epoch: best.epoch,
            best_test_acc: best.test_acc,
            final_train_acc_noisy: last.train_acc_noisy,
            final_train_acc_clean: last.train_acc_clean,
        });
    }
    if seeds.is_empty() {
        return Err(HarnessError::Format(format!(
            "{}: no seed directories with metrics.csv",
            run_dir.display()
        )));
    }
    seeds.sort_by_key(|s| s.seed);
    let finals: Vec<f64> = seeds.iter().map(|s| s.final_test_acc).collect();
    let (mean, std) = mean_std(&finals);
    let summary = RunSummary {
        mean_final_test_acc: mean,
        std_final_test_acc: std,
        mean_best_test_acc: seeds.iter().map(|s| s.best_test_acc).sum::<f64>()
            / seeds.len() as f64,
        seeds,
    };
    let path = run_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for s in &summary.seeds {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    Ok(summary)
}

/// Mean and sample standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

//! Risk strategies for training on noisy labels with a known (or estimated)
//! transition matrix.
//!
//! | strategy | batch objective |
//! |----------|-----------------|
//! | `Ce`       | mean cross entropy on noisy labels |
//! | `Forward`  | mean `-log (T f(x))_y~` |
//! | `Backward` | mean `sum_k Tinv[k][y~] (-log f(x)_k)` |
//! | `Reweight` | `(1/B) sum_i raw_i CE_i` |
//! | `Dws`      | `(1/M) sum_j sum_i w_ij CE_i`, `w_j ~ Dir(alpha mu)` |
//! | `Rent`     | `(1/M) sum_i n_i CE_i`, `n ~ Multi(M; mu)` |
//! | `Snl`      | `sum_i CE_i + sigma sum_i sum_k z_ik (-log f(x_i)_k)` |
//!
//! `raw_i = f(x_i)_y~ / (T f(x_i))_y~` and `mu` is `raw` normalized over the
//! pool. The weights are treated as constants when differentiating.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    BatchForward, BatchGrad, Classifier, ClassifierError, Example, Predictor, MAX_NLL, PROB_FLOOR,
};
use crate::data::{DataError, NoisyDataset};
use crate::linalg::{LinalgError, ProbVector};
use crate::rng::SeededRng;
use crate::sampling::{
    categorical_sample, dirichlet_sample, multinomial_sample, standard_normal, DirichletParams,
    SamplingError,
};
use crate::transition::{TransitionError, TransitionMatrix};

pub use crate::sampling::ResampleCounts;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("sampling pool is empty")]
    EmptyPool,
    #[error("dataset has no posterior oracle")]
    MissingOracle,
    #[error("{0}")]
    InvalidConfig(&'static str),
    #[error("weights cover {weights} samples but {labels} labels were given")]
    LengthMismatch { weights: usize, labels: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Importance weights of a sampling pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    raw: Vec<f64>,
    normalized: ProbVector,
    /// Samples whose denominator `(T f)_y~` was floored.
    pub clamped: Vec<usize>,
    /// Set when every raw weight was zero and uniform weights were used.
    pub uniform_fallback: bool,
}

impl SampleWeights {
    /// Build from raw non-negative weights.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self, RiskError> {
        if raw.is_empty() {
            return Err(RiskError::EmptyPool);
        }
        let (normalized, uniform_fallback) = match ProbVector::from_weights(raw.clone()) {
            Ok(p) => (p, false),
            Err(LinalgError::ZeroMass) => {
                log::warn!(
                    "all {} importance weights are zero; falling back to uniform",
                    raw.len()
                );
                (ProbVector::uniform(raw.len()), true)
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Self {
            raw,
            normalized,
            clamped: Vec::new(),
            uniform_fallback,
        })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &ProbVector {
        &self.normalized
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Importance weights from per-sample class posteriors and noisy labels.
pub fn weights_from_posteriors<'a, I>(rows: I, t: &TransitionMatrix) -> Result<SampleWeights, RiskError>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
{
    let mut raw = Vec::new();
    let mut clamped = Vec::new();
    for (i, (p, label)) in rows.into_iter().enumerate() {
        if p.len() != t.num_classes() {
            return Err(TransitionError::DimensionMismatch {
                expected: t.num_classes(),
                actual: p.len(),
            }
            .into());
        }
        let mut den = t.apply_row(label, p);
        if den < PROB_FLOOR {
            den = PROB_FLOOR;
            clamped.push(i);
        }
        raw.push(p[label] / den);
    }
    let mut w = SampleWeights::from_raw(raw)?;
    w.clamped = clamped;
    Ok(w)
}

/// `raw_i = f(x_i)_y~ / (T f(x_i))_y~` over `pool`, normalized over the pool.
pub fn compute_weights<P: Predictor + ?Sized>(
    model: &P,
    t: &TransitionMatrix,
    pool: &[Example<'_>],
) -> Result<SampleWeights, RiskError> {
    if pool.is_empty() {
        return Err(RiskError::EmptyPool);
    }
    let probs: Vec<Vec<f64>> = pool.iter().map(|e| model.predict(e.features)).collect();
    weights_from_posteriors(
        probs.iter().zip(pool).map(|(p, e)| (p.as_slice(), e.label)),
        t,
    )
}

fn weights_from_forward(
    fwd: &BatchForward,
    batch: &[Example<'_>],
    t: &TransitionMatrix,
) -> Result<SampleWeights, RiskError> {
    weights_from_posteriors(
        batch.iter().enumerate().map(|(i, e)| (fwd.probs_of(i), e.label)),
        t,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwsConfig {
    pub alpha: f64,
    /// Number of weight vectors drawn per step.
    pub weight_draws: usize,
}

impl Default for DwsConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            weight_draws: 1,
        }
    }
}

impl DwsConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(RiskError::InvalidConfig("alpha must be finite and positive"));
        }
        if self.weight_draws == 0 {
            return Err(RiskError::InvalidConfig("weight_draws must be at least 1"));
        }
        Ok(())
    }
}

/// Resampling budget, absolute or relative to the pool size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Count(u64),
    Ratio(f64),
}

impl Budget {
    pub fn resolve(&self, pool: usize) -> Result<u64, RiskError> {
        let m = match *self {
            Budget::Count(m) => m,
            Budget::Ratio(r) => {
                if !(r.is_finite() && r > 0.0) {
                    return Err(RiskError::InvalidConfig("budget ratio must be positive"));
                }
                libm::round(r * pool as f64) as u64
            }
        };
        Ok(m.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// Resample within each minibatch.
    #[default]
    Batch,
    /// Resample from the whole training set once per epoch.
    Global,
    /// Like `Global`, but each noisy class gets a budget share proportional
    /// to its frequency.
    GlobalClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RentConfig {
    pub budget: Budget,
    pub strategy: SamplingStrategy,
}

impl Default for RentConfig {
    fn default() -> Self {
        Self {
            budget: Budget::Ratio(1.0),
            strategy: SamplingStrategy::Batch,
        }
    }
}

/// Multinomial resampling of a pool according to its normalized weights.
///
/// `labels` are the pool's noisy labels; they are only consulted by
/// [`SamplingStrategy::GlobalClass`].
pub fn rent_resample(
    weights: &SampleWeights,
    labels: &[usize],
    cfg: &RentConfig,
    rng: &mut SeededRng,
) -> Result<ResampleCounts, RiskError> {
    let n = weights.len();
    if n == 0 {
        return Err(RiskError::EmptyPool);
    }
    let m = cfg.budget.resolve(n)?;
    match cfg.strategy {
        SamplingStrategy::Batch | SamplingStrategy::Global => {
            Ok(multinomial_sample(m, weights.normalized().as_slice(), rng)?)
        }
        SamplingStrategy::GlobalClass => {
            if labels.len() != n {
                return Err(RiskError::LengthMismatch {
                    weights: n,
                    labels: labels.len(),
                });
            }
            let classes = labels.iter().copied().max().unwrap_or(0) + 1;
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &y) in labels.iter().enumerate() {
                members[y].push(i);
            }
            let shares = apportion(m, &members.iter().map(|v| v.len()).collect::<Vec<_>>());
            let mut counts = vec![0u64; n];
            let p = weights.normalized().as_slice();
            for (idx, share) in members.iter().zip(shares) {
                if share == 0 {
                    continue;
                }
                let mut local: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
                if local.iter().sum::<f64>() <= 0.0 {
                    local.iter_mut().for_each(|v| *v = 1.0);
                }
                let drawn = multinomial_sample(share, &local, rng)?;
                for (&i, &c) in idx.iter().zip(drawn.counts()) {
                    counts[i] = c;
                }
            }
            Ok(ResampleCounts::new(counts))
        }
    }
}

/// Split `total` proportionally to `sizes` by largest remainder.
fn apportion(total: u64, sizes: &[usize]) -> Vec<u64> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / n as f64)
        .collect();
    let mut shares: Vec<u64> = exact.iter().map(|&e| libm::floor(e) as u64).collect();
    let mut left = total - shares.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - libm::floor(exact[a]);
        let rb = exact[b] - libm::floor(exact[b]);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if sizes[i] > 0 {
            shares[i] += 1;
            left -= 1;
        }
    }
    shares
}

/// Reweighting: `(1/B) sum_i raw_i CE_i`.
pub fn rw_loss_grad(
    model: &Classifier,
    t: &TransitionMatrix,
    batch: &[Example<'_>],
) -> Result<BatchGrad, RiskError> {
    if batch.is_empty() {
        return Err(RiskError::EmptyPool);
    }
    let fwd = model.forward_batch(batch)?;
    let w = weights_from_forward(&fwd, batch, t)?;
    let scale = 1.0 / batch.len() as f64;
    let mult: Vec<f64> = w.raw().iter().map(|r| r * scale).collect();
    Ok(model.weighted_ce_from_forward(batch, &fwd, &mult)?)
}

/// Dirichlet weight sampling: average of `weight_draws` draws from
/// `Dir(alpha * mu)` applied to the per-sample cross entropy.
pub fn dws_loss_grad(
    model: &Classifier,
    t: &TransitionMatrix,
    batch: &[Example<'_>],
    cfg: &DwsConfig,
    rng: &mut SeededRng,
) -> Result<BatchGrad, RiskError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(RiskError::EmptyPool);
    }
    let fwd = model.forward_batch(batch)?;
    let w = weights_from_forward(&fwd, batch, t)?;
    let mult = mean_dirichlet_draw(w.normalized(), cfg, rng)?;
    Ok(model.weighted_ce_from_forward(batch, &fwd, &mult)?)
}

/// `(1/M) sum_j w_j` for `M = cfg.weight_draws` draws from `Dir(alpha * mu)`.
pub fn mean_dirichlet_draw(
    mu: &ProbVector,
    cfg: &DwsConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>, RiskError> {
    let params = DirichletParams::new(cfg.alpha, mu.clone())?;
    let mut acc = vec![0.0; mu.len()];
    for _ in 0..cfg.weight_draws {
        let w = dirichlet_sample(&params, rng);
        for (a, v) in acc.iter_mut().zip(w.as_slice()) {
            *a += v;
        }
    }
    let inv = 1.0 / cfg.weight_draws as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Resampling: `(1/M) sum_i n_i CE_i` with counts drawn over the batch.
pub fn rent_loss_grad(
    model: &Classifier,
    t: &TransitionMatrix,
    batch: &[Example<'_>],
    cfg: &RentConfig,
    rng: &mut SeededRng,
) -> Result<BatchGrad, RiskError> {
    if batch.is_empty() {
        return Err(RiskError::EmptyPool);
    }
    let fwd = model.forward_batch(batch)?;
    let w = weights_from_forward(&fwd, batch, t)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let counts = rent_resample(&w, &labels, cfg, rng)?;
    let m = counts.budget() as f64;
    let mult: Vec<f64> = counts.counts().iter().map(|&c| c as f64 / m).collect();
    Ok(model.weighted_ce_from_forward(batch, &fwd, &mult)?)
}

/// Stochastic label-noise perturbation with fresh standard-normal `z`.
pub fn snl_loss_grad(
    model: &Classifier,
    batch: &[Example<'_>],
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<BatchGrad, RiskError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(RiskError::InvalidConfig("sigma must be finite and non-negative"));
    }
    let c = model.num_classes();
    let z: Vec<f64> = (0..batch.len() * c).map(|_| standard_normal(rng)).collect();
    snl_loss_grad_with_noise(model, batch, sigma, &z)
}

/// [`snl_loss_grad`] with a caller-supplied `B x C` noise matrix.
pub fn snl_loss_grad_with_noise(
    model: &Classifier,
    batch: &[Example<'_>],
    sigma: f64,
    z: &[f64],
) -> Result<BatchGrad, RiskError> {
    let c = model.num_classes();
    let mut coeffs: Vec<f64> = z.iter().map(|v| sigma * v).collect();
    if coeffs.len() != batch.len() * c {
        return Err(ClassifierError::LengthMismatch {
            expected: batch.len() * c,
            actual: coeffs.len(),
        }
        .into());
    }
    for (i, e) in batch.iter().enumerate() {
        if e.label < c {
            coeffs[i * c + e.label] += 1.0;
        }
    }
    Ok(model.class_weighted_ce_grad(batch, &coeffs)?)
}

/// True importance weights from the exact clean posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleWeights {
    pub raw: Vec<f64>,
    pub mu_star: ProbVector,
}

/// `mu*_i ∝ p(Y = y~_i | x_i) / (T p(Y | x_i))_{y~_i}` over the whole dataset.
pub fn oracle_weights(ds: &NoisyDataset, t: &TransitionMatrix) -> Result<OracleWeights, RiskError> {
    let oracle = ds.posterior_oracle().ok_or(RiskError::MissingOracle)?;
    let pool: Vec<Example<'_>> = ds
        .instances()
        .iter()
        .map(|i| Example {
            features: &i.features,
            label: i.noisy_label,
        })
        .collect();
    let w = compute_weights(oracle, t, &pool)?;
    Ok(OracleWeights {
        mu_star: w.normalized().clone(),
        raw: w.raw,
    })
}

/// A utilization strategy together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Ce,
    Forward,
    Backward,
    Reweight,
    Dws(DwsConfig),
    Rent(RentConfig),
    Snl { sigma: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ce => "ce",
            Strategy::Forward => "fl",
            Strategy::Backward => "bw",
            Strategy::Reweight => "rw",
            Strategy::Dws(_) => "dws",
            Strategy::Rent(_) => "rent",
            Strategy::Snl { .. } => "snl",
        }
    }

    /// Batch loss and gradient under this strategy.
    pub fn loss_grad(
        &self,
        model: &Classifier,
        t: &TransitionMatrix,
        batch: &[Example<'_>],
        rng: &mut SeededRng,
    ) -> Result<BatchGrad, RiskError> {
        if batch.is_empty() {
            return Err(RiskError::EmptyPool);
        }
        match self {
            Strategy::Ce => {
                let w = vec![1.0 / batch.len() as f64; batch.len()];
                Ok(model.weighted_ce_grad(batch, &w)?)
            }
            Strategy::Forward => Ok(model.forward_loss_grad(t, batch)?),
            Strategy::Backward => Ok(model.backward_loss_grad(t, batch)?),
            Strategy::Reweight => rw_loss_grad(model, t, batch),
            Strategy::Dws(cfg) => dws_loss_grad(model, t, batch, cfg, rng),
            Strategy::Rent(cfg) => rent_loss_grad(model, t, batch, cfg, rng),
            Strategy::Snl { sigma } => snl_loss_grad(model, batch, *sigma, rng),
        }
    }
}

/// A finite input space with known `p(x)`, `p(Y | x)` and a fixed model
/// output per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDomain {
    pub point_probs: ProbVector,
    pub clean_posteriors: Vec<ProbVector>,
    pub model_outputs: Vec<ProbVector>,
}

impl FiniteDomain {
    pub fn new(
        point_probs: ProbVector,
        clean_posteriors: Vec<ProbVector>,
        model_outputs: Vec<ProbVector>,
    ) -> Result<Self, RiskError> {
        let k = point_probs.len();
        if clean_posteriors.len() != k || model_outputs.len() != k {
            return Err(RiskError::InvalidConfig(
                "finite domain needs one posterior and one model output per point",
            ));
        }
        let c = clean_posteriors[0].len();
        if clean_posteriors
            .iter()
            .chain(&model_outputs)
            .any(|p| p.len() != c)
        {
            return Err(RiskError::InvalidConfig("inconsistent class count"));
        }
        Ok(Self {
            point_probs,
            clean_posteriors,
            model_outputs,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.clean_posteriors[0].len()
    }

    fn loss(&self, point: usize, label: usize) -> f64 {
        (-libm::log(self.model_outputs[point][label].max(PROB_FLOOR))).min(MAX_NLL)
    }

    /// `R_l = E_{p(x, y)}[-log f(x)_y]` by enumeration.
    pub fn exact_risk(&self) -> f64 {
        let c = self.num_classes();
        (0..self.point_probs.len())
            .map(|x| {
                self.point_probs[x]
                    * (0..c)
                        .map(|y| self.clean_posteriors[x][y] * self.loss(x, y))
                        .sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub sample_size: usize,
    pub budget: u64,
    pub trials: usize,
    pub exact_risk: f64,
    pub mean_empirical_risk: f64,
    /// `|mean_t R_emp - R_l|`.
    pub mean_gap: f64,
    /// `sqrt(mean_t (R_emp - R_l)^2)`.
    pub rms_gap: f64,
}

impl ConsistencyReport {
    pub fn relative_gap(&self) -> f64 {
        self.mean_gap / self.exact_risk.abs()
    }
}

/// Monte-Carlo check that the resampled empirical risk with oracle weights
/// converges to the clean risk.
///
/// Each trial draws `sample_size` noisy-labelled instances from the domain,
/// weights them with the exact importance ratio, resamples `budget` of them
/// (`None` means `budget = sample_size`) and evaluates the resampled risk.
pub fn rent_consistency_check(
    domain: &FiniteDomain,
    t: &TransitionMatrix,
    sample_size: usize,
    budget: Option<u64>,
    trials: usize,
    rng: &mut SeededRng,
) -> Result<ConsistencyReport, RiskError> {
    let c = domain.num_classes();
    if t.num_classes() != c {
        return Err(TransitionError::DimensionMismatch {
            expected: c,
            actual: t.num_classes(),
        }
        .into());
    }
    if sample_size == 0 || trials == 0 {
        return Err(RiskError::EmptyPool);
    }
    let exact = domain.exact_risk();
    let cfg = RentConfig {
        budget: budget.map_or(Budget::Ratio(1.0), Budget::Count),
        strategy: SamplingStrategy::Batch,
    };
    let columns: Vec<Vec<f64>> = (0..c).map(|k| t.column(k)).collect();
    let mut points = vec![0usize; sample_size];
    let mut noisy = vec![0usize; sample_size];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut m_used = 0;
    for _ in 0..trials {
        for i in 0..sample_size {
            let x = categorical_sample(domain.point_probs.as_slice(), rng);
            let y = categorical_sample(domain.clean_posteriors[x].as_slice(), rng);
            points[i] = x;
            noisy[i] = categorical_sample(&columns[y], rng);
        }
        let weights = weights_from_posteriors(
            points
                .iter()
                .zip(&noisy)
                .map(|(&x, &y)| (domain.clean_posteriors[x].as_slice(), y)),
            t,
        )?;
        let counts = rent_resample(&weights, &noisy, &cfg, rng)?;
        m_used = counts.budget();
        let risk = counts
            .counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| n as f64 * domain.loss(points[i], noisy[i]))
            .sum::<f64>()
            / m_used as f64;
        sum += risk;
        sum_sq += (risk - exact) * (risk - exact);
    }
    let mean = sum / trials as f64;
    Ok(ConsistencyReport {
        sample_size,
        budget: m_used,
        trials,
        exact_risk: exact,
        mean_empirical_risk: mean,
        mean_gap: (mean - exact).abs(),
        rms_gap: libm::sqrt(sum_sq / trials as f64),
    })
}

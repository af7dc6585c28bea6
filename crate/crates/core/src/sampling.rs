//! Gamma, Dirichlet, categorical and multinomial sampling, plus the closed
//! forms for Dirichlet moments and the Mahalanobis distance between a target
//! weight vector and the average of `m` Dirichlet draws.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, ProbVector, SquareMatrix};
use crate::rng::SeededRng;

/// Smallest Gamma shape used when drawing Dirichlet components.
pub const MIN_GAMMA_SHAPE: f64 = 1e-8;

/// Relative eigenvalue cutoff for the covariance pseudo-inverse.
pub const PINV_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("concentration must be finite and positive, got {0}")]
    InvalidConcentration(f64),
    #[error("base measure entry {index} is {value}")]
    InvalidBaseMeasure { index: usize, value: f64 },
    #[error("probability entry {index} is NaN")]
    NanProbability { index: usize },
    #[error("sample budget must be at least 1")]
    ZeroBudget,
    #[error("covariance has rank {rank}, need {required} on the simplex tangent space")]
    RankDeficient { rank: usize, required: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Parameters of `Dir(alpha * mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: f64,
    mu: ProbVector,
}

impl DirichletParams {
    pub fn new(alpha: f64, mu: ProbVector) -> Result<Self, SamplingError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(SamplingError::InvalidConcentration(alpha));
        }
        Ok(Self { alpha, mu })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> &ProbVector {
        &self.mu
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Gamma shapes `alpha * mu_i`, clamped below at [`MIN_GAMMA_SHAPE`].
    pub fn shapes(&self) -> impl Iterator<Item = f64> + '_ {
        self.mu
            .as_slice()
            .iter()
            .map(move |&m| (self.alpha * m).max(MIN_GAMMA_SHAPE))
    }
}

/// Standard normal draw.
pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Natural log of a `Gamma(shape, 1)` draw.
///
/// Works in log space so that tiny shapes, whose draws underflow `f64`, still
/// produce usable relative magnitudes.
pub fn ln_gamma_sample(shape: f64, rng: &mut SeededRng) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        // G(a) = G(a + 1) * U^(1/a)
        let boosted = ln_gamma_sample(shape + 1.0, rng);
        return boosted + libm::log(rng.open_unit()) / shape;
    }
    // Marsaglia & Tsang squeeze.
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / libm::sqrt(9.0 * d);
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.open_unit();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2
            || libm::log(u) < 0.5 * x2 + d * (1.0 - v + libm::log(v))
        {
            return libm::log(d) + libm::log(v);
        }
    }
}

/// One draw from `Dir(alpha * mu)` by normalizing independent Gamma draws.
pub fn dirichlet_sample(params: &DirichletParams, rng: &mut SeededRng) -> ProbVector {
    if params.dim() == 1 {
        return ProbVector::from_raw_unchecked(vec![1.0]);
    }
    let logs: Vec<f64> = params.shapes().map(|s| ln_gamma_sample(s, rng)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logs.iter().map(|&l| libm::exp(l - top)).collect();
    let sum: f64 = w.iter().sum();
    for x in &mut w {
        *x /= sum;
    }
    ProbVector::from_raw_unchecked(w)
}

/// Mean and covariance of `Dir(alpha * mu)`.
///
/// `Var(w_i) = mu_i (1 - mu_i) / (alpha + 1)` and
/// `Cov(w_i, w_k) = -mu_i mu_k / (alpha + 1)`.
pub fn dirichlet_moments(params: &DirichletParams) -> (ProbVector, SquareMatrix) {
    let mu = params.mu().as_slice();
    let scale = 1.0 / (params.alpha() + 1.0);
    let cov = SquareMatrix::from_fn(mu.len(), |i, k| {
        if i == k {
            mu[i] * (1.0 - mu[i]) * scale
        } else {
            -mu[i] * mu[k] * scale
        }
    });
    (params.mu().clone(), cov)
}

/// The alpha-free factor `S = diag(mu) - mu mu^T` with `Sigma = S / (alpha + 1)`.
pub fn dirichlet_shape_matrix(mu: &ProbVector) -> SquareMatrix {
    let mu = mu.as_slice();
    SquareMatrix::from_fn(mu.len(), |i, k| {
        if i == k {
            mu[i] * (1.0 - mu[i])
        } else {
            -mu[i] * mu[k]
        }
    })
}

/// Per-category counts of a multinomial draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleCounts {
    counts: Vec<u64>,
    budget: u64,
}

impl ResampleCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        let budget = counts.iter().sum();
        Self { counts, budget }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn into_counts(self) -> Vec<u64> {
        self.counts
    }
}

/// `m` independent categorical draws from `p`, tallied per category.
pub fn multinomial_sample(
    m: u64,
    p: &[f64],
    rng: &mut SeededRng,
) -> Result<ResampleCounts, SamplingError> {
    if m == 0 {
        return Err(SamplingError::ZeroBudget);
    }
    if let Some(index) = p.iter().position(|v| v.is_nan()) {
        return Err(SamplingError::NanProbability { index });
    }
    let mut counts = vec![0u64; p.len()];
    let positive: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    match positive.len() {
        0 => return Err(LinalgError::ZeroMass.into()),
        1 => counts[positive[0]] = m,
        _ => {
            let dist = WeightedIndex::new(p).map_err(|_| LinalgError::ZeroMass)?;
            for _ in 0..m {
                counts[dist.sample(rng)] += 1;
            }
        }
    }
    Ok(ResampleCounts { counts, budget: m })
}

/// A single categorical draw.
pub fn categorical_sample(p: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.unit() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Mahalanobis distance between `target` and the mean of `m` draws from
/// `Dir(alpha * mu)`:
///
/// `sqrt(m (alpha + 1) (target - mu)^T S^+ (target - mu))`
///
/// `S` has rank `N - 1` (its null space is the all-ones direction), so the
/// Moore-Penrose pseudo-inverse is used; this is the distance measured on the
/// tangent space of the simplex.
pub fn mahalanobis_distance(
    target: &ProbVector,
    params: &DirichletParams,
    m: u64,
) -> Result<f64, SamplingError> {
    let n = params.dim();
    if target.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: target.len(),
        }
        .into());
    }
    if m == 0 {
        return Err(SamplingError::ZeroBudget);
    }
    if let Some((index, &value)) = params
        .mu()
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, &v)| v <= 0.0)
    {
        return Err(SamplingError::InvalidBaseMeasure { index, value });
    }
    let shape = dirichlet_shape_matrix(params.mu());
    let (pinv, rank) = shape.symmetric_pseudo_inverse(PINV_REL_TOL);
    let required = n.saturating_sub(1);
    if rank < required {
        return Err(SamplingError::RankDeficient { rank, required });
    }
    let diff: Vec<f64> = target
        .as_slice()
        .iter()
        .zip(params.mu().as_slice())
        .map(|(t, u)| t - u)
        .collect();
    let q = pinv.quadratic_form(&diff).max(0.0);
    Ok(libm::sqrt(m as f64 * (params.alpha() + 1.0) * q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_concentration() {
        assert!(DirichletParams::new(0.0, pv(&[0.5, 0.5])).is_err());
        assert!(DirichletParams::new(f64::NAN, pv(&[0.5, 0.5])).is_err());
        assert!(DirichletParams::new(f64::INFINITY, pv(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn one_dimensional_dirichlet_is_constant() {
        let mut rng = SeededRng::new(3);
        for alpha in [1e-3, 1.0, 1e6] {
            let p = DirichletParams::new(alpha, pv(&[1.0])).unwrap();
            assert_eq!(dirichlet_sample(&p, &mut rng).as_slice(), &[1.0]);
        }
    }

    #[test]
    fn huge_alpha_concentrates_at_mean() {
        let mut rng = SeededRng::new(11);
        let mu = [0.7, 0.2, 0.1];
        let p = DirichletParams::new(1e6, pv(&mu)).unwrap();
        let close = (0..1000)
            .filter(|_| {
                let w = dirichlet_sample(&p, &mut rng);
                w.as_slice()
                    .iter()
                    .zip(&mu)
                    .all(|(a, b)| (a - b).abs() < 0.01)
            })
            .count();
        assert!(close as f64 / 1000.0 > 0.99);
    }

    #[test]
    fn tiny_alpha_clusters_at_vertices() {
        let mut rng = SeededRng::new(5);
        let p = DirichletParams::new(1e-3, pv(&[0.5, 0.5])).unwrap();
        let n = 10_000;
        let mut hits = 0;
        let mut first = 0;
        for _ in 0..n {
            let w = dirichlet_sample(&p, &mut rng);
            assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if w.max() > 0.99 {
                hits += 1;
            }
            if w.argmax() == 0 {
                first += 1;
            }
        }
        assert!(hits as f64 / n as f64 > 0.95);
        // each vertex is hit with probability mu_i
        assert!((first as f64 / n as f64 - 0.5).abs() < 0.03);
    }

    #[test]
    fn moments_closed_form() {
        let p = DirichletParams::new(1.0, pv(&[0.7, 0.2, 0.1])).unwrap();
        let (mean, cov) = dirichlet_moments(&p);
        assert_eq!(mean.as_slice(), &[0.7, 0.2, 0.1]);
        assert!((cov.get(0, 0) - 0.105).abs() < 1e-15);
        assert!((cov.get(0, 1) + 0.07).abs() < 1e-15);
        assert!((cov.get(1, 0) + 0.07).abs() < 1e-15);
    }

    #[test]
    fn multinomial_edge_cases() {
        let mut rng = SeededRng::new(9);
        let c = multinomial_sample(4, &[1.0, 0.0, 0.0], &mut rng).unwrap();
        assert_eq!(c.counts(), &[4, 0, 0]);
        let c = multinomial_sample(1, &[0.2; 5], &mut rng).unwrap();
        assert_eq!(c.counts().iter().filter(|&&n| n == 1).count(), 1);
        assert_eq!(c.budget(), 1);
        assert!(matches!(
            multinomial_sample(3, &[0.5, f64::NAN], &mut rng),
            Err(SamplingError::NanProbability { index: 1 })
        ));
        assert!(matches!(
            multinomial_sample(0, &[1.0], &mut rng),
            Err(SamplingError::ZeroBudget)
        ));
    }

    #[test]
    fn multinomial_marginal() {
        let mut rng = SeededRng::new(21);
        let m = 100_000;
        let c = multinomial_sample(m, &[0.2, 0.8], &mut rng).unwrap();
        assert_eq!(c.budget(), m);
        assert_eq!(c.counts().iter().sum::<u64>(), m);
        // 3 sigma of a binomial proportion: 3 * sqrt(0.16 / 1e5) ~ 0.0038
        assert!((c.counts()[0] as f64 / m as f64 - 0.2).abs() < 0.005);
    }

    #[test]
    fn mahalanobis_zero_at_mean() {
        let p = DirichletParams::new(3.0, pv(&[0.5, 0.3, 0.2])).unwrap();
        let d = mahalanobis_distance(&pv(&[0.5, 0.3, 0.2]), &p, 10).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_alpha_scaling_is_exact() {
        let mu = pv(&[0.5, 0.3, 0.2]);
        let target = pv(&[0.4, 0.4, 0.2]);
        let d8 = mahalanobis_distance(&target, &DirichletParams::new(8.0, mu.clone()).unwrap(), 10)
            .unwrap();
        let d2 = mahalanobis_distance(&target, &DirichletParams::new(2.0, mu).unwrap(), 10).unwrap();
        assert!((d8 / d2 - libm::sqrt(3.0)).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_rejects_zero_base_measure() {
        let p = DirichletParams::new(1.0, pv(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            mahalanobis_distance(&pv(&[0.5, 0.5]), &p, 1),
            Err(SamplingError::InvalidBaseMeasure { index: 1, .. })
        ));
    }
}

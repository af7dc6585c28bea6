//! Softmax classifiers (linear or one-hidden-layer ReLU MLP) with hand-written
//! gradients for cross entropy and the transition-corrected losses.
//!
//! Parameters are stored in one flat vector:
//!
//! * `Linear`: `W[C][d]` then `b[C]`
//! * `Mlp`: `W1[H][d]`, `b1[H]`, `W2[C][H]`, `b2[C]`
//!
//! Every `-log p` term is clamped at `-ln(1e-12)`. A clamped term keeps its
//! analytic gradient and is counted in [`BatchGrad::clamped`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{ProbVector, SquareMatrix};
use crate::rng::SeededRng;
use crate::transition::{TransitionError, TransitionMatrix};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln(PROB_FLOOR)`.
pub const MAX_NLL: f64 = 27.631021115928547;

/// Anything that maps features to a distribution over classes.
pub trait Predictor {
    fn num_classes(&self) -> usize;

    /// Class probabilities for `x`.
    fn predict(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("expected {expected} features, got {actual}")]
    FeatureCount { expected: usize, actual: usize },
    #[error("non-finite feature in sample {sample}")]
    NonFiniteInput { sample: usize },
    #[error("label {label} of sample {sample} is outside 0..{classes}")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error("weight {value} of sample {sample} is not finite and non-negative")]
    InvalidWeight { sample: usize, value: f64 },
    #[error("expected {expected} per-sample values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("expected {expected} parameters, got {actual}")]
    ParameterCount { expected: usize, actual: usize },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("transition matrix has {actual} classes, model has {expected}")]
    ClassMismatch { expected: usize, actual: usize },
    #[error("hidden width must be positive")]
    EmptyHiddenLayer,
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

impl Architecture {
    pub fn param_count(&self, input_dim: usize, num_classes: usize) -> usize {
        match *self {
            Architecture::Linear => num_classes * (input_dim + 1),
            Architecture::Mlp { hidden } => {
                hidden * (input_dim + 1) + num_classes * (hidden + 1)
            }
        }
    }
}

/// A labelled input borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// Loss value and gradient of a batch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Number of log terms that hit the probability floor.
    pub clamped: usize,
    /// Per-sample multipliers of the cross entropy terms, for objectives of
    /// the form `sum_i c_i CE_i`; empty otherwise.
    pub effective_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    architecture: Architecture,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

/// Activations of a batch, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct BatchForward {
    num_classes: usize,
    hidden_width: usize,
    /// `B x C` softmax outputs.
    pub probs: Vec<f64>,
    /// `B x C` log-softmax outputs.
    pub log_probs: Vec<f64>,
    hidden: Vec<f64>,
}

impl BatchForward {
    pub fn len(&self) -> usize {
        self.probs.len() / self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs_of(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn log_probs_of(&self, i: usize) -> &[f64] {
        &self.log_probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Clamped `-log p_k` for sample `i`, and whether the clamp fired.
    pub fn nll(&self, i: usize, k: usize) -> (f64, bool) {
        clamp_nll(-self.log_probs[i * self.num_classes + k])
    }
}

#[inline]
fn clamp_nll(v: f64) -> (f64, bool) {
    if v > MAX_NLL {
        (MAX_NLL, true)
    } else {
        (v, false)
    }
}

impl Classifier {
    /// All-zero parameters.
    pub fn zeros(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self, ClassifierError> {
        if let Architecture::Mlp { hidden: 0 } = architecture {
            return Err(ClassifierError::EmptyHiddenLayer);
        }
        Ok(Self {
            architecture,
            input_dim,
            num_classes,
            params: vec![0.0; architecture.param_count(input_dim, num_classes)],
        })
    }

    /// Seeded initialization: zeros for `Linear`, Kaiming-style uniform
    /// weights and zero biases for `Mlp`.
    pub fn init(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        rng: &mut SeededRng,
    ) -> Result<Self, ClassifierError> {
        let mut c = Self::zeros(architecture, input_dim, num_classes)?;
        if let Architecture::Mlp { hidden } = architecture {
            let d = input_dim;
            let b1 = libm::sqrt(6.0 / d.max(1) as f64);
            for w in &mut c.params[..hidden * d] {
                *w = b1 * (2.0 * rng.unit() - 1.0);
            }
            let off = hidden * (d + 1);
            let b2 = libm::sqrt(3.0 / hidden as f64);
            for w in &mut c.params[off..off + num_classes * hidden] {
                *w = b2 * (2.0 * rng.unit() - 1.0);
            }
        }
        Ok(c)
    }

    pub fn with_params(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        params: Vec<f64>,
    ) -> Result<Self, ClassifierError> {
        let mut c = Self::zeros(architecture, input_dim, num_classes)?;
        c.set_params(params)?;
        Ok(c)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), ClassifierError> {
        if params.len() != self.params.len() {
            return Err(ClassifierError::ParameterCount {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn hidden_width(&self) -> usize {
        match self.architecture {
            Architecture::Linear => 0,
            Architecture::Mlp { hidden } => hidden,
        }
    }

    /// Logits for one input; fills `hidden` with post-ReLU activations.
    fn logits(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let d = self.input_dim;
        let c = self.num_classes;
        let p = &self.params;
        match self.architecture {
            Architecture::Linear => {
                let bias = &p[c * d..];
                for k in 0..c {
                    let row = &p[k * d..(k + 1) * d];
                    logits[k] = bias[k] + dot(row, x);
                }
            }
            Architecture::Mlp { hidden: h } => {
                let b1 = &p[h * d..h * (d + 1)];
                for j in 0..h {
                    let row = &p[j * d..(j + 1) * d];
                    hidden[j] = (b1[j] + dot(row, x)).max(0.0);
                }
                let off = h * (d + 1);
                let b2 = &p[off + c * h..];
                for k in 0..c {
                    let row = &p[off + k * h..off + (k + 1) * h];
                    logits[k] = b2[k] + dot(row, hidden);
                }
            }
        }
    }

    fn check_input(&self, sample: usize, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() != self.input_dim {
            return Err(ClassifierError::FeatureCount {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFiniteInput { sample });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[Example<'_>]) -> Result<(), ClassifierError> {
        for (i, ex) in batch.iter().enumerate() {
            self.check_input(i, ex.features)?;
            if ex.label >= self.num_classes {
                return Err(ClassifierError::LabelOutOfRange {
                    sample: i,
                    label: ex.label,
                    classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    fn check_transition(&self, t: &TransitionMatrix) -> Result<(), ClassifierError> {
        if t.num_classes() != self.num_classes {
            return Err(ClassifierError::ClassMismatch {
                expected: self.num_classes,
                actual: t.num_classes(),
            });
        }
        Ok(())
    }

    /// `softmax(g(x; theta))`.
    pub fn forward(&self, x: &[f64]) -> Result<ProbVector, ClassifierError> {
        self.check_input(0, x)?;
        Ok(ProbVector::from_raw_unchecked(self.predict(x)))
    }

    /// Forward pass over features only, ignoring labels.
    pub fn forward_features<X: AsRef<[f64]>>(
        &self,
        xs: &[X],
    ) -> Result<BatchForward, ClassifierError> {
        let c = self.num_classes;
        let h = self.hidden_width();
        let mut out = BatchForward {
            num_classes: c,
            hidden_width: h,
            probs: vec![0.0; xs.len() * c],
            log_probs: vec![0.0; xs.len() * c],
            hidden: vec![0.0; xs.len() * h],
        };
        let mut z = vec![0.0; c];
        for (i, x) in xs.iter().enumerate() {
            let x = x.as_ref();
            self.check_input(i, x)?;
            self.logits(x, &mut out.hidden[i * h..(i + 1) * h], &mut z);
            let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &zk in &z {
                sum += libm::exp(zk - top);
            }
            let lse = top + libm::log(sum);
            for k in 0..c {
                let lp = z[k] - lse;
                out.log_probs[i * c + k] = lp;
                out.probs[i * c + k] = libm::exp(lp);
            }
        }
        Ok(out)
    }

    /// Forward pass over a labelled batch.
    pub fn forward_batch(&self, batch: &[Example<'_>]) -> Result<BatchForward, ClassifierError> {
        self.check_batch(batch)?;
        let xs: Vec<&[f64]> = batch.iter().map(|e| e.features).collect();
        self.forward_features(&xs)
    }

    /// Gradient of `sum_i sum_k dlogits[i][k] * z_ik` w.r.t. the parameters.
    pub fn backprop(
        &self,
        batch: &[Example<'_>],
        fwd: &BatchForward,
        dlogits: &[f64],
    ) -> Vec<f64> {
        let d = self.input_dim;
        let c = self.num_classes;
        let mut grad = vec![0.0; self.params.len()];
        match self.architecture {
            Architecture::Linear => {
                let (gw, gb) = grad.split_at_mut(c * d);
                for (i, ex) in batch.iter().enumerate() {
                    let dz = &dlogits[i * c..(i + 1) * c];
                    for k in 0..c {
                        if dz[k] == 0.0 {
                            continue;
                        }
                        axpy(dz[k], ex.features, &mut gw[k * d..(k + 1) * d]);
                        gb[k] += dz[k];
                    }
                }
            }
            Architecture::Mlp { hidden: h } => {
                let p = &self.params;
                let off = h * (d + 1);
                let mut dh = vec![0.0; h];
                let (first, second) = grad.split_at_mut(off);
                let (gw1, gb1) = first.split_at_mut(h * d);
                let (gw2, gb2) = second.split_at_mut(c * h);
                for (i, ex) in batch.iter().enumerate() {
                    let dz = &dlogits[i * c..(i + 1) * c];
                    if dz.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let act = &fwd.hidden[i * h..(i + 1) * h];
                    dh.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..c {
                        if dz[k] == 0.0 {
                            continue;
                        }
                        axpy(dz[k], act, &mut gw2[k * h..(k + 1) * h]);
                        gb2[k] += dz[k];
                        axpy(dz[k], &p[off + k * h..off + (k + 1) * h], &mut dh);
                    }
                    for j in 0..h {
                        if act[j] <= 0.0 || dh[j] == 0.0 {
                            continue;
                        }
                        axpy(dh[j], ex.features, &mut gw1[j * d..(j + 1) * d]);
                        gb1[j] += dh[j];
                    }
                }
            }
        }
        debug_assert_eq!(fwd.hidden_width, self.hidden_width());
        grad
    }

    /// `sum_i w_i * (-log f(x_i)_{label_i})` and its gradient.
    pub fn weighted_ce_grad(
        &self,
        batch: &[Example<'_>],
        weights: &[f64],
    ) -> Result<BatchGrad, ClassifierError> {
        let fwd = self.forward_batch(batch)?;
        self.weighted_ce_from_forward(batch, &fwd, weights)
    }

    /// [`Classifier::weighted_ce_grad`] reusing an existing forward pass.
    pub fn weighted_ce_from_forward(
        &self,
        batch: &[Example<'_>],
        fwd: &BatchForward,
        weights: &[f64],
    ) -> Result<BatchGrad, ClassifierError> {
        check_weights(batch.len(), weights)?;
        let c = self.num_classes;
        let mut loss = 0.0;
        let mut clamped = 0;
        let mut dlogits = vec![0.0; batch.len() * c];
        for (i, ex) in batch.iter().enumerate() {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let (nll, hit) = fwd.nll(i, ex.label);
            clamped += hit as usize;
            loss += w * nll;
            let p = fwd.probs_of(i);
            let dz = &mut dlogits[i * c..(i + 1) * c];
            for k in 0..c {
                dz[k] = w * p[k];
            }
            dz[ex.label] -= w;
        }
        let grad = self.backprop(batch, fwd, &dlogits);
        Ok(BatchGrad {
            loss,
            grad,
            clamped,
            effective_weights: weights.to_vec(),
        })
    }

    /// `sum_i sum_k a_ik * (-log f(x_i)_k)` for a `B x C` coefficient matrix.
    pub fn class_weighted_ce_grad(
        &self,
        batch: &[Example<'_>],
        coeffs: &[f64],
    ) -> Result<BatchGrad, ClassifierError> {
        let fwd = self.forward_batch(batch)?;
        self.class_weighted_ce_from_forward(batch, &fwd, coeffs)
    }

    pub fn class_weighted_ce_from_forward(
        &self,
        batch: &[Example<'_>],
        fwd: &BatchForward,
        coeffs: &[f64],
    ) -> Result<BatchGrad, ClassifierError> {
        let c = self.num_classes;
        if coeffs.len() != batch.len() * c {
            return Err(ClassifierError::LengthMismatch {
                expected: batch.len() * c,
                actual: coeffs.len(),
            });
        }
        let mut loss = 0.0;
        let mut clamped = 0;
        let mut dlogits = vec![0.0; batch.len() * c];
        for i in 0..batch.len() {
            let a = &coeffs[i * c..(i + 1) * c];
            let total: f64 = a.iter().sum();
            let p = fwd.probs_of(i);
            for k in 0..c {
                if a[k] != 0.0 {
                    let (nll, hit) = fwd.nll(i, k);
                    clamped += hit as usize;
                    loss += a[k] * nll;
                }
                dlogits[i * c + k] = p[k] * total - a[k];
            }
        }
        let grad = self.backprop(batch, fwd, &dlogits);
        Ok(BatchGrad {
            loss,
            grad,
            clamped,
            effective_weights: Vec::new(),
        })
    }

    /// Forward correction: mean of `-log (T f(x_i))_{noisy_i}`.
    pub fn forward_loss_grad(
        &self,
        t: &TransitionMatrix,
        batch: &[Example<'_>],
    ) -> Result<BatchGrad, ClassifierError> {
        self.check_transition(t)?;
        let fwd = self.forward_batch(batch)?;
        let c = self.num_classes;
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        let mut clamped = 0;
        let mut dlogits = vec![0.0; batch.len() * c];
        for (i, ex) in batch.iter().enumerate() {
            let p = fwd.probs_of(i);
            let mut q = t.apply_row(ex.label, p);
            if q < PROB_FLOOR {
                q = PROB_FLOOR;
                clamped += 1;
            }
            loss += -libm::log(q) * scale;
            // d/dz_j [-log sum_k T_yk p_k] = p_j - p_j T_yj / q
            for j in 0..c {
                dlogits[i * c + j] = scale * (p[j] - p[j] * t.get(ex.label, j) / q);
            }
        }
        let grad = self.backprop(batch, &fwd, &dlogits);
        Ok(BatchGrad {
            loss,
            grad,
            clamped,
            effective_weights: Vec::new(),
        })
    }

    /// Backward correction: mean of `sum_k Tinv[k][noisy_i] * (-log f(x_i)_k)`.
    pub fn backward_loss_grad(
        &self,
        t: &TransitionMatrix,
        batch: &[Example<'_>],
    ) -> Result<BatchGrad, ClassifierError> {
        self.check_transition(t)?;
        let inv = t.invert()?;
        self.backward_loss_grad_with_inverse(&inv, batch)
    }

    /// [`Classifier::backward_loss_grad`] with a precomputed `T^-1`.
    pub fn backward_loss_grad_with_inverse(
        &self,
        inv: &SquareMatrix,
        batch: &[Example<'_>],
    ) -> Result<BatchGrad, ClassifierError> {
        let c = self.num_classes;
        if inv.dim() != c {
            return Err(ClassifierError::ClassMismatch {
                expected: c,
                actual: inv.dim(),
            });
        }
        self.check_batch(batch)?;
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut coeffs = vec![0.0; batch.len() * c];
        for (i, ex) in batch.iter().enumerate() {
            for k in 0..c {
                coeffs[i * c + k] = scale * inv.get(k, ex.label);
            }
        }
        self.class_weighted_ce_grad(batch, &coeffs)
    }

    /// Fraction of `batch` whose argmax prediction equals the label.
    pub fn accuracy(&self, batch: &[Example<'_>]) -> Result<f64, ClassifierError> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let fwd = self.forward_batch(batch)?;
        let hits = batch
            .iter()
            .enumerate()
            .filter(|(i, ex)| crate::linalg::argmax(fwd.probs_of(*i)) == ex.label)
            .count();
        Ok(hits as f64 / batch.len() as f64)
    }
}

impl Predictor for Classifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut z = vec![0.0; self.num_classes];
        self.logits(x, &mut hidden, &mut z);
        crate::data::softmax(&z)
    }
}

fn check_weights(n: usize, weights: &[f64]) -> Result<(), ClassifierError> {
    if weights.len() != n {
        return Err(ClassifierError::LengthMismatch {
            expected: n,
            actual: weights.len(),
        });
    }
    if let Some((sample, &value)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(ClassifierError::InvalidWeight { sample, value });
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

//! Training with noisy labels through a class-transition matrix: forward,
//! backward and importance-reweighted risks, Dirichlet weight sampling and
//! multinomial resampling, on synthetic Gaussian-mixture data.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod classifier;
pub mod data;
pub mod linalg;
pub mod optim;
pub mod risk;
pub mod rng;
pub mod sampling;
pub mod transition;

pub use classifier::{Architecture, BatchGrad, Classifier, ClassifierError, Example, Predictor};
pub use data::{
    generate_gaussian_mixture, inject_noise, DataError, GaussianMixture, Instance, NoiseKind,
    NoiseSpec, NoisyDataset,
};
pub use linalg::{LinalgError, ProbVector, SquareMatrix};
pub use optim::{Optimizer, OptimizerKind};
pub use risk::{
    compute_weights, dws_loss_grad, oracle_weights, rent_consistency_check, rent_loss_grad,
    rent_resample, rw_loss_grad, snl_loss_grad, Budget, DwsConfig, RentConfig, RiskError,
    SampleWeights, SamplingStrategy, Strategy,
};
pub use rng::SeededRng;
pub use sampling::{
    dirichlet_moments, dirichlet_sample, mahalanobis_distance, multinomial_sample,
    DirichletParams, ResampleCounts, SamplingError,
};
pub use transition::{TransitionError, TransitionMatrix};

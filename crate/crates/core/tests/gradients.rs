//! Analytic gradients against central finite differences.

use rent_core::classifier::{Architecture, BatchGrad, Classifier, Example};
use rent_core::risk::{self, Budget, DwsConfig, RentConfig, SamplingStrategy, Strategy};
use rent_core::{SeededRng, TransitionMatrix};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const DRAWS: u64 = 20;

struct Case {
    model: Classifier,
    t: TransitionMatrix,
    xs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Case {
    fn new(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let c = 2 + rng.index(4);
        let d = 1 + rng.index(5);
        let b = 1 + rng.index(12);
        let arch = if seed.is_multiple_of(3) {
            Architecture::Linear
        } else {
            Architecture::Mlp {
                hidden: 2 + rng.index(6),
            }
        };
        let mut model = Classifier::init(arch, d, c, &mut rng).unwrap();
        for p in model.params_mut() {
            *p += 0.3 * (2.0 * rng.unit() - 1.0);
        }
        let xs = (0..b)
            .map(|_| (0..d).map(|_| 2.0 * rng.unit() - 1.0).collect())
            .collect();
        let labels = (0..b).map(|_| rng.index(c)).collect();
        let tau = 0.5 * rng.unit() * (c - 1) as f64 / c as f64;
        let t = TransitionMatrix::symmetric(c, tau)
            .unwrap()
            .corrupt(0.05 * rng.unit())
            .unwrap();
        Self {
            model,
            t,
            xs,
            labels,
        }
    }

    fn batch(&self) -> Vec<Example<'_>> {
        self.xs
            .iter()
            .zip(&self.labels)
            .map(|(x, &label)| Example { features: x, label })
            .collect()
    }

    fn at(&self, params: Vec<f64>) -> Classifier {
        let mut m = self.model.clone();
        m.set_params(params).unwrap();
        m
    }
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

fn numeric_gradient(case: &Case, loss: impl Fn(&Classifier) -> f64) -> Vec<f64> {
    let base = case.model.params().to_vec();
    (0..base.len())
        .map(|j| {
            let mut plus = base.clone();
            plus[j] += STEP;
            let mut minus = base.clone();
            minus[j] -= STEP;
            (loss(&case.at(plus)) - loss(&case.at(minus))) / (2.0 * STEP)
        })
        .collect()
}

/// Objectives whose weights are sampled from the current model are checked
/// with those weights held fixed.
fn check_frozen(case: &Case, g: &BatchGrad) {
    assert_eq!(g.effective_weights.len(), case.xs.len());
    let batch = case.batch();
    let numeric = numeric_gradient(case, |m| {
        m.weighted_ce_grad(&batch, &g.effective_weights).unwrap().loss
    });
    let err = relative_error(&g.grad, &numeric);
    assert!(err < TOL, "relative error {err}");
}

fn check_exact(case: &Case, g: &BatchGrad, loss: impl Fn(&Classifier) -> f64) {
    let numeric = numeric_gradient(case, loss);
    let err = relative_error(&g.grad, &numeric);
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn cross_entropy_gradient() {
    for seed in 0..DRAWS {
        let case = Case::new(seed);
        let batch = case.batch();
        let g = Strategy::Ce
            .loss_grad(&case.model, &case.t, &batch, &mut SeededRng::new(seed))
            .unwrap();
        check_exact(&case, &g, |m| {
            Strategy::Ce
                .loss_grad(m, &case.t, &batch, &mut SeededRng::new(0))
                .unwrap()
                .loss
        });
    }
}

#[test]
fn forward_gradient() {
    for seed in 0..DRAWS {
        let case = Case::new(100 + seed);
        let batch = case.batch();
        let g = case.model.forward_loss_grad(&case.t, &batch).unwrap();
        check_exact(&case, &g, |m| m.forward_loss_grad(&case.t, &batch).unwrap().loss);
    }
}

#[test]
fn backward_gradient() {
    for seed in 0..DRAWS {
        let case = Case::new(200 + seed);
        let batch = case.batch();
        let g = case.model.backward_loss_grad(&case.t, &batch).unwrap();
        check_exact(&case, &g, |m| {
            m.backward_loss_grad(&case.t, &batch).unwrap().loss
        });
    }
}

#[test]
fn reweighting_gradient() {
    for seed in 0..DRAWS {
        let case = Case::new(300 + seed);
        let g = risk::rw_loss_grad(&case.model, &case.t, &case.batch()).unwrap();
        check_frozen(&case, &g);
    }
}

#[test]
fn dws_gradient() {
    for seed in 0..DRAWS {
        let case = Case::new(400 + seed);
        let cfg = DwsConfig {
            alpha: [0.1, 1.0, 10.0, 1e4][seed as usize % 4],
            weight_draws: 1 + seed as usize % 3,
        };
        let g = risk::dws_loss_grad(
            &case.model,
            &case.t,
            &case.batch(),
            &cfg,
            &mut SeededRng::new(seed),
        )
        .unwrap();
        check_frozen(&case, &g);
    }
}

#[test]
fn rent_gradient() {
    for seed in 0..DRAWS {
        let case = Case::new(500 + seed);
        let cfg = RentConfig {
            budget: if seed % 2 == 0 {
                Budget::Ratio(1.0)
            } else {
                Budget::Count(3 + seed)
            },
            strategy: if seed % 3 == 0 {
                SamplingStrategy::GlobalClass
            } else {
                SamplingStrategy::Batch
            },
        };
        let g = risk::rent_loss_grad(
            &case.model,
            &case.t,
            &case.batch(),
            &cfg,
            &mut SeededRng::new(seed),
        )
        .unwrap();
        check_frozen(&case, &g);
    }
}

#[test]
fn snl_gradient() {
    for seed in 0..DRAWS {
        let case = Case::new(600 + seed);
        let batch = case.batch();
        let c = case.model.params().len();
        let mut rng = SeededRng::new(seed);
        let z: Vec<f64> = (0..batch.len() * case.t.num_classes())
            .map(|_| rent_core::sampling::standard_normal(&mut rng))
            .collect();
        let sigma = 0.1 + seed as f64 * 0.05;
        let g = risk::snl_loss_grad_with_noise(&case.model, &batch, sigma, &z).unwrap();
        assert_eq!(g.grad.len(), c);
        check_exact(&case, &g, |m| {
            risk::snl_loss_grad_with_noise(m, &batch, sigma, &z)
                .unwrap()
                .loss
        });
    }
}

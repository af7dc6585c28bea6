use proptest::prelude::*;

use rent_core::analysis::{resample_quality, weight_histogram};
use rent_core::classifier::{Architecture, Classifier, Example};
use rent_core::data::{generate_gaussian_mixture, inject_noise, NoiseKind, NoiseSpec};
use rent_core::risk::{self, Budget, DwsConfig, RentConfig, SampleWeights, SamplingStrategy, Strategy as Risk};
use rent_core::sampling::{self, DirichletParams};
use rent_core::{ProbVector, SeededRng, TransitionMatrix};

fn prob_vector(max_len: usize) -> impl Strategy<Value = ProbVector> {
    prop::collection::vec(0.01f64..1.0, 2..=max_len)
        .prop_map(|w| ProbVector::from_weights(w).unwrap())
}

fn transition(c: usize) -> impl Strategy<Value = TransitionMatrix> {
    (0.0f64..0.6, 0.0f64..1.0).prop_map(move |(tau, frac)| {
        let tau = tau * (c - 1) as f64 / c as f64;
        TransitionMatrix::symmetric(c, tau)
            .unwrap()
            .corrupt(frac * tau)
            .unwrap()
    })
}

fn column_sums_are_one(t: &TransitionMatrix) -> bool {
    (0..t.num_classes()).all(|k| (t.column(k).iter().sum::<f64>() - 1.0).abs() < 1e-9)
}

struct Setup {
    model: Classifier,
    xs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

fn setup(seed: u64, c: usize, b: usize) -> Setup {
    let mut rng = SeededRng::new(seed);
    let model = Classifier::init(Architecture::Mlp { hidden: 5 }, 3, c, &mut rng).unwrap();
    let xs = (0..b)
        .map(|_| (0..3).map(|_| 4.0 * rng.unit() - 2.0).collect())
        .collect();
    let labels = (0..b).map(|_| rng.index(c)).collect();
    Setup { model, xs, labels }
}

impl Setup {
    fn batch(&self) -> Vec<Example<'_>> {
        self.xs
            .iter()
            .zip(&self.labels)
            .map(|(x, &label)| Example { features: x, label })
            .collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dirichlet_draws_lie_on_simplex(
        mu in prob_vector(40),
        log_alpha in -3.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let params = DirichletParams::new(10f64.powf(log_alpha), mu).unwrap();
        let w = sampling::dirichlet_sample(&params, &mut SeededRng::new(seed));
        prop_assert_eq!(w.len(), params.dim());
        prop_assert!(w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn multinomial_counts_sum_to_budget(
        mut p in prop::collection::vec(0.0f64..1.0, 1..30),
        m in 1u64..500,
        seed in any::<u64>(),
    ) {
        p[0] += 0.1;
        let counts = sampling::multinomial_sample(m, &p, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(counts.counts().iter().sum::<u64>(), m);
        prop_assert_eq!(counts.budget(), m);
        for (c, w) in counts.counts().iter().zip(&p) {
            if *w == 0.0 {
                prop_assert_eq!(*c, 0);
            }
        }
    }

    #[test]
    fn transition_preserves_simplex(c in 2usize..8, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let tau = rng.unit() * (c - 1) as f64 / c as f64;
        let t = TransitionMatrix::symmetric(c, tau).unwrap();
        prop_assert!(column_sums_are_one(&t));
        let p = ProbVector::from_weights((0..c).map(|_| rng.unit() + 1e-3).collect()).unwrap();
        let q = t.apply(&p).unwrap();
        prop_assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(q.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn corruption_stays_column_stochastic(
        c in 2usize..8,
        tau in 0.0f64..0.8,
        eps in -0.5f64..0.5,
    ) {
        let t = TransitionMatrix::symmetric(c, tau * (c - 1) as f64 / c as f64).unwrap();
        let Ok(corrupted) = t.corrupt(eps) else {
            // only eps that would push an entry outside [0, 1] is refused
            let off = t.get(1, 0) + eps / (c - 1) as f64;
            prop_assert!(t.get(0, 0) - eps > 1.0 || off < 0.0);
            return Ok(());
        };
        prop_assert!(column_sums_are_one(&corrupted));
        for j in 0..c {
            for k in 0..c {
                prop_assert!((0.0..=1.0).contains(&corrupted.get(j, k)));
            }
        }
        let back = corrupted.corrupt(-eps).unwrap();
        prop_assert!(back.matrix().max_abs_diff(t.matrix()) < 1e-12);
    }

    #[test]
    fn inverse_round_trips(t in transition(4)) {
        if let Ok(inv) = t.invert() {
            let prod = inv.matmul(t.matrix());
            let id = rent_core::SquareMatrix::identity(4);
            prop_assert!(prod.max_abs_diff(&id) < 1e-8);
        }
    }

    #[test]
    fn weights_are_non_negative_and_normalized(
        seed in any::<u64>(),
        c in 2usize..6,
        b in 1usize..40,
    ) {
        let s = setup(seed, c, b);
        let t = TransitionMatrix::symmetric(c, 0.3 * (c - 1) as f64 / c as f64).unwrap();
        let w = risk::compute_weights(&s.model, &t, &s.batch()).unwrap();
        prop_assert!(w.raw().iter().all(|&v| v >= 0.0 && v.is_finite()));
        prop_assert!((w.normalized().as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_negative_losses(seed in any::<u64>(), c in 2usize..6, b in 1usize..20) {
        let s = setup(seed, c, b);
        let t = TransitionMatrix::symmetric(c, 0.4 * (c - 1) as f64 / c as f64).unwrap();
        let strategies: [Risk; 5] = [
            Risk::Ce,
            Risk::Forward,
            Risk::Reweight,
            Risk::Dws(DwsConfig { alpha: 1.0, weight_draws: 2 }),
            Risk::Rent(RentConfig::default()),
        ];
        let mut rng = SeededRng::new(seed);
        for strategy in strategies {
            let g = strategy.loss_grad(&s.model, &t, &s.batch(), &mut rng).unwrap();
            prop_assert!(g.loss >= 0.0, "{} loss {}", strategy.name(), g.loss);
            prop_assert!(g.grad.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn resampled_counts_respect_budget_and_zero_weights(
        raw in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], 1..60),
        m in 1u64..300,
        by_class in any::<bool>(),
        seed in any::<u64>(),
    ) {
        prop_assume!(raw.iter().any(|&v| v > 0.0));
        let labels: Vec<usize> = (0..raw.len()).map(|i| i % 3).collect();
        let w = SampleWeights::from_raw(raw.clone()).unwrap();
        let cfg = RentConfig {
            budget: Budget::Count(m),
            strategy: if by_class { SamplingStrategy::GlobalClass } else { SamplingStrategy::Batch },
        };
        let counts = risk::rent_resample(&w, &labels, &cfg, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(counts.budget(), m);
        prop_assert_eq!(counts.counts().iter().sum::<u64>(), m);
        if !by_class {
            for (n, r) in counts.counts().iter().zip(&raw) {
                if *r == 0.0 {
                    prop_assert_eq!(*n, 0);
                }
            }
        }
    }

    #[test]
    fn mahalanobis_matches_tangent_closed_form(
        mu in prob_vector(12),
        log_alpha in -2.0f64..3.0,
        m in 1u64..10,
        seed in any::<u64>(),
    ) {
        let n = mu.len();
        let mut rng = SeededRng::new(seed);
        let target = ProbVector::from_weights((0..n).map(|_| rng.unit() + 1e-3).collect()).unwrap();
        let alpha = 10f64.powf(log_alpha);
        let d = sampling::mahalanobis_distance(
            &target,
            &DirichletParams::new(alpha, mu.clone()).unwrap(),
            m,
        )
        .unwrap();
        let q: f64 = target
            .as_slice()
            .iter()
            .zip(mu.as_slice())
            .map(|(t, u)| (t - u) * (t - u) / u)
            .sum();
        let expected = (m as f64 * (alpha + 1.0) * q).sqrt();
        prop_assert!((d - expected).abs() <= 1e-7 * expected.max(1e-12));
    }

    #[test]
    fn analysis_reports_are_consistent(seed in any::<u64>(), tau in 0.0f64..0.7, b in 1usize..64) {
        let mut rng = SeededRng::new(seed);
        let ds = generate_gaussian_mixture(3, 4, 200, 2.0, &mut rng).unwrap();
        let spec = NoiseSpec { kind: NoiseKind::Symmetric { rate: tau * 2.0 / 3.0 }, seed };
        let (ds, t) = inject_noise(&ds, &spec).unwrap();
        let w = risk::oracle_weights(&ds, &t).unwrap();
        let weights = SampleWeights::from_raw(w.raw.clone()).unwrap();
        let h = weight_histogram(&weights, &ds, b).unwrap();
        prop_assert_eq!(h.total(), ds.len() as u64);
        let counts = risk::rent_resample(
            &weights,
            &ds.noisy_labels(),
            &RentConfig::default(),
            &mut rng,
        )
        .unwrap();
        let q = resample_quality(&counts, &ds).unwrap();
        for v in [q.precision, q.recall, q.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn posterior_is_a_distribution(
        c in 2usize..7,
        sep in 0.0f64..6.0,
        x in prop::collection::vec(-5.0f64..5.0, 8),
    ) {
        let g = rent_core::GaussianMixture::new(c, 8, sep).unwrap();
        let p = g.posterior(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }
}

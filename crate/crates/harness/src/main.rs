use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rent_core::data::{inject_noise, NoiseKind, NoiseSpec};
use rent_core::risk::{Budget, DwsConfig, RentConfig, SamplingStrategy, Strategy};
use rent_core::{GaussianMixture, SeededRng};
use rent_harness::{
    alpha_sweep, analyze, budget_sweep, io, run_experiment, DataSource, ExperimentConfig,
    HarnessError, SweepTable, TransitionSource,
};

#[derive(Parser)]
#[command(name = "rent", version, about = "Noisy-label training with transition-matrix risks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a configuration.
    Run(Overrides),
    /// Sweep the DWS concentration, with reweighting and resampling endpoints.
    SweepAlpha {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.5,1,10,100,1000")]
        alphas: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep the RENT resampling budget as a fraction of the pool.
    SweepBudget {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1")]
        ratios: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Summarize a run directory (`<out>/<config hash>`).
    Analyze { run_dir: PathBuf },
    /// Write a noisy Gaussian-mixture dataset and its transition matrix.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 20_000)]
        count: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, value_enum, default_value_t = NoiseArg::Symmetric)]
        noise: NoiseArg,
        #[arg(long, default_value_t = 0.4)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RiskArg {
    Ce,
    Fl,
    Bw,
    Rw,
    Dws,
    Rent,
    Snl,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum NoiseArg {
    None,
    Symmetric,
    /// Flip class k to class k+1 (mod C).
    Asymmetric,
}

#[derive(Clone, Copy, ValueEnum)]
enum TSourceArg {
    True,
    Anchor,
    Corrupted,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Batch,
    Global,
    GlobalClass,
}

#[derive(Args, Default)]
struct Overrides {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    risk: Option<RiskArg>,
    /// DWS concentration.
    #[arg(long)]
    alpha: Option<f64>,
    /// Dirichlet draws averaged per DWS step.
    #[arg(long)]
    weight_draws: Option<usize>,
    /// RENT budget as a fraction of the sampling pool.
    #[arg(long, conflicts_with = "budget_count")]
    budget: Option<f64>,
    /// RENT budget as an absolute count.
    #[arg(long)]
    budget_count: Option<u64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// SNL noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Noise rate.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    t_source: Option<TSourceArg>,
    /// Diagonal mass moved off the true matrix for `--t-source corrupted`.
    #[arg(long)]
    eps_t: Option<f64>,
    #[arg(long)]
    anchor_fraction: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Transition matrix CSV for `--t-source file`.
    #[arg(long)]
    transition_file: Option<PathBuf>,
    /// Comma-separated seeds, or a half-open range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Config(format!("cannot parse seeds {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| bad()))
        .collect()
}

fn noise_kind(arg: NoiseArg, rate: f64, classes: usize) -> Option<NoiseKind> {
    match arg {
        NoiseArg::None => None,
        NoiseArg::Symmetric => Some(NoiseKind::Symmetric { rate }),
        NoiseArg::Asymmetric => Some(NoiseKind::AsymmetricPairs {
            rate,
            pairs: (0..classes).map(|k| (k + 1) % classes).collect(),
        }),
    }
}

fn current_rate(noise: &Option<NoiseKind>) -> Option<f64> {
    match noise {
        Some(NoiseKind::Symmetric { rate }) | Some(NoiseKind::AsymmetricPairs { rate, .. }) => {
            Some(*rate)
        }
        _ => None,
    }
}

impl Overrides {
    fn apply(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };

        if let DataSource::Mixture {
            train,
            test,
            separation,
            ..
        } = &mut cfg.data
        {
            if let Some(v) = self.separation {
                *separation = v;
            }
            if let Some(v) = self.train_size {
                *train = v;
            }
            if let Some(v) = self.test_size {
                *test = v;
            }
        }

        if self.noise.is_some() || self.tau.is_some() {
            let classes = cfg.num_classes().unwrap_or(0);
            let rate = self.tau.or(current_rate(&cfg.noise)).unwrap_or(0.0);
            let arg = self.noise.unwrap_or(match cfg.noise {
                Some(NoiseKind::AsymmetricPairs { .. }) => NoiseArg::Asymmetric,
                None if self.tau.is_none() => NoiseArg::None,
                _ => NoiseArg::Symmetric,
            });
            cfg.noise = match (arg, &cfg.noise) {
                (NoiseArg::Asymmetric, Some(NoiseKind::AsymmetricPairs { pairs, .. }))
                    if self.noise.is_none() =>
                {
                    Some(NoiseKind::AsymmetricPairs {
                        rate,
                        pairs: pairs.clone(),
                    })
                }
                _ => noise_kind(arg, rate, classes),
            };
        }

        if let Some(src) = self.t_source {
            cfg.transition = match src {
                TSourceArg::True => TransitionSource::True,
                TSourceArg::Anchor => TransitionSource::Anchor {
                    fraction: rent_core::transition::DEFAULT_ANCHOR_FRACTION,
                    warmup_epochs: 20,
                },
                TSourceArg::Corrupted => TransitionSource::Corrupted { eps: 0.0 },
                TSourceArg::File => TransitionSource::File {
                    path: self.transition_file.clone().ok_or_else(|| {
                        HarnessError::Config("--t-source file needs --transition-file".into())
                    })?,
                },
            };
        }
        match &mut cfg.transition {
            TransitionSource::Corrupted { eps } => {
                if let Some(v) = self.eps_t {
                    *eps = v;
                }
            }
            TransitionSource::Anchor {
                fraction,
                warmup_epochs,
            } => {
                if let Some(v) = self.anchor_fraction {
                    *fraction = v;
                }
                if let Some(v) = self.warmup_epochs {
                    *warmup_epochs = v;
                }
            }
            TransitionSource::File { path } => {
                if let Some(p) = &self.transition_file {
                    *path = p.clone();
                }
            }
            TransitionSource::True => {}
        }

        if let Some(risk) = self.risk {
            cfg.risk = match risk {
                RiskArg::Ce => Strategy::Ce,
                RiskArg::Fl => Strategy::Forward,
                RiskArg::Bw => Strategy::Backward,
                RiskArg::Rw => Strategy::Reweight,
                RiskArg::Dws => match cfg.risk {
                    Strategy::Dws(d) => Strategy::Dws(d),
                    _ => Strategy::Dws(DwsConfig::default()),
                },
                RiskArg::Rent => match cfg.risk {
                    Strategy::Rent(r) => Strategy::Rent(r),
                    _ => Strategy::Rent(RentConfig::default()),
                },
                RiskArg::Snl => match cfg.risk {
                    Strategy::Snl { sigma } => Strategy::Snl { sigma },
                    _ => Strategy::Snl { sigma: 0.1 },
                },
            };
        }
        match &mut cfg.risk {
            Strategy::Dws(d) => {
                if let Some(v) = self.alpha {
                    d.alpha = v;
                }
                if let Some(v) = self.weight_draws {
                    d.weight_draws = v;
                }
            }
            Strategy::Rent(r) => {
                if let Some(v) = self.budget {
                    r.budget = Budget::Ratio(v);
                }
                if let Some(v) = self.budget_count {
                    r.budget = Budget::Count(v);
                }
                if let Some(s) = self.strategy {
                    r.strategy = match s {
                        StrategyArg::Batch => SamplingStrategy::Batch,
                        StrategyArg::Global => SamplingStrategy::Global,
                        StrategyArg::GlobalClass => SamplingStrategy::GlobalClass,
                    };
                }
            }
            Strategy::Snl { sigma } => {
                if let Some(v) = self.sigma {
                    *sigma = v;
                }
            }
            _ => {}
        }

        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_sweep(table: &SweepTable, path: &Path) {
    println!("{:<6} {:>10} {:>10} {:>8} {:>5}", "risk", "value", "mean_acc", "std", "ok");
    for r in &table.rows {
        println!(
            "{:<6} {:>10} {:>10.4} {:>8.4} {:>2}/{}",
            r.label,
            r.value,
            r.mean_test_acc,
            r.std_test_acc,
            r.completed,
            r.completed + r.failed
        );
    }
    if let Some(s) = table.spearman {
        println!("spearman(-ln alpha, accuracy) = {s:.3}");
    }
    println!("table written to {}", path.display());
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.apply()?;
            let report = run_experiment(&cfg)?;
            for r in &report.results {
                println!("seed {:>4}  test acc {:.4}", r.seed, r.final_test_acc);
            }
            for (seed, e) in &report.failures {
                eprintln!("seed {seed:>4}  FAILED: {e}");
            }
            println!("results in {}", report.dir.display());
            Ok(report.all_completed())
        }
        Command::SweepAlpha { alphas, overrides } => {
            let mut cfg = overrides.apply()?;
            if !matches!(cfg.risk, Strategy::Dws(_)) {
                cfg.risk = Strategy::Dws(DwsConfig::default());
            }
            let table = alpha_sweep(&cfg, &alphas)?;
            let path = cfg.out_dir.join(format!("sweep-alpha-{}.csv", cfg.hash()));
            table.write(&path)?;
            io::write_json(&path.with_extension("json"), &table)?;
            print_sweep(&table, &path);
            Ok(table.all_completed())
        }
        Command::SweepBudget { ratios, overrides } => {
            let mut cfg = overrides.apply()?;
            if !matches!(cfg.risk, Strategy::Rent(_)) {
                cfg.risk = Strategy::Rent(RentConfig::default());
            }
            let table = budget_sweep(&cfg, &ratios)?;
            let path = cfg.out_dir.join(format!("sweep-budget-{}.csv", cfg.hash()));
            table.write(&path)?;
            io::write_json(&path.with_extension("json"), &table)?;
            print_sweep(&table, &path);
            Ok(table.all_completed())
        }
        Command::Analyze { run_dir } => {
            let s = analyze(&run_dir)?;
            println!("{:>6} {:>6} {:>10} {:>6} {:>10}", "seed", "epochs", "final", "best@", "best");
            for r in &s.seeds {
                println!(
                    "{:>6} {:>6} {:>10.4} {:>6} {:>10.4}",
                    r.seed, r.epochs, r.final_test_acc, r.best_epoch, r.best_test_acc
                );
            }
            println!(
                "final test accuracy {:.4} +- {:.4}, best-epoch mean {:.4}",
                s.mean_final_test_acc, s.std_final_test_acc, s.mean_best_test_acc
            );
            Ok(true)
        }
        Command::GenData {
            out,
            classes,
            dim,
            count,
            separation,
            noise,
            tau,
            seed,
        } => {
            std::fs::create_dir_all(&out).map_err(|e| HarnessError::Format(e.to_string()))?;
            let mix = GaussianMixture::new(classes, dim, separation)?;
            let ds = mix.generate(count, &mut SeededRng::stream(seed, 0));
            let (ds, t) = match noise_kind(noise, tau, classes) {
                Some(kind) => inject_noise(&ds, &NoiseSpec { kind, seed })?,
                None => (ds, rent_core::TransitionMatrix::identity(classes)),
            };
            io::write_dataset(&out.join("data.csv"), &ds)?;
            io::write_transition(&out.join("transition.csv"), &t)?;
            println!(
                "{} instances, {:.3} mislabelled, written to {}",
                ds.len(),
                ds.noise_fraction(),
                out.display()
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fedcore::coreset::DistanceKind;
use fedcore::experiment::{Benchmark, ExperimentConfig};
use fedcore::federation::Strategy;
use fedcore::models::ModelKind;

#[derive(Parser)]
#[command(name = "fedcore", version, about = "Deadline-aware federated learning simulator", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run one strategy and write metrics.csv, client_times.csv and run.json.
    Run(RunOpts),
    /// Run several strategies on identical data and seeds.
    Sweep(SweepOpts),
    /// Generate a synthetic dataset and save it as a container file.
    GenSynthetic(GenOpts),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BenchmarkArg {
    Synthetic,
    Mnist,
    Container,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DistanceArg {
    Exact,
    EuclidProxy,
    LastlayerProxy,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: fedcore::Error| e.to_string())
}

fn parse_tau(s: &str) -> Result<f64, String> {
    match s {
        "inf" => Ok(f64::INFINITY),
        _ => s.parse().map_err(|_| format!("'{s}' is not a number or 'inf'")),
    }
}

/// Options shared by `run` and `sweep`. Every flag overrides the matching
/// field of `--config`.
#[derive(Args, Clone, Default)]
pub struct RunOpts {
    /// TOML file with experiment settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub benchmark: Option<BenchmarkArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// IDX image file (mnist benchmark).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX label file (mnist benchmark).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub labels_per_client: Option<usize>,
    /// Dataset file written by gen-synthetic (container benchmark).
    #[arg(long)]
    pub container: Option<PathBuf>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// fedavg, fedavg_ds, fedprox or fedcore.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Percentage of clients that cannot finish full-set training in time.
    #[arg(long)]
    pub stragglers: Option<f64>,
    /// Explicit round deadline in simulated seconds, or 'inf'.
    #[arg(long, value_parser = parse_tau)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Clients selected per round.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decaying step size from estimated strong convexity and smoothness.
    #[arg(long)]
    pub theorem_schedule: bool,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub mu_prox: Option<f64>,
    #[arg(long, value_enum)]
    pub distance: Option<DistanceArg>,
    /// Coreset build cost as a fraction of one epoch.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Record gradient probes at every local epoch.
    #[arg(long)]
    pub probes: bool,
    /// Sets the data, capability and run seeds together.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub capability_seed: Option<u64>,
    #[arg(long)]
    pub run_seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also check the convergence bound and write bound_report.json.
    #[arg(long)]
    pub bound_check: bool,
    #[arg(long)]
    pub bound_runs: Option<usize>,
}

#[derive(Args)]
pub struct SweepOpts {
    #[command(flatten)]
    pub common: RunOpts,
    /// Comma-separated strategies.
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_strategy,
        default_value = "fedavg,fedavg_ds,fedprox,fedcore"
    )]
    pub strategies: Vec<Strategy>,
}

#[derive(Args)]
pub struct GenOpts {
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 30)]
    pub clients: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl RunOpts {
    /// Builds the experiment config: defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                toml::from_str::<ExperimentConfig>(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            // Without a file, the MNIST benchmark starts from its own defaults.
            None => match (self.benchmark, &self.images, &self.labels) {
                (Some(BenchmarkArg::Mnist), Some(i), Some(l)) => ExperimentConfig::mnist(i.clone(), l.clone()),
                _ => ExperimentConfig::default(),
            },
        };
        self.apply_benchmark(&mut cfg)?;
        if let Some(v) = self.clients {
            cfg.n_clients = v;
        }
        if let Some(m) = self.model {
            cfg.model = match m {
                ModelArg::Logistic => ModelKind::Logistic,
                ModelArg::Mlp => ModelKind::Mlp,
            };
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(hidden => hidden, l2 => l2, strategy => strategy, stragglers => stragglers,
             epochs => epochs, rounds => rounds, k => clients_per_round, lr => lr,
             batch => batch_size, mu_prox => mu_prox, gamma => gamma, out => out_dir,
             bound_runs => bound_runs);
        if self.tau.is_some() {
            cfg.tau = self.tau;
        }
        if let Some(d) = self.distance {
            cfg.distance = Some(match d {
                DistanceArg::Exact => DistanceKind::Exact,
                DistanceArg::EuclidProxy => DistanceKind::EuclidProxy,
                DistanceArg::LastlayerProxy => DistanceKind::LastlayerProxy,
            });
        }
        cfg.theorem_schedule |= self.theorem_schedule;
        cfg.probes |= self.probes;
        cfg.bound_check |= self.bound_check;
        if let Some(s) = self.seed {
            cfg.seeds.data = s;
            cfg.seeds.capability = s;
            cfg.seeds.run = s;
        }
        if let Some(s) = self.data_seed {
            cfg.seeds.data = s;
        }
        if let Some(s) = self.capability_seed {
            cfg.seeds.capability = s;
        }
        if let Some(s) = self.run_seed {
            cfg.seeds.run = s;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn apply_benchmark(&self, cfg: &mut ExperimentConfig) -> Result<(), String> {
        let kind = match self.benchmark {
            Some(k) => k,
            None => match cfg.benchmark {
                Benchmark::Synthetic { .. } => BenchmarkArg::Synthetic,
                Benchmark::Mnist { .. } => BenchmarkArg::Mnist,
                Benchmark::Container { .. } => BenchmarkArg::Container,
            },
        };
        cfg.benchmark = match (kind, &cfg.benchmark) {
            (BenchmarkArg::Synthetic, prev) => {
                let (a, b) = match prev {
                    Benchmark::Synthetic { alpha, beta } => (*alpha, *beta),
                    _ => (0.0, 0.0),
                };
                Benchmark::Synthetic {
                    alpha: self.alpha.unwrap_or(a),
                    beta: self.beta.unwrap_or(b),
                }
            }
            (BenchmarkArg::Mnist, prev) => {
                let (i, l, lpc) = match prev {
                    Benchmark::Mnist {
                        images,
                        labels,
                        labels_per_client,
                    } => (Some(images.clone()), Some(labels.clone()), *labels_per_client),
                    _ => (None, None, 2),
                };
                let images = self.images.clone().or(i).ok_or("mnist needs --images")?;
                let labels = self.labels.clone().or(l).ok_or("mnist needs --labels")?;
                Benchmark::Mnist {
                    images,
                    labels,
                    labels_per_client: self.labels_per_client.unwrap_or(lpc),
                }
            }
            (BenchmarkArg::Container, prev) => {
                let p = match prev {
                    Benchmark::Container { path } => Some(path.clone()),
                    _ => None,
                };
                Benchmark::Container {
                    path: self.container.clone().or(p).ok_or("container benchmark needs --container")?,
                }
            }
        };
        Ok(())
    }
}

//! Wiring from an experiment description to data, simulation, analysis and
//! files on disk.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    check_bound, estimate_gamma, estimate_mu_l, measure_eps_d, passes_with, solve_optimum,
    BoundReport, Measured, TheoryConstants,
};
use crate::coreset::DistanceKind;
use crate::data::{generate_synthetic, load_mnist_idx, partition_label_shards, read_container, FederatedDataset};
use crate::federation::{
    self, build_profiles, capabilities, deadline_for_stragglers, ClientProfile, LrSchedule, RoundConfig,
    RunLog, Seeds, Strategy,
};
use crate::models::{init_params, ModelKind, ModelSpec, ParamVector};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Tolerance on the gradient norm for the optimum used by the bound check.
pub const W_STAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Benchmark {
    Synthetic {
        alpha: f64,
        beta: f64,
    },
    /// MNIST-style IDX files split across clients by label shards.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        labels_per_client: usize,
    },
    /// A dataset previously written with `write_container`.
    Container { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub n_clients: usize,
    pub model: ModelKind,
    pub hidden: usize,
    pub l2: f64,
    pub strategy: Strategy,
    /// Percentage of clients that miss the deadline with full-set training.
    pub stragglers: f64,
    /// Explicit deadline; overrides `stragglers` when set.
    #[serde(with = "opt_float")]
    pub tau: Option<f64>,
    pub epochs: usize,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Use the decaying theorem step size with `mu` and `L` estimated from
    /// the data instead of the constant `lr`.
    pub theorem_schedule: bool,
    pub mu_prox: f64,
    /// Defaults to the feature proxy for logistic and the last-layer proxy
    /// for the MLP.
    pub distance: Option<DistanceKind>,
    pub gamma: f64,
    pub probes: bool,
    pub seeds: Seeds,
    pub out_dir: PathBuf,
    /// Also run the convergence-bound check and write `bound_report.json`.
    pub bound_check: bool,
    pub bound_runs: usize,
}

mod opt_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "crate::federation::float_or_inf")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Synthetic {
                alpha: 0.0,
                beta: 0.0,
            },
            n_clients: 30,
            model: ModelKind::Logistic,
            hidden: 64,
            l2: 0.0,
            strategy: Strategy::Fedcore,
            stragglers: 30.0,
            tau: None,
            epochs: 10,
            rounds: 100,
            clients_per_round: 10,
            batch_size: 8,
            lr: 0.001,
            theorem_schedule: false,
            mu_prox: 0.1,
            distance: None,
            gamma: 0.0,
            probes: false,
            seeds: Seeds {
                data: 1,
                capability: 1,
                run: 1,
            },
            out_dir: PathBuf::from("out"),
            bound_check: false,
            bound_runs: 10,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale MNIST defaults: 100 clients with two labels each and a
    /// one-hidden-layer MLP.
    pub fn mnist(images: PathBuf, labels: PathBuf) -> Self {
        Self {
            benchmark: Benchmark::Mnist {
                images,
                labels,
                labels_per_client: 2,
            },
            n_clients: 100,
            model: ModelKind::Mlp,
            lr: 0.03,
            batch_size: 10,
            epochs: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_clients == 0 {
            return bad("need at least one client".into());
        }
        if !(0.0..100.0).contains(&self.stragglers) {
            return bad(format!("stragglers must be in [0, 100), got {}", self.stragglers));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return bad(format!("tau must be positive, got {t}"));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be >= 1".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            return bad(format!("k must be in 1..={}", self.n_clients));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("invalid learning rate {}", self.lr));
        }
        if !(self.l2 >= 0.0) || !(self.mu_prox >= 0.0) || !(self.gamma >= 0.0) {
            return bad("l2, mu_prox and gamma must be >= 0".into());
        }
        if self.model == ModelKind::Mlp && self.hidden == 0 {
            return bad("the MLP needs at least one hidden unit".into());
        }
        if (self.theorem_schedule || self.bound_check) && (self.model != ModelKind::Logistic || self.l2 <= 0.0) {
            return bad("the theorem schedule and bound check need the logistic model with l2 > 0".into());
        }
        if self.bound_check && self.bound_runs == 0 {
            return bad("bound check needs at least one run".into());
        }
        if let Benchmark::Synthetic { alpha, beta } = self.benchmark {
            if !(alpha >= 0.0 && beta >= 0.0) {
                return bad("synthetic alpha and beta must be >= 0".into());
            }
        }
        Ok(())
    }

    pub fn distance_kind(&self) -> DistanceKind {
        self.distance.unwrap_or(match self.model {
            ModelKind::Logistic => DistanceKind::EuclidProxy,
            ModelKind::Mlp => DistanceKind::LastlayerProxy,
        })
    }
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<FederatedDataset> {
    let ds = match &cfg.benchmark {
        Benchmark::Synthetic { alpha, beta } => generate_synthetic(*alpha, *beta, cfg.n_clients, cfg.seeds.data),
        Benchmark::Mnist {
            images,
            labels,
            labels_per_client,
        } => {
            let (features, width, ys) = load_mnist_idx(images, labels)?;
            let n_classes = ys.iter().max().map_or(0, |&y| y + 1).max(10);
            partition_label_shards(
                &features,
                &ys,
                width,
                n_classes,
                cfg.n_clients,
                *labels_per_client,
                cfg.seeds.data,
            )?
        }
        Benchmark::Container { path } => {
            let ds = read_container(path)?;
            if ds.n_clients() != cfg.n_clients {
                return Err(Error::InvalidConfig(format!(
                    "container has {} clients, config asks for {}",
                    ds.n_clients(),
                    cfg.n_clients
                )));
            }
            ds
        }
    };
    ds.validate()?;
    Ok(ds)
}

/// Everything shared by the strategies of one paired comparison.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: FederatedDataset,
    pub profiles: Vec<ClientProfile>,
    pub spec: ModelSpec,
    pub tau: f64,
    pub lr: LrSchedule,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = build_dataset(config)?;
        Self::with_dataset(config, dataset)
    }

    pub fn with_dataset(config: &ExperimentConfig, dataset: FederatedDataset) -> Result<Self> {
        config.validate()?;
        let caps = capabilities(dataset.n_clients(), config.seeds.capability);
        let profiles = build_profiles(&dataset, &caps);
        let tau = match config.tau {
            Some(t) => t,
            None => deadline_for_stragglers(&profiles, config.epochs, config.stragglers),
        };
        let spec = match config.model {
            ModelKind::Logistic => ModelSpec::logistic(dataset.d_feat, dataset.n_classes, config.l2),
            ModelKind::Mlp => ModelSpec::mlp(dataset.d_feat, dataset.n_classes, config.hidden, config.l2),
        };
        let lr = if config.theorem_schedule {
            let sets: Vec<_> = dataset.clients.iter().map(|c| &c.samples).collect();
            let mut r = rng::stream(config.seeds.data, Purpose::Estimate, 0, 0);
            let est = estimate_mu_l(&spec, &sets, 4, &mut r)?;
            LrSchedule::Theorem { mu: est.mu, l: est.l }
        } else {
            LrSchedule::Constant { lr: config.lr }
        };
        Ok(Self {
            config: config.clone(),
            dataset,
            profiles,
            spec,
            tau,
            lr,
        })
    }

    pub fn round_config(&self, strategy: Strategy) -> RoundConfig {
        let c = &self.config;
        RoundConfig {
            epochs: c.epochs,
            rounds: c.rounds,
            clients_per_round: c.clients_per_round,
            tau: self.tau,
            lr: self.lr,
            batch_size: c.batch_size,
            strategy,
            mu_prox: c.mu_prox,
            distance: c.distance_kind(),
            gamma: c.gamma,
            probes: c.probes,
            trace_params: false,
        }
    }

    pub fn init(&self) -> ParamVector {
        init_params(&self.spec, self.config.seeds.run)
    }

    pub fn run(&self, strategy: Strategy) -> Result<RunLog> {
        federation::run(
            &self.dataset,
            &self.profiles,
            &self.round_config(strategy),
            self.config.seeds,
            self.init(),
        )
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: Strategy,
    pub rounds: usize,
    pub final_test_acc: f64,
    pub final_train_loss: f64,
    #[serde(with = "federation::float_or_inf")]
    pub tau: f64,
    pub mean_normalized_time: f64,
    pub max_normalized_time: f64,
    pub total_dropped: usize,
}

impl Summary {
    pub fn of(log: &RunLog, initial: (f64, f64)) -> Self {
        let tau = log.config.tau;
        let (loss, acc) = log
            .rounds
            .last()
            .map_or(initial, |r| (r.train_loss, r.test_acc));
        let finite = |v: f64| if tau.is_finite() { v } else { 0.0 };
        Self {
            strategy: log.config.strategy,
            rounds: log.rounds.len(),
            final_test_acc: acc,
            final_train_loss: loss,
            tau,
            mean_normalized_time: finite(log.mean_normalized_time(tau)),
            max_normalized_time: finite(log.max_normalized_time(tau)),
            total_dropped: log.rounds.iter().map(|r| r.dropped).sum(),
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: rounds={} test_acc={:.4} train_loss={:.4} mean_norm_time={:.3} max_norm_time={:.3} dropped={}",
            self.strategy,
            self.rounds,
            self.final_test_acc,
            self.final_train_loss,
            self.mean_normalized_time,
            self.max_normalized_time,
            self.total_dropped
        )
    }
}

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "strategy",
    "rounds",
    "final_test_acc",
    "final_train_loss",
    "tau",
    "mean_normalized_time",
    "max_normalized_time",
    "total_dropped",
];

pub fn summary_csv(rows: &[Summary]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for s in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.strategy,
            s.rounds,
            s.final_test_acc,
            s.final_train_loss,
            if s.tau.is_finite() { s.tau.to_string() } else { "inf".into() },
            s.mean_normalized_time,
            s.max_normalized_time,
            s.total_dropped
        ));
    }
    out
}

pub struct ExperimentOutcome {
    pub log: RunLog,
    pub summary: Summary,
    pub bound: Option<BoundCheck>,
}

fn initial_metrics(prep: &Prepared) -> (f64, f64) {
    let init = prep.init();
    let loss = crate::models::objective_value(&init, &prep.dataset.pooled_train());
    let acc = crate::models::evaluate(&init, &prep.dataset.test_set).1;
    (loss, acc)
}

fn write_run(log: &RunLog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    federation::write_metrics_csv(log, &dir.join("metrics.csv"))?;
    federation::write_client_times_csv(log, &dir.join("client_times.csv"))?;
    federation::write_run_json(log, &dir.join("run.json"))
}

/// Runs one strategy and writes `metrics.csv`, `client_times.csv`,
/// `run.json` and, when requested, `bound_report.json` to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prep = Prepared::new(cfg)?;
    let log = prep.run(cfg.strategy)?;
    write_run(&log, &cfg.out_dir)?;
    let bound = if cfg.bound_check {
        let check = bound_check(&BoundScenario::from_config(cfg), Some(&prep.dataset))?;
        let text = serde_json::to_string_pretty(&check.report)?;
        federation::write_atomic(&cfg.out_dir.join("bound_report.json"), text.as_bytes())?;
        Some(check)
    } else {
        None
    };
    let summary = Summary::of(&log, initial_metrics(&prep));
    Ok(ExperimentOutcome { log, summary, bound })
}

/// Runs every strategy on the same data, capabilities and run seed. Each
/// strategy writes to `out_dir/<strategy>/`, and `out_dir/summary.csv` holds
/// one row per strategy.
pub fn compare_sweep(base: &ExperimentConfig, strategies: &[Strategy]) -> Result<Vec<Summary>> {
    if strategies.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one strategy".into()));
    }
    let prep = Prepared::new(base)?;
    let initial = initial_metrics(&prep);
    let mut rows = Vec::with_capacity(strategies.len());
    for &s in strategies {
        let log = prep.run(s)?;
        write_run(&log, &base.out_dir.join(s.as_str()))?;
        rows.push(Summary::of(&log, initial));
    }
    federation::write_atomic(&base.out_dir.join("summary.csv"), summary_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// The strongly convex reference scenario for the bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundScenario {
    pub alpha: f64,
    pub beta: f64,
    pub n_clients: usize,
    pub l2: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub stragglers: f64,
    pub n_runs: usize,
    pub seed: u64,
    /// Sampled pairs per client for the smoothness estimate.
    pub smoothness_trials: usize,
}

impl Default for BoundScenario {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            n_clients: 30,
            l2: 0.1,
            epochs: 5,
            rounds: 50,
            clients_per_round: 10,
            stragglers: 30.0,
            n_runs: 10,
            seed: 1,
            smoothness_trials: 4,
        }
    }
}

impl BoundScenario {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let (alpha, beta) = match cfg.benchmark {
            Benchmark::Synthetic { alpha, beta } => (alpha, beta),
            _ => (0.0, 0.0),
        };
        Self {
            alpha,
            beta,
            n_clients: cfg.n_clients,
            l2: cfg.l2,
            epochs: cfg.epochs,
            rounds: cfg.rounds,
            clients_per_round: cfg.clients_per_round,
            stragglers: cfg.stragglers,
            n_runs: cfg.bound_runs,
            seed: cfg.seeds.data,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub report: BoundReport,
    /// Constants with the unscaled smoothness estimate.
    pub raw_constants: TheoryConstants,
    pub w_star: ParamVector,
    pub runs: Vec<RunLog>,
}

/// Estimates `mu`, `L`, `Gamma` and `w*`, runs FedCore `n_runs` times with
/// full-batch epochs and the theorem step size, measures `eps` and `D` from
/// gradient probes, and compares the averaged trajectory with the bound.
/// `dataset` replaces the generated synthetic data when given.
pub fn bound_check(s: &BoundScenario, dataset: Option<&FederatedDataset>) -> Result<BoundCheck> {
    let generated;
    let ds = match dataset {
        Some(d) => d,
        None => {
            generated = generate_synthetic(s.alpha, s.beta, s.n_clients, s.seed);
            &generated
        }
    };
    let spec = ModelSpec::logistic(ds.d_feat, ds.n_classes, s.l2);
    let sets: Vec<_> = ds.clients.iter().map(|c| &c.samples).collect();
    let mut r = rng::stream(s.seed, Purpose::Estimate, 1, 0);
    let est = estimate_mu_l(&spec, &sets, s.smoothness_trials, &mut r)?;
    let (w_star, _) = solve_optimum(&spec, &ds.pooled_train(), W_STAR_TOL)?;
    let gamma = estimate_gamma(ds, &spec, W_STAR_TOL)?;

    let caps = capabilities(ds.n_clients(), s.seed);
    let profiles = build_profiles(ds, &caps);
    let tau = deadline_for_stragglers(&profiles, s.epochs, s.stragglers);
    let max_m = profiles.iter().map(|p| p.m).max().unwrap_or(1);
    let config = RoundConfig {
        epochs: s.epochs,
        rounds: s.rounds,
        clients_per_round: s.clients_per_round,
        tau,
        lr: LrSchedule::Theorem { mu: est.mu, l: est.l },
        batch_size: max_m,
        strategy: Strategy::Fedcore,
        mu_prox: 0.0,
        distance: DistanceKind::EuclidProxy,
        gamma: 0.0,
        probes: true,
        trace_params: true,
    };
    let init = init_params(&spec, s.seed);
    let runs = (0..s.n_runs)
        .map(|i| {
            let seeds = Seeds {
                data: s.seed,
                capability: s.seed,
                run: rng::stream_key(s.seed, Purpose::LocalTraining, 7, i as u64),
            };
            federation::run(ds, &profiles, &config, seeds, init.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let (eps, d) = measure_eps_d(&runs)?;
    let measured = Measured {
        mu: est.mu,
        l: est.l,
        eps,
        d,
        gamma,
        w_star_dist0: init.sq_dist(&w_star),
    };
    let consts = TheoryConstants::new(measured, s.epochs, s.rounds, s.clients_per_round)?;
    let raw_constants = TheoryConstants::new(Measured { l: est.l_raw.max(est.mu), ..measured }, s.epochs, s.rounds, s.clients_per_round)?;
    let mut report = check_bound(&runs, &consts, &w_star)?;
    report.raw_l_pass = Some(passes_with(&report, &raw_constants));
    Ok(BoundCheck {
        report,
        raw_constants,
        w_star,
        runs,
    })
}

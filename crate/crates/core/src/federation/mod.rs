//! Round engine: client selection, the simulated straggler clock, deadline
//! handling, and the FedAvg / FedAvg-DS / FedProx / FedCore strategies.
//!
//! Client `i` needs `1 / c_i` simulated seconds per sample-step, so a full
//! round of `E` epochs over `m_i` samples takes `E * m_i / c_i`. A client is a
//! straggler when that exceeds the round deadline `tau`.

mod engine;
mod output;

pub use engine::{run, run_round, Simulator};
pub use output::{
    client_times_csv, float_or_inf, metrics_csv, write_atomic, run_json, write_client_times_csv,
    write_metrics_csv, write_run_json, CLIENT_TIME_COLUMNS, METRICS_COLUMNS,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coreset::DistanceKind;
use crate::data::{FederatedDataset, Provenance};
use crate::models::ParamVector;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fedavg,
    FedavgDs,
    Fedprox,
    Fedcore,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Fedavg,
        Strategy::FedavgDs,
        Strategy::Fedprox,
        Strategy::Fedcore,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Fedavg => "fedavg",
            Strategy::FedavgDs => "fedavg_ds",
            Strategy::Fedprox => "fedprox",
            Strategy::Fedcore => "fedcore",
        }
    }

    pub fn is_deadline_aware(&self) -> bool {
        !matches!(self, Strategy::Fedavg)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: usize,
    pub m: usize,
    /// Samples processed per simulated second.
    pub c: f64,
    /// Selection probability `m / sum(m)`.
    pub p: f64,
}

/// Capabilities from `N(1, 0.5^2)`, redrawn until at least 0.1. One stream
/// per client.
pub fn capabilities(n_clients: usize, seed: u64) -> Vec<f64> {
    let normal = Normal::new(1.0, 0.5).unwrap();
    (0..n_clients)
        .map(|i| {
            let mut r = rng::stream(seed, Purpose::Capability, i as u64, 0);
            loop {
                let c = normal.sample(&mut r);
                if c >= 0.1 {
                    break c;
                }
            }
        })
        .collect()
}

pub fn build_profiles(dataset: &FederatedDataset, caps: &[f64]) -> Vec<ClientProfile> {
    assert_eq!(caps.len(), dataset.n_clients());
    let total = dataset.total_train() as f64;
    dataset
        .clients
        .iter()
        .zip(caps)
        .map(|(cl, &c)| ClientProfile {
            client_id: cl.client_id,
            m: cl.m(),
            c,
            p: cl.m() as f64 / total,
        })
        .collect()
}

/// Time for `E` full-set epochs.
pub fn full_round_time(m: usize, c: f64, epochs: usize) -> f64 {
    epochs as f64 * m as f64 / c
}

/// Deadline at the nearest-rank `(100 - s)`th percentile of full-round times,
/// so the slowest `s%` of clients (rounded down) straggle.
pub fn deadline_for_stragglers(profiles: &[ClientProfile], epochs: usize, s_percent: f64) -> f64 {
    assert!(!profiles.is_empty());
    assert!((0.0..100.0).contains(&s_percent), "s must be in [0, 100)");
    let mut times: Vec<f64> = profiles
        .iter()
        .map(|p| full_round_time(p.m, p.c, epochs))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = times.len();
    let rank = (((100.0 - s_percent) * n as f64) / 100.0).ceil() as usize;
    times[rank.clamp(1, n) - 1]
}

/// `K` independent draws from `categorical(p)`, with replacement.
pub fn select_clients<R: Rng>(profiles: &[ClientProfile], k: usize, rng: &mut R) -> Vec<usize> {
    let mut cum = Vec::with_capacity(profiles.len());
    let mut acc = 0.0;
    for p in profiles {
        acc += p.p;
        cum.push(acc);
    }
    (0..k)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let idx = cum.partition_point(|&c| c <= u).min(profiles.len() - 1);
            profiles[idx].client_id
        })
        .collect()
}

/// Learning rate as a function of the global epoch index `t = r * E + e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `(2 / mu) / (t + max(E, 8 L / mu))`.
    Theorem { mu: f64, l: f64 },
}

impl LrSchedule {
    pub fn at(&self, t: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Theorem { mu, l } => crate::analysis::lr_schedule(t, mu, l, epochs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub epochs: usize,
    pub rounds: usize,
    pub clients_per_round: usize,
    /// Round deadline in simulated seconds; `f64::INFINITY` for none.
    #[serde(with = "output::float_or_inf")]
    pub tau: f64,
    pub lr: LrSchedule,
    /// Mini-batch size; anything at least the view length is a full-batch step.
    pub batch_size: usize,
    pub strategy: Strategy,
    pub mu_prox: f64,
    pub distance: DistanceKind,
    /// Coreset build cost as a fraction of one full epoch.
    pub gamma: f64,
    /// Record full- and view-gradient norms at every local epoch.
    pub probes: bool,
    /// Keep the global parameters after every round.
    pub trace_params: bool,
}

impl RoundConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.clients_per_round < 1 || self.clients_per_round > n_clients {
            return bad(format!(
                "clients per round must be in 1..={n_clients}, got {}",
                self.clients_per_round
            ));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.batch_size < 1 {
            return bad("batch size must be >= 1".into());
        }
        match self.lr {
            LrSchedule::Constant { lr } if !(lr >= 0.0 && lr.is_finite()) => {
                return bad(format!("invalid learning rate {lr}"))
            }
            LrSchedule::Theorem { mu, l } if !(mu > 0.0 && l >= mu) => {
                return bad(format!("theorem schedule needs 0 < mu <= L (mu={mu}, L={l})"))
            }
            _ => {}
        }
        if !(self.mu_prox >= 0.0) || !(self.gamma >= 0.0) {
            return bad("mu_prox and gamma must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub capability: u64,
    /// Drives client selection and local shuffling.
    pub run: u64,
}

/// How a selected client spent its round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientPath {
    Full,
    Coreset,
    Fallback,
    Partial,
    Dropped,
    Idle,
}

/// Gradient probe maxima over one client's local epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    /// `max ||g - G||` where `g` is the view gradient and `G` the full-set one.
    pub max_eps: f64,
    /// `max(||g||, ||G||)`.
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub slot: usize,
    pub client_id: usize,
    pub path: ClientPath,
    pub time: f64,
    pub epochs_done: usize,
    pub coreset_size: Option<usize>,
    /// Coreset gradient error at the parameters where coreset training began.
    pub epsilon: Option<f64>,
    pub probe: Option<ProbeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub clients: Vec<ClientRecord>,
    pub dropped: usize,
}

impl RoundRecord {
    pub fn mean_time(&self) -> f64 {
        self.clients.iter().map(|c| c.time).sum::<f64>() / self.clients.len() as f64
    }

    pub fn max_time(&self) -> f64 {
        self.clients.iter().map(|c| c.time).fold(0.0, f64::max)
    }

    /// Mean over clients that built a coreset; 0 when none did.
    pub fn mean_epsilon(&self) -> f64 {
        let eps: Vec<f64> = self.clients.iter().filter_map(|c| c.epsilon).collect();
        if eps.is_empty() {
            0.0
        } else {
            eps.iter().sum::<f64>() / eps.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: RoundConfig,
    pub seeds: Seeds,
    pub provenance: Provenance,
    pub rounds: Vec<RoundRecord>,
    /// Largest local training set in the population.
    pub max_client_size: usize,
    pub initial_params: ParamVector,
    pub final_params: ParamVector,
    /// Global parameters at every synchronisation step, starting with the
    /// initial ones; present when `trace_params` was set.
    pub param_trace: Option<Vec<ParamVector>>,
}

impl RunLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.test_acc)
    }

    /// Mean over rounds of the round time (slowest selected client) divided
    /// by `tau`. A value of 1 means rounds end exactly at the deadline.
    pub fn mean_normalized_time(&self, tau: f64) -> f64 {
        if self.rounds.is_empty() {
            return 0.0;
        }
        self.rounds.iter().map(|r| r.max_time() / tau).sum::<f64>() / self.rounds.len() as f64
    }

    /// Largest per-client time over the run divided by `tau`.
    pub fn max_normalized_time(&self, tau: f64) -> f64 {
        self.rounds.iter().map(|r| r.max_time() / tau).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests;

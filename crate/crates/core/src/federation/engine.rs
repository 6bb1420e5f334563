use std::collections::HashMap;

use super::{
    full_round_time, select_clients, ClientPath, ClientProfile, ClientRecord, ProbeStats,
    RoundConfig, RoundRecord, RunLog, Seeds, Strategy,
};
use crate::coreset::{
    budget, coreset_gradient_error, dist_euclid_proxy, dist_exact, dist_lastlayer_proxy, kmedoids,
    Coreset, DistanceKind,
};
use crate::data::{FederatedDataset, SampleSet};
use crate::models::{
    full_objective, objective_value, evaluate, sample_grad_raw, sgd_epoch_observed, weighted_objective,
    EpochConfig, EpochObserver, GradVector, LastLayerGrad, ModelSpec, ParamVector, Prox,
    WeightedView,
};
use crate::rng::{self, Purpose, StreamRng};
use crate::{Error, Result};

/// Slack on the deadline check for rounding in the time arithmetic.
const DEADLINE_SLACK: f64 = 1e-9;

/// Owns the per-run state: pooled training data for the train-loss metric and
/// cached parameter-independent coresets.
pub struct Simulator<'a> {
    dataset: &'a FederatedDataset,
    profiles: &'a [ClientProfile],
    config: RoundConfig,
    seeds: Seeds,
    pooled: SampleSet,
    proxy_cache: HashMap<(usize, usize), Coreset>,
}

struct ClientOutcome {
    params: Option<ParamVector>,
    record: ClientRecord,
}

/// Collects last-layer gradients seen during an epoch.
struct ResidualCollector(Vec<Option<LastLayerGrad>>);

impl EpochObserver for ResidualCollector {
    fn observe(&mut self, _: &ModelSpec, _: &[f64], j: usize, residual: &[f64]) {
        self.0[j] = Some(LastLayerGrad(residual.to_vec()));
    }
}

/// Collects full per-sample gradients seen during an epoch.
struct GradCollector<'s> {
    set: &'s SampleSet,
    grads: Vec<Option<GradVector>>,
}

impl EpochObserver for GradCollector<'_> {
    fn observe(&mut self, spec: &ModelSpec, w: &[f64], j: usize, _: &[f64]) {
        self.grads[j] = Some(GradVector(sample_grad_raw(spec, w, self.set.get(j))));
    }
}

impl<'a> Simulator<'a> {
    pub fn new(
        dataset: &'a FederatedDataset,
        profiles: &'a [ClientProfile],
        config: RoundConfig,
        seeds: Seeds,
    ) -> Result<Self> {
        config.validate(dataset.n_clients())?;
        if profiles.len() != dataset.n_clients() {
            return Err(Error::InvalidConfig("one profile per client required".into()));
        }
        for (i, (p, c)) in profiles.iter().zip(&dataset.clients).enumerate() {
            if p.client_id != i || c.client_id != i || p.m != c.m() || !(p.c > 0.0) {
                return Err(Error::InvalidConfig(format!("profile {i} inconsistent with dataset")));
            }
        }
        Ok(Self {
            dataset,
            profiles,
            config,
            seeds,
            pooled: dataset.pooled_train(),
            proxy_cache: HashMap::new(),
        })
    }

    pub fn config(&self) -> &RoundConfig {
        &self.config
    }

    fn lr(&self, round: usize, epoch: usize) -> f64 {
        self.config.lr.at(round * self.config.epochs + epoch, self.config.epochs)
    }

    /// One local epoch, with optional probing of view and full-set gradients
    /// at the epoch's starting parameters.
    #[allow(clippy::too_many_arguments)]
    fn epoch(
        &self,
        w: &ParamVector,
        set: &SampleSet,
        view: &WeightedView,
        is_full_view: bool,
        lr: f64,
        prox: Prox<'_>,
        sample_limit: Option<usize>,
        rng: &mut StreamRng,
        probe: &mut Option<ProbeStats>,
        observer: Option<&mut dyn EpochObserver>,
    ) -> ParamVector {
        if self.config.probes {
            let full = full_objective(w, set).1;
            let (eps, norm) = if is_full_view {
                (0.0, full.norm())
            } else {
                let items = view.items().iter().map(|&(j, d)| (j, d as f64));
                let g = weighted_objective(w, set, items).1;
                let diff = GradVector(g.0.iter().zip(&full.0).map(|(a, b)| a - b).collect());
                (diff.norm(), g.norm().max(full.norm()))
            };
            let p = probe.get_or_insert(ProbeStats {
                max_eps: 0.0,
                max_grad_norm: 0.0,
            });
            p.max_eps = p.max_eps.max(eps);
            p.max_grad_norm = p.max_grad_norm.max(norm);
        }
        let cfg = EpochConfig {
            lr,
            batch_size: self.config.batch_size,
            prox,
            sample_limit,
        };
        sgd_epoch_observed(w, set, view, &cfg, rng, observer)
    }

    fn proxy_coreset(&mut self, client: usize, k: usize) -> Coreset {
        let set = &self.dataset.clients[client].samples;
        self.proxy_cache
            .entry((client, k))
            .or_insert_with(|| kmedoids(&dist_euclid_proxy(set), k))
            .clone()
    }

    fn train_client(
        &mut self,
        global: &ParamVector,
        round: usize,
        slot: usize,
        client: usize,
    ) -> ClientOutcome {
        let profile = self.profiles[client];
        let (m, c) = (profile.m, profile.c);
        let cfg = self.config.clone();
        let (epochs, tau) = (cfg.epochs, cfg.tau);
        let full_time = full_round_time(m, c, epochs);
        let straggler = full_time > tau;
        let mut rng = rng::stream(self.seeds.run, Purpose::LocalTraining, round as u64, slot as u64);
        let dataset = self.dataset;
        let set = &dataset.clients[client].samples;
        let full_view = WeightedView::full(m);
        let mut probe = None;
        let mut record = ClientRecord {
            slot,
            client_id: client,
            path: ClientPath::Full,
            time: full_time,
            epochs_done: epochs,
            coreset_size: None,
            epsilon: None,
            probe: None,
        };

        let run_full = |sim: &Self, w: &ParamVector, n: usize, prox, rng: &mut StreamRng, probe: &mut _| {
            let mut w = w.clone();
            for e in 0..n {
                w = sim.epoch(&w, set, &full_view, true, sim.lr(round, e), prox, None, rng, probe, None);
            }
            w
        };

        let params = match cfg.strategy {
            Strategy::Fedavg => Some(run_full(self, global, epochs, Prox::None, &mut rng, &mut probe)),
            Strategy::FedavgDs => {
                if straggler {
                    record.path = ClientPath::Dropped;
                    record.time = tau;
                    record.epochs_done = 0;
                    None
                } else {
                    Some(run_full(self, global, epochs, Prox::None, &mut rng, &mut probe))
                }
            }
            Strategy::Fedprox => {
                let prox = Prox::Anchor {
                    mu: cfg.mu_prox,
                    anchor: global,
                };
                if !straggler {
                    Some(run_full(self, global, epochs, prox, &mut rng, &mut probe))
                } else {
                    let affordable = (c * tau / m as f64).floor() as usize;
                    record.path = ClientPath::Partial;
                    if affordable >= 1 {
                        let e_done = affordable.min(epochs);
                        record.epochs_done = e_done;
                        record.time = full_round_time(m, c, e_done);
                        Some(run_full(self, global, e_done, prox, &mut rng, &mut probe))
                    } else {
                        // Not even one full epoch fits: process a prefix of one
                        // shuffled epoch.
                        let limit = ((c * tau).floor() as usize).min(m);
                        record.epochs_done = 0;
                        record.time = limit as f64 / c;
                        if limit == 0 {
                            record.path = ClientPath::Idle;
                            Some(global.clone())
                        } else {
                            let lr = self.lr(round, 0);
                            Some(self.epoch(
                                global, set, &full_view, true, lr, prox, Some(limit), &mut rng,
                                &mut probe, None,
                            ))
                        }
                    }
                }
            }
            Strategy::Fedcore => {
                if !straggler {
                    Some(run_full(self, global, epochs, Prox::None, &mut rng, &mut probe))
                } else {
                    Some(self.fedcore_straggler(global, round, client, &mut rng, &mut probe, &mut record))
                }
            }
        };
        record.probe = probe;
        if cfg.strategy.is_deadline_aware() {
            assert!(
                record.time <= tau * (1.0 + 1e-12) + DEADLINE_SLACK,
                "client {client} exceeded the deadline: {} > {tau}",
                record.time
            );
        }
        ClientOutcome { params, record }
    }

    fn fedcore_straggler(
        &mut self,
        global: &ParamVector,
        round: usize,
        client: usize,
        rng: &mut StreamRng,
        probe: &mut Option<ProbeStats>,
        record: &mut ClientRecord,
    ) -> ParamVector {
        let profile = self.profiles[client];
        let (m, c) = (profile.m, profile.c);
        let (epochs, tau, gamma) = (self.config.epochs, self.config.tau, self.config.gamma);
        let dataset = self.dataset;
        let set = &dataset.clients[client].samples;
        let full_view = WeightedView::full(m);
        let surcharge = gamma * m as f64;
        let b = if epochs >= 2 {
            budget(m, c, tau - surcharge / c, epochs)
        } else {
            0
        };

        if b > 0 {
            let b = b as usize;
            let kind = self.config.distance;
            let lr0 = self.lr(round, 0);
            let (mut w, coreset) = match kind {
                DistanceKind::EuclidProxy => {
                    let w = self.epoch(global, set, &full_view, true, lr0, Prox::None, None, rng, probe, None);
                    (w, self.proxy_coreset(client, b))
                }
                DistanceKind::LastlayerProxy => {
                    let mut obs = ResidualCollector(vec![None; m]);
                    let w = self.epoch(
                        global, set, &full_view, true, lr0, Prox::None, None, rng, probe, Some(&mut obs),
                    );
                    let ll: Vec<LastLayerGrad> = obs.0.into_iter().map(Option::unwrap).collect();
                    (w, kmedoids(&dist_lastlayer_proxy(&ll), b))
                }
                DistanceKind::Exact => {
                    let mut obs = GradCollector {
                        set,
                        grads: vec![None; m],
                    };
                    let w = self.epoch(
                        global, set, &full_view, true, lr0, Prox::None, None, rng, probe, Some(&mut obs),
                    );
                    let grads: Vec<GradVector> = obs.grads.into_iter().map(Option::unwrap).collect();
                    (w, kmedoids(&dist_exact(&grads), b))
                }
            };
            record.path = ClientPath::Coreset;
            record.coreset_size = Some(coreset.len());
            record.epsilon = Some(coreset_gradient_error(&w, set, &coreset));
            record.time = (m as f64 + (epochs - 1) as f64 * b as f64 + surcharge) / c;
            let view = coreset.to_view();
            for e in 1..epochs {
                w = self.epoch(&w, set, &view, false, self.lr(round, e), Prox::None, None, rng, probe, None);
            }
            return w;
        }

        // The full first epoch does not fit: train every epoch on a
        // parameter-independent feature-space coreset.
        let k = (((c * tau - surcharge) / epochs as f64).floor().max(0.0) as usize).min(m);
        record.path = ClientPath::Fallback;
        if k == 0 {
            record.path = ClientPath::Idle;
            record.time = 0.0;
            record.epochs_done = 0;
            return global.clone();
        }
        let coreset = self.proxy_coreset(client, k);
        record.coreset_size = Some(k);
        record.epsilon = Some(coreset_gradient_error(global, set, &coreset));
        record.time = (epochs as f64 * k as f64 + surcharge) / c;
        let view = coreset.to_view();
        let mut w = global.clone();
        for e in 0..epochs {
            w = self.epoch(&w, set, &view, false, self.lr(round, e), Prox::None, None, rng, probe, None);
        }
        w
    }

    /// Runs round `round` from `global`; returns the aggregate and its record.
    pub fn run_round(&mut self, global: &ParamVector, round: usize) -> (ParamVector, RoundRecord) {
        let mut sel_rng = rng::stream(self.seeds.run, Purpose::Selection, round as u64, 0);
        let selected = select_clients(self.profiles, self.config.clients_per_round, &mut sel_rng);
        let mut finished = Vec::with_capacity(selected.len());
        let mut clients = Vec::with_capacity(selected.len());
        for (slot, &client) in selected.iter().enumerate() {
            let out = self.train_client(global, round, slot, client);
            if let Some(p) = out.params {
                finished.push(p);
            }
            clients.push(out.record);
        }
        let dropped = selected.len() - finished.len();
        let next = if finished.is_empty() {
            global.clone()
        } else {
            ParamVector::mean(&finished)
        };
        let train_loss = objective_value(&next, &self.pooled);
        let (test_loss, test_acc) = evaluate(&next, &self.dataset.test_set);
        let record = RoundRecord {
            round: round + 1,
            train_loss,
            test_loss,
            test_acc,
            clients,
            dropped,
        };
        (next, record)
    }

    pub fn run(mut self, init: ParamVector) -> RunLog {
        let mut trace = self.config.trace_params.then(|| vec![init.clone()]);
        let mut global = init.clone();
        let mut rounds = Vec::with_capacity(self.config.rounds);
        for r in 0..self.config.rounds {
            let (next, rec) = self.run_round(&global, r);
            global = next;
            rounds.push(rec);
            if let Some(t) = trace.as_mut() {
                t.push(global.clone());
            }
        }
        RunLog {
            config: self.config.clone(),
            seeds: self.seeds,
            provenance: self.dataset.provenance.clone(),
            rounds,
            max_client_size: self.profiles.iter().map(|p| p.m).max().unwrap_or(0),
            initial_params: init,
            final_params: global,
            param_trace: trace,
        }
    }
}

/// Convenience wrapper: validate, simulate `config.rounds` rounds from `init`.
pub fn run(
    dataset: &FederatedDataset,
    profiles: &[ClientProfile],
    config: &RoundConfig,
    seeds: Seeds,
    init: ParamVector,
) -> Result<RunLog> {
    if init.spec().d_feat != dataset.d_feat || init.spec().n_classes != dataset.n_classes {
        return Err(Error::InvalidConfig("model shape does not match dataset".into()));
    }
    Ok(Simulator::new(dataset, profiles, config.clone(), seeds)?.run(init))
}

/// Runs a single round outside a full run.
pub fn run_round(
    global: &ParamVector,
    round: usize,
    dataset: &FederatedDataset,
    profiles: &[ClientProfile],
    config: &RoundConfig,
    seeds: Seeds,
) -> Result<(ParamVector, RoundRecord)> {
    let mut sim = Simulator::new(dataset, profiles, config.clone(), seeds)?;
    Ok(sim.run_round(global, round))
}

use rand::seq::SliceRandom;
use rand::Rng;

use super::{add_ridge, net, ModelSpec, ParamVector, Workspace};
use crate::data::SampleSet;
use crate::{Error, Result};

/// `(sample index, positive integer weight)` pairs into one client's samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedView {
    items: Vec<(usize, u32)>,
}

impl WeightedView {
    pub fn new(items: Vec<(usize, u32)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidConfig("weighted view is empty".into()));
        }
        if items.iter().any(|&(_, w)| w == 0) {
            return Err(Error::InvalidConfig("view weights must be positive".into()));
        }
        Ok(Self { items })
    }

    /// Every index `0..m` with weight 1.
    pub fn full(m: usize) -> Self {
        assert!(m > 0);
        Self {
            items: (0..m).map(|j| (j, 1)).collect(),
        }
    }

    pub fn items(&self) -> &[(usize, u32)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.items.iter().map(|&(_, w)| w as u64).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Prox<'a> {
    None,
    /// Adds `mu * (w - anchor)` to every batch gradient.
    Anchor { mu: f64, anchor: &'a ParamVector },
}

#[derive(Debug, Clone, Copy)]
pub struct EpochConfig<'a> {
    pub lr: f64,
    pub batch_size: usize,
    pub prox: Prox<'a>,
    /// Stop after this many samples of the permuted view (partial epoch).
    pub sample_limit: Option<usize>,
}

impl<'a> EpochConfig<'a> {
    pub fn new(lr: f64, batch_size: usize) -> Self {
        Self {
            lr,
            batch_size,
            prox: Prox::None,
            sample_limit: None,
        }
    }
}

/// Sees every sample's forward pass during an epoch, at the parameters the
/// sample's batch started from.
pub trait EpochObserver {
    fn observe(&mut self, spec: &ModelSpec, w: &[f64], sample_index: usize, residual: &[f64]);
}

pub fn sgd_epoch<R: Rng>(
    params: &ParamVector,
    set: &SampleSet,
    view: &WeightedView,
    cfg: &EpochConfig<'_>,
    rng: &mut R,
) -> ParamVector {
    sgd_epoch_observed(params, set, view, cfg, rng, None)
}

/// One pass over a seeded permutation of `view` in mini-batches. Each batch
/// gradient is the weight-normalised mean of the per-sample cross-entropy
/// gradients plus `l2 * w` and the optional proximal pull.
pub fn sgd_epoch_observed<R: Rng>(
    params: &ParamVector,
    set: &SampleSet,
    view: &WeightedView,
    cfg: &EpochConfig<'_>,
    rng: &mut R,
    mut observer: Option<&mut dyn EpochObserver>,
) -> ParamVector {
    assert!(cfg.batch_size >= 1, "batch_size must be >= 1");
    let spec = *params.spec();
    let mut out = params.clone();
    let mut order: Vec<usize> = (0..view.len()).collect();
    order.shuffle(rng);
    if let Some(limit) = cfg.sample_limit {
        order.truncate(limit);
    }

    let mut ws = Workspace::new(&spec);
    let mut g = vec![0.0; out.len()];
    for batch in order.chunks(cfg.batch_size) {
        g.iter_mut().for_each(|v| *v = 0.0);
        let w = out.values();
        let mut total = 0.0;
        for &pos in batch {
            let (j, weight) = view.items[pos];
            let weight = weight as f64;
            net::accumulate_grad(&spec, w, set.get(j), weight, &mut g, &mut ws);
            if let Some(obs) = observer.as_deref_mut() {
                obs.observe(&spec, w, j, ws.residual());
            }
            total += weight;
        }
        g.iter_mut().for_each(|v| *v /= total);
        add_ridge(&spec, w, 1.0, &mut g);
        if let Prox::Anchor { mu, anchor } = cfg.prox {
            for ((gi, wi), ai) in g.iter_mut().zip(w).zip(anchor.values()) {
                *gi += mu * (wi - ai);
            }
        }
        for (wi, gi) in out.values_mut().iter_mut().zip(&g) {
            *wi -= cfg.lr * gi;
        }
    }
    out
}

//! Differentiable classifiers: multinomial logistic regression and a
//! one-hidden-layer tanh MLP, both with softmax cross-entropy and a ridge term.
//!
//! Parameter layout is row-major with the bias as the last column of each
//! layer: logistic is `n_classes x (d_feat + 1)`; the MLP stores
//! `hidden x (d_feat + 1)` followed by `n_classes x (hidden + 1)`.

mod checkpoint;
mod net;
mod sgd;

pub use checkpoint::{load_params, save_params};
pub use net::Workspace;
pub use sgd::{sgd_epoch, sgd_epoch_observed, EpochConfig, EpochObserver, Prox, WeightedView};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Sample, SampleSet};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_feat: usize,
    pub n_classes: usize,
    /// Hidden width; ignored for logistic.
    pub hidden: usize,
    /// Ridge coefficient; the objective carries `(l2 / 2) * ||w||^2`.
    pub l2: f64,
}

impl ModelSpec {
    pub fn logistic(d_feat: usize, n_classes: usize, l2: f64) -> Self {
        Self {
            kind: ModelKind::Logistic,
            d_feat,
            n_classes,
            hidden: 0,
            l2,
        }
    }

    pub fn mlp(d_feat: usize, n_classes: usize, hidden: usize, l2: f64) -> Self {
        Self {
            kind: ModelKind::Mlp,
            d_feat,
            n_classes,
            hidden,
            l2,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Logistic => self.n_classes * (self.d_feat + 1),
            ModelKind::Mlp => {
                self.hidden * (self.d_feat + 1) + self.n_classes * (self.hidden + 1)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_feat == 0 || self.n_classes < 2 {
            return Err(Error::InvalidConfig("model needs d_feat >= 1 and n_classes >= 2".into()));
        }
        if self.kind == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::InvalidConfig("mlp needs hidden >= 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2 must be finite and >= 0, got {}", self.l2)));
        }
        Ok(())
    }

    pub fn is_convex(&self) -> bool {
        self.kind == ModelKind::Logistic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec: ModelSpec,
}

impl ParamVector {
    pub fn new(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::InvalidConfig(format!(
                "parameter length {} does not match spec ({})",
                values.len(),
                spec.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self { values, spec })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            spec,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn sq_dist(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Unweighted mean, summed in slice order.
    pub fn mean(items: &[ParamVector]) -> ParamVector {
        assert!(!items.is_empty());
        let mut acc = vec![0.0; items[0].len()];
        for p in items {
            for (a, v) in acc.iter_mut().zip(&p.values) {
                *a += v;
            }
        }
        let k = items.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        ParamVector {
            values: acc,
            spec: items[0].spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `softmax(logits) - onehot(y)` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerGrad(pub Vec<f64>);

/// Zeros for logistic; Glorot-uniform weights and zero biases for the MLP.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut p = ParamVector::zeros(*spec);
    if spec.kind == ModelKind::Mlp {
        let mut r = rng::stream(seed, Purpose::Init, 0, 0);
        let (d, h, c) = (spec.d_feat, spec.hidden, spec.n_classes);
        let layers = [(0, h, d), (h * (d + 1), c, h)];
        for (offset, rows, fan_in) in layers {
            let limit = (6.0 / (fan_in + rows) as f64).sqrt();
            for row in 0..rows {
                let base = offset + row * (fan_in + 1);
                for w in &mut p.values[base..base + fan_in] {
                    *w = r.random_range(-limit..limit);
                }
            }
        }
    }
    p
}

fn ridge(params: &ParamVector) -> f64 {
    0.5 * params.spec.l2 * params.sq_norm()
}

/// Cross-entropy of one sample plus the shared ridge term.
pub fn per_sample_loss(params: &ParamVector, sample: Sample<'_>) -> f64 {
    let mut ws = Workspace::new(&params.spec);
    net::forward(&params.spec, &params.values, sample.features, &mut ws);
    net::cross_entropy(ws.logits(), sample.label) + ridge(params)
}

/// Exact gradient of [`per_sample_loss`].
pub fn per_sample_grad(params: &ParamVector, sample: Sample<'_>) -> GradVector {
    let mut ws = Workspace::new(&params.spec);
    let mut g = vec![0.0; params.len()];
    net::accumulate_grad(&params.spec, &params.values, sample, 1.0, &mut g, &mut ws);
    add_ridge(&params.spec, &params.values, 1.0, &mut g);
    GradVector(g)
}

pub fn last_layer_input_grad(params: &ParamVector, sample: Sample<'_>) -> LastLayerGrad {
    let mut ws = Workspace::new(&params.spec);
    net::forward(&params.spec, &params.values, sample.features, &mut ws);
    net::residual(&mut ws, sample.label);
    LastLayerGrad(ws.residual().to_vec())
}

pub(crate) fn add_ridge(spec: &ModelSpec, w: &[f64], scale: f64, g: &mut [f64]) {
    if spec.l2 != 0.0 {
        let s = spec.l2 * scale;
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi += s * wi;
        }
    }
}

/// Per-sample gradients of every row in `set`.
/// Per-sample gradient from raw parameter values, for callers that only hold a slice.
pub(crate) fn sample_grad_raw(spec: &ModelSpec, w: &[f64], sample: Sample<'_>) -> Vec<f64> {
    let mut ws = Workspace::new(spec);
    let mut g = vec![0.0; w.len()];
    net::accumulate_grad(spec, w, sample, 1.0, &mut g, &mut ws);
    add_ridge(spec, w, 1.0, &mut g);
    g
}

pub fn per_sample_grads(params: &ParamVector, set: &SampleSet) -> Vec<GradVector> {
    set.iter().map(|s| per_sample_grad(params, s)).collect()
}

/// Weighted mean objective and its gradient over `(index, weight)` items:
/// `sum_j w_j CE_j / sum_j w_j + (l2/2)||w||^2`.
pub fn weighted_objective(
    params: &ParamVector,
    set: &SampleSet,
    items: impl IntoIterator<Item = (usize, f64)>,
) -> (f64, GradVector) {
    let spec = params.spec;
    let mut ws = Workspace::new(&spec);
    let mut g = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut total = 0.0;
    for (j, w) in items {
        loss += w * net::accumulate_grad(&spec, &params.values, set.get(j), w, &mut g, &mut ws);
        total += w;
    }
    g.iter_mut().for_each(|v| *v /= total);
    add_ridge(&spec, &params.values, 1.0, &mut g);
    (loss / total + ridge(params), GradVector(g))
}

/// Mean objective and gradient over the whole set.
pub fn full_objective(params: &ParamVector, set: &SampleSet) -> (f64, GradVector) {
    weighted_objective(params, set, (0..set.len()).map(|j| (j, 1.0)))
}

/// Mean objective only (forward passes).
pub fn objective_value(params: &ParamVector, set: &SampleSet) -> f64 {
    evaluate(params, set).0
}

/// Mean loss (cross-entropy plus ridge) and top-1 accuracy.
pub fn evaluate(params: &ParamVector, set: &SampleSet) -> (f64, f64) {
    assert!(!set.is_empty(), "evaluate needs samples");
    let mut ws = Workspace::new(&params.spec);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in set.iter() {
        net::forward(&params.spec, &params.values, s.features, &mut ws);
        loss += net::cross_entropy(ws.logits(), s.label);
        if net::argmax(ws.logits()) == s.label {
            correct += 1;
        }
    }
    let n = set.len() as f64;
    (loss / n + ridge(params), correct as f64 / n)
}

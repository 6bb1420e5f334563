use super::{ModelKind, ModelSpec};
use crate::data::Sample;

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    logits: Vec<f64>,
    residual: Vec<f64>,
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Workspace {
    pub fn new(spec: &ModelSpec) -> Self {
        Self {
            logits: vec![0.0; spec.n_classes],
            residual: vec![0.0; spec.n_classes],
            hidden: vec![0.0; spec.hidden],
            dhidden: vec![0.0; spec.hidden],
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// `softmax(logits) - onehot(y)` after [`residual`] ran.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `rows x (x.len() + 1)` affine map; bias is the last column.
#[inline]
fn affine(w: &[f64], x: &[f64], out: &mut [f64]) {
    let stride = x.len() + 1;
    for (o, row) in out.iter_mut().zip(w.chunks_exact(stride)) {
        *o = dot(&row[..x.len()], x) + row[x.len()];
    }
}

/// Adds `scale * outer(r, [x; 1])` into `g`.
#[inline]
fn add_outer(g: &mut [f64], r: &[f64], x: &[f64], scale: f64) {
    let stride = x.len() + 1;
    for (row, &ri) in g.chunks_exact_mut(stride).zip(r) {
        let s = scale * ri;
        if s == 0.0 {
            continue;
        }
        for (gj, xj) in row[..x.len()].iter_mut().zip(x) {
            *gj += s * xj;
        }
        row[x.len()] += s;
    }
}

pub(crate) fn forward(spec: &ModelSpec, w: &[f64], x: &[f64], ws: &mut Workspace) {
    match spec.kind {
        ModelKind::Logistic => affine(w, x, &mut ws.logits),
        ModelKind::Mlp => {
            let split = spec.hidden * (spec.d_feat + 1);
            affine(&w[..split], x, &mut ws.hidden);
            ws.hidden.iter_mut().for_each(|h| *h = h.tanh());
            affine(&w[split..], &ws.hidden, &mut ws.logits);
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    log_sum_exp(logits) - logits[y]
}

/// Fills the workspace residual from its logits; returns the cross-entropy.
pub(crate) fn residual(ws: &mut Workspace, y: usize) -> f64 {
    let max = ws.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (r, z) in ws.residual.iter_mut().zip(&ws.logits) {
        *r = (z - max).exp();
        sum += *r;
    }
    ws.residual.iter_mut().for_each(|r| *r /= sum);
    ws.residual[y] -= 1.0;
    sum.ln() + max - ws.logits[y]
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Adds `scale * grad CE(sample)` into `g` (no ridge term) and returns the
/// sample's cross-entropy. The residual stays in `ws`.
pub(crate) fn accumulate_grad(
    spec: &ModelSpec,
    w: &[f64],
    sample: Sample<'_>,
    scale: f64,
    g: &mut [f64],
    ws: &mut Workspace,
) -> f64 {
    forward(spec, w, sample.features, ws);
    let ce = residual(ws, sample.label);
    match spec.kind {
        ModelKind::Logistic => add_outer(g, &ws.residual, sample.features, scale),
        ModelKind::Mlp => {
            let split = spec.hidden * (spec.d_feat + 1);
            let (g1, g2) = g.split_at_mut(split);
            add_outer(g2, &ws.residual, &ws.hidden, scale);
            let stride = spec.hidden + 1;
            ws.dhidden.iter_mut().for_each(|d| *d = 0.0);
            for (row, &r) in w[split..].chunks_exact(stride).zip(&ws.residual) {
                for (d, wk) in ws.dhidden.iter_mut().zip(&row[..spec.hidden]) {
                    *d += r * wk;
                }
            }
            for (d, h) in ws.dhidden.iter_mut().zip(&ws.hidden) {
                *d *= 1.0 - h * h;
            }
            add_outer(g1, &ws.dhidden, sample.features, scale);
        }
    }
    ce
}

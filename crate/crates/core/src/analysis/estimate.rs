use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{minimize, L_SAFETY};
use crate::data::{FederatedDataset, SampleSet};
use crate::federation::RunLog;
use crate::models::{full_objective, ModelSpec, ParamVector};
use crate::{Error, Result};

/// Power-iteration steps used to aim each sampled pair along a direction of
/// high curvature.
const POWER_STEPS: usize = 6;
/// Relative separation of the two points in a sampled pair.
const PAIR_STEP: f64 = 1e-3;
const SOLVER_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessEstimate {
    pub mu: f64,
    /// Largest sampled gradient-difference quotient, times [`L_SAFETY`].
    pub l: f64,
    pub l_raw: f64,
}

fn grad(spec: &ModelSpec, w: &[f64], set: &SampleSet) -> Vec<f64> {
    let p = ParamVector::new(*spec, w.to_vec()).expect("finite parameters");
    full_objective(&p, set).1 .0
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `mu` is the ridge coefficient. `L` is the largest quotient
/// `||grad F(w1) - grad F(w2)|| / ||w1 - w2||` over `trials` pairs per
/// objective, where each `F` is the mean objective over one of `sets`. The
/// first point of a pair is uniform in `[-1, 1]^P`; the second is a short
/// step along a direction refined by a few Hessian power iterations, so the
/// quotient probes the top of the curvature spectrum.
pub fn estimate_mu_l<R: Rng>(
    spec: &ModelSpec,
    sets: &[&SampleSet],
    trials: usize,
    rng: &mut R,
) -> Result<SmoothnessEstimate> {
    if !spec.is_convex() {
        return Err(Error::NonConvexModel);
    }
    if sets.iter().any(|s| s.is_empty()) || sets.is_empty() || trials == 0 {
        return Err(Error::InsufficientSamples("smoothness estimate needs samples and trials".into()));
    }
    let p = spec.param_count();
    let mut l_raw: f64 = spec.l2;
    for set in sets {
        for _ in 0..trials {
            let w1: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g1 = grad(spec, &w1, set);
            let mut v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
            for _ in 0..=POWER_STEPS {
                let nv = norm(&v);
                if nv == 0.0 {
                    break;
                }
                let h = PAIR_STEP * (1.0 + norm(&w1)) / nv;
                let w2: Vec<f64> = w1.iter().zip(&v).map(|(a, b)| a + h * b).collect();
                let diff: Vec<f64> = grad(spec, &w2, set).iter().zip(&g1).map(|(a, b)| a - b).collect();
                let dist = norm(&w2.iter().zip(&w1).map(|(a, b)| a - b).collect::<Vec<_>>());
                l_raw = l_raw.max(norm(&diff) / dist);
                v = diff;
            }
        }
    }
    Ok(SmoothnessEstimate {
        mu: spec.l2,
        l: L_SAFETY * l_raw,
        l_raw,
    })
}

/// Minimiser of the mean objective over `set`, to gradient norm `tol`.
pub fn solve_optimum(spec: &ModelSpec, set: &SampleSet, tol: f64) -> Result<(ParamVector, f64)> {
    if !spec.is_convex() {
        return Err(Error::NonConvexModel);
    }
    let f = |w: &[f64]| {
        let p = ParamVector::new(*spec, w.to_vec()).expect("finite parameters");
        let (v, g) = full_objective(&p, set);
        (v, g.0)
    };
    let m = minimize(f, vec![0.0; spec.param_count()], tol, SOLVER_MAX_ITERS)?;
    Ok((ParamVector::new(*spec, m.x)?, m.value))
}

/// Heterogeneity `F(w*) - sum_i p_i F_i(w_i*)`, clamped at zero, with
/// `p_i = m_i / sum m`.
pub fn estimate_gamma(dataset: &FederatedDataset, spec: &ModelSpec, tol: f64) -> Result<f64> {
    let pooled = dataset.pooled_train();
    let (_, global) = solve_optimum(spec, &pooled, tol)?;
    let total = dataset.total_train() as f64;
    let mut local = 0.0;
    for c in &dataset.clients {
        let (_, v) = solve_optimum(spec, &c.samples, tol)?;
        local += c.m() as f64 / total * v;
    }
    Ok((global - local).max(0.0))
}

/// `(eps, D)` from gradient probes: `eps` is the largest coreset gradient
/// error seen along the trajectories, `D` the largest probed gradient norm.
pub fn measure_eps_d(runs: &[RunLog]) -> Result<(f64, f64)> {
    let mut eps: f64 = 0.0;
    let mut d: Option<f64> = None;
    for c in runs.iter().flat_map(|r| &r.rounds).flat_map(|r| &r.clients) {
        if let Some(e) = c.epsilon {
            eps = eps.max(e);
        }
        if let Some(p) = c.probe {
            eps = eps.max(p.max_eps);
            d = Some(d.unwrap_or(0.0).max(p.max_grad_norm));
        }
    }
    d.map(|d| (eps, d)).ok_or(Error::ProbesAbsent)
}

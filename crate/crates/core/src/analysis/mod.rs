//! Convergence-bound machinery for the strongly convex (logistic) case.
//!
//! With step size `eta_t = alpha / (t + beta)`, `alpha = 2 / mu` and
//! `beta = max(E, 8 L / mu)`, the averaged model after `t` local steps
//! satisfies `E||w_t - w*||^2 <= A1 + A2 / (t + beta)`. The constants are
//! built from measured smoothness `L`, strong convexity `mu`, coreset gradient
//! error `eps`, gradient bound `D` and heterogeneity `Gamma`.

mod estimate;
mod solver;

pub use estimate::{estimate_gamma, estimate_mu_l, measure_eps_d, solve_optimum, SmoothnessEstimate};
pub use solver::{minimize, Minimum};

use serde::{Deserialize, Serialize};

use crate::federation::{LrSchedule, RunLog};
use crate::models::ParamVector;
use crate::{Error, Result};

/// Safety factor applied to the sampled smoothness quotient.
pub const L_SAFETY: f64 = 1.2;

pub fn lr_schedule(t: usize, mu: f64, l: f64, epochs: usize) -> f64 {
    assert!(mu > 0.0 && l > 0.0 && epochs >= 1);
    let beta = (epochs as f64).max(8.0 * l / mu);
    (2.0 / mu) / (t as f64 + beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub mu: f64,
    pub l: f64,
    pub eps: f64,
    pub d: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub alpha: f64,
    pub beta: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    /// `||w_0 - w*||^2`.
    pub w_star_dist0: f64,
}

/// Measured inputs to [`TheoryConstants::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub mu: f64,
    pub l: f64,
    pub eps: f64,
    pub d: f64,
    pub gamma: f64,
    pub w_star_dist0: f64,
}

impl TheoryConstants {
    pub fn new(m: Measured, epochs: usize, rounds: usize, clients_per_round: usize) -> Result<Self> {
        let Measured {
            mu,
            l,
            eps,
            d,
            gamma,
            w_star_dist0,
        } = m;
        if !(mu > 0.0 && mu <= l && l.is_finite()) {
            return Err(Error::InvalidConfig(format!("need 0 < mu <= L, got mu={mu}, L={l}")));
        }
        if !(eps >= 0.0 && d >= 0.0 && gamma >= 0.0 && w_star_dist0 >= 0.0) {
            return Err(Error::InvalidConfig("eps, D, Gamma and ||w0-w*||^2 must be >= 0".into()));
        }
        if epochs < 1 || clients_per_round < 1 {
            return Err(Error::InvalidConfig("E and K must be >= 1".into()));
        }
        let e = epochs as f64;
        let alpha = 2.0 / mu;
        let beta = e.max(8.0 * l / mu);
        let a1 = 2.0 * eps * d / (mu * mu);
        let a3 = 2.0 * eps * d / mu;
        let a4 = 8.0 * (e - 1.0).powi(2) * d * d + 6.0 * l * gamma + eps * eps + 2.0 * eps * d;
        let a5 = 4.0 * e * e * d * d / clients_per_round as f64 + a4;
        let a2 = (beta * w_star_dist0).max(4.0 * a5 / (mu * mu));
        Ok(Self {
            mu,
            l,
            eps,
            d,
            gamma,
            epochs,
            rounds,
            clients_per_round,
            alpha,
            beta,
            a1,
            a2,
            a3,
            a4,
            a5,
            w_star_dist0,
        })
    }

    /// Bound on the expected squared distance after `t` local steps.
    pub fn bound_at(&self, t: usize) -> f64 {
        self.a1 + self.a2 / (t as f64 + self.beta)
    }
}

/// Bound after `rounds` rounds: `A1 + A2 / (E R + beta)`.
pub fn theoretical_bound(consts: &TheoryConstants, rounds: usize) -> f64 {
    consts.bound_at(consts.epochs * rounds)
}

/// Objective-gap form of the bound: `(L / 2) (A1 + A2 / (E R + beta))`.
pub fn loss_gap_bound(consts: &TheoryConstants, rounds: usize) -> f64 {
    0.5 * consts.l * theoretical_bound(consts, rounds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundStep {
    pub t: usize,
    pub empirical: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub constants: TheoryConstants,
    pub n_runs: usize,
    pub steps: Vec<BoundStep>,
    pub pass: bool,
    /// Verdict with the unscaled smoothness estimate, when supplied.
    pub raw_l_pass: Option<bool>,
    pub note: String,
}

/// Compares the mean over runs of `||w_t - w*||^2` with the bound at every
/// synchronisation step `t = r E`.
pub fn check_bound(runs: &[RunLog], consts: &TheoryConstants, w_star: &ParamVector) -> Result<BoundReport> {
    let Some(first) = runs.first() else {
        return Err(Error::ScheduleMismatch("no runs supplied".into()));
    };
    let rounds = first.rounds.len();
    for (i, run) in runs.iter().enumerate() {
        let cfg = &run.config;
        match cfg.lr {
            LrSchedule::Theorem { mu, l } if mu == consts.mu && l == consts.l => {}
            other => {
                return Err(Error::ScheduleMismatch(format!(
                    "run {i} used {other:?}, expected the theorem schedule with mu={} L={}",
                    consts.mu, consts.l
                )))
            }
        }
        if cfg.epochs != consts.epochs || cfg.clients_per_round != consts.clients_per_round {
            return Err(Error::ScheduleMismatch(format!("run {i} has a different E or K")));
        }
        let max_m = run.max_client_size;
        if cfg.batch_size < max_m {
            return Err(Error::ScheduleMismatch(format!(
                "run {i} used mini-batches of {} (< {max_m}); the check needs full-batch epochs",
                cfg.batch_size
            )));
        }
        match &run.param_trace {
            Some(t) if t.len() == rounds + 1 && run.rounds.len() == rounds => {}
            _ => {
                return Err(Error::ScheduleMismatch(format!(
                    "run {i} lacks a parameter trace of {} rounds",
                    rounds
                )))
            }
        }
    }
    let n = runs.len() as f64;
    let steps: Vec<BoundStep> = (0..=rounds)
        .map(|r| {
            let t = r * consts.epochs;
            let empirical = runs
                .iter()
                .map(|run| run.param_trace.as_ref().unwrap()[r].sq_dist(w_star))
                .sum::<f64>()
                / n;
            let bound = consts.bound_at(t);
            BoundStep {
                t,
                empirical,
                bound,
                margin: bound - empirical,
            }
        })
        .collect();
    let pass = steps.iter().all(|s| s.empirical <= s.bound);
    Ok(BoundReport {
        constants: *consts,
        n_runs: runs.len(),
        steps,
        pass,
        raw_l_pass: None,
        note: "eps is the maximum coreset gradient error observed along the run trajectories, \
               a plug-in for the supremum over all parameters"
            .into(),
    })
}

/// Whether every recorded step also stays below the bound built from `raw`.
pub fn passes_with(report: &BoundReport, raw: &TheoryConstants) -> bool {
    report.steps.iter().all(|s| s.empirical <= raw.bound_at(s.t))
}

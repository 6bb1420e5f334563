//! Accelerated full-gradient descent with backtracking and adaptive restart.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iters: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises a smooth convex `f` (returning value and gradient) until the
/// gradient norm at the returned point is at most `tol`.
///
/// Step sizes come from a local Lipschitz estimate checked with the gradient
/// condition `<g(x) - g(y), x - y> <= L ||x - y||^2`, which stays reliable
/// when function values no longer change in floating point. Momentum resets
/// whenever it points uphill.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, tol: f64, max_iters: usize) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.clone();
    let mut y = x0;
    let (mut fy, mut gy) = f(&y);
    let mut lip = 1.0;
    let mut theta = 1.0f64;
    let mut best = (norm(&gy), fy, y.clone());
    for iter in 0..max_iters {
        let gnorm = norm(&gy);
        if gnorm < best.0 {
            best = (gnorm, fy, y.clone());
        }
        if gnorm <= tol {
            return Ok(Minimum {
                x: y,
                value: fy,
                grad_norm: gnorm,
                iters: iter,
            });
        }
        let (x_new, fx, gx) = loop {
            let cand: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - g / lip).collect();
            let (fc, gc) = f(&cand);
            let step: Vec<f64> = cand.iter().zip(&y).map(|(a, b)| a - b).collect();
            let diff: Vec<f64> = gc.iter().zip(&gy).map(|(a, b)| a - b).collect();
            let ss = dot(&step, &step);
            if fc.is_finite() && dot(&diff, &step) <= lip * ss * (1.0 + 1e-12) {
                break (cand, fc, gc);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::NoConvergence {
                    tol,
                    iters: iter,
                    last: gnorm,
                });
            }
        };
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let moved: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        if dot(&gy, &moved) > 0.0 {
            theta = 1.0;
            y = x_new.clone();
            fy = fx;
            gy = gx;
        } else {
            let mom = (theta - 1.0) / theta_new;
            theta = theta_new;
            y = x_new.iter().zip(&moved).map(|(a, d)| a + mom * d).collect();
            if mom == 0.0 {
                fy = fx;
                gy = gx;
            } else {
                (fy, gy) = f(&y);
            }
        }
        x = x_new;
        lip *= 0.9;
    }
    Err(Error::NoConvergence {
        tol,
        iters: max_iters,
        last: best.0,
    })
}

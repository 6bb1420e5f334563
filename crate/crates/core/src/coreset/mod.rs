//! Weighted coresets from k-medoids over per-sample gradient distances.
//!
//! The coreset error `||sum_j g_j - sum_k delta_k g_k||` is bounded by the
//! k-medoids objective `sum_j min_{k in S} d(j, k)` when `d` is the exact
//! gradient distance and every sample is weighted onto its nearest medoid.
//! Two cheaper stand-ins for `d` are provided: raw feature distance (convex
//! models, independent of the parameters) and last-layer-input gradient
//! distance (neural networks).

mod kmedoids;

pub use kmedoids::{kmedoids, kmedoids_detailed, KMedoidsRun};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::models::{full_objective, weighted_objective, GradVector, LastLayerGrad, ParamVector, WeightedView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Exact,
    EuclidProxy,
    LastlayerProxy,
}

impl DistanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::Exact => "exact",
            DistanceKind::EuclidProxy => "euclid_proxy",
            DistanceKind::LastlayerProxy => "lastlayer_proxy",
        }
    }
}

/// Symmetric `n x n` distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistMatrix {
    n: usize,
    entries: Vec<f64>,
    kind: DistanceKind,
}

impl DistMatrix {
    /// Builds a matrix from explicit entries, checking symmetry, a zero
    /// diagonal and finite nonnegative values.
    pub fn from_entries(n: usize, entries: Vec<f64>, kind: DistanceKind) -> crate::Result<Self> {
        let bad = |what: &str| Err(crate::Error::InvalidConfig(format!("distance matrix: {what}")));
        if entries.len() != n * n {
            return bad("wrong entry count");
        }
        for i in 0..n {
            if entries[i * n + i] != 0.0 {
                return bad("nonzero diagonal");
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return bad("entries must be finite and nonnegative");
                }
                if v != entries[j * n + i] {
                    return bad("not symmetric");
                }
            }
        }
        Ok(Self { n, entries, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Applies `c1 * d + c2` off the diagonal.
    pub fn affine(&self, c1: f64, c2: f64) -> DistMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    out.entries[i * self.n + j] = c1 * self.get(i, j) + c2;
                }
            }
        }
        out
    }

    /// Debug dump: a `dist <kind> <n>` line followed by one row per line.
    pub fn dump(&self) -> String {
        let mut s = format!("dist {} {}\n", self.kind.as_str(), self.n);
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

fn pairwise_l2<'a>(rows: &[&'a [f64]], kind: DistanceKind) -> DistMatrix {
    let n = rows.len();
    if let Some(first) = rows.first() {
        assert!(rows.iter().all(|r| r.len() == first.len()), "rows must share a length");
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    DistMatrix { n, entries, kind }
}

/// `d(j, k) = ||grad_j - grad_k||`.
pub fn dist_exact(grads: &[GradVector]) -> DistMatrix {
    let rows: Vec<&[f64]> = grads.iter().map(|g| g.0.as_slice()).collect();
    pairwise_l2(&rows, DistanceKind::Exact)
}

/// `d(j, k) = ||x_j - x_k||` over raw features; does not depend on the model.
pub fn dist_euclid_proxy(features: &SampleSet) -> DistMatrix {
    let rows: Vec<&[f64]> = (0..features.len()).map(|j| features.row(j)).collect();
    pairwise_l2(&rows, DistanceKind::EuclidProxy)
}

/// `d(j, k) = ||r_j - r_k||` with `r = softmax(logits) - onehot(y)`; the
/// scale and offset constants of the bound are fixed to 1 and 0 since they do
/// not move the k-medoids minimiser.
pub fn dist_lastlayer_proxy(llgrads: &[LastLayerGrad]) -> DistMatrix {
    let rows: Vec<&[f64]> = llgrads.iter().map(|g| g.0.as_slice()).collect();
    pairwise_l2(&rows, DistanceKind::LastlayerProxy)
}

/// Coreset size that fits a full first epoch plus `E - 1` coreset epochs in
/// `c * tau` sample-steps: `floor((c*tau - m) / (E - 1))`, capped at `m`.
/// Nonpositive values mean the client cannot afford the full first epoch.
pub fn budget(m: usize, c: f64, tau: f64, epochs: usize) -> i64 {
    assert!(epochs >= 2, "budget needs at least two epochs");
    let raw = ((c * tau - m as f64) / (epochs - 1) as f64).floor();
    if raw >= m as f64 {
        m as i64
    } else {
        raw as i64
    }
}

/// Medoids `S` (ordered), integer weights `delta` aligned with `S`, and the
/// sample-to-medoid assignment (positions into `S`).
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    pub medoids: Vec<usize>,
    pub weights: Vec<u32>,
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub kind: DistanceKind,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.medoids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.medoids.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.weights.iter().map(|&w| w as u64).sum()
    }

    pub fn to_view(&self) -> WeightedView {
        WeightedView::new(self.medoids.iter().copied().zip(self.weights.iter().copied()).collect())
            .expect("coreset weights are positive")
    }

    pub fn dump(&self) -> String {
        let mut s = format!(
            "coreset {} size={} objective={}\n",
            self.kind.as_str(),
            self.len(),
            self.objective
        );
        for (m, w) in self.medoids.iter().zip(&self.weights) {
            writeln!(s, "{m} {w}").unwrap();
        }
        s
    }
}

/// `sum_j min_{k in S} d(j, k)`.
pub fn kmedoids_objective(dist: &DistMatrix, medoids: &[usize]) -> f64 {
    (0..dist.n())
        .map(|j| {
            medoids
                .iter()
                .map(|&k| dist.get(j, k))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Assigns every sample to its nearest medoid and counts cluster sizes.
/// Medoids always take themselves; other ties go to the lowest position in
/// `medoids`, so every weight is at least one.
pub fn coreset_weights(dist: &DistMatrix, medoids: &[usize]) -> (Vec<u32>, Vec<usize>) {
    assert!(!medoids.is_empty(), "need at least one medoid");
    let n = dist.n();
    let mut own = vec![usize::MAX; n];
    for (pos, &m) in medoids.iter().enumerate() {
        assert!(m < n, "medoid index out of range");
        if own[m] == usize::MAX {
            own[m] = pos;
        }
    }
    let mut weights = vec![0u32; medoids.len()];
    let assignment: Vec<usize> = (0..n)
        .map(|j| {
            let pos = if own[j] != usize::MAX {
                own[j]
            } else {
                let row = dist.row(j);
                let mut best = 0;
                for (p, &m) in medoids.iter().enumerate().skip(1) {
                    if row[m] < row[medoids[best]] {
                        best = p;
                    }
                }
                best
            };
            weights[pos] += 1;
            pos
        })
        .collect();
    (weights, assignment)
}

/// Builds a [`Coreset`] around fixed medoids.
pub fn coreset_from_medoids(dist: &DistMatrix, medoids: Vec<usize>) -> Coreset {
    let (weights, assignment) = coreset_weights(dist, &medoids);
    let objective = assignment
        .iter()
        .enumerate()
        .map(|(j, &p)| dist.get(j, medoids[p]))
        .sum();
    Coreset {
        medoids,
        weights,
        assignment,
        objective,
        kind: dist.kind(),
    }
}

/// Normalised gradient error `(1/m) ||sum_j g_j - sum_k delta_k g_k||`.
pub fn coreset_error(full_grads: &[GradVector], coreset: &Coreset) -> f64 {
    let m = full_grads.len();
    assert!(m > 0);
    assert_eq!(coreset.assignment.len(), m, "assignment covers every sample");
    // Each weight counts its cluster, so the difference is the sum of
    // sample-to-medoid gradient gaps; medoids contribute exact zeros.
    let mut diff = vec![0.0; full_grads[0].0.len()];
    for (g, &pos) in full_grads.iter().zip(&coreset.assignment) {
        let med = &full_grads[coreset.medoids[pos]].0;
        for ((d, a), b) in diff.iter_mut().zip(&g.0).zip(med) {
            *d += a - b;
        }
    }
    diff.iter().map(|v| v * v).sum::<f64>().sqrt() / m as f64
}

/// Same quantity as [`coreset_error`], computed from the two objective
/// gradients at `params` without materialising per-sample gradients.
pub fn coreset_gradient_error(params: &ParamVector, set: &SampleSet, coreset: &Coreset) -> f64 {
    let full = full_objective(params, set).1;
    let items = coreset.medoids.iter().zip(&coreset.weights).map(|(&k, &w)| (k, w as f64));
    let weighted = weighted_objective(params, set, items).1;
    full.0
        .iter()
        .zip(&weighted.0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

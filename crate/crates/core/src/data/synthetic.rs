//! Synthetic non-IID benchmark `G(alpha, beta)`.
//!
//! Client `k` draws a model-mean shift `u_k ~ N(0, alpha)` and a feature-mean
//! shift `B_k ~ N(0, beta)` (both read as standard deviations). Its labelling
//! model has entries `W_k, b_k ~ N(u_k, 1)`, its feature mean is
//! `v_k ~ N(B_k, 1)` per coordinate, features are `x ~ N(v_k, diag(j^-1.2))`
//! and labels are `argmax(W_k x + b_k)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{partition::power_law_sizes, ClientDataset, FederatedDataset, Provenance, SampleSet};
use crate::rng::{self, Purpose};

pub const SYNTHETIC_DIM: usize = 60;
pub const SYNTHETIC_CLASSES: usize = 10;

/// Fraction of each client's samples held out for the pooled test set.
pub const TEST_FRACTION: f64 = 0.2;

pub fn generate_synthetic(alpha: f64, beta: f64, n_clients: usize, seed: u64) -> FederatedDataset {
    assert!(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be nonnegative");
    assert!(n_clients >= 1, "need at least one client");

    let sizes = power_law_sizes(n_clients, seed);
    let feature_std: Vec<f64> = (1..=SYNTHETIC_DIM).map(|j| (j as f64).powf(-0.6)).collect();
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut clients = Vec::with_capacity(n_clients);
    let mut test_set = SampleSet::new(SYNTHETIC_DIM);
    for (k, &size) in sizes.iter().enumerate() {
        let mut model_rng = rng::stream(seed, Purpose::ClientModel, k as u64, 0);
        let u_k = Normal::new(0.0, alpha).unwrap().sample(&mut model_rng);
        let shift_k = Normal::new(0.0, beta).unwrap().sample(&mut model_rng);
        let weights: Vec<f64> = (0..SYNTHETIC_CLASSES * SYNTHETIC_DIM)
            .map(|_| u_k + std_normal.sample(&mut model_rng))
            .collect();
        let bias: Vec<f64> = (0..SYNTHETIC_CLASSES)
            .map(|_| u_k + std_normal.sample(&mut model_rng))
            .collect();
        let mean_x: Vec<f64> = (0..SYNTHETIC_DIM)
            .map(|_| shift_k + std_normal.sample(&mut model_rng))
            .collect();

        let mut feat_rng = rng::stream(seed, Purpose::ClientFeatures, k as u64, 0);
        let mut all = SampleSet::new(SYNTHETIC_DIM);
        let mut x = vec![0.0; SYNTHETIC_DIM];
        for _ in 0..size {
            for ((xj, &mu), &sd) in x.iter_mut().zip(&mean_x).zip(&feature_std) {
                *xj = mu + sd * std_normal.sample(&mut feat_rng);
            }
            let label = argmax_affine(&weights, &bias, &x);
            all.push(&x, label);
        }

        let mut split_rng = rng::stream(seed, Purpose::TestSplit, k as u64, 0);
        let (train_idx, test_idx) = stratified_split(all.labels(), SYNTHETIC_CLASSES, &mut split_rng);
        clients.push(ClientDataset {
            client_id: k,
            samples: all.select(&train_idx),
        });
        test_set.extend(&all.select(&test_idx));
    }

    FederatedDataset {
        clients,
        test_set,
        n_classes: SYNTHETIC_CLASSES,
        d_feat: SYNTHETIC_DIM,
        provenance: Provenance::Synthetic { alpha, beta, seed },
    }
}

fn argmax_affine(weights: &[f64], bias: &[f64], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (c, (row, b)) in weights.chunks_exact(x.len()).zip(bias).enumerate() {
        let z = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        if z > best_val {
            best_val = z;
            best = c;
        }
    }
    best
}

/// Per-label split: `round(TEST_FRACTION * count)` of each label's samples go to
/// the test side. Both index lists come back in ascending order.
pub(crate) fn stratified_split<R: Rng>(
    labels: &[usize],
    n_classes: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut by_label = vec![Vec::new(); n_classes];
    for (j, &y) in labels.iter().enumerate() {
        by_label[y].push(j);
    }
    let mut is_test = vec![false; labels.len()];
    for group in &mut by_label {
        let n_test = (TEST_FRACTION * group.len() as f64).round() as usize;
        group.shuffle(rng);
        for &j in &group[..n_test] {
            is_test[j] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&j| is_test[j]);
    (train, test)
}

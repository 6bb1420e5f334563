use rand::seq::SliceRandom;
use rand_distr::{Distribution, LogNormal};

use super::{synthetic::stratified_split, ClientDataset, FederatedDataset, Provenance, SampleSet};
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// Log-scale spread of the per-client size distribution.
pub const SIZE_SIGMA_LN: f64 = 1.2;
/// Smallest client size.
pub const SIZE_FLOOR: usize = 10;
/// Target mean of the lognormal component; with the floor this gives a mean
/// client size of 670.
const SIZE_LOGNORMAL_MEAN: f64 = 660.0;

/// Heavy-tailed per-client sample counts: `10 + round(LogNormal(mu, 1.2))`,
/// one independent stream per client.
pub fn power_law_sizes(n_clients: usize, seed: u64) -> Vec<usize> {
    let mu_ln = SIZE_LOGNORMAL_MEAN.ln() - SIZE_SIGMA_LN * SIZE_SIGMA_LN / 2.0;
    let dist = LogNormal::new(mu_ln, SIZE_SIGMA_LN).unwrap();
    (0..n_clients)
        .map(|k| {
            let mut r = rng::stream(seed, Purpose::ClientSize, k as u64, 0);
            SIZE_FLOOR + dist.sample(&mut r).round() as usize
        })
        .collect()
}

/// Splits a labelled pool across clients so that each client holds exactly
/// `labels_per_client` classes.
///
/// Class sets are consecutive windows over one seeded class permutation, so
/// every class is held by someone once `n_clients * labels_per_client >=
/// n_classes`. Each class pool is then divided among its holders in proportion
/// to their power-law demand (largest remainder, at least one sample each). Every
/// input row lands in exactly one client; 20% of each client's rows (stratified
/// by label) are pooled into the test set.
pub fn partition_label_shards(
    features: &[f64],
    labels: &[usize],
    d_feat: usize,
    n_classes: usize,
    n_clients: usize,
    labels_per_client: usize,
    seed: u64,
) -> Result<FederatedDataset> {
    if n_clients == 0 || labels_per_client == 0 || labels_per_client > n_classes {
        return Err(Error::InvalidConfig(format!(
            "labels_per_client must be in 1..={n_classes} and n_clients >= 1"
        )));
    }
    if n_clients * labels_per_client < n_classes {
        return Err(Error::InvalidConfig(format!(
            "{n_clients} clients x {labels_per_client} labels cannot cover {n_classes} classes"
        )));
    }
    assert_eq!(features.len(), labels.len() * d_feat, "feature buffer shape");

    let mut part_rng = rng::stream(seed, Purpose::Partition, 0, 0);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (j, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::InvalidConfig(format!("label {y} out of range")));
        }
        pools[y].push(j);
    }
    for pool in &mut pools {
        pool.shuffle(&mut part_rng);
    }
    let mut class_order: Vec<usize> = (0..n_classes).collect();
    class_order.shuffle(&mut part_rng);

    let client_classes: Vec<Vec<usize>> = (0..n_clients)
        .map(|i| {
            let mut cs: Vec<usize> = (0..labels_per_client)
                .map(|t| class_order[(i * labels_per_client + t) % n_classes])
                .collect();
            cs.sort_unstable();
            cs
        })
        .collect();
    let demand = power_law_sizes(n_clients, seed);

    // rows[i] collects the sample indices handed to client i.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (class, pool) in pools.iter().enumerate() {
        let holders: Vec<usize> = (0..n_clients)
            .filter(|&i| client_classes[i].contains(&class))
            .collect();
        if pool.len() < holders.len() {
            return Err(Error::InsufficientSamples(format!(
                "class {class} has {} samples for {} clients",
                pool.len(),
                holders.len()
            )));
        }
        let weights: Vec<f64> = holders.iter().map(|&i| demand[i] as f64).collect();
        let shares = apportion(pool.len(), &weights);
        let mut offset = 0;
        for (&i, share) in holders.iter().zip(shares) {
            rows[i].extend_from_slice(&pool[offset..offset + share]);
            offset += share;
        }
    }

    let all = SampleSet::from_parts(d_feat, features.to_vec(), labels.to_vec());
    let mut clients = Vec::with_capacity(n_clients);
    let mut test_set = SampleSet::new(d_feat);
    for (i, mut idx) in rows.into_iter().enumerate() {
        idx.sort_unstable();
        let local = all.select(&idx);
        let mut split_rng = rng::stream(seed, Purpose::TestSplit, i as u64, 0);
        let (train, test) = stratified_split(local.labels(), n_classes, &mut split_rng);
        clients.push(ClientDataset {
            client_id: i,
            samples: local.select(&train),
        });
        test_set.extend(&local.select(&test));
    }

    Ok(FederatedDataset {
        clients,
        test_set,
        n_classes,
        d_feat,
        provenance: Provenance::LabelShards {
            labels_per_client,
            seed,
            source: "idx".into(),
        },
    })
}

/// Largest-remainder apportionment of `total` items with one guaranteed item
/// per recipient. Requires `total >= weights.len()`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let n = weights.len();
    let spare = total - n;
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| spare as f64 * w / wsum).collect();
    let mut shares: Vec<usize> = quotas.iter().map(|q| 1 + q.floor() as usize).collect();
    let assigned: usize = shares.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps lower indices first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().take(total - assigned) {
        shares[i] += 1;
    }
    shares
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toy_pool(n: usize, n_classes: usize) -> (Vec<f64>, Vec<usize>) {
        let labels: Vec<usize> = (0..n).map(|j| (j * 7 + 3) % n_classes).collect();
        let features: Vec<f64> = (0..n * 2).map(|v| v as f64).collect();
        (features, labels)
    }

    #[test]
    fn apportion_sums_and_floors() {
        let s = apportion(10, &[1.0, 1.0, 1.0]);
        assert_eq!(s.iter().sum::<usize>(), 10);
        assert!(s.iter().all(|&x| x >= 1));
        assert_eq!(apportion(3, &[100.0, 1.0, 1.0]), vec![1, 1, 1]);
        assert_eq!(apportion(5, &[1.0, 1.0]), vec![3, 2]);
    }

    #[test]
    fn every_client_gets_exact_label_count() {
        let (f, y) = toy_pool(5000, 10);
        let ds = partition_label_shards(&f, &y, 2, 10, 40, 2, 1).unwrap();
        assert_eq!(ds.n_clients(), 40);
        for c in &ds.clients {
            let set: BTreeSet<usize> = c.samples.labels().iter().copied().collect();
            assert_eq!(set.len(), 2, "client {}", c.client_id);
        }
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let (f, y) = toy_pool(3000, 10);
        let ds = partition_label_shards(&f, &y, 2, 10, 25, 2, 9).unwrap();
        // First feature is 2*j, so it identifies the source row.
        let mut seen: Vec<usize> = ds
            .clients
            .iter()
            .flat_map(|c| c.samples.iter().map(|s| s.features[0] as usize / 2))
            .chain(ds.test_set.iter().map(|s| s.features[0] as usize / 2))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..3000).collect::<Vec<_>>());
    }

    #[test]
    fn single_client_holds_everything() {
        let (f, y) = toy_pool(200, 10);
        let ds = partition_label_shards(&f, &y, 2, 10, 1, 10, 0).unwrap();
        assert_eq!(ds.total_train() + ds.test_set.len(), 200);
    }

    #[test]
    fn deterministic() {
        let (f, y) = toy_pool(1000, 10);
        let a = partition_label_shards(&f, &y, 2, 10, 20, 2, 5).unwrap();
        let b = partition_label_shards(&f, &y, 2, 10, 20, 2, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_uncoverable_and_tiny_pools() {
        let (f, y) = toy_pool(1000, 10);
        assert!(matches!(
            partition_label_shards(&f, &y, 2, 10, 4, 2, 0),
            Err(Error::InvalidConfig(_))
        ));
        let (f, y) = toy_pool(30, 10);
        assert!(matches!(
            partition_label_shards(&f, &y, 2, 10, 50, 2, 0),
            Err(Error::InsufficientSamples(_))
        ));
    }
}

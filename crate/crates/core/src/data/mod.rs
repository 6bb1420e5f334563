//! Federated datasets: per-client sample partitions plus a pooled test set.

mod container;
mod idx;
mod partition;
mod synthetic;

pub use container::{read_container, write_container};
pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{partition_label_shards, power_law_sizes};
pub use synthetic::{generate_synthetic, SYNTHETIC_CLASSES, SYNTHETIC_DIM};

use serde::{Deserialize, Serialize};

/// Borrowed view of one `(features, label)` pair.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// Row-major sample storage with a fixed feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    d_feat: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl SampleSet {
    pub fn new(d_feat: usize) -> Self {
        Self {
            d_feat,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_parts(d_feat: usize, features: Vec<f64>, labels: Vec<usize>) -> Self {
        assert_eq!(features.len(), d_feat * labels.len(), "feature buffer shape");
        Self {
            d_feat,
            features,
            labels,
        }
    }

    pub fn push(&mut self, features: &[f64], label: usize) {
        assert_eq!(features.len(), self.d_feat, "feature width");
        self.features.extend_from_slice(features);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &SampleSet) {
        assert_eq!(self.d_feat, other.d_feat);
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn get(&self, j: usize) -> Sample<'_> {
        Sample {
            features: self.row(j),
            label: self.labels[j],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.features[j * self.d_feat..(j + 1) * self.d_feat]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(move |j| self.get(j))
    }

    /// Copies the given rows, in order, into a new set.
    pub fn select(&self, indices: &[usize]) -> SampleSet {
        let mut out = SampleSet::new(self.d_feat);
        for &j in indices {
            out.push(self.row(j), self.labels[j]);
        }
        out
    }
}

/// One client's training samples. Positions in `samples` are the stable sample
/// identifiers that coresets and weighted views index into.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub samples: SampleSet,
}

impl ClientDataset {
    pub fn m(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { alpha: f64, beta: f64, seed: u64 },
    LabelShards {
        labels_per_client: usize,
        seed: u64,
        source: String,
    },
    Imported { source: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub clients: Vec<ClientDataset>,
    pub test_set: SampleSet,
    pub n_classes: usize,
    pub d_feat: usize,
    pub provenance: Provenance,
}

impl FederatedDataset {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn total_train(&self) -> usize {
        self.clients.iter().map(ClientDataset::m).sum()
    }

    /// All training samples concatenated in client order.
    pub fn pooled_train(&self) -> SampleSet {
        let mut out = SampleSet::new(self.d_feat);
        for c in &self.clients {
            out.extend(&c.samples);
        }
        out
    }

    /// Checks the shape invariants shared by every constructor.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if self.clients.is_empty() {
            return Err(Error::InvalidConfig("dataset has no clients".into()));
        }
        let check = |set: &SampleSet, what: &str| -> crate::Result<()> {
            if set.d_feat() != self.d_feat {
                return Err(Error::InvalidConfig(format!("{what}: feature width mismatch")));
            }
            if let Some(&y) = set.labels().iter().find(|&&y| y >= self.n_classes) {
                return Err(Error::InvalidConfig(format!("{what}: label {y} out of range")));
            }
            Ok(())
        };
        for c in &self.clients {
            if c.m() == 0 {
                return Err(Error::InvalidConfig(format!("client {} is empty", c.client_id)));
            }
            check(&c.samples, &format!("client {}", c.client_id))?;
        }
        check(&self.test_set, "test set")
    }
}

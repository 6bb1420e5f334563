//! Deterministic federated-learning simulator with deadline-aware coreset
//! training.
//!
//! Clients train for a fixed number of epochs per round under a simulated
//! deadline. Clients that cannot finish in time train their first epoch on the
//! full local set, then switch to a weighted coreset chosen by k-medoids over
//! per-sample gradient distances. FedAvg, FedAvg with straggler dropping and
//! FedProx are available as baselines, and [`analysis`] measures the constants
//! of the strongly convex convergence bound and checks it against runs.

pub mod analysis;
pub mod coreset;
pub mod data;
mod error;
pub mod experiment;
pub mod federation;
pub mod models;
pub mod rng;

pub use error::{Error, IdxError, Result};

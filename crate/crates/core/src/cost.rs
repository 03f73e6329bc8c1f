//! Analytic multiply-accumulate counts for the encoder.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    pub forward_macs: u64,
    /// Backward pass counted as twice the forward pass (input and weight gradients).
    pub backward_macs: u64,
}

impl FlopsEstimate {
    pub fn total(&self) -> u64 {
        self.forward_macs + self.backward_macs
    }

    pub fn gmacs(&self) -> f64 {
        self.total() as f64 / 1e9
    }
}

/// Per-point MLP `n_points * (3*h1 + h1*h2)` plus head `h2*classes`, times batch.
pub fn flops_estimate(h1: u64, h2: u64, classes: u64, n_points: u64, batch: u64) -> FlopsEstimate {
    let per_cloud = n_points * (3 * h1 + h1 * h2) + h2 * classes;
    let forward_macs = per_cloud * batch;
    FlopsEstimate {
        forward_macs,
        backward_macs: 2 * forward_macs,
    }
}

//! Reward family for classification treated as a group of pseudo-responses:
//! each of the `c` classes is one response, so the group size equals `c`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub values: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub true_class: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    /// Group std fell below the threshold; all values are zero.
    pub degenerate: bool,
}

/// `c` at the true class, `0` elsewhere, so the group mean is exactly 1.
pub fn accuracy_reward(true_class: usize, num_classes: usize) -> Result<Vec<f64>> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!("need >= 2 classes, got {num_classes}")));
    }
    if true_class >= num_classes {
        return Err(Error::Index {
            index: true_class,
            bound: num_classes,
        });
    }
    let mut r = vec![0.0; num_classes];
    r[true_class] = num_classes as f64;
    Ok(r)
}

/// Negated class probabilities.
pub fn dispersion_reward(probs: &[f64]) -> Result<Vec<f64>> {
    validate_probs(probs, 1e-9)?;
    Ok(probs.iter().map(|p| -p).collect())
}

pub(crate) fn validate_probs(probs: &[f64], tol: f64) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Validation("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::Validation(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// `a * accuracy + b * dispersion`, elementwise.
pub fn combined_reward(true_class: usize, probs: &[f64], a: f64, b: f64) -> Result<RewardVector> {
    if !(a.is_finite() && b.is_finite() && a > 0.0 && b >= 0.0) {
        return Err(Error::Parameter(format!("reward weights need a > 0, b >= 0; got a={a} b={b}")));
    }
    let c = probs.len();
    let acc = accuracy_reward(true_class, c)?;
    let dis = dispersion_reward(probs)?;
    let values = acc.iter().zip(&dis).map(|(r, d)| a * r + b * d).collect();
    Ok(RewardVector {
        values,
        a,
        b,
        true_class,
        num_classes: c,
    })
}

/// Subtracts the group mean and divides by the population std. Groups whose
/// std is below `eps_std` carry no preference and map to all-zero advantages.
pub fn standardize(rewards: &[f64], eps_std: f64) -> Result<AdvantageVector> {
    if rewards.len() < 2 {
        return Err(Error::Parameter(format!("group needs >= 2 entries, got {}", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    if !(std >= eps_std) {
        return Ok(AdvantageVector {
            values: vec![0.0; rewards.len()],
            degenerate: true,
        });
    }
    Ok(AdvantageVector {
        values: rewards.iter().map(|r| (r - mean) / std).collect(),
        degenerate: false,
    })
}

//! Reinforcement fine-tuning (RFT) and supervised fine-tuning (SFT) of small
//! point cloud classifiers, evaluated on N-way M-shot episodes.
//!
//! Everything here is pure computation over `alloc` collections: the reverse
//! mode engine, the permutation-invariant encoder, the reward family and the
//! clipped group-relative surrogate, the synthetic shape benchmark, episode
//! sampling and the Pre-S / Pre-R / Pre-S-R paradigms. File formats, the CLI
//! and wall-clock measurement live in the `pointrft-lab` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cost;
pub mod encoder;
pub mod episodes;
pub mod error;
pub mod paradigms;
pub mod rewards;
pub mod rft_loss;
pub mod seed;
pub mod shapes;
pub mod tensorgrad;

pub use encoder::{EncoderDims, EncoderParams, PointCloud};
pub use episodes::{Episode, FewShotResult};
pub use error::{Error, Result};
pub use paradigms::{Checkpoint, ParadigmConfig, ParadigmKind};
pub use rewards::{AdvantageVector, RewardVector};
pub use shapes::{Dataset, PrimitiveKind, ShapeSpec};
pub use tensorgrad::{Tape, Tensor, Var};

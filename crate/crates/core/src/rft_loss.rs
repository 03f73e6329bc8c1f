//! Supervised cross-entropy and the clipped group-relative surrogate, plus
//! the per-epoch training loops that drive them.
//!
//! The RFT surrogate for one sample with class probabilities `p` (live
//! policy), `q` (epoch-start snapshot) and standardized advantages `A` is
//!
//! ```text
//! loss = -mean_i min(r_i * A_i, clip(r_i, 1 - eps, 1 + eps) * A_i),  r_i = p_i / q_i
//! ```
//!
//! Rewards and advantages are computed from `q` and enter the graph as
//! constants. There is no KL penalty.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::{Bound, EncoderParams, PointCloud};
use crate::error::{Error, Result};
use crate::rewards::{self, DEFAULT_EPS_STD};
use crate::tensorgrad::{adam_step, AdamConfig, AdamState, Tape, Var};

pub const OLD_PROB_FLOOR: f64 = 1e-12;

/// Operands of the clipped surrogate. `old_probs` and `advantages` are flat
/// `[samples × classes]`, row-major, and carry no gradient.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub new_probs: Var,
    pub old_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub epsilon_clip: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Surrogate {
    pub loss: Var,
    /// Terms whose ratio left `[1 - eps, 1 + eps]`.
    pub clipped_terms: usize,
    pub terms: usize,
}

fn check_rows(values: &[f64], cols: usize, what: &str) -> Result<()> {
    for row in values.chunks(cols) {
        rewards::validate_probs(row, 1e-9).map_err(|e| Error::Validation(format!("{what}: {e}")))?;
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// `logits` is `[c]` (one label) or `[samples × c]`.
pub fn sft_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = tape.log_softmax(logits)?;
    let picked = tape.pick(ls, labels)?;
    let m = tape.mean(picked);
    Ok(tape.neg(m))
}

/// Clipped group-relative surrogate, averaged over every (sample, class) term.
pub fn pointrft_loss(tape: &mut Tape, inputs: LossInputs<'_>) -> Result<Surrogate> {
    let LossInputs {
        new_probs,
        old_probs,
        advantages,
        epsilon_clip,
    } = inputs;
    let shape = tape.shape(new_probs).to_vec();
    let cols = *shape.last().ok_or_else(|| Error::dim("pointrft_loss", &shape, &[]))?;
    if old_probs.len() != tape.value(new_probs).len() || advantages.len() != old_probs.len() {
        return Err(Error::dim(
            "pointrft_loss",
            &shape,
            &[old_probs.len(), advantages.len()],
        ));
    }
    if !(epsilon_clip >= 0.0 && epsilon_clip.is_finite()) {
        return Err(Error::Parameter(format!("epsilon_clip must be >= 0, got {epsilon_clip}")));
    }
    if let Some(p) = old_probs.iter().find(|&&p| p <= OLD_PROB_FLOOR) {
        return Err(Error::Numeric(format!("old probability {p:e} at or below floor {OLD_PROB_FLOOR:e}")));
    }
    check_rows(tape.value(new_probs), cols, "new_probs")?;
    check_rows(old_probs, cols, "old_probs")?;

    let (lo, hi) = (1.0 - epsilon_clip, 1.0 + epsilon_clip);
    let old = tape.constant(shape.clone(), old_probs.to_vec())?;
    let adv = tape.constant(shape, advantages.to_vec())?;
    let ratio = tape.div(new_probs, old)?;
    let clipped_terms = tape.value(ratio).iter().filter(|r| **r < lo || **r > hi).count();
    let clipped = tape.clip(ratio, lo, hi)?;
    let unclipped_term = tape.mul(ratio, adv)?;
    let clipped_term = tape.mul(clipped, adv)?;
    let term = tape.min(unclipped_term, clipped_term)?;
    let m = tape.mean(term);
    Ok(Surrogate {
        loss: tape.neg(m),
        clipped_terms,
        terms: old_probs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RftConfig {
    pub a: f64,
    pub b: f64,
    pub epsilon_clip: f64,
    pub lr: f64,
    pub eps_std: f64,
}

impl Default for RftConfig {
    fn default() -> Self {
        RftConfig {
            a: 1.0,
            b: 2.0,
            epsilon_clip: 0.2,
            lr: 1e-3,
            eps_std: DEFAULT_EPS_STD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Sft,
    Rft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub phase: Phase,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Expected reward of a draw from the old policy (RFT only).
    pub mean_reward: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub batches: usize,
    pub skipped_batches: usize,
}

/// A recorded loss with everything needed to backpropagate it into `params`.
pub struct Objective {
    pub tape: Tape,
    pub bound: Bound,
    pub loss: Var,
    pub clipped_terms: usize,
    pub terms: usize,
    pub mean_reward: f64,
}

impl Objective {
    pub fn value(&self) -> f64 {
        self.tape.value(self.loss)[0]
    }

    /// Backpropagates and stores gradients on `params`.
    pub fn backward_into(mut self, params: &mut EncoderParams) -> Result<f64> {
        let v = self.value();
        self.tape.backward(self.loss)?;
        params.collect_grads(&self.tape, &self.bound)?;
        Ok(v)
    }
}

fn labels(batch: &[&PointCloud]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|c| {
            c.label
                .ok_or_else(|| Error::Validation(format!("cloud {} has no label", c.source_id)))
        })
        .collect()
}

pub fn sft_objective(params: &EncoderParams, batch: &[&PointCloud]) -> Result<Objective> {
    let labels = labels(batch)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let logits = params.forward(&mut tape, &bound, batch)?;
    let loss = sft_loss(&mut tape, logits, &labels)?;
    Ok(Objective {
        tape,
        bound,
        loss,
        clipped_terms: 0,
        terms: 0,
        mean_reward: 0.0,
    })
}

/// Old-policy probabilities, standardized advantages and the mean expected
/// reward for a batch. All of it is constant with respect to `params`.
pub fn rft_targets(old: &EncoderParams, batch: &[&PointCloud], cfg: &RftConfig) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let labels = labels(batch)?;
    let probs = old.probabilities(batch)?;
    let mut old_flat = Vec::with_capacity(probs.len() * probs[0].len());
    let mut adv_flat = Vec::with_capacity(old_flat.capacity());
    let mut reward_sum = 0.0;
    for (p, &k) in probs.iter().zip(&labels) {
        let r = rewards::combined_reward(k, p, cfg.a, cfg.b)?;
        reward_sum += p.iter().zip(&r.values).map(|(pi, ri)| pi * ri).sum::<f64>();
        let adv = rewards::standardize(&r.values, cfg.eps_std)?;
        old_flat.extend_from_slice(p);
        adv_flat.extend_from_slice(&adv.values);
    }
    Ok((old_flat, adv_flat, reward_sum / labels.len() as f64))
}

/// Surrogate objective from explicit old probabilities and advantages.
pub fn rft_objective_from(
    params: &EncoderParams,
    batch: &[&PointCloud],
    old_probs: &[f64],
    advantages: &[f64],
    epsilon_clip: f64,
) -> Result<Objective> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let logits = params.forward(&mut tape, &bound, batch)?;
    let new_probs = tape.softmax(logits)?;
    let s = pointrft_loss(
        &mut tape,
        LossInputs {
            new_probs,
            old_probs,
            advantages,
            epsilon_clip,
        },
    )?;
    Ok(Objective {
        tape,
        bound,
        loss: s.loss,
        clipped_terms: s.clipped_terms,
        terms: s.terms,
        mean_reward: 0.0,
    })
}

pub fn rft_objective(
    params: &EncoderParams,
    old: &EncoderParams,
    batch: &[&PointCloud],
    cfg: &RftConfig,
) -> Result<Objective> {
    let (old_probs, adv, mean_reward) = rft_targets(old, batch, cfg)?;
    let mut obj = rft_objective_from(params, batch, &old_probs, &adv, cfg.epsilon_clip)?;
    obj.mean_reward = mean_reward;
    Ok(obj)
}

fn trainable<'a>(params: &'a mut EncoderParams) -> Vec<&'a mut crate::tensorgrad::Tensor> {
    params.tensors_mut().into_iter().collect()
}

/// One pass over `batches` with the clipped surrogate. `old` must be the
/// snapshot taken at the start of this epoch.
pub fn rft_train_epoch(
    params: &mut EncoderParams,
    old: &EncoderParams,
    batches: &[Vec<&PointCloud>],
    cfg: &RftConfig,
    adam: &mut AdamState,
    epoch: usize,
) -> Result<EpochStats> {
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let (mut loss_sum, mut reward_sum, mut clipped, mut terms, mut used, mut skipped) = (0.0, 0.0, 0, 0, 0, 0);
    for batch in batches {
        if batch.is_empty() {
            log::warn!("rft epoch {epoch}: skipping empty batch");
            skipped += 1;
            continue;
        }
        let obj = rft_objective(params, old, batch, cfg)?;
        reward_sum += obj.mean_reward;
        clipped += obj.clipped_terms;
        terms += obj.terms;
        loss_sum += obj.backward_into(params)?;
        adam_step(&mut trainable(params), adam, &adam_cfg)?;
        used += 1;
    }
    let denom = used.max(1) as f64;
    Ok(EpochStats {
        phase: Phase::Rft,
        epoch,
        mean_loss: loss_sum / denom,
        mean_reward: Some(reward_sum / denom),
        clip_fraction: Some(if terms == 0 { 0.0 } else { clipped as f64 / terms as f64 }),
        batches: used,
        skipped_batches: skipped,
    })
}

/// One pass over `batches` with cross-entropy.
pub fn sft_train_epoch(
    params: &mut EncoderParams,
    batches: &[Vec<&PointCloud>],
    lr: f64,
    adam: &mut AdamState,
    epoch: usize,
    phase: Phase,
) -> Result<EpochStats> {
    let adam_cfg = AdamConfig::with_lr(lr);
    let (mut loss_sum, mut used, mut skipped) = (0.0, 0, 0);
    for batch in batches {
        if batch.is_empty() {
            log::warn!("sft epoch {epoch}: skipping empty batch");
            skipped += 1;
            continue;
        }
        let obj = sft_objective(params, batch)?;
        loss_sum += obj.backward_into(params)?;
        adam_step(&mut trainable(params), adam, &adam_cfg)?;
        used += 1;
    }
    Ok(EpochStats {
        phase,
        epoch,
        mean_loss: loss_sum / used.max(1) as f64,
        mean_reward: None,
        clip_fraction: None,
        batches: used,
        skipped_batches: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, normalize_cloud};
    use crate::tensorgrad::fd::{assert_grad_matches, central_difference};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn surrogate_value(new: &[f64], old: &[f64], adv: &[f64], eps: f64) -> f64 {
        let mut t = Tape::new();
        let n = t.constant(vec![new.len()], new.to_vec()).unwrap();
        let s = pointrft_loss(
            &mut t,
            LossInputs {
                new_probs: n,
                old_probs: old,
                advantages: adv,
                epsilon_clip: eps,
            },
        )
        .unwrap();
        t.value(s.loss)[0]
    }

    #[test]
    fn sft_loss_examples() {
        let mut t = Tape::new();
        let l = t.leaf(vec![2], vec![0.0, 0.0]).unwrap();
        let loss = sft_loss(&mut t, l, &[0]).unwrap();
        assert!((t.value(loss)[0] - core::f64::consts::LN_2).abs() < 1e-15);
        t.backward(loss).unwrap();
        // softmax - onehot
        assert_eq!(t.grad(l).unwrap(), &[-0.5, 0.5]);

        let l = t.constant(vec![2], vec![1000.0, 0.0]).unwrap();
        let loss = sft_loss(&mut t, l, &[0]).unwrap();
        assert!(t.value(loss)[0].abs() < 1e-12);
        assert!(matches!(sft_loss(&mut t, l, &[2]), Err(Error::Index { .. })));
    }

    #[test]
    fn sft_gradient_is_softmax_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let label = rng.gen_range(0..4);
            let mut t = Tape::new();
            let l = t.leaf(vec![4], logits.clone()).unwrap();
            let loss = sft_loss(&mut t, l, &[label]).unwrap();
            t.backward(loss).unwrap();
            let fd = central_difference(&logits, 1e-5, |x| {
                let mut t = Tape::new();
                let l = t.constant(vec![4], x.to_vec()).unwrap();
                let loss = sft_loss(&mut t, l, &[label]).unwrap();
                t.value(loss)[0]
            });
            let mut expected = logits.clone();
            crate::tensorgrad::softmax_row(&mut expected);
            expected[label] -= 1.0;
            assert_grad_matches("sft", t.grad(l).unwrap(), &expected, 1e-12, 1e-14);
            assert_grad_matches("sft-fd", t.grad(l).unwrap(), &fd, 1e-5, 1e-8);
        }
    }

    #[test]
    fn hand_worked_surrogate_instance() {
        // c=2, k=0, a=1, b=2, old=[0.6,0.4] -> rewards [0.8,-0.8] -> A=[1,-1].
        let r = rewards::combined_reward(0, &[0.6, 0.4], 1.0, 2.0).unwrap();
        let a = rewards::standardize(&r.values, DEFAULT_EPS_STD).unwrap();
        assert_eq!(a.values, vec![1.0, -1.0]);
        let loss = surrogate_value(&[0.9, 0.1], &[0.6, 0.4], &a.values, 0.2);
        assert!((loss - (-0.2)).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn ratio_one_gives_zero_loss() {
        let adv = rewards::standardize(&[1.6, -0.4, -0.2], DEFAULT_EPS_STD).unwrap().values;
        let p = [0.7, 0.2, 0.1];
        assert!(surrogate_value(&p, &p, &adv, 0.2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_advantages_give_zero_loss_and_gradient() {
        let mut t = Tape::new();
        let n = t.leaf(vec![3], vec![0.5, 0.3, 0.2]).unwrap();
        let s = pointrft_loss(
            &mut t,
            LossInputs {
                new_probs: n,
                old_probs: &[0.2, 0.3, 0.5],
                advantages: &[0.0; 3],
                epsilon_clip: 0.2,
            },
        )
        .unwrap();
        assert_eq!(t.value(s.loss)[0], 0.0);
        t.backward(s.loss).unwrap();
        assert!(t.grad(n).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn guards() {
        let mut t = Tape::new();
        let n = t.leaf(vec![2], vec![0.5, 0.5]).unwrap();
        let bad_old = pointrft_loss(
            &mut t,
            LossInputs {
                new_probs: n,
                old_probs: &[1.0, 0.0],
                advantages: &[1.0, -1.0],
                epsilon_clip: 0.2,
            },
        );
        assert!(matches!(bad_old, Err(Error::Numeric(_))));
        let unnormalized = pointrft_loss(
            &mut t,
            LossInputs {
                new_probs: n,
                old_probs: &[0.5, 0.6],
                advantages: &[1.0, -1.0],
                epsilon_clip: 0.2,
            },
        );
        assert!(matches!(unnormalized, Err(Error::Validation(_))));
    }

    #[test]
    fn one_sided_gradient_freeze() {
        // A>0 and ratio above 1+eps: frozen. A<0 and ratio below 1-eps: frozen.
        let mut t = Tape::new();
        let n = t.leaf(vec![2], vec![0.9, 0.1]).unwrap();
        let s = pointrft_loss(
            &mut t,
            LossInputs {
                new_probs: n,
                old_probs: &[0.6, 0.4],
                advantages: &[1.0, -1.0],
                epsilon_clip: 0.2,
            },
        )
        .unwrap();
        assert_eq!(s.clipped_terms, 2);
        t.backward(s.loss).unwrap();
        assert_eq!(t.grad(n).unwrap(), &[0.0, 0.0]);
    }

    fn toy_batch(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<PointCloud> {
        (0..n)
            .map(|i| {
                let pts = (0..12)
                    .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                    .collect();
                let mut c = normalize_cloud(&PointCloud::new(pts, Some(i % classes), "toy")).unwrap().cloud;
                c.label = Some(i % classes);
                c
            })
            .collect()
    }

    #[test]
    fn first_batch_at_snapshot_has_zero_loss_but_nonzero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let clouds = toy_batch(&mut rng, 3, 3);
        let batch: Vec<&PointCloud> = clouds.iter().collect();
        let mut params = init_params(2, 8, 8, 3).unwrap();
        let old = params.snapshot();
        let obj = rft_objective(&params, &old, &batch, &RftConfig::default()).unwrap();
        assert!(obj.value().abs() < 1e-12);
        obj.backward_into(&mut params).unwrap();
        let norm: f64 = params
            .tensors()
            .iter()
            .flat_map(|t| t.grad().unwrap().iter())
            .map(|g| g * g)
            .sum();
        assert!(norm > 0.0);
    }

    #[test]
    fn surrogate_gradient_at_ratio_one_matches_closed_form() {
        // At ratio 1 the loss is -mean_i(p_i / q_i * A_i); with p == q the
        // gradient w.r.t. p_i is -A_i / (q_i * c).
        let q = [0.5, 0.3, 0.2];
        let adv = rewards::standardize(&rewards::combined_reward(1, &q, 1.0, 2.0).unwrap().values, DEFAULT_EPS_STD)
            .unwrap()
            .values;
        let mut t = Tape::new();
        let n = t.leaf(vec![3], q.to_vec()).unwrap();
        let s = pointrft_loss(
            &mut t,
            LossInputs {
                new_probs: n,
                old_probs: &q,
                advantages: &adv,
                epsilon_clip: 0.2,
            },
        )
        .unwrap();
        t.backward(s.loss).unwrap();
        let g = t.grad(n).unwrap();
        for i in 0..3 {
            assert!((g[i] - (-adv[i] / (q[i] * 3.0))).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clouds = toy_batch(&mut rng, 4, 2);
        let batches: Vec<Vec<&PointCloud>> = vec![clouds.iter().take(2).collect(), clouds.iter().skip(2).collect(), vec![]];
        let mut params = init_params(2, 8, 8, 2).unwrap();
        let start = params.clone();
        let cfg = RftConfig { lr: 0.0, ..RftConfig::default() };
        let mut adam = AdamState::new();
        for e in 0..2 {
            let old = params.snapshot();
            let st = rft_train_epoch(&mut params, &old, &batches, &cfg, &mut adam, e).unwrap();
            assert!(st.mean_loss.abs() < 1e-12);
            assert_eq!(st.skipped_batches, 1);
            let cf = st.clip_fraction.unwrap();
            assert!((0.0..=1.0).contains(&cf));
        }
        assert!(params.bitwise_eq(&start));
        let mut adam = AdamState::new();
        sft_train_epoch(&mut params, &batches, 0.0, &mut adam, 0, Phase::Sft).unwrap();
        assert!(params.bitwise_eq(&start));
    }
}

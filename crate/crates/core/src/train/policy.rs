use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::loss::pair_loss;
use crate::autodiff::{Tape, Tensor, Unary, Var};
use crate::data::Batch;
use crate::error::Result;
use crate::model::{arm_predictions, policy_forward, ModelConfig, ParameterSet, ARMS};

/// Draws one arm per pair from each head's probabilities.
pub fn sample_arms<R: Rng + ?Sized>(probs: &[Tensor], rng: &mut R) -> Vec<Vec<usize>> {
    probs
        .iter()
        .map(|p| {
            (0..p.rows())
                .map(|r| {
                    WeightedIndex::new(p.row(r))
                        .map(|d| d.sample(rng))
                        .unwrap_or(0)
                })
                .collect()
        })
        .collect()
}

/// Mean Shannon entropy (nats) of the rows of every head.
pub fn mean_entropy(probs: &[Tensor]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for p in probs {
        for r in 0..p.rows() {
            total -= p.row(r).iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// `B × 4` rewards: the negated per-pair loss when arm `γ` alone feeds the
/// output head, with dropout off.
pub fn arm_rewards(params: &ParameterSet, config: &ModelConfig, batch: &Batch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let preds = arm_predictions(&mut tape, params, config, batch)?;
    let preds = tape.value(preds);
    let ratings = batch.ratings();
    Ok(Tensor::from_fn(batch.len(), ARMS, |r, a| {
        -pair_loss(preds.get(r, a), ratings[r], config.feedback)
    }))
}

/// `(1/4) Σ_γ log p(γ | p_u, q_i) · R(γ)`, averaged over the batch; rewards
/// are constants.
pub fn policy_surrogate(
    tape: &mut Tape,
    params: &ParameterSet,
    users: &[usize],
    items: &[usize],
    head: usize,
    rewards: &Tensor,
) -> Result<Var> {
    let p = policy_forward(tape, params, users, items, head)?;
    let log_p = tape.unary(Unary::Ln, p);
    let r = tape.constant(rewards.clone());
    let weighted = tape.mul(log_p, r)?;
    let s = tape.sum(weighted);
    Ok(tape.scale(s, 1.0 / (ARMS * users.len().max(1)) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyStep {
    /// Surrogate value before the update.
    pub surrogate: f64,
    /// Mean entropy of the head's distribution before the update.
    pub entropy: f64,
}

/// One gradient-ascent step of rate `zeta` on the parameters of `head`,
/// holding everything else fixed.
pub fn policy_gradient_update(
    params: &mut ParameterSet,
    config: &ModelConfig,
    batch: &Batch,
    head: usize,
    zeta: f64,
) -> Result<PolicyStep> {
    let rewards = arm_rewards(params, config, batch)?;
    policy_update_with_rewards(params, &batch.users(), &batch.items(), head, &rewards, zeta)
}

/// As [`policy_gradient_update`] with precomputed rewards.
pub fn policy_update_with_rewards(
    params: &mut ParameterSet,
    users: &[usize],
    items: &[usize],
    head: usize,
    rewards: &Tensor,
    zeta: f64,
) -> Result<PolicyStep> {
    let mut tape = Tape::new();
    let surrogate = policy_surrogate(&mut tape, params, users, items, head, rewards)?;
    let value = tape.value(surrogate).item();
    let probs = policy_forward(&mut tape, params, users, items, head)?;
    let entropy = mean_entropy(std::slice::from_ref(tape.value(probs)));
    let grads = tape.backward(surrogate)?;
    super::optim::ensure_finite(params, &grads)?;
    for id in params.policy_ids(head) {
        if let Some(g) = grads.dense.get(&id) {
            let t = params.get_mut(id);
            for (v, d) in t.data_mut().iter_mut().zip(g.data()) {
                *v += zeta * d;
            }
        }
    }
    Ok(PolicyStep {
        surrogate: value,
        entropy,
    })
}

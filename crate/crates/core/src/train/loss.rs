use std::collections::BTreeMap;

use crate::autodiff::{Tape, Tensor, Unary, Var};
use crate::data::{Batch, FeedbackMode, ItemGraph, SocialGraph};
use crate::error::Result;
use crate::model::ParameterSet;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Loss of a single prediction.
pub fn pair_loss(prediction: f64, target: f64, mode: FeedbackMode) -> f64 {
    match mode {
        FeedbackMode::Explicit => (prediction - target).powi(2),
        FeedbackMode::Implicit => {
            let p = prediction.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
        }
    }
}

/// Squared error (explicit) or cross-entropy (implicit) summed over the batch.
/// `predictions` is `B × 1`.
pub fn main_loss(tape: &mut Tape, predictions: Var, targets: &[f64], mode: FeedbackMode) -> Result<Var> {
    let t = Tensor::column_vector(targets.to_vec());
    match mode {
        FeedbackMode::Explicit => {
            let t = tape.constant(t);
            let diff = tape.sub(predictions, t)?;
            let sq = tape.unary(Unary::Square, diff);
            Ok(tape.sum(sq))
        }
        FeedbackMode::Implicit => {
            let p = tape.unary(Unary::Clamp(PROB_CLAMP, 1.0 - PROB_CLAMP), predictions);
            let ones = tape.constant(Tensor::filled(targets.len(), 1, 1.0));
            let q = tape.sub(ones, p)?;
            let ln_p = tape.unary(Unary::Ln, p);
            let ln_q = tape.unary(Unary::Ln, q);
            let pos = tape.constant(t);
            let neg = tape.constant(Tensor::column_vector(targets.iter().map(|r| 1.0 - r).collect()));
            let a = tape.mul(ln_p, pos)?;
            let b = tape.mul(ln_q, neg)?;
            let s = tape.add(a, b)?;
            let s = tape.sum(s);
            Ok(tape.scale(s, -1.0))
        }
    }
}

/// Per-row L1 weights of the local-graph regularizer for one batch.
///
/// Each pair contributes weight 1 for its own user and item, plus
/// `1/|F(v)|` for every valid slot `v` of its neighbor rows (the node itself
/// included). Slots whose node has no neighbors contribute nothing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegularizerWeights {
    pub users: BTreeMap<usize, f64>,
    pub items: BTreeMap<usize, f64>,
}

impl RegularizerWeights {
    pub fn new(batch: &Batch, social: &SocialGraph, items: &ItemGraph) -> Self {
        let mut w = Self::default();
        for (b, pair) in batch.pairs.iter().enumerate() {
            *w.users.entry(pair.user).or_default() += 1.0;
            *w.items.entry(pair.item).or_default() += 1.0;
            let (us, um) = batch.user_neighbors.row(b);
            for (&v, _) in us.iter().zip(um).filter(|(_, &m)| m) {
                let deg = social.degree(v);
                if deg > 0 {
                    *w.users.entry(v).or_default() += 1.0 / deg as f64;
                }
            }
            let (is, im) = batch.item_neighbors.row(b);
            for (&j, _) in is.iter().zip(im).filter(|(_, &m)| m) {
                let deg = items.degree(j);
                if deg > 0 {
                    *w.items.entry(j).or_default() += 1.0 / deg as f64;
                }
            }
        }
        w
    }
}

fn weighted_l1(tape: &mut Tape, params: &ParameterSet, table: usize, weights: &BTreeMap<usize, f64>) -> Result<Var> {
    let rows: Vec<usize> = weights.keys().copied().collect();
    let coef = tape.constant(Tensor::row_vector(weights.values().copied().collect()));
    let e = tape.embedding(table, params.get(table), &rows);
    let a = tape.unary(Unary::Abs, e);
    let s = tape.matmul(coef, a)?;
    Ok(tape.sum(s))
}

/// Batch-level L1 penalty on the embeddings of every pair and its sampled
/// neighbors, down-weighted by neighbor degree.
pub fn local_graph_regularizer(
    tape: &mut Tape,
    params: &ParameterSet,
    batch: &Batch,
    social: &SocialGraph,
    items: &ItemGraph,
) -> Result<Var> {
    let w = RegularizerWeights::new(batch, social, items);
    let ids = &params.ids;
    let p = weighted_l1(tape, params, ids.user_embedding, &w.users)?;
    let x = weighted_l1(tape, params, ids.user_factor, &w.users)?;
    let q = weighted_l1(tape, params, ids.item_embedding, &w.items)?;
    let y = weighted_l1(tape, params, ids.item_factor, &w.items)?;
    let a = tape.add(p, x)?;
    let b = tape.add(q, y)?;
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, 0.5))
}

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Aggregation, Fusion, ModelConfig};
use super::params::{GatKind, GatParams, ParameterSet};
use crate::autodiff::{Tape, Tensor, Unary, Var};
use crate::data::{Batch, FeedbackMode};
use crate::error::{Error, Result};

/// Number of pairwise interactions (arms).
pub const ARMS: usize = 4;

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Enables dropout on tower hidden activations.
    pub training: bool,
    /// Per-head sampled arm for every pair (`arms[head][pair] ∈ 0..4`). Only
    /// meaningful for policy fusion; `None` fuses by expectation.
    pub arms: Option<&'a [Vec<usize>]>,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        Self::default()
    }
}

/// Output of one of the four GATs.
#[derive(Clone, Debug)]
pub struct GatOutput {
    /// `B × D'` factor.
    pub factor: Var,
    /// `B × slots` attention rows; zero on masked slots.
    pub attention: Tensor,
}

/// Inspectable intermediate values of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Indexed by [`GatKind`].
    pub attention: [Tensor; 4],
    /// Per head, `B × 4` policy probabilities. Empty unless fusion is `policy`
    /// and arms are not sampled.
    pub policy: Vec<Tensor>,
    /// `s_1 .. s_4`, each `B × width`.
    pub towers: [Tensor; 4],
    pub fused: Tensor,
    /// Raw head outputs (mean over heads when arms are sampled).
    pub predictions: Vec<f64>,
}

pub struct ForwardOutput {
    /// One `B × 1` prediction per head when arms are sampled, otherwise a
    /// single one.
    pub predictions: Vec<Var>,
    pub trace: ForwardTrace,
}

fn activation(config: &ModelConfig) -> Unary {
    config.gat_activation
}

/// Aggregates `values` (`(B·S) × D`, slot 0 of each group being the node
/// itself) over each node's neighborhood.
#[allow(clippy::too_many_arguments)]
fn aggregate(
    tape: &mut Tape,
    params: &ParameterSet,
    config: &ModelConfig,
    mode: Aggregation,
    gat: GatParams,
    values: Var,
    mask: &[bool],
    slots: usize,
    edge: Option<Var>,
) -> Result<GatOutput> {
    let rows = tape.shape(values)[0];
    let b = rows / slots;
    let self_rows: Vec<usize> = (0..b).map(|i| i * slots).collect();

    if mode == Aggregation::None {
        let factor = tape.gather_rows(values, &self_rows)?;
        let attention = Tensor::from_fn(b, slots, |_, s| if s == 0 { 1.0 } else { 0.0 });
        return Ok(GatOutput { factor, attention });
    }

    let w = tape.param(gat.weight, params.get(gat.weight));
    let bias = tape.param(gat.bias, params.get(gat.bias));
    let wt = tape.transpose(w);
    let h = tape.matmul(values, wt)?;

    let alpha = match mode {
        Aggregation::Gcn => {
            let uniform = Tensor::from_fn(b, slots, |r, s| {
                let row = &mask[r * slots..(r + 1) * slots];
                if row[s] {
                    1.0 / row.iter().filter(|&&m| m).count() as f64
                } else {
                    0.0
                }
            });
            tape.constant(uniform)
        }
        Aggregation::Gat => {
            let owner: Vec<usize> = (0..rows).map(|r| r / slots * slots).collect();
            let h_self = tape.gather_rows(h, &owner)?;
            let pair = tape.concat(h_self, h)?;
            let scored = match edge {
                Some(e) => {
                    let we = tape.param(params.ids.edge, params.get(params.ids.edge));
                    let wet = tape.transpose(we);
                    let gate = tape.matmul(e, wet)?;
                    tape.mul(gate, pair)?
                }
                None => pair,
            };
            let a = tape.param(gat.attention, params.get(gat.attention));
            let logits = tape.matmul(scored, a)?;
            let logits = tape.unary(Unary::LeakyRelu(config.leaky_slope), logits);
            let logits = tape.reshape(logits, b, slots)?;
            tape.softmax_masked(logits, mask)?
        }
        Aggregation::None => unreachable!(),
    };
    let attention = tape.value(alpha).clone();
    let agg = tape.group_weighted_sum(alpha, h)?;
    let pre = tape.add(agg, bias)?;
    let factor = tape.unary(activation(config), pre);
    Ok(GatOutput { factor, attention })
}

fn check_batch(config: &ModelConfig, batch: &Batch) -> Result<()> {
    let expect = batch.len() * batch.slots;
    if batch.user_neighbors.indices.len() != expect
        || batch.item_neighbors.indices.len() != expect
        || batch.user_histories.rows() != expect
        || batch.item_histories.rows() != expect
        || batch.num_feature_types != config.num_feature_types
        || batch.history_len == 0
    {
        return Err(Error::config(format!(
            "batch layout does not match the model: {} pairs × {} slots, C = {} (model expects C = {})",
            batch.len(),
            batch.slots,
            batch.num_feature_types,
            config.num_feature_types
        )));
    }
    Ok(())
}

fn edge_input(tape: &mut Tape, batch: &Batch) -> Result<Var> {
    let t = Tensor::new(batch.len() * batch.slots, batch.num_feature_types, batch.edge_features.clone())?;
    Ok(tape.constant(t))
}

/// `m_v = max_{j ∈ R(v)} (e_j ⊗ e_context)` per slot: `histories` index into
/// `table`, `context` holds one row per pair.
fn context_pool(
    tape: &mut Tape,
    params: &ParameterSet,
    table: usize,
    histories: &crate::data::IndexBlock,
    context: &[usize],
    slots: usize,
) -> Result<Var> {
    let hist = tape.embedding(table, params.get(table), &histories.indices);
    let ctx = tape.embedding(table, params.get(table), context);
    let per_pair = slots * histories.width;
    let owner: Vec<usize> = (0..histories.indices.len()).map(|r| r / per_pair).collect();
    let ctx_rep = tape.gather_rows(ctx, &owner)?;
    let prod = tape.mul(hist, ctx_rep)?;
    tape.max_pool_groups(prod, &histories.mask, histories.width)
}

/// Static user factor `p*_u` from the social homophily GAT.
pub fn user_static_factor(tape: &mut Tape, params: &ParameterSet, config: &ModelConfig, batch: &Batch) -> Result<GatOutput> {
    check_batch(config, batch)?;
    let ids = &params.ids;
    let values = tape.embedding(ids.user_embedding, params.get(ids.user_embedding), &batch.user_neighbors.indices);
    let edge = edge_input(tape, batch)?;
    aggregate(
        tape,
        params,
        config,
        config.user_gats,
        ids.gats[GatKind::UserStatic as usize],
        values,
        &batch.user_neighbors.mask,
        batch.slots,
        Some(edge),
    )
}

/// Dynamic user factor `m*_u` from the social influence GAT, conditioned on
/// each pair's candidate item.
pub fn user_dynamic_factor(tape: &mut Tape, params: &ParameterSet, config: &ModelConfig, batch: &Batch) -> Result<GatOutput> {
    check_batch(config, batch)?;
    let ids = &params.ids;
    let pooled = context_pool(tape, params, ids.item_factor, &batch.user_histories, &batch.items(), batch.slots)?;
    let edge = edge_input(tape, batch)?;
    aggregate(
        tape,
        params,
        config,
        config.user_gats,
        ids.gats[GatKind::UserDynamic as usize],
        pooled,
        &batch.user_neighbors.mask,
        batch.slots,
        Some(edge),
    )
}

/// Static item factor `q*_i` from the item homophily GAT.
pub fn item_static_factor(tape: &mut Tape, params: &ParameterSet, config: &ModelConfig, batch: &Batch) -> Result<GatOutput> {
    check_batch(config, batch)?;
    let ids = &params.ids;
    let values = tape.embedding(ids.item_embedding, params.get(ids.item_embedding), &batch.item_neighbors.indices);
    aggregate(
        tape,
        params,
        config,
        config.item_gats,
        ids.gats[GatKind::ItemStatic as usize],
        values,
        &batch.item_neighbors.mask,
        batch.slots,
        None,
    )
}

/// Dynamic item factor `n*_i` from the item influence GAT, conditioned on
/// each pair's target user.
pub fn item_dynamic_factor(tape: &mut Tape, params: &ParameterSet, config: &ModelConfig, batch: &Batch) -> Result<GatOutput> {
    check_batch(config, batch)?;
    let ids = &params.ids;
    let pooled = context_pool(tape, params, ids.user_factor, &batch.item_histories, &batch.users(), batch.slots)?;
    aggregate(
        tape,
        params,
        config,
        config.item_gats,
        ids.gats[GatKind::ItemDynamic as usize],
        pooled,
        &batch.item_neighbors.mask,
        batch.slots,
        None,
    )
}

/// All four factors in [`GatKind`] order.
pub fn factors(tape: &mut Tape, params: &ParameterSet, config: &ModelConfig, batch: &Batch) -> Result<[GatOutput; 4]> {
    Ok([
        user_static_factor(tape, params, config, batch)?,
        user_dynamic_factor(tape, params, config, batch)?,
        item_static_factor(tape, params, config, batch)?,
        item_dynamic_factor(tape, params, config, batch)?,
    ])
}

/// The four interaction towers over `p*⊗q*`, `p*⊗n*`, `m*⊗q*`, `m*⊗n*`.
pub fn pairwise_towers(
    tape: &mut Tape,
    params: &ParameterSet,
    config: &ModelConfig,
    factors: [Var; 4],
    training: bool,
    rng: &mut dyn RngCore,
) -> Result<[Var; 4]> {
    let [us, ud, is, id] = factors;
    let inputs = [(us, is), (us, id), (ud, is), (ud, id)];
    let mut out = [us; 4];
    for (a, (x, y)) in inputs.into_iter().enumerate() {
        let mut z = tape.mul(x, y)?;
        let layers = &params.ids.towers[a];
        for (k, layer) in layers.iter().enumerate() {
            let w = tape.param(layer.weight, params.get(layer.weight));
            let b = tape.param(layer.bias, params.get(layer.bias));
            z = tape.linear(z, w, b)?;
            if k + 1 < layers.len() {
                z = tape.unary(Unary::Tanh, z);
                z = tape.dropout(z, config.dropout, training, rng);
            }
        }
        out[a] = z;
    }
    Ok(out)
}

/// Policy head `head` on context `p_u || q_i`: `B × 4` arm probabilities.
pub fn policy_forward(
    tape: &mut Tape,
    params: &ParameterSet,
    users: &[usize],
    items: &[usize],
    head: usize,
) -> Result<Var> {
    let ids = &params.ids;
    let p = tape.embedding(ids.user_embedding, params.get(ids.user_embedding), users);
    let q = tape.embedding(ids.item_embedding, params.get(ids.item_embedding), items);
    let ctx = tape.concat(p, q)?;
    policy_from_context(tape, params, ctx, head)
}

/// Policy head on an explicit `B × 2D` context.
pub fn policy_from_context(tape: &mut Tape, params: &ParameterSet, context: Var, head: usize) -> Result<Var> {
    let head_ids = params.ids.policy[head];
    let w1 = tape.param(head_ids.hidden.weight, params.get(head_ids.hidden.weight));
    let b1 = tape.param(head_ids.hidden.bias, params.get(head_ids.hidden.bias));
    let w2 = tape.param(head_ids.logits.weight, params.get(head_ids.logits.weight));
    let b2 = tape.param(head_ids.logits.bias, params.get(head_ids.logits.bias));
    let h = tape.linear(context, w1, b1)?;
    let h = tape.unary(Unary::Tanh, h);
    let logits = tape.linear(h, w2, b2)?;
    let rows = tape.shape(logits)[0];
    tape.softmax_masked(logits, &vec![true; rows * ARMS])
}

/// Per-head arm probabilities without recording gradients.
pub fn policy_probabilities(params: &ParameterSet, users: &[usize], items: &[usize]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    (0..params.ids.policy.len())
        .map(|h| {
            let p = policy_forward(&mut tape, params, users, items, h)?;
            Ok(tape.value(p).clone())
        })
        .collect()
}

/// Stacks `s_1..s_4` into `(4B) × width`, pair-major.
fn stack_arms(tape: &mut Tape, towers: [Var; 4]) -> Result<Var> {
    let [b, w] = tape.shape(towers[0]);
    let a = tape.concat(towers[0], towers[1])?;
    let a = tape.concat(a, towers[2])?;
    let a = tape.concat(a, towers[3])?;
    tape.reshape(a, b * ARMS, w)
}

/// Fused vectors: one per head with sampled arms, otherwise one.
pub fn fuse(
    tape: &mut Tape,
    params: &ParameterSet,
    config: &ModelConfig,
    towers: [Var; 4],
    head_probs: &[Var],
    arms: Option<&[Vec<usize>]>,
) -> Result<Vec<Var>> {
    let b = tape.shape(towers[0])[0];
    let fused = match config.fusion {
        Fusion::Policy => {
            let stacked = stack_arms(tape, towers)?;
            match arms {
                Some(arms) => arms
                    .iter()
                    .map(|head_arms| {
                        let idx: Vec<usize> = head_arms.iter().enumerate().map(|(k, &a)| k * ARMS + a).collect();
                        tape.gather_rows(stacked, &idx)
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => {
                    let mut total = head_probs[0];
                    for &p in &head_probs[1..] {
                        total = tape.add(total, p)?;
                    }
                    let mean = tape.scale(total, 1.0 / head_probs.len() as f64);
                    vec![tape.group_weighted_sum(mean, stacked)?]
                }
            }
        }
        Fusion::LearnedWeights => {
            let id = params.ids.fusion_logits.expect("learned fusion weights");
            let logits = tape.param(id, params.get(id));
            let w = tape.softmax_masked(logits, &[true; ARMS])?;
            let wb = tape.gather_rows(w, &vec![0; b])?;
            let stacked = stack_arms(tape, towers)?;
            vec![tape.group_weighted_sum(wb, stacked)?]
        }
        Fusion::Max => {
            let stacked = stack_arms(tape, towers)?;
            vec![tape.max_pool_groups(stacked, &vec![true; b * ARMS], ARMS)?]
        }
        Fusion::Avg => {
            let stacked = stack_arms(tape, towers)?;
            let w = tape.constant(Tensor::filled(b, ARMS, 1.0 / ARMS as f64));
            vec![tape.group_weighted_sum(w, stacked)?]
        }
        Fusion::Concat => {
            let a = tape.concat(towers[0], towers[1])?;
            let a = tape.concat(a, towers[2])?;
            vec![tape.concat(a, towers[3])?]
        }
    };
    Ok(fused)
}

/// Output layer: linear, followed by a sigmoid for implicit feedback.
pub fn output_head(tape: &mut Tape, params: &ParameterSet, config: &ModelConfig, fused: Var) -> Result<Var> {
    let out = params.ids.output;
    let w = tape.param(out.weight, params.get(out.weight));
    let b = tape.param(out.bias, params.get(out.bias));
    let z = tape.linear(fused, w, b)?;
    Ok(match config.feedback {
        FeedbackMode::Implicit => tape.unary(Unary::Sigmoid, z),
        FeedbackMode::Explicit => z,
    })
}

/// Clamps explicit predictions into the rating range for reporting.
pub fn reported_prediction(value: f64, mode: FeedbackMode) -> f64 {
    match mode {
        FeedbackMode::Explicit => value.clamp(1.0, 5.0),
        FeedbackMode::Implicit => value,
    }
}

/// The full pipeline: four GATs, towers, fusion and output head.
pub fn forward(
    tape: &mut Tape,
    params: &ParameterSet,
    config: &ModelConfig,
    batch: &Batch,
    options: ForwardOptions<'_>,
    rng: &mut dyn RngCore,
) -> Result<ForwardOutput> {
    if let Some(arms) = options.arms {
        if config.fusion != Fusion::Policy
            || arms.len() != config.heads
            || arms.iter().any(|a| a.len() != batch.len() || a.iter().any(|&g| g >= ARMS))
        {
            return Err(Error::config("sampled arms need policy fusion and one arm per head and pair"));
        }
    }
    let gats = factors(tape, params, config, batch)?;
    let attention = gats.clone().map(|g| g.attention);
    let factor_vars = [gats[0].factor, gats[1].factor, gats[2].factor, gats[3].factor];
    let towers = pairwise_towers(tape, params, config, factor_vars, options.training, rng)?;

    let head_probs: Vec<Var> = if config.fusion == Fusion::Policy && options.arms.is_none() {
        let users = batch.users();
        let items = batch.items();
        (0..config.heads)
            .map(|h| policy_forward(tape, params, &users, &items, h))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let fused = fuse(tape, params, config, towers, &head_probs, options.arms)?;
    let predictions = fused
        .iter()
        .map(|&f| output_head(tape, params, config, f))
        .collect::<Result<Vec<_>>>()?;

    let n = predictions.len() as f64;
    let mut mean = vec![0.0; batch.len()];
    for &p in &predictions {
        for (m, v) in mean.iter_mut().zip(tape.value(p).data()) {
            *m += v / n;
        }
    }
    let trace = ForwardTrace {
        attention,
        policy: head_probs.iter().map(|&p| tape.value(p).clone()).collect(),
        towers: towers.map(|t| tape.value(t).clone()),
        fused: tape.value(fused[0]).clone(),
        predictions: mean,
    };
    Ok(ForwardOutput { predictions, trace })
}

/// `B × 4` predictions obtained by feeding each arm's tower output alone
/// through the output head (dropout off).
pub fn arm_predictions(tape: &mut Tape, params: &ParameterSet, config: &ModelConfig, batch: &Batch) -> Result<Var> {
    let gats = factors(tape, params, config, batch)?;
    let factor_vars = [gats[0].factor, gats[1].factor, gats[2].factor, gats[3].factor];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let towers = pairwise_towers(tape, params, config, factor_vars, false, &mut rng)?;
    let stacked = stack_arms(tape, towers)?;
    let preds = output_head(tape, params, config, stacked)?;
    tape.reshape(preds, batch.len(), ARMS)
}

/// Bundles a configuration with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let params = ParameterSet::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Evaluation-mode forward with expectation fusion.
    pub fn predict(&self, batch: &Batch) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&mut tape, &self.params, &self.config, batch, ForwardOptions::eval(), &mut rng)?;
        Ok(out.trace)
    }
}

//! Straight-line reference computations over plain vectors, one pair at a
//! time, sharing nothing with the tape-based implementation.

use danser::autodiff::{Tensor, Unary};
use danser::data::{Batch, FeedbackMode, InteractionStore, ItemGraph, SocialGraph};
use danser::model::{Aggregation, Fusion, GatKind, ModelConfig, ParameterSet};

pub struct PairOracle {
    /// Attention over the pair's slots, in `GatKind` order.
    pub attention: [Vec<f64>; 4],
    /// `p*, m*, q*, n*`.
    pub factors: [Vec<f64>; 4],
    pub towers: [Vec<f64>; 4],
    /// Head-averaged policy probabilities (empty unless fusion is policy).
    pub policy: Vec<f64>,
    pub prediction: f64,
}

fn row(t: &Tensor, r: usize) -> Vec<f64> {
    (0..t.cols()).map(|c| t.get(r, c)).collect()
}

/// `W x` for `W` stored `out × in`.
fn apply(w: &Tensor, x: &[f64]) -> Vec<f64> {
    assert_eq!(w.cols(), x.len());
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum())
        .collect()
}

fn add_bias(x: &mut [f64], b: &Tensor) {
    for (k, v) in x.iter_mut().enumerate() {
        *v += b.get(0, k);
    }
}

fn activate(f: Unary, x: f64) -> f64 {
    match f {
        Unary::Identity => x,
        Unary::Relu => x.max(0.0),
        Unary::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        other => panic!("no reference for {other:?}"),
    }
}

fn softmax(logits: &[f64], valid: &[bool]) -> Vec<f64> {
    let m = logits
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .zip(valid)
        .map(|(&l, &v)| if v { (l - m).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// `max_{j} (table[j] ⊙ table[context])`, zero for an empty history.
fn pooled(table: &Tensor, history: &[usize], mask: &[bool], context: usize) -> Vec<f64> {
    let d = table.cols();
    let mut out = vec![f64::NEG_INFINITY; d];
    let mut any = false;
    for (k, &j) in history.iter().enumerate() {
        if !mask[k] {
            continue;
        }
        any = true;
        for c in 0..d {
            out[c] = out[c].max(table.get(j, c) * table.get(context, c));
        }
    }
    if !any {
        out.fill(0.0);
    }
    out
}

struct Gat<'a> {
    params: &'a ParameterSet,
    config: &'a ModelConfig,
}

impl Gat<'_> {
    fn run(
        &self,
        kind: GatKind,
        mode: Aggregation,
        values: &[Vec<f64>],
        valid: &[bool],
        edges: Option<&[Vec<f64>]>,
    ) -> (Vec<f64>, Vec<f64>) {
        let s = values.len();
        if mode == Aggregation::None {
            let mut alpha = vec![0.0; s];
            alpha[0] = 1.0;
            return (values[0].clone(), alpha);
        }
        let g = self.params.ids.gats[kind as usize];
        let w = self.params.get(g.weight);
        let h: Vec<Vec<f64>> = values.iter().map(|v| apply(w, v)).collect();
        let alpha = match mode {
            Aggregation::Gcn => {
                let n = valid.iter().filter(|&&v| v).count() as f64;
                valid.iter().map(|&v| if v { 1.0 / n } else { 0.0 }).collect()
            }
            _ => {
                let a = self.params.get(g.attention);
                let logits: Vec<f64> = (0..s)
                    .map(|k| {
                        let mut z: Vec<f64> = h[0].iter().chain(&h[k]).copied().collect();
                        if let Some(e) = edges {
                            let gate = apply(self.params.get(self.params.ids.edge), &e[k]);
                            for (zi, gi) in z.iter_mut().zip(gate) {
                                *zi *= gi;
                            }
                        }
                        let score: f64 = z.iter().enumerate().map(|(c, zi)| zi * a.get(c, 0)).sum();
                        activate(Unary::LeakyRelu(self.config.leaky_slope), score)
                    })
                    .collect();
                softmax(&logits, valid)
            }
        };
        let dg = h[0].len();
        let mut out = vec![0.0; dg];
        for k in 0..s {
            if valid[k] {
                for c in 0..dg {
                    out[c] += alpha[k] * h[k][c];
                }
            }
        }
        add_bias(&mut out, self.params.get(g.bias));
        let out = out.into_iter().map(|x| activate(self.config.gat_activation, x)).collect();
        (out, alpha)
    }
}

/// Evaluation-mode forward pass for pair `b` of `batch`.
pub fn pair_forward(params: &ParameterSet, config: &ModelConfig, batch: &Batch, b: usize) -> PairOracle {
    let ids = &params.ids;
    let pair = batch.pairs[b];
    let s = batch.slots;
    let (users, umask) = batch.user_neighbors.row(b);
    let (items, imask) = batch.item_neighbors.row(b);
    let edges: Vec<Vec<f64>> = (0..s).map(|k| batch.edge_feature(b, k).to_vec()).collect();

    let p = params.get(ids.user_embedding);
    let q = params.get(ids.item_embedding);
    let x = params.get(ids.user_factor);
    let y = params.get(ids.item_factor);
    let user_static: Vec<Vec<f64>> = users.iter().map(|&v| row(p, v)).collect();
    let item_static: Vec<Vec<f64>> = items.iter().map(|&j| row(q, j)).collect();
    let user_dynamic: Vec<Vec<f64>> = (0..s)
        .map(|k| {
            let (h, m) = batch.user_histories.row(b * s + k);
            pooled(y, h, m, pair.item)
        })
        .collect();
    let item_dynamic: Vec<Vec<f64>> = (0..s)
        .map(|k| {
            let (h, m) = batch.item_histories.row(b * s + k);
            pooled(x, h, m, pair.user)
        })
        .collect();

    let gat = Gat { params, config };
    let (us, a0) = gat.run(GatKind::UserStatic, config.user_gats, &user_static, umask, Some(&edges));
    let (ud, a1) = gat.run(GatKind::UserDynamic, config.user_gats, &user_dynamic, umask, Some(&edges));
    let (is, a2) = gat.run(GatKind::ItemStatic, config.item_gats, &item_static, imask, None);
    let (id, a3) = gat.run(GatKind::ItemDynamic, config.item_gats, &item_dynamic, imask, None);

    let combos = [(&us, &is), (&us, &id), (&ud, &is), (&ud, &id)];
    let towers: [Vec<f64>; 4] = std::array::from_fn(|t| {
        let (a, c) = combos[t];
        let mut z: Vec<f64> = a.iter().zip(c.iter()).map(|(l, r)| l * r).collect();
        let layers = &ids.towers[t];
        for (k, layer) in layers.iter().enumerate() {
            z = apply(params.get(layer.weight), &z);
            add_bias(&mut z, params.get(layer.bias));
            if k + 1 < layers.len() {
                z = z.into_iter().map(f64::tanh).collect();
            }
        }
        z
    });

    let mut policy = Vec::new();
    let weighted = |w: &[f64]| -> Vec<f64> {
        (0..towers[0].len())
            .map(|c| (0..4).map(|a| w[a] * towers[a][c]).sum())
            .collect()
    };
    let fused: Vec<f64> = match config.fusion {
        Fusion::Policy => {
            let ctx: Vec<f64> = row(p, pair.user).into_iter().chain(row(q, pair.item)).collect();
            let mut mean = vec![0.0; 4];
            for head in &ids.policy {
                let mut h = apply(params.get(head.hidden.weight), &ctx);
                add_bias(&mut h, params.get(head.hidden.bias));
                let h: Vec<f64> = h.into_iter().map(f64::tanh).collect();
                let mut logits = apply(params.get(head.logits.weight), &h);
                add_bias(&mut logits, params.get(head.logits.bias));
                for (m, pr) in mean.iter_mut().zip(softmax(&logits, &[true; 4])) {
                    *m += pr / ids.policy.len() as f64;
                }
            }
            policy = mean.clone();
            weighted(&mean)
        }
        Fusion::LearnedWeights => {
            let logits = row(params.get(ids.fusion_logits.unwrap()), 0);
            weighted(&softmax(&logits, &[true; 4]))
        }
        Fusion::Avg => weighted(&[0.25; 4]),
        Fusion::Max => (0..towers[0].len())
            .map(|c| (0..4).map(|a| towers[a][c]).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        Fusion::Concat => towers.iter().flatten().copied().collect(),
    };
    let out = params.get(ids.output.weight);
    let z: f64 = fused.iter().enumerate().map(|(c, v)| out.get(0, c) * v).sum::<f64>()
        + params.get(ids.output.bias).get(0, 0);
    let prediction = match config.feedback {
        FeedbackMode::Explicit => z,
        FeedbackMode::Implicit => 1.0 / (1.0 + (-z).exp()),
    };
    PairOracle {
        attention: [a0, a1, a2, a3],
        factors: [us, ud, is, id],
        towers,
        policy,
        prediction,
    }
}

fn l1(t: &Tensor, r: usize) -> f64 {
    (0..t.cols()).map(|c| t.get(r, c).abs()).sum()
}

/// `½ Σ_pairs [ |p_u|+|x_u|+|q_i|+|y_i| + Σ_neighbors (|p_v|+|x_v|)/deg(v)
/// + (|q_j|+|y_j|)/deg(j) ]` over the batch's valid neighbor slots.
pub fn regularizer(params: &ParameterSet, batch: &Batch, social: &SocialGraph, items: &ItemGraph) -> f64 {
    let ids = &params.ids;
    let (p, x) = (params.get(ids.user_embedding), params.get(ids.user_factor));
    let (q, y) = (params.get(ids.item_embedding), params.get(ids.item_factor));
    let mut total = 0.0;
    for (b, pair) in batch.pairs.iter().enumerate() {
        let mut term = l1(p, pair.user) + l1(x, pair.user) + l1(q, pair.item) + l1(y, pair.item);
        let (us, um) = batch.user_neighbors.row(b);
        for k in 0..us.len() {
            let deg = social.degree(us[k]);
            if um[k] && deg > 0 {
                term += (l1(p, us[k]) + l1(x, us[k])) / deg as f64;
            }
        }
        let (is, im) = batch.item_neighbors.row(b);
        for k in 0..is.len() {
            let deg = items.degree(is[k]);
            if im[k] && deg > 0 {
                term += (l1(q, is[k]) + l1(y, is[k])) / deg as f64;
            }
        }
        total += 0.5 * term;
    }
    total
}

/// Item adjacency by counting common raters for every item pair.
pub fn item_graph(store: &InteractionStore, threshold: u32) -> Vec<Vec<usize>> {
    let n = store.num_items();
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let common = (0..store.num_users())
                .filter(|&u| store.has_interaction(u, i) && store.has_interaction(u, j))
                .count() as u32;
            if common > threshold {
                adjacency[i].push(j);
            }
        }
    }
    adjacency
}

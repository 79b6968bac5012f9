use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::interactions::{FeedbackMode, Interaction, InteractionStore};
use super::item_graph::ItemGraph;
use super::social::SocialGraph;

/// Draws up to `size` entries of `list` uniformly without replacement; short
/// lists are returned whole and padded with index 0 under a false mask.
pub fn sample_neighbors<R: Rng + ?Sized>(list: &[usize], size: usize, rng: &mut R) -> (Vec<usize>, Vec<bool>) {
    let positions = sample_positions(list.len(), size, rng);
    let mut indices: Vec<usize> = positions.iter().map(|&p| list[p]).collect();
    let mut mask = vec![true; indices.len()];
    indices.resize(size, 0);
    mask.resize(size, false);
    (indices, mask)
}

fn sample_positions<R: Rng + ?Sized>(len: usize, size: usize, rng: &mut R) -> Vec<usize> {
    if len > size {
        index::sample(rng, len, size).into_vec()
    } else {
        (0..len).collect()
    }
}

/// Social samples use even streams and item samples odd ones.
fn node_positions<R: Rng + ?Sized>(
    len: usize,
    node: usize,
    item_side: bool,
    options: &SamplingOptions,
    rng: &mut R,
) -> Vec<usize> {
    match options.fixed_samples {
        Some(seed) => {
            let mut own = ChaCha8Rng::seed_from_u64(seed);
            own.set_stream(2 * node as u64 + u64::from(item_side));
            sample_positions(len, options.sample_size, &mut own)
        }
        None => sample_positions(len, options.sample_size, rng),
    }
}

/// The most recent `keep` entries of a history in record order.
pub fn truncate_history(history: &[usize], keep: usize) -> &[usize] {
    &history[history.len().saturating_sub(keep)..]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingOptions {
    /// `F`: sampled neighbors per node, not counting the node itself.
    pub sample_size: usize,
    /// `C_t`: history length kept per node.
    pub truncation: usize,
    /// Drop the candidate item from the target user's own history and the
    /// target user from the candidate item's raters.
    pub exclude_target: bool,
    /// Unobserved items drawn per positive pair in implicit mode.
    pub negative_ratio: usize,
    /// When set, each node's neighbor sample comes from a generator seeded
    /// by this value and the node id, so a node sees the same neighbors in
    /// every batch.
    pub fixed_samples: Option<u64>,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            sample_size: 30,
            truncation: 30,
            exclude_target: true,
            negative_ratio: 0,
            fixed_samples: None,
        }
    }
}

/// Fixed-width rows of indices with a validity mask. Invalid slots hold 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexBlock {
    pub width: usize,
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
}

impl IndexBlock {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            indices: Vec::new(),
            mask: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.indices.len() / self.width
        }
    }

    pub fn row(&self, r: usize) -> (&[usize], &[bool]) {
        let s = r * self.width..(r + 1) * self.width;
        (&self.indices[s.clone()], &self.mask[s])
    }

    /// Appends `values` (truncated to the width) and pads the rest.
    pub fn push_row(&mut self, values: &[usize]) {
        let n = values.len().min(self.width);
        self.indices.extend_from_slice(&values[..n]);
        self.mask.extend(std::iter::repeat(true).take(n));
        self.indices.extend(std::iter::repeat(0).take(self.width - n));
        self.mask.extend(std::iter::repeat(false).take(self.width - n));
    }

    pub fn push_masked_row(&mut self, values: &[usize], mask: &[bool]) {
        debug_assert_eq!(values.len(), self.width);
        self.indices.extend_from_slice(values);
        self.mask.extend_from_slice(mask);
    }
}

/// `B` pairs with their padded one-hop neighborhoods and truncated histories.
///
/// Slot 0 of every neighbor row is the node itself, so each row has at least
/// one valid entry. `user_histories` row `b·slots + k` lists the items rated by
/// the user in slot `k` of pair `b`; `item_histories` likewise lists raters.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub pairs: Vec<Interaction>,
    pub slots: usize,
    pub history_len: usize,
    pub num_feature_types: usize,
    pub user_neighbors: IndexBlock,
    /// `B × slots × C` edge features; all ones for the self slot, zeros for pads.
    pub edge_features: Vec<f64>,
    pub item_neighbors: IndexBlock,
    pub user_histories: IndexBlock,
    pub item_histories: IndexBlock,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn users(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.user).collect()
    }

    pub fn items(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.item).collect()
    }

    pub fn ratings(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.rating).collect()
    }

    pub fn edge_feature(&self, pair: usize, slot: usize) -> &[f64] {
        let c = self.num_feature_types;
        let start = (pair * self.slots + slot) * c;
        &self.edge_features[start..start + c]
    }
}

/// For every positive pair, `ratio` items the user never interacted with,
/// drawn uniformly, labelled 0.
pub fn sample_negatives<R: Rng + ?Sized>(
    pairs: &[Interaction],
    store: &InteractionStore,
    ratio: usize,
    rng: &mut R,
) -> Vec<Interaction> {
    let n = store.num_items();
    let mut out = Vec::with_capacity(pairs.len() * ratio);
    if n == 0 {
        return out;
    }
    for p in pairs.iter().filter(|p| p.rating > 0.0) {
        if store.user_items(p.user).len() >= n {
            continue;
        }
        for _ in 0..ratio {
            let mut item = rng.gen_range(0..n);
            let mut tries = 0;
            while store.has_interaction(p.user, item) && tries < 1000 {
                item = rng.gen_range(0..n);
                tries += 1;
            }
            if !store.has_interaction(p.user, item) {
                out.push(Interaction {
                    user: p.user,
                    item,
                    rating: 0.0,
                });
            }
        }
    }
    out
}

/// Assembles a [`Batch`]. Histories and neighbors come from `store` and the
/// graphs; in implicit mode with a nonzero `negative_ratio`, sampled
/// negatives are appended after the given pairs.
pub fn make_batch<R: Rng + ?Sized>(
    pairs: &[Interaction],
    store: &InteractionStore,
    social: &SocialGraph,
    items: &ItemGraph,
    options: &SamplingOptions,
    rng: &mut R,
) -> Batch {
    let mut all = pairs.to_vec();
    if store.mode() == FeedbackMode::Implicit && options.negative_ratio > 0 {
        all.extend(sample_negatives(pairs, store, options.negative_ratio, rng));
    }
    let slots = options.sample_size + 1;
    let c = social.num_feature_types();
    let mut user_neighbors = IndexBlock::new(slots);
    let mut item_neighbors = IndexBlock::new(slots);
    let mut user_histories = IndexBlock::new(options.truncation);
    let mut item_histories = IndexBlock::new(options.truncation);
    let mut edge_features = Vec::with_capacity(all.len() * slots * c);

    for p in &all {
        let friends = social.neighbors(p.user);
        let positions = node_positions(friends.len(), p.user, false, options, rng);
        let mut row = Vec::with_capacity(slots);
        row.push(p.user);
        edge_features.extend(std::iter::repeat(1.0).take(c));
        for &k in &positions {
            row.push(friends[k]);
            edge_features.extend_from_slice(social.edge_features(p.user, k));
        }
        edge_features.extend(std::iter::repeat(0.0).take((slots - row.len()) * c));
        for (k, &v) in row.iter().enumerate() {
            let history = store.user_items(v);
            if k == 0 && options.exclude_target {
                let filtered: Vec<usize> = history.iter().copied().filter(|&j| j != p.item).collect();
                user_histories.push_row(truncate_history(&filtered, options.truncation));
            } else {
                user_histories.push_row(truncate_history(history, options.truncation));
            }
        }
        for _ in row.len()..slots {
            user_histories.push_row(&[]);
        }
        user_neighbors.push_row(&row);

        let related = items.neighbors(p.item);
        let positions = node_positions(related.len(), p.item, true, options, rng);
        let mut row = Vec::with_capacity(slots);
        row.push(p.item);
        row.extend(positions.iter().map(|&k| related[k]));
        for (k, &j) in row.iter().enumerate() {
            let raters = store.item_users(j);
            if k == 0 && options.exclude_target {
                let filtered: Vec<usize> = raters.iter().copied().filter(|&v| v != p.user).collect();
                item_histories.push_row(truncate_history(&filtered, options.truncation));
            } else {
                item_histories.push_row(truncate_history(raters, options.truncation));
            }
        }
        for _ in row.len()..slots {
            item_histories.push_row(&[]);
        }
        item_neighbors.push_row(&row);
    }

    Batch {
        pairs: all,
        slots,
        history_len: options.truncation,
        num_feature_types: c,
        user_neighbors,
        edge_features,
        item_neighbors,
        user_histories,
        item_histories,
    }
}

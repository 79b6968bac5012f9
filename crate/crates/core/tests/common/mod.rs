#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use danser::data::{
    make_batch, Batch, FeedbackMode, IdMap, Interaction, InteractionStore, ItemGraph, SamplingOptions, SocialGraph,
};
use danser::model::{ModelConfig, ParameterSet};

pub struct World {
    pub store: InteractionStore,
    pub social: SocialGraph,
    pub items: ItemGraph,
}

pub fn world(
    num_users: usize,
    num_items: usize,
    records: &[(usize, usize, f64)],
    trust: &[(usize, usize, Vec<f64>)],
    mode: FeedbackMode,
    threshold: u32,
) -> World {
    let mut users = IdMap::new();
    for u in 0..num_users {
        users.get_or_insert(&format!("u{u}"));
    }
    let mut items = IdMap::new();
    for i in 0..num_items {
        items.get_or_insert(&format!("i{i}"));
    }
    let entries = records
        .iter()
        .map(|&(user, item, rating)| Interaction { user, item, rating })
        .collect();
    let store = InteractionStore::from_entries(mode, Arc::new(users), Arc::new(items), entries);
    let c = trust.first().map_or(1, |t| t.2.len());
    let social = SocialGraph::from_edges(num_users, c, trust.iter().cloned(), false);
    let items = ItemGraph::build(&store, threshold);
    World { store, social, items }
}

/// Up to `max_users` users and `max_items` items with random records and
/// trust edges carrying `c` positive features.
pub fn random_world(rng: &mut ChaCha8Rng, max_users: usize, max_items: usize, c: usize, mode: FeedbackMode) -> World {
    let nu = rng.gen_range(2..=max_users);
    let ni = rng.gen_range(2..=max_items);
    let records: Vec<(usize, usize, f64)> = (0..rng.gen_range(nu..=3 * nu))
        .map(|_| {
            let r = match mode {
                FeedbackMode::Explicit => f64::from(rng.gen_range(1..=5u8)),
                FeedbackMode::Implicit => 1.0,
            };
            (rng.gen_range(0..nu), rng.gen_range(0..ni), r)
        })
        .collect();
    let trust: Vec<(usize, usize, Vec<f64>)> = (0..rng.gen_range(0..=2 * nu))
        .map(|_| {
            let f = (0..c).map(|_| rng.gen_range(0.1..2.0)).collect();
            (rng.gen_range(0..nu), rng.gen_range(0..nu), f)
        })
        .collect();
    let trust = if trust.is_empty() { vec![(0, 1, vec![1.0; c])] } else { trust };
    world(nu, ni, &records, &trust, mode, rng.gen_range(0..2))
}

/// Every parameter drawn from `U(-scale, scale)`, so activations stay away
/// from the zero-initialized regime.
pub fn wide_params(config: &ModelConfig, rng: &mut ChaCha8Rng, scale: f64) -> ParameterSet {
    let mut params = ParameterSet::init(config, rng).unwrap();
    for id in 0..params.len() {
        for v in params.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
    params
}

pub fn batch(w: &World, pairs: &[Interaction], sample_size: usize, truncation: usize, seed: u64) -> Batch {
    let options = SamplingOptions {
        sample_size,
        truncation,
        ..SamplingOptions::default()
    };
    make_batch(pairs, &w.store, &w.social, &w.items, &options, &mut ChaCha8Rng::seed_from_u64(seed))
}

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use super::interactions::{FeedbackMode, IdMap, Interaction, InteractionStore};
use super::social::SocialGraph;

/// Parameters of a planted-community dataset: users fall into communities
/// sharing a preference vector, friendships mostly stay inside a community,
/// and feedback follows the noisy preference-item affinity.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub num_users: usize,
    pub num_items: usize,
    pub communities: usize,
    pub dim: usize,
    /// Observed interactions per user.
    pub interactions_per_user: usize,
    /// Outgoing trust edges per user.
    pub friends_per_user: usize,
    /// Probability that a trust edge stays inside the user's community.
    pub homophily: f64,
    /// Standard deviation of each user's deviation from the community vector.
    pub user_noise: f64,
    pub mode: FeedbackMode,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            num_users: 200,
            num_items: 100,
            communities: 4,
            dim: 4,
            interactions_per_user: 5,
            friends_per_user: 5,
            homophily: 0.9,
            user_noise: 0.3,
            mode: FeedbackMode::Implicit,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedData {
    pub store: InteractionStore,
    pub social: SocialGraph,
    pub community: Vec<usize>,
    /// Latent user-item affinity, `num_users × num_items` row-major.
    pub affinity: Vec<f64>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn pick_other<R: Rng + ?Sized>(pool: &[usize], exclude: usize, rng: &mut R) -> Option<usize> {
    let candidates: Vec<usize> = pool.iter().copied().filter(|&v| v != exclude).collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.gen_range(0..candidates.len())])
    }
}

/// Generates a dataset following `spec`. Explicit ratings are
/// `round(3 + 2·tanh(affinity))` on items drawn uniformly; implicit users
/// click their highest-affinity items among a random candidate pool four
/// times the interaction count.
pub fn planted<R: Rng + ?Sized>(spec: &PlantedSpec, rng: &mut R) -> PlantedData {
    let (nu, ni, d) = (spec.num_users, spec.num_items, spec.dim);
    let k = spec.communities.max(1);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| gaussian(rng)).collect()).collect();
    let community: Vec<usize> = (0..nu).map(|u| u % k).collect();
    let prefs: Vec<Vec<f64>> = community
        .iter()
        .map(|&c| centers[c].iter().map(|x| x + spec.user_noise * gaussian(rng)).collect())
        .collect();
    let item_vecs: Vec<Vec<f64>> = (0..ni).map(|_| (0..d).map(|_| gaussian(rng)).collect()).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let affinity: Vec<f64> = (0..nu * ni)
        .map(|r| {
            let (u, j) = (r / ni, r % ni);
            prefs[u].iter().zip(&item_vecs[j]).map(|(a, b)| a * b).sum::<f64>() * scale
        })
        .collect();

    let mut users = IdMap::new();
    for u in 0..nu {
        users.get_or_insert(&u.to_string());
    }
    let mut items = IdMap::new();
    for j in 0..ni {
        items.get_or_insert(&j.to_string());
    }

    let per_user = spec.interactions_per_user.min(ni);
    let mut entries = Vec::with_capacity(nu * per_user);
    for u in 0..nu {
        match spec.mode {
            FeedbackMode::Explicit => {
                for j in index::sample(rng, ni, per_user).into_vec() {
                    let r = (3.0 + 2.0 * affinity[u * ni + j].tanh()).round().clamp(1.0, 5.0);
                    entries.push(Interaction { user: u, item: j, rating: r });
                }
            }
            FeedbackMode::Implicit => {
                let pool = (4 * per_user).min(ni);
                let mut candidates = index::sample(rng, ni, pool).into_vec();
                candidates.sort_by(|&a, &b| affinity[u * ni + b].total_cmp(&affinity[u * ni + a]));
                for &j in &candidates[..per_user] {
                    entries.push(Interaction { user: u, item: j, rating: 1.0 });
                }
            }
        }
    }
    let store = InteractionStore::from_entries(spec.mode, Arc::new(users), Arc::new(items), entries);

    let members: Vec<Vec<usize>> = (0..k).map(|c| (0..nu).filter(|&u| community[u] == c).collect()).collect();
    let everyone: Vec<usize> = (0..nu).collect();
    let mut edges = Vec::new();
    for u in 0..nu {
        let mut chosen = Vec::with_capacity(spec.friends_per_user);
        for _ in 0..spec.friends_per_user {
            let pool = if rng.gen::<f64>() < spec.homophily {
                &members[community[u]]
            } else {
                &everyone
            };
            if let Some(v) = pick_other(pool, u, rng) {
                if !chosen.contains(&v) {
                    chosen.push(v);
                    edges.push((u, v, vec![1.0]));
                }
            }
        }
    }
    let social = SocialGraph::from_edges(nu, 1, edges, false);
    PlantedData {
        store,
        social,
        community,
        affinity,
    }
}

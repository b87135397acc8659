//! Seeded community-structured bipartite interaction streams.

use numcore::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::store::{EventStore, NodeId, TemporalEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub communities: usize,
    pub users: usize,
    pub items: usize,
    pub events: usize,
    /// Probability that an interaction crosses communities.
    pub noise: f64,
    /// Edge feature width; the first `communities` columns hold the one-hot.
    pub feature_dim: usize,
    /// Standard deviation of the additive feature jitter.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            communities: 2,
            users: 400,
            items: 400,
            events: 20_000,
            noise: 0.1,
            feature_dim: 8,
            jitter: 0.5,
            seed: 0,
        }
    }
}

pub fn user_community(user: usize, communities: usize) -> usize {
    user % communities
}

pub fn item_community(item: usize, communities: usize) -> usize {
    item % communities
}

/// Users are nodes `0..users`, items `users..users+items`. Each event picks a
/// user uniformly, then an item from the user's community with probability
/// `1 - noise` or from another community otherwise. Inter-arrival times are
/// exponential with unit mean. Edge features are the user's community
/// one-hot plus Gaussian jitter on every column.
pub fn synth_generate(cfg: &SynthConfig) -> Result<EventStore> {
    if cfg.communities == 0 || cfg.users == 0 || cfg.items < cfg.communities || cfg.events == 0 {
        return Err(Error::Config(format!("degenerate synthetic configuration {cfg:?}")));
    }
    if cfg.feature_dim < cfg.communities {
        return Err(Error::Config("feature_dim must cover the community one-hot".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) || (cfg.communities == 1 && cfg.noise > 0.0) {
        return Err(Error::Config(format!("noise rate {} impossible here", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gaps = Exp::new(1.0).expect("unit rate");
    let c = cfg.communities;
    let items_of: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..cfg.items).filter(|&i| item_community(i, c) == k).collect())
        .collect();
    let mut t = 0.0f64;
    let mut events = Vec::with_capacity(cfg.events);
    let mut feats = Vec::with_capacity(cfg.events * cfg.feature_dim);
    for i in 0..cfg.events {
        t += gaps.sample(&mut rng);
        let user = rng.gen_range(0..cfg.users);
        let home = user_community(user, c);
        let community = if rng.gen_bool(cfg.noise) {
            let shift = rng.gen_range(1..c);
            (home + shift) % c
        } else {
            home
        };
        let pool = &items_of[community];
        let item = pool[rng.gen_range(0..pool.len())];
        for d in 0..cfg.feature_dim {
            let base = if d == home { 1.0 } else { 0.0 };
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            feats.push((base + cfg.jitter * z) as f32);
        }
        events.push(TemporalEvent {
            src: user as NodeId,
            dst: cfg.users + item,
            timestamp: t,
            edge_feature_id: i,
            label: 0,
        });
    }
    let n = cfg.users + cfg.items;
    EventStore::new(
        n,
        events,
        Tensor::zeros(n, cfg.feature_dim),
        Tensor::new(cfg.events, cfg.feature_dim, feats)?,
        Some(cfg.users),
    )
}

/// Fraction of events whose user and item communities differ.
pub fn cross_community_fraction(store: &EventStore, communities: usize) -> f64 {
    let users = store.user_count().unwrap_or(0);
    let cross = store
        .events()
        .iter()
        .filter(|e| user_community(e.src, communities) != item_community(e.dst - users, communities))
        .count();
    cross as f64 / store.len().max(1) as f64
}

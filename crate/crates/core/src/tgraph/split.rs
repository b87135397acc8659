use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::{EventId, EventStore, NodeId, TemporalEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Range<EventId>,
    pub val: Range<EventId>,
    pub test: Range<EventId>,
    pub t_max_train: f64,
    /// Nodes hidden from training for the inductive protocol.
    pub masked: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Transductive,
    Inductive,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(Self::Transductive),
            "inductive" => Ok(Self::Inductive),
            other => Err(Error::Config(format!(
                "unknown setting `{other}` (expected transductive or inductive)"
            ))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Transductive => "transductive",
            Self::Inductive => "inductive",
        })
    }
}

impl SplitSpec {
    pub fn touches_masked(&self, e: &TemporalEvent) -> bool {
        self.masked.contains(&e.src) || self.masked.contains(&e.dst)
    }

    /// Training events that may be used for learning: inside the training
    /// range and touching no masked node.
    pub fn is_usable_train(&self, id: EventId, e: &TemporalEvent) -> bool {
        self.train.contains(&id) && !self.touches_masked(e)
    }

    pub fn usable_train_ids<'a>(&'a self, store: &'a EventStore) -> impl Iterator<Item = EventId> + 'a {
        self.train
            .clone()
            .filter(move |&id| !self.touches_masked(store.event(id)))
    }

    /// Nodes appearing in usable training events, ascending.
    pub fn train_nodes(&self, store: &EventStore) -> Vec<NodeId> {
        let mut seen = BTreeSet::new();
        for id in self.usable_train_ids(store) {
            let e = store.event(id);
            seen.insert(e.src);
            seen.insert(e.dst);
        }
        seen.into_iter().collect()
    }

    /// Evaluation events of `range` under `setting`: transductive keeps
    /// events between nodes observed in training, inductive keeps events
    /// touching at least one masked node.
    pub fn eval_ids(&self, store: &EventStore, range: Range<EventId>, setting: Setting) -> Vec<EventId> {
        range
            .filter(|&id| {
                let masked = self.touches_masked(store.event(id));
                match setting {
                    Setting::Transductive => !masked,
                    Setting::Inductive => masked,
                }
            })
            .collect()
    }
}

/// Chronological split with floor rounding for the train and validation
/// boundaries and the remainder assigned to test.
///
/// The masked set is every val/test node unseen in training plus a seeded
/// sample of `round(mask_frac * |val/test nodes|)` val/test nodes that were
/// seen.
pub fn chronological_split(store: &EventStore, ratios: (f64, f64, f64), mask_frac: f64, seed: u64) -> Result<SplitSpec> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    if !(0.0..1.0).contains(&mask_frac) {
        return Err(Error::Config(format!("mask fraction {mask_frac} must be in [0,1)")));
    }
    let n = store.len();
    let n_train = ((n as f64) * tr + 1e-9).floor() as usize;
    let n_val = ((n as f64) * va + 1e-9).floor() as usize;
    let train = 0..n_train;
    let val = n_train..(n_train + n_val).min(n);
    let test = val.end..n;
    let t_max_train = if n_train == 0 {
        0.0
    } else {
        store.event(n_train - 1).timestamp
    };

    let mut seen_train = vec![false; store.num_nodes()];
    for e in &store.events()[train.clone()] {
        seen_train[e.src] = true;
        seen_train[e.dst] = true;
    }
    let later: BTreeSet<NodeId> = store.events()[n_train..]
        .iter()
        .flat_map(|e| [e.src, e.dst])
        .collect();
    let mut masked: BTreeSet<NodeId> = later.iter().copied().filter(|&v| !seen_train[v]).collect();
    let candidates: Vec<NodeId> = later.iter().copied().filter(|&v| seen_train[v]).collect();
    let want = ((later.len() as f64) * mask_frac).round() as usize;
    let want = want.min(candidates.len());
    if want > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        masked.extend(sample(&mut rng, candidates.len(), want).into_iter().map(|i| candidates[i]));
    }
    Ok(SplitSpec {
        train,
        val,
        test,
        t_max_train,
        masked,
    })
}

/// Keeps training events at positions `0, n, 2n, ...` of the training
/// range; validation and test events are untouched.
pub fn sparsify(store: &EventStore, split: &SplitSpec, n: usize) -> Result<(EventStore, SplitSpec)> {
    if n == 0 {
        return Err(Error::Config("sparsify factor must be at least 1".into()));
    }
    let train = split.train.clone();
    let thinned = store.filter_events(|id, _| !train.contains(&id) || (id - train.start) % n == 0);
    let kept = train.len().div_ceil(n);
    let shift = train.len() - kept;
    let new_train = train.start..train.start + kept;
    let t_max_train = if kept == 0 {
        split.t_max_train
    } else {
        thinned.event(new_train.end - 1).timestamp
    };
    let new_split = SplitSpec {
        train: new_train,
        val: split.val.start - shift..split.val.end - shift,
        test: split.test.start - shift..split.test.end - shift,
        t_max_train,
        masked: split.masked.clone(),
    };
    Ok((thinned, new_split))
}

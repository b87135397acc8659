use std::collections::BTreeMap;

use numcore::Var;
use rand::seq::index::sample;

use crate::seeds;

use crate::tgraph::{EventId, EventStore, NeighborIndex, NodeId};

/// Where an edge's feature row and weight come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSource {
    /// A stored event: raw feature row, implicit weight 1.
    Event(EventId),
    /// Row `slot` of the view's added-edge feature and weight variables.
    Added(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewEntry {
    pub neighbor: NodeId,
    pub timestamp: f64,
    pub source: EdgeSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub timestamp: f64,
}

/// Temporal neighborhood seen by an encoder: the events of `index` strictly
/// before `min(t, horizon)`, optionally merged with weighted added edges.
/// Added edges live on one tape and are valid only for that computation.
#[derive(Debug, Clone)]
pub struct GraphView<'a> {
    store: &'a EventStore,
    index: &'a NeighborIndex,
    horizon: f64,
    added: BTreeMap<NodeId, Vec<(f64, NodeId, usize)>>,
    added_count: usize,
    /// `added_count x edge_dim` features and `added_count x 1` weights.
    added_vars: Option<(Var, Var)>,
    sample_seed: u64,
}

impl<'a> GraphView<'a> {
    pub fn new(store: &'a EventStore, index: &'a NeighborIndex, horizon: f64) -> Self {
        Self {
            store,
            index,
            horizon,
            added: BTreeMap::new(),
            added_count: 0,
            added_vars: None,
            sample_seed: 0,
        }
    }

    /// Seed of [`GraphView::sample_neighbors`].
    pub fn with_sample_seed(mut self, seed: u64) -> Self {
        self.sample_seed = seed;
        self
    }

    /// Inserts `edges` undirected; row `i` of `features` and `weights`
    /// belongs to `edges[i]`.
    pub fn with_added(mut self, edges: &[AddedEdge], features: Var, weights: Var) -> Self {
        for (slot, e) in edges.iter().enumerate() {
            self.added.entry(e.src).or_default().push((e.timestamp, e.dst, slot));
            if e.src != e.dst {
                self.added.entry(e.dst).or_default().push((e.timestamp, e.src, slot));
            }
        }
        for list in self.added.values_mut() {
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        }
        self.added_count = edges.len();
        self.added_vars = (!edges.is_empty()).then_some((features, weights));
        self
    }

    pub fn store(&self) -> &'a EventStore {
        self.store
    }

    pub fn index(&self) -> &'a NeighborIndex {
        self.index
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn added_count(&self) -> usize {
        self.added_count
    }

    pub fn added_vars(&self) -> Option<(Var, Var)> {
        self.added_vars
    }

    /// The `n` most recent entries strictly before `min(t, horizon)`, oldest
    /// first. Stored events precede added edges at equal timestamps.
    pub fn neighbors(&self, node: NodeId, t: f64, n: usize) -> Vec<ViewEntry> {
        let cut = t.min(self.horizon);
        let base = self.index.neighbors_before(node, cut, n);
        let base = base.iter().map(|e| ViewEntry {
            neighbor: e.neighbor,
            timestamp: e.timestamp,
            source: EdgeSource::Event(e.event),
        });
        let Some(extra) = self.added.get(&node) else {
            return base.collect();
        };
        let end = extra.partition_point(|a| a.0 < cut);
        let extra = extra[end.saturating_sub(n)..end].iter().map(|&(timestamp, neighbor, slot)| ViewEntry {
            neighbor,
            timestamp,
            source: EdgeSource::Added(slot),
        });
        let mut merged: Vec<ViewEntry> = Vec::with_capacity(base.len() + extra.len());
        let (mut a, mut b) = (base.peekable(), extra.peekable());
        loop {
            let take_base = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => x.timestamp <= y.timestamp,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            merged.push(if take_base { a.next() } else { b.next() }.expect("peeked"));
        }
        merged.split_off(merged.len().saturating_sub(n))
    }

    /// `n` entries drawn uniformly without replacement from everything
    /// strictly before `min(t, horizon)`, oldest first. The draw depends only
    /// on the view seed, the node, the query time and the visible entries.
    pub fn sample_neighbors(&self, node: NodeId, t: f64, n: usize) -> Vec<ViewEntry> {
        let all = self.neighbors(node, t, usize::MAX);
        if all.len() <= n {
            return all;
        }
        let mut rng = seeds::stream(self.sample_seed, &[node as u64, t.to_bits()]);
        let mut picked = sample(&mut rng, all.len(), n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| all[i]).collect()
    }
}

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use super::store::{EventId, EventStore, NodeId, TemporalEvent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub neighbor: NodeId,
    pub event: EventId,
    pub timestamp: f64,
}

/// Per-node time-sorted adjacency. Every event appears in both endpoints'
/// lists (once for self-loops).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    lists: Vec<Vec<NeighborEntry>>,
}

impl NeighborIndex {
    pub fn build(store: &EventStore) -> Self {
        Self::build_filtered(store, |_, _| true)
    }

    /// Indexes only the events `keep` accepts; event ids stay those of `store`.
    pub fn build_filtered(store: &EventStore, mut keep: impl FnMut(EventId, &TemporalEvent) -> bool) -> Self {
        let mut lists = vec![Vec::new(); store.num_nodes()];
        for (id, e) in store.events().iter().enumerate() {
            if !keep(id, e) {
                continue;
            }
            lists[e.src].push(NeighborEntry {
                neighbor: e.dst,
                event: id,
                timestamp: e.timestamp,
            });
            if e.dst != e.src {
                lists[e.dst].push(NeighborEntry {
                    neighbor: e.src,
                    event: id,
                    timestamp: e.timestamp,
                });
            }
        }
        Self { lists }
    }

    pub fn num_nodes(&self) -> usize {
        self.lists.len()
    }

    pub fn history(&self, node: NodeId) -> &[NeighborEntry] {
        self.lists.get(node).map_or(&[], Vec::as_slice)
    }

    /// All entries of `node` with timestamp strictly before `t`.
    pub fn all_before(&self, node: NodeId, t: f64) -> &[NeighborEntry] {
        let list = self.history(node);
        let end = list.partition_point(|e| e.timestamp < t);
        &list[..end]
    }

    /// The `n` most recent entries strictly before `t`, oldest first.
    pub fn neighbors_before(&self, node: NodeId, t: f64, n: usize) -> &[NeighborEntry] {
        let before = self.all_before(node, t);
        &before[before.len().saturating_sub(n)..]
    }

    /// Seeded multi-hop expansion over history strictly before `t`.
    ///
    /// Each hop samples up to `fanouts[h]` history entries (without
    /// replacement) of every frontier node. Neighbors equal to the source or
    /// to any node reached at an earlier hop are dropped, as are repeats
    /// within a hop. Returns the final-hop endpoints paired with the event
    /// that reached them.
    pub fn khop_sample<R: Rng>(&self, node: NodeId, t: f64, fanouts: &[usize], rng: &mut R) -> Vec<(NodeId, EventId)> {
        let mut visited: BTreeSet<NodeId> = BTreeSet::from([node]);
        let mut frontier = vec![node];
        let mut reached: Vec<(NodeId, EventId)> = Vec::new();
        for &fanout in fanouts {
            reached.clear();
            let mut seen_this_hop = BTreeSet::new();
            for &f in &frontier {
                let hist = self.all_before(f, t);
                if hist.is_empty() || fanout == 0 {
                    continue;
                }
                let mut picks = sample(rng, hist.len(), fanout.min(hist.len())).into_vec();
                picks.sort_unstable();
                for p in picks {
                    let e = hist[p];
                    if visited.contains(&e.neighbor) || !seen_this_hop.insert(e.neighbor) {
                        continue;
                    }
                    reached.push((e.neighbor, e.event));
                }
            }
            visited.extend(seen_this_hop);
            frontier = reached.iter().map(|&(n, _)| n).collect();
            if frontier.is_empty() {
                break;
            }
        }
        reached
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use numcore::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn store_of(n: usize, pairs: &[(usize, usize, f64)]) -> EventStore {
        let events = pairs
            .iter()
            .enumerate()
            .map(|(i, &(s, d, t))| TemporalEvent {
                src: s,
                dst: d,
                timestamp: t,
                edge_feature_id: i,
                label: 0,
            })
            .collect();
        EventStore::new(n, events, Tensor::zeros(n, 1), Tensor::zeros(pairs.len(), 1), None).unwrap()
    }

    #[test]
    fn strictly_before_boundary() {
        let store = store_of(2, &[(0, 1, 1.0), (0, 1, 2.0), (0, 1, 3.0)]);
        let idx = NeighborIndex::build(&store);
        assert!(idx.neighbors_before(0, 0.0, 5).is_empty());
        let got: Vec<f64> = idx.neighbors_before(0, 3.0, 5).iter().map(|e| e.timestamp).collect();
        assert_eq!(got, vec![1.0, 2.0]);
        let last: Vec<f64> = idx.neighbors_before(1, 10.0, 2).iter().map(|e| e.timestamp).collect();
        assert_eq!(last, vec![2.0, 3.0]);
    }

    #[test]
    fn path_graph_reaches_third_hop() {
        // a=0, b=1, c=2, d=3
        let store = store_of(4, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0)]);
        let idx = NeighborIndex::build(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(idx.khop_sample(0, 10.0, &[4, 4, 4], &mut rng), vec![(3, 2)]);
    }

    #[test]
    fn star_graph_has_no_third_hop() {
        let store = store_of(5, &[(0, 1, 1.0), (0, 2, 2.0), (0, 3, 3.0), (0, 4, 4.0)]);
        let idx = NeighborIndex::build(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(idx.khop_sample(0, 10.0, &[4, 4, 4], &mut rng).is_empty());
    }

    #[test]
    fn khop_is_seed_deterministic() {
        let pairs: Vec<(usize, usize, f64)> = (0..60).map(|i| (i % 7, 7 + (i * 2) % 9, i as f64)).collect();
        let store = store_of(16, &pairs);
        let idx = NeighborIndex::build(&store);
        let run = |s| idx.khop_sample(2, 50.0, &[3, 3, 3], &mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(run(5), run(5));
        assert!(!run(5).is_empty());
    }

    #[test]
    fn undirected_entries() {
        let store = store_of(3, &[(0, 1, 1.0), (2, 2, 2.0)]);
        let idx = NeighborIndex::build(&store);
        assert_eq!(idx.history(0)[0].neighbor, 1);
        assert_eq!(idx.history(1)[0].neighbor, 0);
        assert_eq!(idx.history(2).len(), 1);
    }
}

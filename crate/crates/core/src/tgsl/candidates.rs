use rand::seq::index::sample;
use rand::Rng;

use super::Strategy;
use crate::tgraph::{EventId, EventStore, NeighborIndex, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// Final-layer embedding of this event (own edge for one-hop, borrowed
    /// edge for third-hop).
    Event(EventId),
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEdge {
    pub src: NodeId,
    pub dst: NodeId,
    /// Position of `src` in the source list the candidates were drawn for.
    pub source_slot: usize,
    pub t_new: f64,
    /// Timestamp the feature belongs to; equals `t_new` for zero features.
    pub t_sample: f64,
    pub strategy: Strategy,
    pub feature: FeatureSource,
}

#[derive(Debug, Clone, Copy)]
pub struct CandidateRequest {
    pub strategy: Strategy,
    pub n_can: usize,
    pub khop_fanout: usize,
    /// History visible to the sampler ends strictly before this time.
    pub horizon: f64,
    /// `t_new` is drawn uniformly from `[0, t_max]`.
    pub t_max: f64,
}

/// Up to `n_can` candidates per source, in source order.
pub fn sample_candidates<R: Rng>(sources: &[NodeId], req: &CandidateRequest, index: &NeighborIndex, store: &EventStore, random_pool: &[NodeId], rng: &mut R) -> Vec<CandidateEdge> {
    let mut out = Vec::new();
    for (slot, &u) in sources.iter().enumerate() {
        let picks: Vec<(NodeId, FeatureSource, Option<f64>)> = match req.strategy {
            Strategy::OneHop => {
                let hist = index.all_before(u, req.horizon);
                let mut idx = sample(rng, hist.len(), req.n_can.min(hist.len())).into_vec();
                idx.sort_unstable();
                idx.into_iter()
                    .map(|i| {
                        let e = hist[i];
                        (e.neighbor, FeatureSource::Event(e.event), Some(e.timestamp))
                    })
                    .collect()
            }
            Strategy::ThirdHop => {
                let fanouts = [req.khop_fanout; 3];
                let reached = index.khop_sample(u, req.horizon, &fanouts, rng);
                let mut idx = sample(rng, reached.len(), req.n_can.min(reached.len())).into_vec();
                idx.sort_unstable();
                idx.into_iter()
                    .map(|i| {
                        let (v, e) = reached[i];
                        (v, FeatureSource::Event(e), Some(store.event(e).timestamp))
                    })
                    .collect()
            }
            Strategy::Random => {
                let eligible = random_pool.iter().filter(|&&v| v != u).count();
                if eligible == 0 {
                    Vec::new()
                } else {
                    (0..req.n_can)
                        .map(|_| loop {
                            let v = random_pool[rng.gen_range(0..random_pool.len())];
                            if v != u {
                                break (v, FeatureSource::Zero, None);
                            }
                        })
                        .collect()
                }
            }
        };
        for (dst, feature, t_sample) in picks {
            let t_new = rng.gen_range(0.0..=req.t_max.max(0.0));
            out.push(CandidateEdge {
                src: u,
                dst,
                source_slot: slot,
                t_new,
                t_sample: t_sample.unwrap_or(t_new),
                strategy: req.strategy,
                feature,
            });
        }
    }
    out
}

use numcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type EventId = usize;

/// One timestamped interaction `(src, dst, t, e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub timestamp: f64,
    pub edge_feature_id: usize,
    /// Carried through from the source file; unused by the models.
    pub label: i64,
}

/// Chronologically ordered interactions plus their feature tables.
///
/// Events are sorted by timestamp with ties kept in ingestion order, so an
/// [`EventId`] is also the event's chronological rank.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStore {
    num_nodes: usize,
    events: Vec<TemporalEvent>,
    node_features: Tensor<f32>,
    edge_features: Tensor<f32>,
    /// Number of source-side nodes when the graph is bipartite; destination
    /// ids start at this offset.
    user_count: Option<usize>,
}

impl EventStore {
    pub fn new(
        num_nodes: usize,
        mut events: Vec<TemporalEvent>,
        node_features: Tensor<f32>,
        edge_features: Tensor<f32>,
        user_count: Option<usize>,
    ) -> Result<Self> {
        if node_features.rows() != num_nodes {
            return Err(Error::InvalidStore(format!(
                "{} node feature rows for {num_nodes} nodes",
                node_features.rows()
            )));
        }
        if !node_features.is_finite() || !edge_features.is_finite() {
            return Err(Error::InvalidStore("non-finite feature value".into()));
        }
        for (i, e) in events.iter().enumerate() {
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(Error::InvalidStore(format!("event {i} references node outside 0..{num_nodes}")));
            }
            if !e.timestamp.is_finite() || e.timestamp < 0.0 {
                return Err(Error::InvalidStore(format!("event {i} has timestamp {}", e.timestamp)));
            }
            if e.edge_feature_id >= edge_features.rows() {
                return Err(Error::InvalidStore(format!(
                    "event {i} references edge feature row {}",
                    e.edge_feature_id
                )));
            }
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(Self {
            num_nodes,
            events,
            node_features,
            edge_features,
            user_count,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[TemporalEvent] {
        &self.events
    }

    pub fn event(&self, id: EventId) -> &TemporalEvent {
        &self.events[id]
    }

    pub fn node_features(&self) -> &Tensor<f32> {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Tensor<f32> {
        &self.edge_features
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    pub fn user_count(&self) -> Option<usize> {
        self.user_count
    }

    pub fn edge_feature(&self, id: EventId) -> &[f32] {
        self.edge_features.row(self.events[id].edge_feature_id)
    }

    /// Distinct destination nodes, ascending.
    pub fn destination_pool(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.num_nodes];
        for e in &self.events {
            seen[e.dst] = true;
        }
        (0..self.num_nodes).filter(|&n| seen[n]).collect()
    }

    /// A copy restricted to the events `keep` accepts, ids renumbered.
    pub fn filter_events(&self, mut keep: impl FnMut(EventId, &TemporalEvent) -> bool) -> Self {
        let events = self
            .events
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| *e)
            .collect();
        Self {
            events,
            ..self.clone()
        }
    }

    /// Replaces the feature rows used by the given events; for perturbation tests.
    pub fn with_edge_features(&self, edge_features: Tensor<f32>) -> Result<Self> {
        Self::new(
            self.num_nodes,
            self.events.clone(),
            self.node_features.clone(),
            edge_features,
            self.user_count,
        )
    }

    /// Appends events (sorted in after existing ones on ties).
    pub fn with_extra_events(&self, extra: &[TemporalEvent]) -> Result<Self> {
        let mut events = self.events.clone();
        events.extend_from_slice(extra);
        Self::new(
            self.num_nodes,
            events,
            self.node_features.clone(),
            self.edge_features.clone(),
            self.user_count,
        )
    }
}

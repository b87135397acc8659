//! Continuous-time dynamic graph data: events, splits, neighbor queries,
//! synthetic generation and sparsification.

pub mod index;
pub mod io;
pub mod negatives;
pub mod split;
pub mod store;
pub mod synth;

pub use index::{NeighborEntry, NeighborIndex};
pub use io::{load_events, read_events, save_events, write_events, LoadOptions};
pub use negatives::sample_negatives;
pub use split::{chronological_split, sparsify, Setting, SplitSpec};
pub use store::{EventId, EventStore, NodeId, TemporalEvent};
pub use synth::{cross_community_fraction, synth_generate, SynthConfig};

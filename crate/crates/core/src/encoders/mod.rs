//! Time encodings, temporal views and the attention reference encoder.

pub mod tgat;
pub mod time;
pub mod view;

pub use tgat::{EncoderConfig, NeighborSampling, RhoInjection, TgatModel};
pub use time::TimeEncoding;
pub use view::{AddedEdge, EdgeSource, GraphView, ViewEntry};

//! The jodie interaction CSV format.
//!
//! ```text
//! user_id,item_id,timestamp,state_label,comma_separated_list_of_features
//! 0,0,0.0,0,0.1,-0.2,...
//! ```
//!
//! The header line is ignored. Users keep their ids; items are shifted by
//! the user count so both sides share one contiguous node id space.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use numcore::Tensor;

use super::store::{EventStore, TemporalEvent};
use crate::error::{Error, Result};

pub const JODIE_HEADER: &str = "user_id,item_id,timestamp,state_label,comma_separated_list_of_features";

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Width of the all-zero node feature table; defaults to the edge
    /// feature width.
    pub node_feature_dim: Option<usize>,
}

pub fn load_events(path: &Path, opts: LoadOptions) -> Result<EventStore> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_events(BufReader::new(file), opts)
}

struct Row {
    user: usize,
    item: usize,
    timestamp: f64,
    label: i64,
    features: Vec<f32>,
}

pub fn read_events<R: Read>(reader: R, opts: LoadOptions) -> Result<EventStore> {
    let mut rows: Vec<Row> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let row_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            row: row_no,
            msg: e.to_string(),
        })?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                row: row_no,
                msg: format!("expected at least 4 fields, found {}", fields.len()),
            });
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Parse {
                    row: row_no,
                    msg: format!("ragged row: {} fields, expected {w}", fields.len()),
                })
            }
            _ => {}
        }
        let bad = |what: &str, v: &str| Error::Parse {
            row: row_no,
            msg: format!("non-numeric {what} `{v}`"),
        };
        let user = fields[0].parse::<usize>().map_err(|_| bad("user_id", fields[0]))?;
        let item = fields[1].parse::<usize>().map_err(|_| bad("item_id", fields[1]))?;
        let timestamp = fields[2].parse::<f64>().map_err(|_| bad("timestamp", fields[2]))?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::Parse {
                row: row_no,
                msg: format!("timestamp {timestamp} must be finite and non-negative"),
            });
        }
        let label = fields[3]
            .parse::<f64>()
            .map_err(|_| bad("state_label", fields[3]))? as i64;
        let features = fields[4..]
            .iter()
            .map(|f| {
                f.parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad("feature", f))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            user,
            item,
            timestamp,
            label,
            features,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyStore);
    }
    rows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let users = rows.iter().map(|r| r.user).max().unwrap_or(0) + 1;
    let items = rows.iter().map(|r| r.item).max().unwrap_or(0) + 1;
    let edge_dim = rows[0].features.len();
    let mut feat = Vec::with_capacity(rows.len() * edge_dim);
    let events = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            feat.extend_from_slice(&r.features);
            TemporalEvent {
                src: r.user,
                dst: users + r.item,
                timestamp: r.timestamp,
                edge_feature_id: i,
                label: r.label,
            }
        })
        .collect();
    let num_nodes = users + items;
    let node_dim = opts.node_feature_dim.unwrap_or(edge_dim);
    EventStore::new(
        num_nodes,
        events,
        Tensor::zeros(num_nodes, node_dim),
        Tensor::new(rows.len(), edge_dim, feat)?,
        Some(users),
    )
}

/// Writes `store` in the jodie format; destination ids are written relative
/// to the user count when the store is bipartite.
pub fn write_events<W: Write>(store: &EventStore, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{JODIE_HEADER}")?;
    let offset = store.user_count().unwrap_or(0);
    for (id, e) in store.events().iter().enumerate() {
        write!(w, "{},{},{},{}", e.src, e.dst - offset, e.timestamp, e.label)?;
        for v in store.edge_feature(id) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn save_events(store: &EventStore, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_events(store, file).map_err(io_err)
}

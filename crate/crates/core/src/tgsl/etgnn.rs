use std::collections::{BTreeSet, HashMap};

use numcore::{Bound, Real, Tape, Tensor, Var};

use super::TgslModel;
use crate::error::Result;
use crate::tgraph::{EventId, EventStore, NeighborIndex, NodeId};

/// Final-layer edge embeddings for a set of events.
#[derive(Debug, Clone)]
pub struct EdgeEmbeddings {
    /// `events.len() x edge_dim`, row `i` belongs to `events[i]`.
    pub var: Var,
    pub events: Vec<EventId>,
    rows: HashMap<EventId, usize>,
}

impl EdgeEmbeddings {
    /// Row `i` of `var` belongs to `events[i]`.
    pub fn new(var: Var, events: Vec<EventId>) -> Self {
        let rows = positions(&events);
        Self { var, events, rows }
    }

    pub fn row(&self, event: EventId) -> Option<usize> {
        self.rows.get(&event).copied()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn positions(ids: &[usize]) -> HashMap<usize, usize> {
    ids.iter().enumerate().map(|(i, &v)| (v, i)).collect()
}

impl TgslModel {
    /// Edge-centric mean message passing over the events of `index` strictly
    /// before `horizon`, evaluated exactly on the dependency closure of
    /// `required`: layer `l` needs layer `l-1` states of the endpoints and,
    /// for each node update, of every visible incident edge.
    pub fn etgnn_forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, store: &EventStore, index: &NeighborIndex, horizon: f64, required: &[EventId]) -> Result<EdgeEmbeddings> {
        let big_l = self.cfg.layers;
        let req: Vec<EventId> = required.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if req.is_empty() {
            let var = tape.constant(Tensor::zeros(0, self.cfg.edge_dim));
            return Ok(EdgeEmbeddings {
                var,
                events: req,
                rows: HashMap::new(),
            });
        }

        // edge_sets[l] / node_sets[l]: states needed at the output of layer l
        let mut edge_sets: Vec<Vec<EventId>> = vec![Vec::new(); big_l + 1];
        let mut node_sets: Vec<Vec<NodeId>> = vec![Vec::new(); big_l + 1];
        edge_sets[big_l] = req.clone();
        for l in (1..=big_l).rev() {
            let mut nodes: BTreeSet<NodeId> = node_sets[l].iter().copied().collect();
            let mut edges: BTreeSet<EventId> = edge_sets[l].iter().copied().collect();
            for &e in &edge_sets[l] {
                let ev = store.event(e);
                nodes.insert(ev.src);
                nodes.insert(ev.dst);
            }
            for &v in &node_sets[l] {
                for entry in index.all_before(v, horizon) {
                    nodes.insert(entry.neighbor);
                    edges.insert(entry.event);
                }
            }
            node_sets[l - 1] = nodes.into_iter().collect();
            edge_sets[l - 1] = edges.into_iter().collect();
        }

        let nf = store.node_features();
        let mut h0 = Tensor::zeros(node_sets[0].len(), nf.cols());
        for (i, &v) in node_sets[0].iter().enumerate() {
            for (o, &x) in h0.row_mut(i).iter_mut().zip(nf.row(v)) {
                *o = T::of(f64::from(x));
            }
        }
        let mut f0 = Tensor::zeros(edge_sets[0].len(), store.edge_dim());
        for (i, &e) in edge_sets[0].iter().enumerate() {
            for (o, &x) in f0.row_mut(i).iter_mut().zip(store.edge_feature(e)) {
                *o = T::of(f64::from(x));
            }
        }
        let mut h = tape.constant(h0);
        let mut f = tape.constant(f0);

        for l in 1..=big_l {
            let layer = self.etgnn[l - 1];
            let h_pos = positions(&node_sets[l - 1]);
            let f_pos = positions(&edge_sets[l - 1]);

            let new_h = match layer.wh {
                Some(wh) if !node_sets[l].is_empty() => {
                    let mut seg = Vec::new();
                    let mut nb_rows = Vec::new();
                    let mut e_rows = Vec::new();
                    let mut te_rows = Vec::new();
                    let mut inv_deg = Vec::with_capacity(node_sets[l].len());
                    for (i, &v) in node_sets[l].iter().enumerate() {
                        let inc = index.all_before(v, horizon);
                        for entry in inc {
                            seg.push(i);
                            nb_rows.push(h_pos[&entry.neighbor]);
                            e_rows.push(f_pos[&entry.event]);
                            te_rows.push(entry.timestamp);
                        }
                        inv_deg.push(if inc.is_empty() { 0.0 } else { 1.0 / inc.len() as f64 });
                    }
                    let n = node_sets[l].len();
                    let self_rows: Vec<usize> = node_sets[l].iter().map(|v| h_pos[v]).collect();
                    let h_self = tape.gather_rows(h, &self_rows)?;
                    let msg_dim = tape.shape(h)[1] + tape.shape(f)[1] + self.time.d;
                    let msg = if seg.is_empty() {
                        tape.constant(Tensor::zeros(n, msg_dim))
                    } else {
                        let hn = tape.gather_rows(h, &nb_rows)?;
                        let fe = tape.gather_rows(f, &e_rows)?;
                        let te = self.time_rows(tape, &te_rows);
                        let parts = tape.concat_cols(&[hn, fe, te])?;
                        let summed = tape.segment_sum(parts, &seg, n)?;
                        let scale = tape.constant(Tensor::col_vector(inv_deg.iter().map(|&x| T::of(x)).collect()));
                        tape.mul_col(summed, scale)?
                    };
                    let x = tape.concat_cols(&[h_self, msg])?;
                    let x = tape.matmul(x, p[wh])?;
                    Some(tape.relu(x)?)
                }
                _ => None,
            };

            let mut f_rows = Vec::with_capacity(edge_sets[l].len());
            let mut src_rows = Vec::with_capacity(edge_sets[l].len());
            let mut dst_rows = Vec::with_capacity(edge_sets[l].len());
            let mut times = Vec::with_capacity(edge_sets[l].len());
            for &e in &edge_sets[l] {
                let ev = store.event(e);
                f_rows.push(f_pos[&e]);
                src_rows.push(h_pos[&ev.src]);
                dst_rows.push(h_pos[&ev.dst]);
                times.push(ev.timestamp);
            }
            let fe = tape.gather_rows(f, &f_rows)?;
            let hs = tape.gather_rows(h, &src_rows)?;
            let hd = tape.gather_rows(h, &dst_rows)?;
            let te = self.time_rows(tape, &times);
            let x = tape.concat_cols(&[fe, hs, hd, te])?;
            let x = tape.matmul(x, p[layer.wf])?;
            f = tape.relu(x)?;
            if let Some(nh) = new_h {
                h = nh;
            }
        }
        Ok(EdgeEmbeddings {
            var: f,
            rows: positions(&req),
            events: req,
        })
    }

    fn time_rows<T: Real>(&self, tape: &mut Tape<T>, times: &[f64]) -> Var {
        let mut te = Tensor::zeros(times.len(), self.time.d);
        for (i, &t) in times.iter().enumerate() {
            for (o, x) in te.row_mut(i).iter_mut().zip(self.time.encode(t)) {
                *o = T::of(x);
            }
        }
        tape.constant(te)
    }
}

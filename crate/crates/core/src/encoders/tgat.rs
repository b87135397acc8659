//! Temporal graph attention reference encoder with a pairwise link head.

use numcore::{Bound, ParamId, ParamSet, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::time::TimeEncoding;
use super::view::{EdgeSource, GraphView};
use crate::error::{Error, Result};
use crate::tgraph::NodeId;

/// How an added edge's weight enters attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoInjection {
    /// Scales the neighbor's value vector.
    Value,
    /// Adds `ln(rho)` to the attention logit.
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Most recent neighbors attended per query.
    pub n_nb: usize,
    pub time_dim: usize,
    pub rho_injection: RhoInjection,
    #[serde(default)]
    pub sampling: NeighborSampling,
}

/// How the attended neighbors are chosen from a node's visible history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborSampling {
    #[default]
    MostRecent,
    /// Seeded uniform draw without replacement.
    Uniform,
}

impl EncoderConfig {
    pub fn new(node_dim: usize, edge_dim: usize) -> Self {
        Self {
            node_dim,
            edge_dim,
            hidden: 100,
            heads: 2,
            layers: 2,
            n_nb: 20,
            time_dim: 100,
            rho_injection: RhoInjection::Value,
            sampling: NeighborSampling::MostRecent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.layers == 0 {
            return bad("encoder needs at least one layer");
        }
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return bad("encoder hidden dim must be a positive multiple of the head count");
        }
        if self.node_dim == 0 || self.edge_dim == 0 || self.time_dim == 0 {
            return bad("encoder feature and time dims must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct HeadIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Parameter layout plus forward passes; parameter values live in a
/// separate [`ParamSet`] so the query encoder, the momentum key encoder and
/// 64-bit verification copies share one model.
#[derive(Debug, Clone)]
pub struct TgatModel {
    cfg: EncoderConfig,
    time: TimeEncoding,
    layers: Vec<LayerIds>,
    head: HeadIds,
}

impl TgatModel {
    pub fn init<T: Real, R: Rng>(cfg: EncoderConfig, rng: &mut R) -> Result<(Self, ParamSet<T>)> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let (h, td, ed) = (cfg.hidden, cfg.time_dim, cfg.edge_dim);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { cfg.node_dim } else { h };
            let kv_in = d_in + ed + td;
            layers.push(LayerIds {
                wq: ps.uniform(format!("tgat.{l}.wq"), d_in + td, h, rng),
                wk: ps.uniform(format!("tgat.{l}.wk"), kv_in, h, rng),
                wv: ps.uniform(format!("tgat.{l}.wv"), kv_in, h, rng),
                w1: ps.uniform(format!("tgat.{l}.merge.w1"), h + d_in, h, rng),
                b1: ps.uniform_bias(format!("tgat.{l}.merge.b1"), h + d_in, h, rng),
                w2: ps.uniform(format!("tgat.{l}.merge.w2"), h, h, rng),
                b2: ps.uniform_bias(format!("tgat.{l}.merge.b2"), h, h, rng),
            });
        }
        let head = HeadIds {
            w1: ps.uniform("head.w1", 2 * h, h, rng),
            b1: ps.uniform_bias("head.b1", 2 * h, h, rng),
            w2: ps.uniform("head.w2", h, 1, rng),
            b2: ps.uniform_bias("head.b2", h, 1, rng),
        };
        let time = TimeEncoding::with_dim(cfg.time_dim);
        Ok((
            Self {
                cfg,
                time,
                layers,
                head,
            },
            ps,
        ))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn time_encoding(&self) -> &TimeEncoding {
        &self.time
    }

    /// Layer-L embeddings (`queries.len() x hidden`) of each `(node, t)`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, view: &GraphView<'_>, queries: &[(NodeId, f64)]) -> Result<Var> {
        let n = view.store().num_nodes();
        if let Some(&(bad, _)) = queries.iter().find(|q| q.0 >= n) {
            return Err(Error::InvalidNode { node: bad, nodes: n });
        }
        self.embed(tape, p, view, self.cfg.layers, queries)
    }

    fn embed<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, view: &GraphView<'_>, level: usize, queries: &[(NodeId, f64)]) -> Result<Var> {
        if level == 0 {
            let feats = view.store().node_features();
            let mut t = Tensor::zeros(queries.len(), feats.cols());
            for (i, &(v, _)) in queries.iter().enumerate() {
                for (o, &x) in t.row_mut(i).iter_mut().zip(feats.row(v)) {
                    *o = T::of(f64::from(x));
                }
            }
            return Ok(tape.constant(t));
        }
        let ids = self.layers[level - 1];
        let (nq, hidden, heads) = (queries.len(), self.cfg.hidden, self.cfg.heads);

        let mut seg = Vec::new();
        let mut entries = Vec::new();
        for (i, &(v, t)) in queries.iter().enumerate() {
            let picked = match self.cfg.sampling {
                NeighborSampling::MostRecent => view.neighbors(v, t, self.cfg.n_nb),
                NeighborSampling::Uniform => view.sample_neighbors(v, t, self.cfg.n_nb),
            };
            for e in picked {
                seg.push(i);
                entries.push((e, t));
            }
        }
        let ne = entries.len();
        let mut lower: Vec<(NodeId, f64)> = queries.to_vec();
        lower.extend(entries.iter().map(|(e, _)| (e.neighbor, e.timestamp)));
        let h_all = self.embed(tape, p, view, level - 1, &lower)?;
        let h_self = tape.slice_rows(h_all, 0, nq)?;

        let te0 = tape.constant(Tensor::ones(nq, self.cfg.time_dim));
        let q_in = tape.concat_cols(&[h_self, te0])?;
        let w_q = p[ids.wq];
        let q = tape.matmul(q_in, w_q)?;

        let attn = if ne == 0 {
            tape.constant(Tensor::zeros(nq, hidden))
        } else {
            let h_nb = tape.slice_rows(h_all, nq, ne)?;
            let (edge_feat, weight) = self.edge_inputs(tape, view, &entries)?;
            let mut dt = Tensor::zeros(ne, self.cfg.time_dim);
            for (i, (e, t)) in entries.iter().enumerate() {
                for (o, x) in dt.row_mut(i).iter_mut().zip(self.time.encode(t - e.timestamp)) {
                    *o = T::of(x);
                }
            }
            let dt = tape.constant(dt);
            let kv_in = tape.concat_cols(&[h_nb, edge_feat, dt])?;
            let k = tape.matmul(kv_in, p[ids.wk])?;
            let mut v = tape.matmul(kv_in, p[ids.wv])?;
            let mut log_w = None;
            if let Some(w) = weight {
                match self.cfg.rho_injection {
                    RhoInjection::Value => v = tape.mul_col(v, w)?,
                    RhoInjection::Logit => log_w = Some(tape.log(w)?),
                }
            }
            let dh = hidden / heads;
            let inv_sqrt = T::of(1.0 / (dh as f64).sqrt());
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice_cols(q, hd * dh, dh)?;
                let qh = tape.gather_rows(qh, &seg)?;
                let kh = tape.slice_cols(k, hd * dh, dh)?;
                let vh = tape.slice_cols(v, hd * dh, dh)?;
                let prod = tape.mul(qh, kh)?;
                let s = tape.sum_cols(prod)?;
                let mut s = tape.scale(s, inv_sqrt)?;
                if let Some(lw) = log_w {
                    s = tape.add(s, lw)?;
                }
                let a = tape.segment_softmax(s, &seg, nq)?;
                let weighted = tape.mul_col(vh, a)?;
                outs.push(tape.segment_sum(weighted, &seg, nq)?);
            }
            tape.concat_cols(&outs)?
        };
        let merged = tape.concat_cols(&[attn, h_self])?;
        let x = tape.linear(merged, p[ids.w1], p[ids.b1])?;
        let x = tape.relu(x)?;
        Ok(tape.linear(x, p[ids.w2], p[ids.b2])?)
    }

    /// Edge feature rows and, when any added edge is present, the weight
    /// column for `entries`.
    fn edge_inputs<T: Real>(&self, tape: &mut Tape<T>, view: &GraphView<'_>, entries: &[(super::ViewEntry, f64)]) -> Result<(Var, Option<Var>)> {
        let store = view.store();
        let ed = store.edge_dim();
        if ed != self.cfg.edge_dim {
            return Err(Error::Config(format!(
                "store edge dim {ed} differs from encoder edge dim {}",
                self.cfg.edge_dim
            )));
        }
        let base: Vec<usize> = entries
            .iter()
            .filter_map(|(e, _)| match e.source {
                EdgeSource::Event(id) => Some(id),
                EdgeSource::Added(_) => None,
            })
            .collect();
        let mut data = Vec::with_capacity(base.len() * ed);
        for &id in &base {
            data.extend(store.edge_feature(id).iter().map(|&x| T::of(f64::from(x))));
        }
        let base_feat = tape.constant(Tensor::new(base.len(), ed, data)?);
        let Some((added_feat, added_w)) = view.added_vars() else {
            return Ok((base_feat, None));
        };
        if base.len() == entries.len() {
            return Ok((base_feat, None));
        }
        let mut next_base = 0;
        let idx: Vec<usize> = entries
            .iter()
            .map(|(e, _)| match e.source {
                EdgeSource::Event(_) => {
                    next_base += 1;
                    next_base - 1
                }
                EdgeSource::Added(slot) => base.len() + slot,
            })
            .collect();
        let all_feat = tape.concat_rows(&[base_feat, added_feat])?;
        let feat = tape.gather_rows(all_feat, &idx)?;
        let ones = tape.constant(Tensor::ones(base.len(), 1));
        let all_w = tape.concat_rows(&[ones, added_w])?;
        let w = tape.gather_rows(all_w, &idx)?;
        Ok((feat, Some(w)))
    }

    /// Link logits for row-aligned embedding pairs, `n x 1`.
    pub fn link_logit<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, u: Var, v: Var) -> Result<Var> {
        let x = tape.concat_cols(&[u, v])?;
        let x = tape.linear(x, p[self.head.w1], p[self.head.b1])?;
        let x = tape.relu(x)?;
        Ok(tape.linear(x, p[self.head.w2], p[self.head.b2])?)
    }

    /// Link probabilities; both sides must be embedded at the same times.
    pub fn link_score<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, u: (Var, &[f64]), v: (Var, &[f64])) -> Result<Var> {
        if let Some((a, b)) = u.1.iter().zip(v.1).find(|(a, b)| a != b) {
            return Err(Error::MismatchedTime(*a, *b));
        }
        let logit = self.link_logit(tape, p, u.0, v.0)?;
        Ok(tape.sigmoid(logit)?)
    }
}

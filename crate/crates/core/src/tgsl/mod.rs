//! Learned edge addition: edge embeddings, context prediction, candidate
//! construction and differentiable top-K selection into an augmented view.

mod augment;
mod candidates;
mod context;
mod etgnn;
mod select;

use std::str::FromStr;

use numcore::{Bound, ParamId, ParamSet, Real, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use augment::{build_augmented_view, AugmentedView};
pub use candidates::{sample_candidates, CandidateEdge, CandidateRequest, FeatureSource};
pub use etgnn::EdgeEmbeddings;
pub use select::{gumbel_topk_select, logistic_noise, relaxed_weight, time_map, top_k_per_group, NoiseMode, Selection};

use crate::encoders::TimeEncoding;
use crate::error::{Error, Result};
use crate::tgraph::{EventStore, NeighborIndex, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    OneHop,
    ThirdHop,
    Random,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-hop" => Ok(Self::OneHop),
            "third-hop" => Ok(Self::ThirdHop),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected one-hop, third-hop or random)"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OneHop => "one-hop",
            Self::ThirdHop => "third-hop",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgslConfig {
    pub node_dim: usize,
    /// Raw edge feature width; also the width of the final edge embeddings,
    /// the context vectors and the time-context map.
    pub edge_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub n_rnn: usize,
    pub n_can: usize,
    pub k: usize,
    pub tau: f64,
    pub strategy: Strategy,
    /// Per-hop fanout of the third-hop walk.
    pub khop_fanout: usize,
}

impl TgslConfig {
    pub fn new(node_dim: usize, edge_dim: usize) -> Self {
        Self {
            node_dim,
            edge_dim,
            layers: 2,
            hidden: 100,
            n_rnn: 20,
            n_can: 30,
            k: 8,
            tau: 1.0,
            strategy: Strategy::OneHop,
            khop_fanout: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 || self.edge_dim == 0 || self.node_dim == 0 {
            return bad("structure learner dims and layer count must be positive".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("temperature {} must be positive", self.tau));
        }
        if self.khop_fanout == 0 {
            return bad("khop_fanout must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct EtgnnLayer {
    /// Absent for the last layer: its node update feeds nothing.
    wh: Option<ParamId>,
    wf: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Lstm {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

/// Parameter layout of the structure learner; values live in a separate
/// [`ParamSet`].
#[derive(Debug, Clone)]
pub struct TgslModel {
    cfg: TgslConfig,
    time: TimeEncoding,
    etgnn: Vec<EtgnnLayer>,
    lstm: Lstm,
}

/// Graph state the structure learner reads for one batch.
#[derive(Debug, Clone, Copy)]
pub struct TgslContext<'a> {
    pub store: &'a EventStore,
    pub index: &'a NeighborIndex,
    /// Only events strictly before this time are visible.
    pub horizon: f64,
    /// Largest training timestamp; context vectors are anchored here.
    pub t_max: f64,
    /// Destination pool of the random strategy.
    pub random_pool: &'a [NodeId],
}

impl TgslModel {
    pub fn init<T: Real, R: Rng>(cfg: TgslConfig, rng: &mut R) -> Result<(Self, ParamSet<T>)> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let time = TimeEncoding::with_dim(cfg.edge_dim);
        let td = time.d;
        let mut etgnn = Vec::with_capacity(cfg.layers);
        for l in 1..=cfg.layers {
            let (dh, df) = if l == 1 {
                (cfg.node_dim, cfg.edge_dim)
            } else {
                (cfg.hidden, cfg.hidden)
            };
            let out_f = if l == cfg.layers { cfg.edge_dim } else { cfg.hidden };
            let wh = (l < cfg.layers).then(|| {
                let fan_in = dh + dh + df + td;
                ps.uniform(format!("etgnn.{l}.wh"), fan_in, cfg.hidden, rng)
            });
            let wf = ps.uniform(format!("etgnn.{l}.wf"), df + 2 * dh + td, out_f, rng);
            etgnn.push(EtgnnLayer { wh, wf });
        }
        let d = cfg.edge_dim;
        let lstm = Lstm {
            wx: ps.uniform("lstm.wx", d, 4 * d, rng),
            wh: ps.uniform("lstm.wh", d, 4 * d, rng),
            b: ps.uniform_bias("lstm.b", d, 4 * d, rng),
        };
        Ok((Self { cfg, time, etgnn, lstm }, ps))
    }

    pub fn config(&self) -> &TgslConfig {
        &self.cfg
    }

    pub fn time_encoding(&self) -> &TimeEncoding {
        &self.time
    }

    /// Builds the augmented view for one batch: candidates for every source
    /// node, scored against its context vector and reduced to the top K.
    pub fn augment<T: Real, R: Rng>(&self, tape: &mut Tape<T>, p: &Bound, ctx: &TgslContext<'_>, sources: &[NodeId], mode: NoiseMode, rng: &mut R) -> Result<AugmentedView> {
        if ctx.store.edge_dim() != self.cfg.edge_dim {
            return Err(Error::Config(format!(
                "store edge dim {} differs from structure learner edge dim {}",
                ctx.store.edge_dim(),
                self.cfg.edge_dim
            )));
        }
        if self.cfg.k == 0 || sources.is_empty() {
            return Ok(AugmentedView::empty());
        }
        let req = CandidateRequest {
            strategy: self.cfg.strategy,
            n_can: self.cfg.n_can,
            khop_fanout: self.cfg.khop_fanout,
            horizon: ctx.horizon,
            t_max: ctx.t_max,
        };
        let cands = sample_candidates(sources, &req, ctx.index, ctx.store, ctx.random_pool, rng);
        if cands.is_empty() {
            return Ok(AugmentedView::empty());
        }
        let seqs: Vec<Vec<usize>> = sources
            .iter()
            .map(|&u| {
                ctx.index
                    .neighbors_before(u, ctx.horizon, self.cfg.n_rnn)
                    .iter()
                    .map(|e| e.event)
                    .collect()
            })
            .collect();
        let mut required: Vec<usize> = seqs.iter().flatten().copied().collect();
        required.extend(cands.iter().filter_map(|c| match c.feature {
            FeatureSource::Event(e) => Some(e),
            FeatureSource::Zero => None,
        }));
        let emb = self.etgnn_forward(tape, p, ctx.store, ctx.index, ctx.horizon, &required)?;
        let z = self.context_predict(tape, p, &emb, &seqs)?;

        let zero = tape.constant(Tensor::zeros(1, self.cfg.edge_dim));
        let table = tape.concat_rows(&[emb.var, zero])?;
        let f_rows: Vec<usize> = cands
            .iter()
            .map(|c| match c.feature {
                FeatureSource::Event(e) => emb.row(e).expect("required edge embedded"),
                FeatureSource::Zero => emb.len(),
            })
            .collect();
        let f = tape.gather_rows(table, &f_rows)?;
        let z_rows: Vec<usize> = cands.iter().map(|c| c.source_slot).collect();
        let z = tape.gather_rows(z, &z_rows)?;
        let (z_hat, f_hat) = time_map(tape, z, f, &cands, ctx.t_max, &self.time)?;
        let selection = gumbel_topk_select(tape, z_hat, f_hat, &cands, self.cfg.k, self.cfg.tau, mode, rng)?;
        build_augmented_view(tape, &cands, &selection, f_hat)
    }
}

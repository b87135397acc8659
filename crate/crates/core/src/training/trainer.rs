use std::collections::BTreeSet;
use std::ops::Range;

use numcore::{AdamState, Bound, ParamSet, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelSpec, TrainConfig};
use super::early_stop::EarlyStopState;
use super::loss::{bce_link_loss, info_nce_loss};
use super::metrics::EvalMetrics;
use super::moco::MoCoState;
use crate::encoders::{GraphView, TgatModel};
use crate::error::{Error, Result};
use crate::seeds::{self, tag};
use crate::tgraph::{sample_negatives, EventId, EventStore, NeighborIndex, NodeId, Setting, SplitSpec};
use crate::tgsl::{NoiseMode, TgslContext, TgslModel};

/// Model layouts; parameter values are held separately.
#[derive(Debug, Clone)]
pub struct Models {
    pub encoder: TgatModel,
    pub tgsl: Option<TgslModel>,
}

impl Models {
    /// Encoder and structure-learner parameters come from independent seed
    /// streams, so the encoder initialization does not depend on whether
    /// the structure learner is present.
    pub fn init<T: Real>(spec: &ModelSpec, seed: u64) -> Result<(Self, ParamSet<T>, Option<ParamSet<T>>)> {
        spec.validate()?;
        let (encoder, ep) = TgatModel::init(spec.encoder.clone(), &mut seeds::stream(seed, &[tag::INIT_ENCODER]))?;
        let (tgsl, tp) = match &spec.tgsl {
            Some(cfg) => {
                let (m, p) = TgslModel::init(cfg.clone(), &mut seeds::stream(seed, &[tag::INIT_TGSL]))?;
                (Some(m), Some(p))
            }
            None => (None, None),
        };
        Ok((Self { encoder, tgsl }, ep, tp))
    }
}

/// Trained parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub encoder: ParamSet<f32>,
    pub tgsl: Option<ParamSet<f32>>,
}

/// Per-store indices and node pools shared by training and evaluation.
#[derive(Debug)]
pub struct Dataset<'a> {
    pub store: &'a EventStore,
    pub split: &'a SplitSpec,
    /// Usable training events only.
    pub train_index: NeighborIndex,
    pub full_index: NeighborIndex,
    pub train_ids: Vec<EventId>,
    /// Random-strategy candidates are drawn from here.
    pub train_nodes: Vec<NodeId>,
    /// Training negatives.
    pub train_dsts: Vec<NodeId>,
    /// Evaluation negatives.
    pub eval_pool: Vec<NodeId>,
}

impl<'a> Dataset<'a> {
    pub fn new(store: &'a EventStore, split: &'a SplitSpec) -> Result<Self> {
        let train_ids: Vec<EventId> = split.usable_train_ids(store).collect();
        if train_ids.is_empty() {
            return Err(Error::EmptyEvalSet("no usable training events".into()));
        }
        let train_dsts: Vec<NodeId> = train_ids.iter().map(|&i| store.event(i).dst).collect::<BTreeSet<_>>().into_iter().collect();
        Ok(Self {
            store,
            split,
            train_index: NeighborIndex::build_filtered(store, |id, e| split.is_usable_train(id, e)),
            full_index: NeighborIndex::build(store),
            train_nodes: split.train_nodes(store),
            train_dsts,
            eval_pool: store.destination_pool(),
            train_ids,
        })
    }
}

/// One chronological batch of positives with a negative destination each.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub store: &'a EventStore,
    pub index: &'a NeighborIndex,
    /// Earliest positive timestamp; nothing at or after it is visible.
    pub horizon: f64,
    pub t_max: f64,
    pub random_pool: &'a [NodeId],
    pub pos: Vec<(NodeId, NodeId, f64)>,
    pub neg: Vec<NodeId>,
    /// Seed of uniform neighbor sampling in this batch's views.
    pub sample_seed: u64,
}

impl<'a> Batch<'a> {
    pub fn new<R: Rng>(store: &'a EventStore, index: &'a NeighborIndex, ids: &[EventId], neg_pool: &[NodeId], t_max: f64, random_pool: &'a [NodeId], rng: &mut R) -> Result<Self> {
        let pos: Vec<_> = ids
            .iter()
            .map(|&i| {
                let e = store.event(i);
                (e.src, e.dst, e.timestamp)
            })
            .collect();
        let dsts: Vec<NodeId> = pos.iter().map(|p| p.1).collect();
        let neg = sample_negatives(&dsts, neg_pool, rng)?;
        let horizon = pos.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
        Ok(Self {
            store,
            index,
            horizon,
            t_max,
            random_pool,
            pos,
            neg,
            sample_seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// Sources, destinations, then negatives, each at its positive's time.
    fn queries(&self) -> Vec<(NodeId, f64)> {
        let src = self.pos.iter().map(|&(s, _, t)| (s, t));
        let dst = self.pos.iter().map(|&(_, d, t)| (d, t));
        let neg = self.neg.iter().zip(&self.pos).map(|(&n, &(_, _, t))| (n, t));
        src.chain(dst).chain(neg).collect()
    }

    /// Every node the batch encodes, ascending.
    fn nodes(&self) -> Vec<NodeId> {
        let mut s: BTreeSet<NodeId> = self.pos.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        s.extend(self.neg.iter().copied());
        s.into_iter().collect()
    }

    fn base_view(&self) -> GraphView<'a> {
        GraphView::new(self.store, self.index, self.horizon).with_sample_seed(self.sample_seed)
    }

    fn tgsl_context(&self) -> TgslContext<'a> {
        TgslContext {
            store: self.store,
            index: self.index,
            horizon: self.horizon,
            t_max: self.t_max,
            random_pool: self.random_pool,
        }
    }
}

/// Separately addressable terms of the batch objective.
#[derive(Debug, Clone)]
pub struct LossParts<T: Real> {
    pub total: Var,
    pub task_ori: Var,
    pub task_aug: Option<Var>,
    pub cl: Option<Var>,
    /// Unit-length key vectors for the queue.
    pub keys: Option<Tensor<T>>,
    pub added_edges: usize,
}

/// Positive and negative link probabilities from stacked query embeddings.
fn link_probs<T: Real>(tape: &mut Tape<T>, enc: &TgatModel, p: &Bound, h: Var, times: &[f64]) -> Result<(Var, Var)> {
    let n = times.len();
    let u = tape.slice_rows(h, 0, n)?;
    let v = tape.slice_rows(h, n, n)?;
    let w = tape.slice_rows(h, 2 * n, n)?;
    let pos = enc.link_score(tape, p, (u, times), (v, times))?;
    let neg = enc.link_score(tape, p, (u, times), (w, times))?;
    Ok((pos, neg))
}

/// Builds the training objective for one batch: task loss on the original
/// view, and with a structure learner also the task loss on the augmented
/// view plus `alpha` times InfoNCE between augmented-view queries and
/// key-encoder embeddings of the original view.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<T: Real, R: Rng>(
    tape: &mut Tape<T>,
    models: &Models,
    enc: &Bound,
    tgsl: Option<&Bound>,
    key: Option<&Bound>,
    batch: &Batch<'_>,
    queue: &Tensor<T>,
    alpha: f64,
    tau_cl: f64,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<LossParts<T>> {
    let queries = batch.queries();
    let times: Vec<f64> = batch.pos.iter().map(|p| p.2).collect();
    let base = batch.base_view();
    let h_ori = models.encoder.encode(tape, enc, &base, &queries)?;
    let (pos, neg) = link_probs(tape, &models.encoder, enc, h_ori, &times)?;
    let task_ori = bce_link_loss(tape, pos, neg)?.loss;

    let (Some(model), Some(tb)) = (&models.tgsl, tgsl) else {
        return Ok(LossParts {
            total: task_ori,
            task_ori,
            task_aug: None,
            cl: None,
            keys: None,
            added_edges: 0,
        });
    };
    let aug = model.augment(tape, tb, &batch.tgsl_context(), &batch.nodes(), mode, rng)?;
    let view = aug.apply(batch.base_view());
    let h_aug = models.encoder.encode(tape, enc, &view, &queries)?;
    let (pos, neg) = link_probs(tape, &models.encoder, enc, h_aug, &times)?;
    let task_aug = bce_link_loss(tape, pos, neg)?.loss;
    let mut total = tape.add(task_ori, task_aug)?;

    let mut cl = None;
    let mut keys = None;
    if let Some(kb) = key {
        let anchors = &queries[..2 * batch.len()];
        let k = models.encoder.encode(tape, kb, &base, anchors)?;
        let q = tape.slice_rows(h_aug, 0, anchors.len())?;
        let term = info_nce_loss(tape, q, k, queue, tau_cl)?.loss;
        let weighted = tape.scale(term, T::of(alpha))?;
        total = tape.add(total, weighted)?;
        keys = Some(unit_rows(tape.value(k)));
        cl = Some(term);
    }
    Ok(LossParts {
        total,
        task_ori,
        task_aug: Some(task_aug),
        cl,
        keys,
        added_edges: aug.len(),
    })
}

fn unit_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::of(1e-12));
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Which graph inference runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inference {
    Augmented,
    /// Ignore the structure learner at inference time.
    Original,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub total: f64,
    pub task_ori: f64,
    pub task_aug: Option<f64>,
    pub cl: Option<f64>,
    pub batches: usize,
    /// Mean augmented edges per batch.
    pub added_edges: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: EpochLosses,
    pub val_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_ap: f64,
}

/// Owns parameters, optimizer and contrastive state for one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub spec: ModelSpec,
    pub cfg: TrainConfig,
    pub models: Models,
    pub encoder: ParamSet<f32>,
    pub tgsl: Option<ParamSet<f32>>,
    pub moco: Option<MoCoState<f32>>,
    adam_enc: AdamState<f32>,
    adam_tgsl: Option<AdamState<f32>>,
}

impl Trainer {
    pub fn new(spec: ModelSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (models, encoder, tgsl) = Models::init::<f32>(&spec, cfg.seed)?;
        let moco = tgsl.as_ref().map(|_| MoCoState::new(&encoder, cfg.queue_size, cfg.momentum, cfg.tau_cl));
        let adam_enc = AdamState::new(&encoder, cfg.lr);
        let adam_tgsl = tgsl.as_ref().map(|p| AdamState::new(p, cfg.lr));
        Ok(Self {
            spec,
            cfg,
            models,
            encoder,
            tgsl,
            moco,
            adam_enc,
            adam_tgsl,
        })
    }

    /// A trainer holding `snap`'s values, ready for evaluation.
    pub fn from_snapshot(spec: ModelSpec, cfg: TrainConfig, snap: &Snapshot) -> Result<Self> {
        let mut t = Self::new(spec, cfg)?;
        t.restore(snap)?;
        Ok(t)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            encoder: self.encoder.clone(),
            tgsl: self.tgsl.clone(),
        }
    }

    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        self.encoder.copy_values_from(&snap.encoder)?;
        match (&mut self.tgsl, &snap.tgsl) {
            (Some(a), Some(b)) => a.copy_values_from(b)?,
            (None, None) => {}
            _ => return Err(Error::Config("snapshot and model disagree on the structure learner".into())),
        }
        Ok(())
    }

    /// One pass over the usable training events in chronological batches.
    pub fn train_epoch(&mut self, data: &Dataset<'_>, epoch: usize) -> Result<EpochLosses> {
        let seed = self.cfg.seed;
        let mut acc = EpochLosses::default();
        let (mut aug_sum, mut cl_sum) = (0.0, 0.0);
        for (b, ids) in data.train_ids.chunks(self.cfg.batch_size).enumerate() {
            let mut neg_rng = seeds::stream(seed, &[tag::TRAIN_NEGATIVES, epoch as u64, b as u64]);
            let mut batch = Batch::new(data.store, &data.train_index, ids, &data.train_dsts, data.split.t_max_train, &data.train_nodes, &mut neg_rng)?;
            batch.sample_seed = seeds::derive(seed, &[tag::TRAIN_SAMPLING, epoch as u64]);
            let mut tape = Tape::<f32>::new();
            let eb = self.encoder.bind(&mut tape);
            let tb = self.tgsl.as_ref().map(|p| p.bind(&mut tape));
            let kb = self.moco.as_ref().map(|m| m.key_params.bind_frozen(&mut tape));
            let queue = self.moco.as_ref().map_or_else(|| Tensor::zeros(0, 0), MoCoState::queue_tensor);
            let mut rng = seeds::stream(seed, &[tag::TRAIN_BATCH, epoch as u64, b as u64]);
            let parts = batch_loss(&mut tape, &self.models, &eb, tb.as_ref(), kb.as_ref(), &batch, &queue, self.cfg.alpha, self.cfg.tau_cl, NoiseMode::Stochastic, &mut rng)?;
            let total = scalar(&tape, parts.total);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { batch: b });
            }
            tape.backward(parts.total)?;
            self.encoder.accumulate_grads(&tape, &eb);
            self.adam_enc.step(&mut self.encoder)?;
            if let (Some(p), Some(tb), Some(adam)) = (&mut self.tgsl, &tb, &mut self.adam_tgsl) {
                p.accumulate_grads(&tape, tb);
                adam.step(p)?;
            }
            if let (Some(m), Some(keys)) = (&mut self.moco, &parts.keys) {
                m.step(&self.encoder, keys)?;
            }
            acc.total += total;
            acc.task_ori += scalar(&tape, parts.task_ori);
            aug_sum += parts.task_aug.map_or(0.0, |v| scalar(&tape, v));
            cl_sum += parts.cl.map_or(0.0, |v| scalar(&tape, v));
            acc.added_edges += parts.added_edges as f64;
            acc.batches += 1;
        }
        let n = acc.batches.max(1) as f64;
        acc.total /= n;
        acc.task_ori /= n;
        acc.added_edges /= n;
        acc.task_aug = self.tgsl.as_ref().map(|_| aug_sum / n);
        acc.cl = self.moco.as_ref().map(|_| cl_sum / n);
        Ok(acc)
    }

    /// Link-prediction metrics on the events of `range` under `setting`,
    /// one seeded negative per positive. Negatives depend only on the seed,
    /// the range and the setting, so differently configured runs with one
    /// seed score the same pairs.
    pub fn evaluate(&self, data: &Dataset<'_>, range: Range<EventId>, setting: Setting, inference: Inference) -> Result<EvalMetrics> {
        let ids = data.split.eval_ids(data.store, range.clone(), setting);
        if ids.is_empty() {
            return Err(Error::EmptyEvalSet(format!("{setting} events in {}..{}", range.start, range.end)));
        }
        let seed = self.cfg.seed;
        let sid = match setting {
            Setting::Transductive => 0,
            Setting::Inductive => 1,
        };
        let mut neg_rng = seeds::stream(seed, &[tag::EVAL_NEGATIVES, range.start as u64, sid]);
        let mut scores = Vec::with_capacity(2 * ids.len());
        let mut labels = Vec::with_capacity(2 * ids.len());
        for (b, chunk) in ids.chunks(self.cfg.batch_size).enumerate() {
            let mut batch = Batch::new(data.store, &data.full_index, chunk, &data.eval_pool, data.split.t_max_train, &data.train_nodes, &mut neg_rng)?;
            batch.sample_seed = seeds::derive(seed, &[tag::EVAL_SAMPLING]);
            let mut rng = seeds::stream(seed, &[tag::EVAL_VIEW, range.start as u64, sid, b as u64]);
            let (pos, neg) = self.score(&batch, inference, &mut rng)?;
            labels.extend(std::iter::repeat(true).take(pos.len()));
            labels.extend(std::iter::repeat(false).take(neg.len()));
            scores.extend(pos);
            scores.extend(neg);
        }
        Ok(EvalMetrics::from_scores(setting, &scores, &labels))
    }

    /// Positive and negative probabilities for one batch with frozen
    /// parameters; the augmented view is built noise-free.
    pub fn score<R: Rng>(&self, batch: &Batch<'_>, inference: Inference, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::<f32>::new();
        let eb = self.encoder.bind_frozen(&mut tape);
        let mut view = batch.base_view();
        if let (Inference::Augmented, Some(model), Some(p)) = (inference, &self.models.tgsl, &self.tgsl) {
            let tb = p.bind_frozen(&mut tape);
            let aug = model.augment(&mut tape, &tb, &batch.tgsl_context(), &batch.nodes(), NoiseMode::NoiseFree, rng)?;
            view = aug.apply(view);
        }
        let times: Vec<f64> = batch.pos.iter().map(|p| p.2).collect();
        let h = self.models.encoder.encode(&mut tape, &eb, &view, &batch.queries())?;
        let (pos, neg) = link_probs(&mut tape, &self.models.encoder, &eb, h, &times)?;
        let col = |v: Var| tape.value(v).data().iter().map(|x| f64::from(*x)).collect();
        Ok((col(pos), col(neg)))
    }

    /// Trains with early stopping on transductive validation AP and keeps
    /// the parameters of the best epoch.
    pub fn fit(&mut self, data: &Dataset<'_>, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<FitReport> {
        let mut stop = EarlyStopState::new(self.cfg.patience, self.cfg.tolerance, self.cfg.max_epochs);
        let mut best = self.snapshot();
        let mut epochs = Vec::new();
        loop {
            let epoch = stop.epochs();
            let losses = self.train_epoch(data, epoch)?;
            let val = self.evaluate(data, data.split.val.clone(), Setting::Transductive, Inference::Augmented)?;
            let decision = stop.update(val.ap);
            if decision.improved {
                best = self.snapshot();
            }
            let record = EpochRecord {
                epoch: epoch + 1,
                losses,
                val_ap: val.ap,
            };
            on_epoch(&record);
            epochs.push(record);
            if decision.stop {
                break;
            }
        }
        self.restore(&best)?;
        Ok(FitReport {
            epochs,
            best_epoch: stop.best_epoch(),
            best_val_ap: stop.best(),
        })
    }
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    f64::from(tape.value(v).item().unwrap_or(f32::NAN))
}

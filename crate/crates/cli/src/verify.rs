//! Self-check suites: each check reports a measured value against a pinned
//! threshold.

use std::fmt;
use std::str::FromStr;

use numcore::{check_primitive, grad_check, Bound, Tape, Tensor, PRIMITIVES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgsl_core::encoders::{EncoderConfig, GraphView, TgatModel, TimeEncoding};
use tgsl_core::seeds;
use tgsl_core::tgraph::{EventStore, NeighborIndex, TemporalEvent};
use tgsl_core::tgsl::{gumbel_topk_select, CandidateEdge, FeatureSource, NoiseMode, Strategy, TgslConfig, TgslModel};
use tgsl_core::training::{accuracy, average_precision, batch_loss, info_nce_loss, Batch, ModelSpec, Models};

use crate::error::{CliError, Result};

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
pub const GUMBEL_DRAWS: usize = 100_000;
pub const GUMBEL_TOL: f64 = 0.01;
pub const LEAKAGE_TRIALS: usize = 50;
pub const METRICS_MAX_SIZE: usize = 12;
pub const INFO_NCE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Gumbel,
    Metrics,
    Leakage,
    ClosedForm,
    All,
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grad" => Self::Grad,
            "gumbel" => Self::Gumbel,
            "metrics" => Self::Metrics,
            "leakage" => Self::Leakage,
            "closed-form" => Self::ClosedForm,
            "all" => Self::All,
            other => {
                return Err(CliError::Config(format!(
                    "unknown suite `{other}` (expected grad, gumbel, metrics, leakage, closed-form or all)"
                )))
            }
        })
    }
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Self::Grad => "grad",
            Self::Gumbel => "gumbel",
            Self::Metrics => "metrics",
            Self::Leakage => "leakage",
            Self::ClosedForm => "closed-form",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    Above,
}

/// One measured quantity and the bound it must satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub relation: Relation,
}

impl Check {
    fn at_most(suite: Suite, name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            suite: suite.name(),
            name: name.into(),
            measured,
            threshold,
            relation: Relation::AtMost,
        }
    }

    fn above(suite: Suite, name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            suite: suite.name(),
            name: name.into(),
            measured,
            threshold,
            relation: Relation::Above,
        }
    }

    pub fn passed(&self) -> bool {
        match self.relation {
            Relation::AtMost => self.measured <= self.threshold,
            Relation::Above => self.measured > self.threshold,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.relation {
            Relation::AtMost => "<=",
            Relation::Above => ">",
        };
        write!(
            f,
            "{} {}/{}: measured {:.6e} {op} {:.6e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.threshold
        )
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Grad => grad_suite(),
        Suite::Gumbel => gumbel_suite(),
        Suite::Metrics => Ok(metrics_suite()),
        Suite::Leakage => leakage_suite(),
        Suite::ClosedForm => closed_form_suite(),
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Grad, Suite::Gumbel, Suite::Metrics, Suite::Leakage, Suite::ClosedForm] {
                all.extend(run_suite(s)?);
            }
            Ok(all)
        }
    }
}

/// Prints every check and fails with the number of failed checks.
pub fn cmd_verify(suite: Suite, out: &mut dyn std::io::Write) -> Result<Vec<Check>> {
    let checks = run_suite(suite)?;
    for c in &checks {
        writeln!(out, "{c}").map_err(CliError::io("stdout"))?;
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    writeln!(out, "{} checks, {failed} failed", checks.len()).map_err(CliError::io("stdout"))?;
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(checks)
}

fn run_err(e: impl Into<tgsl_core::Error>) -> CliError {
    CliError::Run(e.into())
}

fn store_of(nodes: usize, node_dim: usize, rows: &[(usize, usize, f64, Vec<f32>)], rng: &mut ChaCha8Rng) -> Result<EventStore> {
    let edge_dim = rows.first().map_or(1, |r| r.3.len());
    let events = rows
        .iter()
        .enumerate()
        .map(|(i, r)| TemporalEvent {
            src: r.0,
            dst: r.1,
            timestamp: r.2,
            edge_feature_id: i,
            label: 0,
        })
        .collect();
    let ef = Tensor::new(rows.len(), edge_dim, rows.iter().flat_map(|r| r.3.iter().copied()).collect()).map_err(run_err)?;
    let nf = Tensor::from_fn(nodes, node_dim, |_, _| rng.gen_range(-1.0f32..1.0));
    Ok(EventStore::new(nodes, events, nf, ef, None)?)
}

/// The 6-node, 10-event graph of the composite check: sources 0..3,
/// destinations 3..6.
pub fn toy_store() -> Result<EventStore> {
    let rows = [
        (0, 3, 0.5, 0.4),
        (1, 3, 1.0, -0.6),
        (1, 4, 1.6, 0.8),
        (2, 4, 2.1, -0.1),
        (0, 5, 2.7, 0.5),
        (2, 5, 3.2, 0.3),
        (2, 4, 3.9, -0.2),
        (1, 5, 4.4, 0.6),
        (2, 3, 5.0, -0.4),
        (0, 3, 5.5, 0.9),
    ];
    let events = rows
        .iter()
        .enumerate()
        .map(|(i, &(src, dst, timestamp, _))| TemporalEvent {
            src,
            dst,
            timestamp,
            edge_feature_id: i,
            label: 0,
        })
        .collect();
    let ef = Tensor::new(rows.len(), 1, rows.iter().map(|r| r.3).collect()).map_err(run_err)?;
    Ok(EventStore::new(6, events, Tensor::zeros(6, 1), ef, Some(3))?)
}

pub fn toy_spec() -> ModelSpec {
    ModelSpec {
        encoder: EncoderConfig {
            hidden: 4,
            heads: 2,
            layers: 1,
            n_nb: 6,
            time_dim: 2,
            ..EncoderConfig::new(1, 1)
        },
        tgsl: Some(TgslConfig {
            layers: 2,
            hidden: 3,
            n_rnn: 3,
            n_can: 4,
            k: 2,
            ..TgslConfig::new(1, 1)
        }),
    }
}

fn unit_rows(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::from_fn(rows, d, |_, _| rng.gen_range(-1.0..1.0));
    for r in 0..rows {
        let n = t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        t.row_mut(r).iter_mut().for_each(|x| *x /= n);
    }
    t
}

fn grad_suite() -> Result<Vec<Check>> {
    let s = Suite::Grad;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &name in PRIMITIVES {
        let report = check_primitive(name, 5, FD_STEP, &mut rng).map_err(run_err)?;
        checks.push(Check::at_most(s, format!("{name} max rel err"), report.max_rel_err, GRAD_TOL));
    }

    let store = toy_store()?;
    let index = NeighborIndex::build(&store);
    let spec = toy_spec();
    let (models, enc, tgsl) = Models::init::<f64>(&spec, 5)?;
    let tgsl = tgsl.expect("toy spec has a structure learner");
    let (_, key, _) = Models::init::<f64>(&spec, 6)?;
    let queue = unit_rows(5, spec.encoder.hidden, &mut rng);
    let n_enc = enc.len();
    let mut point = enc.values();
    point.extend(tgsl.values());
    let mut added = 0;
    let report = grad_check(
        |tape, vars| {
            let eb = Bound::from_vars(vars[..n_enc].to_vec());
            let tb = Bound::from_vars(vars[n_enc..].to_vec());
            let kb = key.bind_frozen(tape);
            let batch = Batch::new(&store, &index, &[7, 8, 9], &[3, 4, 5], 5.5, &[0, 1, 2, 3, 4, 5], &mut ChaCha8Rng::seed_from_u64(2))?;
            let parts = batch_loss(tape, &models, &eb, Some(&tb), Some(&kb), &batch, &queue, 0.5, 0.2, NoiseMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(3))?;
            added = parts.added_edges;
            Ok::<_, tgsl_core::Error>(parts.total)
        },
        &point,
        FD_STEP,
    )?;
    checks.push(Check::at_most(s, "composite loss max rel err", report.max_rel_err, GRAD_TOL));
    checks.push(Check::above(s, "composite loss checked coordinates", report.checked as f64, 0.0));
    checks.push(Check::above(s, "composite loss added edges", added as f64, 0.0));
    Ok(checks)
}

fn selection_counts(logits: &[f64], k: usize, draws: usize, seed: u64) -> Result<Vec<usize>> {
    let cands: Vec<CandidateEdge> = (0..logits.len())
        .map(|i| CandidateEdge {
            src: 0,
            dst: i + 1,
            source_slot: 0,
            t_new: 1.0,
            t_sample: 1.0,
            strategy: Strategy::OneHop,
            feature: FeatureSource::Zero,
        })
        .collect();
    let mut counts = vec![0; logits.len()];
    for d in 0..draws {
        // re-seeding per draw gives common random numbers across logit sets
        let mut rng = seeds::stream(seed, &[d as u64]);
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::col_vector(logits.to_vec()));
        let f = tape.constant(Tensor::ones(logits.len(), 1));
        let sel = gumbel_topk_select(&mut tape, z, f, &cands, k, 1.0, NoiseMode::Stochastic, &mut rng)?;
        for i in sel.selected {
            counts[i] += 1;
        }
    }
    Ok(counts)
}

fn gumbel_suite() -> Result<Vec<Check>> {
    let s = Suite::Gumbel;
    let (n, k) = (10, 3);
    let expected = k as f64 / n as f64;
    let base = selection_counts(&vec![0.0; n], k, GUMBEL_DRAWS, 17)?;
    let mut raised_logits = vec![0.0; n];
    raised_logits[0] = 2.0;
    let raised = selection_counts(&raised_logits, k, GUMBEL_DRAWS, 17)?;
    let freq = |c: usize| c as f64 / GUMBEL_DRAWS as f64;
    let mut checks: Vec<Check> = base
        .iter()
        .enumerate()
        .map(|(i, &c)| Check::at_most(s, format!("candidate {i} |freq - {expected}|"), (freq(c) - expected).abs(), GUMBEL_TOL))
        .collect();
    checks.push(Check::above(s, "raised logit frequency gain", freq(raised[0]) - freq(base[0]), 0.0));
    Ok(checks)
}

/// Area under the precision-recall step curve over every cut of the
/// ranking (descending score, ties by position).
fn ap_by_cuts(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let total = labels.iter().filter(|&&l| l).count() as f64;
    if total == 0.0 {
        return 0.0;
    }
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for cut in 1..=n {
        let tp = order[..cut].iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / total;
        area += (recall - prev_recall) * tp / cut as f64;
        prev_recall = recall;
    }
    area
}

fn metrics_suite() -> Vec<Check> {
    let s = Suite::Metrics;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ap_err, mut acc_err, mut mono_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut patterns = 0usize;
    for n in 1..=METRICS_MAX_SIZE {
        let tied: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let distinct: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        for scores in [tied, distinct] {
            let mapped: Vec<f64> = scores.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            for mask in 0..(1u32 << n) {
                let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let ap = average_precision(&scores, &labels);
                ap_err = ap_err.max((ap - ap_by_cuts(&scores, &labels)).abs());
                let hits = (0..n).filter(|&i| (scores[i] > 0.5) == labels[i]).count();
                acc_err = acc_err.max((accuracy(&scores, &labels) - hits as f64 / n as f64).abs());
                mono_err = mono_err.max((ap - average_precision(&mapped, &labels)).abs());
                patterns += 1;
            }
        }
    }
    vec![
        Check::at_most(s, "AP vs precision-recall area", ap_err, 1e-12),
        Check::at_most(s, "ACC vs direct count", acc_err, 0.0),
        Check::at_most(s, "AP under monotone transform", mono_err, 0.0),
        Check::above(s, "label patterns enumerated", patterns as f64, 0.0),
    ]
}

type Row = (usize, usize, f64, Vec<f32>);

/// Counts elementwise differences (bitwise) between two runs of `f`.
fn diff_count(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return a.len().max(b.len()) as f64;
    }
    a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count() as f64
}

struct LeakageModels {
    tgat: TgatModel,
    tgat_p: numcore::ParamSet<f64>,
    tgsl: TgslModel,
    tgsl_p: numcore::ParamSet<f64>,
}

/// Encoder outputs, edge embeddings and context vectors as seen from `t`.
fn leakage_outputs(m: &LeakageModels, store: &EventStore, nodes: usize, t: f64) -> Result<[Vec<f64>; 3]> {
    let index = NeighborIndex::build(store);
    let mut tape = Tape::<f64>::new();
    let eb = m.tgat_p.bind_frozen(&mut tape);
    let queries: Vec<(usize, f64)> = (0..nodes).map(|u| (u, t)).collect();
    let h = m.tgat.encode(&mut tape, &eb, &GraphView::new(store, &index, f64::INFINITY), &queries)?;
    let tb = m.tgsl_p.bind_frozen(&mut tape);
    let required: Vec<usize> = (0..store.len()).filter(|&i| store.event(i).timestamp < t).collect();
    let emb = m.tgsl.etgnn_forward(&mut tape, &tb, store, &index, t, &required)?;
    let seqs: Vec<Vec<usize>> = (0..nodes)
        .map(|u| index.neighbors_before(u, t, m.tgsl.config().n_rnn).iter().map(|e| e.event).collect())
        .collect();
    let z = m.tgsl.context_predict(&mut tape, &tb, &emb, &seqs)?;
    let data = |v| tape.value(v).data().to_vec();
    Ok([data(h), data(emb.var), data(z)])
}

fn leakage_suite() -> Result<Vec<Check>> {
    let s = Suite::Leakage;
    let (nodes, node_dim, edge_dim) = (8, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let (tgat, tgat_p) = TgatModel::init::<f64, _>(
        EncoderConfig {
            hidden: 4,
            heads: 2,
            layers: 2,
            n_nb: 4,
            time_dim: 4,
            ..EncoderConfig::new(node_dim, edge_dim)
        },
        &mut rng,
    )?;
    let (tgsl, tgsl_p) = TgslModel::init::<f64, _>(
        TgslConfig {
            layers: 2,
            hidden: 3,
            n_rnn: 3,
            ..TgslConfig::new(node_dim, edge_dim)
        },
        &mut rng,
    )?;
    let models = LeakageModels { tgat, tgat_p, tgsl, tgsl_p };
    let mut diffs = [0.0f64; 3];
    let mut control = 0.0;
    for trial in 0..LEAKAGE_TRIALS {
        let mut rng = seeds::stream(29, &[trial as u64]);
        let feat = |rng: &mut ChaCha8Rng| (0..edge_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>();
        let mut rows: Vec<Row> = (0..30)
            .map(|_| (rng.gen_range(0..nodes), rng.gen_range(0..nodes), rng.gen_range(0.0..10.0), feat(&mut rng)))
            .collect();
        rows.sort_by(|a, b| a.2.total_cmp(&b.2));
        let t = rng.gen_range(2.0..8.0);
        let node_seed = rng.gen();
        let base = store_of(nodes, node_dim, &rows, &mut ChaCha8Rng::seed_from_u64(node_seed))?;
        // future events: features rewritten, some removed, new ones added
        let mut perturbed: Vec<Row> = rows.iter().filter(|r| r.2 < t).cloned().collect();
        for r in rows.iter().filter(|r| r.2 >= t) {
            if rng.gen_bool(0.6) {
                perturbed.push((r.0, r.1, r.2, feat(&mut rng)));
            }
        }
        for _ in 0..5 {
            perturbed.push((rng.gen_range(0..nodes), rng.gen_range(0..nodes), rng.gen_range(t..12.0), feat(&mut rng)));
        }
        perturbed.sort_by(|a, b| a.2.total_cmp(&b.2));
        let other = store_of(nodes, node_dim, &perturbed, &mut ChaCha8Rng::seed_from_u64(node_seed))?;
        let a = leakage_outputs(&models, &base, nodes, t)?;
        let b = leakage_outputs(&models, &other, nodes, t)?;
        for i in 0..3 {
            diffs[i] += diff_count(&a[i], &b[i]);
        }
        // control: rewriting a visible event must be detected
        if let Some(last) = rows.iter().rposition(|r| r.2 < t) {
            let mut past = rows.clone();
            past[last].3 = feat(&mut rng);
            let c = leakage_outputs(&models, &store_of(nodes, node_dim, &past, &mut ChaCha8Rng::seed_from_u64(node_seed))?, nodes, t)?;
            control += diff_count(&a[1], &c[1]);
        }
    }
    Ok(["encoder outputs", "edge embeddings", "context vectors"]
        .iter()
        .zip(diffs)
        .map(|(name, d)| Check::at_most(s, format!("{name} changed by future events ({LEAKAGE_TRIALS} trials)"), d, 0.0))
        .chain([Check::above(s, "edge embeddings changed by a past event (control)", control, 0.0)])
        .collect())
}

fn closed_form_suite() -> Result<Vec<Check>> {
    let s = Suite::ClosedForm;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for d in [1, 16, 100] {
        let te = TimeEncoding::with_dim(d);
        let off = |v: Vec<f64>| v.iter().filter(|&&x| x != 1.0).count() as f64;
        checks.push(Check::at_most(s, format!("TE(0) entries != 1 (d={d})"), off(te.encode(0.0)), 0.0));
        checks.push(Check::at_most(s, format!("s(0) entries != 1 (d={d})"), off(te.context(0.0)), 0.0));
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let delta = rng.gen_range(-1e4..1e4);
            for (a, b) in te.context(-delta).iter().zip(te.context(delta)) {
                worst = worst.max((a - (2.0 - b)).abs());
            }
        }
        checks.push(Check::at_most(s, format!("max |s(-x) - (2 - s(x))| (d={d})"), worst, 2.0 * f64::EPSILON));
    }
    for m in [1usize, 16, 512] {
        let d = 8;
        let dir = unit_rows(1, d, &mut rng);
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(dir.clone());
        let k = tape.constant(dir.clone());
        let queue = Tensor::from_fn(m, d, |_, j| dir.get(0, j));
        let term = info_nce_loss(&mut tape, q, k, &queue, 0.2)?;
        let loss = tape.value(term.loss).item().unwrap_or(f64::NAN);
        let want = ((m + 1) as f64).ln();
        checks.push(Check::at_most(s, format!("InfoNCE uniform rel err (M={m})"), ((loss - want) / want).abs(), INFO_NCE_REL_TOL));
    }
    Ok(checks)
}

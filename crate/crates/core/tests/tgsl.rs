use std::collections::BTreeSet;

use numcore::{grad_check, Bound, ParamSet, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgsl_core::encoders::{EncoderConfig, GraphView, TgatModel, TimeEncoding};
use tgsl_core::tgraph::{EventStore, NeighborIndex, TemporalEvent};
use tgsl_core::tgsl::{
    build_augmented_view, gumbel_topk_select, logistic_noise, relaxed_weight, sample_candidates, time_map, top_k_per_group, CandidateEdge, CandidateRequest,
    EdgeEmbeddings, FeatureSource, NoiseMode, Selection, Strategy, TgslConfig, TgslContext, TgslModel,
};

fn store(n: usize, events: &[(usize, usize, f64, f32)]) -> EventStore {
    let evs = events
        .iter()
        .enumerate()
        .map(|(i, &(s, d, t, _))| TemporalEvent {
            src: s,
            dst: d,
            timestamp: t,
            edge_feature_id: i,
            label: 0,
        })
        .collect();
    let ef = events.iter().map(|e| e.3).collect();
    EventStore::new(n, evs, Tensor::zeros(n, 1), Tensor::new(events.len(), 1, ef).unwrap(), None).unwrap()
}

fn set(ps: &mut ParamSet<f64>, name: &str, vals: &[f64]) {
    let p = ps.iter_mut().find(|p| p.name == name).unwrap();
    let (r, c) = (p.value.rows(), p.value.cols());
    p.value = Tensor::new(r, c, vals.to_vec()).unwrap();
}

fn cfg(layers: usize, hidden: usize) -> TgslConfig {
    TgslConfig {
        layers,
        hidden,
        n_rnn: 3,
        n_can: 4,
        k: 2,
        ..TgslConfig::new(1, 1)
    }
}

fn etgnn(model: &TgslModel, ps: &ParamSet<f64>, g: &EventStore, horizon: f64, req: &[usize]) -> Vec<f64> {
    let idx = NeighborIndex::build(g);
    let mut tape = Tape::new();
    let b = ps.bind(&mut tape);
    let emb = model.etgnn_forward(&mut tape, &b, g, &idx, horizon, req).unwrap();
    tape.value(emb.var).data().to_vec()
}

#[test]
fn etgnn_zero_weights_give_zero_embeddings() {
    let g = store(2, &[(0, 1, 0.0, 0.0)]);
    let (model, mut ps) = TgslModel::init::<f64, _>(cfg(2, 1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for p in ps.iter_mut() {
        p.value = p.value.map(|_| 0.0);
    }
    assert_eq!(etgnn(&model, &ps, &g, 1.0, &[0]), vec![0.0]);
}

#[test]
fn etgnn_single_edge_hand_evaluation() {
    let g = store(2, &[(0, 1, 0.0, 0.0)]);
    let (model, mut ps) = TgslModel::init::<f64, _>(cfg(2, 1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    // h1 = relu(w . [h0, m]) with m = [h_u, f_uv, TE(0)] = [0, 0, 1] picks the TE block
    set(&mut ps, "etgnn.1.wh", &[0.0, 0.0, 0.0, 1.0]);
    set(&mut ps, "etgnn.1.wf", &[0.0, 0.0, 0.0, 1.0]);
    let (a, b, c, d) = (0.5, -0.25, 2.0, 0.125);
    set(&mut ps, "etgnn.2.wf", &[a, b, c, d]);
    // f2 = relu(a f1 + b h_u + c h_v + d TE(0)) with f1 = h_u = h_v = 1
    assert_eq!(etgnn(&model, &ps, &g, 1.0, &[0]), vec![f64::max(a + b + c + d, 0.0)]);
}

#[test]
fn etgnn_mean_message_is_idempotent_for_duplicates() {
    let (model, ps) = TgslModel::init::<f64, _>(cfg(2, 3), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let once = store(2, &[(0, 1, 1.0, 0.5)]);
    let thrice = store(2, &[(0, 1, 1.0, 0.5), (0, 1, 1.0, 0.5), (0, 1, 1.0, 0.5)]);
    let a = etgnn(&model, &ps, &once, 5.0, &[0]);
    let b = etgnn(&model, &ps, &thrice, 5.0, &[0]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{a:?} {b:?}");
    }
}

#[test]
fn etgnn_ignores_events_at_or_after_horizon() {
    let (model, ps) = TgslModel::init::<f64, _>(cfg(2, 3), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let base = [(0, 1, 1.0, 0.5), (1, 2, 2.0, -0.3), (2, 0, 3.0, 0.9)];
    let mut more = base.to_vec();
    more.push((0, 2, 3.0, 4.0));
    more.push((1, 0, 8.0, -2.0));
    let a = etgnn(&model, &ps, &store(3, &base), 3.0, &[0, 1]);
    let b = etgnn(&model, &ps, &store(3, &more), 3.0, &[0, 1]);
    assert_eq!(a, b);
}

fn lstm_context(model: &TgslModel, ps: &ParamSet<f64>, table: &[f64], seqs: &[Vec<usize>]) -> Vec<f64> {
    let mut tape = Tape::new();
    let b = ps.bind(&mut tape);
    let var = tape.constant(Tensor::col_vector(table.to_vec()));
    let emb = EdgeEmbeddings::new(var, (0..table.len()).collect());
    let z = model.context_predict(&mut tape, &b, &emb, seqs).unwrap();
    tape.value(z).data().to_vec()
}

#[test]
fn lstm_single_step_hand_evaluation_and_empty_history() {
    let (model, mut ps) = TgslModel::init::<f64, _>(cfg(1, 1), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let wx = [0.3, -0.7, 1.1, 0.4];
    let bias = [0.05, 0.2, -0.1, 0.3];
    set(&mut ps, "lstm.wx", &wx);
    set(&mut ps, "lstm.wh", &[0.9, 0.9, 0.9, 0.9]);
    set(&mut ps, "lstm.b", &bias);
    let x = 0.8;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let i = sig(x * wx[0] + bias[0]);
    let g = (x * wx[2] + bias[2]).tanh();
    let o = sig(x * wx[3] + bias[3]);
    let expected = o * (i * g).tanh();
    let z = lstm_context(&model, &ps, &[x], &[vec![0], vec![]]);
    assert!((z[0] - expected).abs() < 1e-15, "{} {expected}", z[0]);
    assert_eq!(z[1], 0.0);
}

#[test]
fn lstm_sees_only_the_last_n_rnn_edges() {
    let (model, ps) = TgslModel::init::<f64, _>(cfg(1, 1), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let seqs = vec![vec![0, 1, 2, 3, 4], vec![2, 3], vec![4]];
    let a = lstm_context(&model, &ps, &[0.1, 0.2, 0.3, 0.4, 0.5], &seqs);
    let b = lstm_context(&model, &ps, &[-7.0, 9.0, 0.3, 0.4, 0.5], &seqs);
    assert_eq!(a, b);
    let alone = lstm_context(&model, &ps, &[0.1, 0.2, 0.3, 0.4, 0.5], &[vec![2, 3]]);
    assert_eq!(alone[0], a[1]);
}

fn request(strategy: Strategy, n_can: usize) -> CandidateRequest {
    CandidateRequest {
        strategy,
        n_can,
        khop_fanout: 4,
        horizon: 100.0,
        t_max: 50.0,
    }
}

#[test]
fn random_candidates_use_zero_features_and_the_pool() {
    let g = store(6, &[(0, 3, 1.0, 0.0), (1, 4, 2.0, 0.0)]);
    let idx = NeighborIndex::build(&g);
    let pool = [3, 4, 5];
    let c = sample_candidates(&[0, 1], &request(Strategy::Random, 7), &idx, &g, &pool, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(c.len(), 14);
    for x in &c {
        assert_eq!(x.feature, FeatureSource::Zero);
        assert!(pool.contains(&x.dst));
        assert_eq!(x.t_sample, x.t_new);
        assert!((0.0..=50.0).contains(&x.t_new));
    }
}

#[test]
fn one_hop_candidates_are_bounded_by_distinct_neighbors() {
    let g = store(4, &[(0, 1, 1.0, 0.0), (0, 2, 2.0, 0.0), (0, 3, 3.0, 0.0), (0, 1, 4.0, 0.0)]);
    let idx = NeighborIndex::build(&g);
    let c = sample_candidates(&[0], &request(Strategy::OneHop, 10), &idx, &g, &[], &mut ChaCha8Rng::seed_from_u64(1));
    let dsts: BTreeSet<usize> = c.iter().map(|x| x.dst).collect();
    assert!(dsts.len() <= 3 && c.len() <= 10);
    for x in &c {
        let FeatureSource::Event(e) = x.feature else { panic!() };
        assert_eq!(g.event(e).timestamp, x.t_sample);
        assert!(g.event(e).src == 0 || g.event(e).dst == 0);
    }
    let iso = store(5, &[(0, 1, 1.0, 0.0)]);
    let iso_idx = NeighborIndex::build(&iso);
    assert!(sample_candidates(&[4], &request(Strategy::OneHop, 10), &iso_idx, &iso, &[], &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
}

#[test]
fn third_hop_candidates_borrow_the_final_edge() {
    let g = store(4, &[(0, 1, 1.0, 0.0), (2, 1, 2.0, 0.0), (2, 3, 3.0, 0.0)]);
    let idx = NeighborIndex::build(&g);
    let c = sample_candidates(&[0], &request(Strategy::ThirdHop, 10), &idx, &g, &[], &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(c.len(), 1);
    assert_eq!((c[0].dst, c[0].feature, c[0].t_sample), (3, FeatureSource::Event(2), 3.0));
}

#[test]
fn sampled_timestamps_are_uniform() {
    let g = store(3, &[(0, 1, 1.0, 0.0)]);
    let idx = NeighborIndex::build(&g);
    let sources = vec![0; 10_000];
    let c = sample_candidates(&sources, &request(Strategy::Random, 10), &idx, &g, &[1, 2], &mut ChaCha8Rng::seed_from_u64(77));
    let mut ts: Vec<f64> = c.iter().map(|x| x.t_new / 50.0).collect();
    assert_eq!(ts.len(), 100_000);
    ts.sort_by(f64::total_cmp);
    let n = ts.len() as f64;
    let d = ts
        .iter()
        .enumerate()
        .map(|(i, &x)| f64::max((i as f64 + 1.0) / n - x, x - i as f64 / n))
        .fold(0.0, f64::max);
    // asymptotic one-sample KS critical value at the 1% level
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

fn cand(slot: usize, t_new: f64, t_sample: f64) -> CandidateEdge {
    CandidateEdge {
        src: slot,
        dst: 9,
        source_slot: slot,
        t_new,
        t_sample,
        strategy: Strategy::OneHop,
        feature: FeatureSource::Event(0),
    }
}

#[test]
fn time_map_identity_zero_and_closed_form() {
    let te = TimeEncoding::with_dim(4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let zv: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fv: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cands = [cand(0, 10.0, 10.0), cand(1, 3.5, 7.25), cand(2, 0.0, 9.0)];
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::new(3, 4, zv.clone()).unwrap());
    let f = tape.constant(Tensor::new(3, 4, fv.clone()).unwrap());
    let (zh, fh) = time_map(&mut tape, z, f, &cands, 10.0, &te).unwrap();
    assert_eq!(tape.value(zh).row(0), &zv[0..4]);
    assert_eq!(tape.value(fh).row(0), &fv[0..4]);
    for (i, c) in cands.iter().enumerate() {
        let sz = te.context(c.t_new - 10.0);
        let sf = te.context(c.t_new - c.t_sample);
        for j in 0..4 {
            assert_eq!(tape.value(zh).get(i, j), zv[i * 4 + j] * sz[j]);
            assert_eq!(tape.value(fh).get(i, j), fv[i * 4 + j] * sf[j]);
        }
    }
    let zero = tape.constant(Tensor::zeros(3, 4));
    let (zh0, _) = time_map(&mut tape, zero, f, &cands, 10.0, &te).unwrap();
    assert!(tape.value(zh0).data().iter().all(|&x| x == 0.0));
}

fn select(m: &[f64], slots: &[usize], k: usize, tau: f64, mode: NoiseMode, seed: u64) -> (Vec<f64>, Selection) {
    let cands: Vec<CandidateEdge> = slots.iter().map(|&s| cand(s, 1.0, 1.0)).collect();
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::col_vector(m.to_vec()));
    let f = tape.constant(Tensor::ones(m.len(), 1));
    let sel = gumbel_topk_select(&mut tape, z, f, &cands, k, tau, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (tape.value(sel.rho).data().to_vec(), sel)
}

#[test]
fn noise_free_weights_and_saturation() {
    let (rho, sel) = select(&[0.0, 1.5, -2.0], &[0, 0, 0], 5, 2.0, NoiseMode::NoiseFree, 0);
    assert_eq!(rho[0], 0.5);
    assert_eq!(rho[1], relaxed_weight(1.5, 0.0, 2.0));
    assert_eq!(sel.selected, vec![0, 1, 2]);
    let (_, sel) = select(&[0.0, 1.5, -2.0, 0.7], &[0, 0, 1, 1], 1, 1.0, NoiseMode::NoiseFree, 0);
    assert_eq!(sel.selected, vec![1, 3]);
    assert_eq!(logistic_noise(0.5), 0.0);
    let cands = [cand(0, 1.0, 1.0)];
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::ones(1, 1));
    assert!(gumbel_topk_select(&mut tape, z, z, &cands, 1, 0.0, NoiseMode::NoiseFree, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn equal_logits_are_selected_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let groups = [0usize; 10];
    let mut counts = [0usize; 10];
    let draws = 100_000;
    for _ in 0..draws {
        let v: Vec<f64> = (0..10).map(|_| logistic_noise(rng.sample(rand::distributions::Open01))).collect();
        for i in top_k_per_group(&v, &groups, 3) {
            counts[i] += 1;
        }
    }
    for c in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 0.3).abs() <= 0.01, "{f}");
    }
}

#[test]
fn raising_a_logit_never_drops_it_and_tau_does_not_change_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let groups = [0usize; 10];
    for _ in 0..1000 {
        let m: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let noise: Vec<f64> = (0..10).map(|_| logistic_noise(rng.sample(rand::distributions::Open01))).collect();
        let j = rng.gen_range(0..10);
        let pre: Vec<f64> = m.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let before = top_k_per_group(&pre, &groups, 3);
        let mut raised = pre.clone();
        raised[j] += rng.gen_range(0.0..3.0);
        let after = top_k_per_group(&raised, &groups, 3);
        if before.contains(&j) {
            assert!(after.contains(&j));
        }
        let rho = |tau: f64| -> Vec<f64> { m.iter().zip(&noise).map(|(a, b)| relaxed_weight(*a, *b, tau)).collect() };
        assert_eq!(top_k_per_group(&rho(0.5), &groups, 3), before);
        assert_eq!(top_k_per_group(&rho(1.0), &groups, 3), before);
    }
}

#[test]
fn augmented_view_dedups_and_bounds_additions() {
    let mut tape = Tape::<f64>::new();
    let cands = vec![cand(0, 2.0, 1.0), cand(0, 2.0, 1.0), cand(0, 3.0, 1.0)];
    let z = tape.constant(Tensor::col_vector(vec![0.1, 0.9, 0.2]));
    let f = tape.constant(Tensor::ones(3, 1));
    let sel = gumbel_topk_select(&mut tape, z, f, &cands, 3, 1.0, NoiseMode::NoiseFree, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let view = build_augmented_view(&mut tape, &cands, &sel, f).unwrap();
    assert_eq!(view.candidates, vec![1, 2]);

    let slots: Vec<usize> = (0..200).flat_map(|s| std::iter::repeat(s).take(30)).collect();
    let cands: Vec<CandidateEdge> = slots.iter().enumerate().map(|(i, &s)| cand(s, i as f64, 0.0)).collect();
    let m: Vec<f64> = (0..cands.len()).map(|i| (i % 7) as f64).collect();
    let z = tape.constant(Tensor::col_vector(m));
    let f = tape.constant(Tensor::ones(cands.len(), 1));
    let sel = gumbel_topk_select(&mut tape, z, f, &cands, 8, 1.0, NoiseMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let view = build_augmented_view(&mut tape, &cands, &sel, f).unwrap();
    assert_eq!(view.len(), 1600);
}

fn toy() -> EventStore {
    store(
        6,
        &[
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
        ],
    )
}

#[test]
fn empty_augmentation_leaves_encodings_unchanged() {
    let g = toy();
    let idx = NeighborIndex::build(&g);
    let ecfg = EncoderConfig {
        hidden: 4,
        heads: 2,
        layers: 1,
        n_nb: 4,
        time_dim: 2,
        ..EncoderConfig::new(1, 1)
    };
    let (enc, eps) = TgatModel::init::<f64, _>(ecfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (model, tps) = TgslModel::init::<f64, _>(TgslConfig { k: 0, ..cfg(2, 3) }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut tape = Tape::new();
    let eb = eps.bind(&mut tape);
    let tb = tps.bind(&mut tape);
    let ctx = TgslContext {
        store: &g,
        index: &idx,
        horizon: 6.0,
        t_max: 5.5,
        random_pool: &[3, 4, 5],
    };
    let aug = model.augment(&mut tape, &tb, &ctx, &[0, 1, 2], NoiseMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(aug.is_empty());
    let q = [(0, 6.0), (3, 6.0)];
    let plain = enc.encode(&mut tape, &eb, &GraphView::new(&g, &idx, 6.0), &q).unwrap();
    let viewed = enc.encode(&mut tape, &eb, &aug.apply(GraphView::new(&g, &idx, 6.0)), &q).unwrap();
    assert_eq!(tape.value(plain).data(), tape.value(viewed).data());
}

#[test]
fn gradients_flow_through_rho_into_the_structure_learner() {
    let g = toy();
    let idx = NeighborIndex::build(&g);
    let ecfg = EncoderConfig {
        hidden: 4,
        heads: 2,
        layers: 1,
        n_nb: 6,
        time_dim: 2,
        ..EncoderConfig::new(1, 1)
    };
    let (enc, eps) = TgatModel::init::<f64, _>(ecfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for strategy in [Strategy::OneHop, Strategy::ThirdHop] {
        let (model, tps) = TgslModel::init::<f64, _>(TgslConfig { strategy, ..cfg(2, 3) }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let report = grad_check(
            |tape, vars| {
                let eb = eps.bind_frozen(tape);
                let tb = Bound::from_vars(vars.to_vec());
                let ctx = TgslContext {
                    store: &g,
                    index: &idx,
                    horizon: 6.0,
                    t_max: 5.5,
                    random_pool: &[3, 4, 5],
                };
                let aug = model.augment(tape, &tb, &ctx, &[0, 1, 2], NoiseMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(11))?;
                assert!(!aug.is_empty());
                let view = aug.apply(GraphView::new(&g, &idx, 6.0));
                let h = enc.encode(tape, &eb, &view, &[(0, 6.0), (1, 6.0), (3, 6.0), (4, 6.0)])?;
                let sq = tape.mul(h, h)?;
                Ok::<_, tgsl_core::Error>(tape.sum(sq)?)
            },
            &tps.values(),
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{strategy}: {report:?}");
        assert!(report.checked > 0);
    }
}

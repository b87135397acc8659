use numcore::{grad_check, Bound, ParamSet, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgsl_core::encoders::{AddedEdge, EncoderConfig, GraphView, TgatModel};
use tgsl_core::tgraph::{EventStore, NeighborIndex, TemporalEvent};

fn store(n: usize, node_feat: Vec<f32>, events: &[(usize, usize, f64, f32)]) -> EventStore {
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
    EventStore::new(
        n,
        evs,
        Tensor::new(n, 1, node_feat).unwrap(),
        Tensor::new(events.len(), 1, ef).unwrap(),
        None,
    )
    .unwrap()
}

fn set(ps: &mut ParamSet<f64>, name: &str, vals: &[f64]) {
    let p = ps.iter_mut().find(|p| p.name == name).unwrap();
    let (r, c) = (p.value.rows(), p.value.cols());
    p.value = Tensor::new(r, c, vals.to_vec()).unwrap();
}

fn tiny_cfg() -> EncoderConfig {
    EncoderConfig {
        hidden: 1,
        heads: 1,
        layers: 1,
        n_nb: 5,
        time_dim: 1,
        ..EncoderConfig::new(1, 1)
    }
}

fn encode(model: &TgatModel, ps: &ParamSet<f64>, view: &GraphView<'_>, q: &[(usize, f64)]) -> Vec<f64> {
    let mut tape = Tape::new();
    let b = ps.bind(&mut tape);
    let out = model.encode(&mut tape, &b, view, q).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn one_head_attention_matches_hand_evaluation() {
    let g = store(3, vec![0.5, -1.0, 2.0], &[(0, 1, 1.0, 0.3), (2, 0, 2.0, -0.7)]);
    let index = NeighborIndex::build(&g);
    let (model, mut ps) = TgatModel::init::<f64, _>(tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (q1, q2) = (0.8, -0.4);
    let (k1, k2, k3) = (0.5, 1.5, -0.2);
    let (v1, v2, v3) = (-0.6, 0.9, 0.4);
    let (m1, m2, mb1, mw2, mb2) = (1.1, -0.3, 0.05, 0.7, -0.1);
    set(&mut ps, "tgat.0.wq", &[q1, q2]);
    set(&mut ps, "tgat.0.wk", &[k1, k2, k3]);
    set(&mut ps, "tgat.0.wv", &[v1, v2, v3]);
    set(&mut ps, "tgat.0.merge.w1", &[m1, m2]);
    set(&mut ps, "tgat.0.merge.b1", &[mb1]);
    set(&mut ps, "tgat.0.merge.w2", &[mw2]);
    set(&mut ps, "tgat.0.merge.b2", &[mb2]);

    let t = 3.0;
    let h0 = 0.5;
    let q = h0 * q1 + q2;
    // neighbors of node 0 before t: node 1 via edge 0.3 at 1, node 2 via -0.7 at 2
    let nb = [(-1.0, 0.3, 1.0), (2.0, -0.7, 2.0)];
    let k: Vec<f64> = nb.iter().map(|&(h, e, tj)| h * k1 + e * k2 + f64::cos(t - tj) * k3).collect();
    let v: Vec<f64> = nb.iter().map(|&(h, e, tj)| h * v1 + e * v2 + f64::cos(t - tj) * v3).collect();
    let s: Vec<f64> = k.iter().map(|kj| q * kj).collect();
    let z: f64 = s.iter().map(|x| x.exp()).sum();
    let attn: f64 = s.iter().zip(&v).map(|(sj, vj)| sj.exp() / z * vj).sum();
    let expected = (attn * m1 + h0 * m2 + mb1).max(0.0) * mw2 + mb2;

    let view = GraphView::new(&g, &index, f64::INFINITY);
    let got = encode(&model, &ps, &view, &[(0, t)]);
    assert!((got[0] - expected).abs() < 1e-12, "{} vs {expected}", got[0]);
}

#[test]
fn empty_history_uses_only_the_feature_pathway() {
    let g = store(2, vec![0.25, 0.0], &[(0, 1, 5.0, 1.0)]);
    let index = NeighborIndex::build(&g);
    let (model, mut ps) = TgatModel::init::<f64, _>(tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    set(&mut ps, "tgat.0.merge.w1", &[0.9, 2.0]);
    set(&mut ps, "tgat.0.merge.b1", &[0.1]);
    set(&mut ps, "tgat.0.merge.w2", &[1.0]);
    set(&mut ps, "tgat.0.merge.b2", &[0.0]);
    let view = GraphView::new(&g, &index, f64::INFINITY);
    let a = encode(&model, &ps, &view, &[(0, 5.0)]);
    assert_eq!(a, vec![0.25 * 2.0 + 0.1]);
    assert_eq!(a, encode(&model, &ps, &view, &[(0, 5.0)]));
}

#[test]
fn unit_weight_added_edge_equals_stored_event() {
    let cfg = EncoderConfig {
        hidden: 4,
        heads: 2,
        layers: 2,
        n_nb: 4,
        time_dim: 3,
        ..EncoderConfig::new(1, 1)
    };
    let events = [(0, 1, 1.0, 0.2), (1, 2, 2.0, -0.4), (0, 2, 3.0, 0.9), (2, 3, 4.0, 0.1)];
    let full = store(4, vec![0.1, 0.2, 0.3, 0.4], &events);
    let partial = store(4, vec![0.1, 0.2, 0.3, 0.4], &events[..3]);
    let (model, ps) = TgatModel::init::<f64, _>(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let full_idx = NeighborIndex::build(&full);
    let part_idx = NeighborIndex::build(&partial);
    let queries = [(2, 5.0), (3, 5.0), (0, 4.5)];
    let expected = encode(&model, &ps, &GraphView::new(&full, &full_idx, f64::INFINITY), &queries);

    let mut tape = Tape::new();
    let b = ps.bind(&mut tape);
    let feat = tape.constant(Tensor::new(1, 1, vec![f64::from(0.1f32)]).unwrap());
    let w = tape.constant(Tensor::ones(1, 1));
    let edges = [AddedEdge {
        src: 2,
        dst: 3,
        timestamp: 4.0,
    }];
    let view = GraphView::new(&partial, &part_idx, f64::INFINITY).with_added(&edges, feat, w);
    let out = model.encode(&mut tape, &b, &view, &queries).unwrap();
    assert_eq!(tape.value(out).data(), expected.as_slice());
}

#[test]
fn future_events_do_not_leak() {
    let cfg = EncoderConfig {
        hidden: 4,
        heads: 2,
        layers: 2,
        n_nb: 3,
        time_dim: 4,
        ..EncoderConfig::new(1, 1)
    };
    let (model, ps) = TgatModel::init::<f64, _>(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let base = [(0, 1, 1.0, 0.5), (1, 2, 2.0, -0.5), (2, 0, 3.0, 0.25), (0, 3, 4.0, 1.0)];
    let g = store(4, vec![0.0; 4], &base);
    let idx = NeighborIndex::build(&g);
    let q = [(0, 4.0), (1, 4.0), (3, 4.0)];
    let before = encode(&model, &ps, &GraphView::new(&g, &idx, f64::INFINITY), &q);

    let mut perturbed = base.to_vec();
    perturbed[3].3 = -9.0;
    perturbed.push((1, 3, 4.0, 2.0));
    perturbed.push((0, 2, 7.5, 3.0));
    let g2 = store(4, vec![0.0; 4], &perturbed);
    let idx2 = NeighborIndex::build(&g2);
    assert_eq!(before, encode(&model, &ps, &GraphView::new(&g2, &idx2, f64::INFINITY), &q));
}

#[test]
fn link_head_hand_values() {
    let cfg = EncoderConfig {
        hidden: 1,
        heads: 1,
        layers: 1,
        n_nb: 1,
        time_dim: 1,
        ..EncoderConfig::new(1, 1)
    };
    let (model, mut ps) = TgatModel::init::<f64, _>(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::col_vector(vec![0.3, -2.0]));
    let v = tape.constant(Tensor::col_vector(vec![1.2, 0.4]));
    let times = [1.0, 1.0];

    for name in ["head.w1", "head.b1", "head.w2", "head.b2"] {
        let p = ps.iter_mut().find(|p| p.name == name).unwrap();
        p.value = p.value.map(|_| 0.0);
    }
    let b = ps.bind(&mut tape);
    let s = model.link_score(&mut tape, &b, (u, &times), (v, &times)).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

    set(&mut ps, "head.w1", &[0.7, -1.3]);
    set(&mut ps, "head.b1", &[0.2]);
    set(&mut ps, "head.w2", &[1.5]);
    set(&mut ps, "head.b2", &[-0.4]);
    let b = ps.bind(&mut tape);
    let s = model.link_score(&mut tape, &b, (u, &times), (v, &times)).unwrap();
    let oracle = |a: f64, c: f64| 1.0 / (1.0 + (-((0.7 * a - 1.3 * c + 0.2).max(0.0) * 1.5 - 0.4)).exp());
    let got = tape.value(s).data().to_vec();
    assert!((got[0] - oracle(0.3, 1.2)).abs() < 1e-15);
    assert!((got[1] - oracle(-2.0, 0.4)).abs() < 1e-15);

    let swapped = model.link_score(&mut tape, &b, (v, &times), (u, &times)).unwrap();
    assert_ne!(tape.value(swapped).data(), got.as_slice());
    assert!(model.link_score(&mut tape, &b, (u, &times), (v, &[1.0, 2.0])).is_err());
}

#[test]
fn encoder_and_head_gradients_match_finite_differences() {
    let cfg = EncoderConfig {
        hidden: 4,
        heads: 2,
        layers: 2,
        n_nb: 3,
        time_dim: 3,
        ..EncoderConfig::new(1, 1)
    };
    let g = store(
        5,
        vec![0.3, -0.2, 0.5, 0.1, -0.4],
        &[(0, 1, 0.5, 0.4), (1, 2, 1.0, -0.6), (2, 3, 1.7, 0.8), (3, 0, 2.2, -0.1), (4, 1, 2.9, 0.5), (0, 4, 3.3, 0.2)],
    );
    let idx = NeighborIndex::build(&g);
    let (model, ps) = TgatModel::init::<f64, _>(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let point = ps.values();
    let report = grad_check(
        |tape, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let view = GraphView::new(&g, &idx, f64::INFINITY);
            let times = [4.0, 4.0];
            let h = model.encode(tape, &b, &view, &[(0, 4.0), (1, 4.0), (2, 4.0), (3, 4.0)])?;
            let u = tape.slice_rows(h, 0, 2)?;
            let v = tape.slice_rows(h, 2, 2)?;
            let s = model.link_score(tape, &b, (u, &times), (v, &times))?;
            let l = tape.log(s)?;
            Ok::<_, tgsl_core::Error>(tape.sum(l)?)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

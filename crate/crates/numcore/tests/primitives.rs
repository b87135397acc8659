use numcore::{check_primitive, Tape, Tensor, PRIMITIVES};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for name in PRIMITIVES {
        let report = check_primitive(name, 100, 1e-5, &mut rng).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{name}: {report:?}");
        assert!(report.skipped.is_empty(), "{name}: {report:?}");
        assert!(report.checked > 0, "{name}");
    }
}

fn composite(tape: &mut Tape<f32>, seed: u64) -> (Vec<f32>, Vec<Vec<f32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let a = tape.leaf(Tensor::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0)), true);
    let w = tape.leaf(Tensor::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0)), true);
    let h = tape.matmul(a, w).unwrap();
    let s = tape.sigmoid(h).unwrap();
    let c = tape.concat_cols(&[s, h]).unwrap();
    let l = tape.logsumexp(c).unwrap();
    let loss = tape.mean(l).unwrap();
    tape.backward(loss).unwrap();
    (
        tape.value(loss).data().to_vec(),
        vec![tape.grad(a).into_data(), tape.grad(w).into_data()],
    )
}

#[test]
fn seeded_replay_is_bit_identical() {
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    assert_eq!(composite(&mut t1, 9), composite(&mut t2, 9));
}

proptest! {
    #[test]
    fn concat_then_slice_is_identity(rows in 1usize..5, c1 in 1usize..5, c2 in 1usize..5, seed in 0u64..1000) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_fn(rows, c1, |_, _| rng.gen_range(-1.0..1.0)), true);
        let b = tape.leaf(Tensor::from_fn(rows, c2, |_, _| rng.gen_range(-1.0..1.0)), true);
        let cat = tape.concat_cols(&[a, b]).unwrap();
        let a2 = tape.slice_cols(cat, 0, c1).unwrap();
        let b2 = tape.slice_cols(cat, c1, c2).unwrap();
        prop_assert_eq!(tape.value(a2), tape.value(a));
        prop_assert_eq!(tape.value(b2), tape.value(b));
        let la = tape.sum(a2).unwrap();
        let sb = tape.scale(b2, 2.0).unwrap();
        let lb = tape.sum(sb).unwrap();
        let both = tape.concat_cols(&[la, lb]).unwrap();
        let loss = tape.sum(both).unwrap();
        tape.backward(loss).unwrap();
        prop_assert_eq!(tape.grad(a), Tensor::ones(rows, c1));
        prop_assert_eq!(tape.grad(b), Tensor::filled(rows, c2, 2.0));
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use streetnav_tensor::layers::{BiLstm, Dropout, LstmCell, LstmState, MultiHeadAttention};
use streetnav_tensor::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, AdamConfig, AdamState,
    OptimError, ParamStore, Tape, Tensor,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn softmax_and_cross_entropy_of_uniform_logits() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[2, 4]));
    let p = t.softmax(x);
    assert!(t.value(p).data().iter().all(|&v| close(v, 0.25, 1e-12)));
    let l = t.cross_entropy(x, &[1, 3], None).unwrap();
    assert!(close(t.value(l).item(), 4f64.ln(), 1e-12));
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::matrix(1, 3, vec![1000.0, 1000.0, -1000.0]).unwrap());
    let p = t.softmax(x);
    let d = t.value(p).data();
    assert!(close(d[0], 0.5, 1e-12) && close(d[2], 0.0, 1e-12));
}

#[test]
fn layer_norm_standardizes_rows() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap());
    let g = t.constant(Tensor::full(&[1, 4], 1.0));
    let b = t.constant(Tensor::zeros(&[1, 4]));
    let y = t.layer_norm(x, g, b).unwrap();
    for r in 0..2 {
        let row = t.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(close(mean, 0.0, 1e-9));
        assert!(close(var, 1.0, 1e-4));
    }
}

#[test]
fn concat_routes_gradient_to_the_right_part() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::zeros(&[1, 2]));
    let b = t.leaf(Tensor::zeros(&[1, 3]));
    let c = t.concat(&[a, b]).unwrap();
    let w = t.constant(Tensor::matrix(1, 5, vec![0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
    let m = t.mul(c, w).unwrap();
    let l = t.sum(m);
    let g = t.backward(l).unwrap();
    assert_eq!(g.get(a).unwrap(), &[0.0, 0.0]);
    assert_eq!(g.get(b).unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn dropout_is_identity_in_eval_and_rejects_bad_rate() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tape::new();
    let x = t.constant(Tensor::full(&[4, 4], 2.0));
    let y = t.dropout(x, 0.5, false, &mut r).unwrap();
    assert_eq!(t.value(y).data(), t.value(x).data());
    assert!(!t.is_stochastic());
    assert!(t.dropout(x, 1.0, true, &mut r).is_err());
    let z = t.dropout(x, 0.5, true, &mut r).unwrap();
    assert!(t.value(z).data().iter().all(|&v| v == 0.0 || close(v, 4.0, 1e-12)));
    assert!(t.is_stochastic());
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let mut s = ParamStore::new();
    let id = s.add("w", Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
    let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
    let mut adam = AdamState::new(&s, cfg);
    let mut t = Tape::new();
    let vars = s.bind(&mut t);
    let k = t.constant(Tensor::matrix(1, 3, vec![3.0, -0.1, 10.0]).unwrap());
    let m = t.mul(vars[0], k).unwrap();
    let l = t.sum(m);
    let g = t.backward(l).unwrap();
    s.accumulate(&t, &g, &vars);
    adam.update(&mut s).unwrap();
    let got = s.value(id).data();
    let expect = [1.0 - cfg.lr, -2.0 + cfg.lr, 0.5 - cfg.lr];
    for (a, b) in got.iter().zip(expect) {
        assert!(close(*a, b, 1e-9), "{a} vs {b}");
    }
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_weight_decay_shrinks_weights_without_gradient_signal() {
    let mut s = ParamStore::new();
    let id = s.add("w", Tensor::full(&[1, 1], 2.0)).unwrap();
    let mut adam = AdamState::new(&s, AdamConfig::default());
    let mut t = Tape::new();
    let vars = s.bind(&mut t);
    let z = t.scale(vars[0], 0.0);
    let l = t.sum(z);
    let g = t.backward(l).unwrap();
    s.accumulate(&t, &g, &vars);
    adam.update(&mut s).unwrap();
    let want = 2.0 - 5e-4 * 1e-3 * 2.0;
    assert!(close(s.value(id).item(), want, 1e-12));
}

#[test]
fn adam_requires_gradients() {
    let mut s = ParamStore::new();
    s.add("w", Tensor::full(&[1, 1], 2.0)).unwrap();
    let mut adam = AdamState::new(&s, AdamConfig::default());
    assert!(matches!(adam.update(&mut s), Err(OptimError::MissingGradient(_))));
}

#[test]
fn checkpoint_round_trip() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    s.add_uniform("a.weight", &[3, 4], 0.5, &mut r).unwrap();
    s.add_uniform("b", &[1, 7], 2.0, &mut r).unwrap();
    let back = decode_checkpoint(&encode_checkpoint(&s)).unwrap();
    assert_eq!(back.len(), 2);
    for id in s.ids() {
        assert_eq!(back.name(id), s.name(id));
        assert_eq!(back.value(id), s.value(id));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&s, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let mut fresh = ParamStore::new();
    fresh.add("b", Tensor::zeros(&[1, 7])).unwrap();
    fresh.add("a.weight", Tensor::zeros(&[3, 4])).unwrap();
    fresh.copy_values_from(&loaded).unwrap();
    assert_eq!(fresh.value(fresh.find("b").unwrap()), s.value(s.find("b").unwrap()));
}

#[test]
fn checkpoint_rejects_corruption() {
    let mut s = ParamStore::new();
    s.add("w", Tensor::full(&[2, 2], 1.0)).unwrap();
    let bytes = encode_checkpoint(&s);
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
    let mut bad = bytes;
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).is_err());
}

#[test]
fn lstm_with_zero_weights_outputs_zero_hidden() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let cell = LstmCell::new(&mut s, "c", 3, 2, &mut r).unwrap();
    for id in s.ids().collect::<Vec<_>>() {
        s.value_mut(id).fill(0.0);
    }
    let mut t = Tape::new();
    let v = s.bind(&mut t);
    let x = t.constant(Tensor::full(&[2, 3], 1.0));
    let st = cell.zero_state(&mut t, 2);
    let out = cell.step(&mut t, &v, x, st).unwrap();
    assert!(t.value(out.h).data().iter().all(|&h| h == 0.0));
}

#[test]
fn saturated_forget_gate_keeps_cell() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let cell = LstmCell::new(&mut s, "c", 1, 2, &mut r).unwrap();
    for id in s.ids().collect::<Vec<_>>() {
        s.value_mut(id).fill(0.0);
    }
    // input gate closed, forget gate open
    let b = s.find("c.bias").unwrap();
    s.value_mut(b).data_mut().copy_from_slice(&[-50.0, -50.0, 50.0, 50.0, 0.0, 0.0, 0.0, 0.0]);
    let mut t = Tape::new();
    let v = s.bind(&mut t);
    let x = t.constant(Tensor::full(&[1, 1], 1.0));
    let h = t.constant(Tensor::zeros(&[1, 2]));
    let c = t.constant(Tensor::matrix(1, 2, vec![0.7, -0.3]).unwrap());
    let out = cell.step(&mut t, &v, x, LstmState { h, c }).unwrap();
    let got = t.value(out.c).data();
    assert!(close(got[0], 0.7, 1e-9) && close(got[1], -0.3, 1e-9));
}

#[test]
fn bilstm_handles_padding_and_reversal() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut s = ParamStore::new();
    let bi = BiLstm::new(&mut s, "enc", 2, 3, 1, &mut r).unwrap();
    let seq = [[0.1, 0.2], [0.5, -0.4], [-0.3, 0.9]];
    let mut t = Tape::new();
    let v = s.bind(&mut t);
    let mut dr = ChaCha8Rng::seed_from_u64(0);
    let mut drop = Dropout { p: 0.0, training: false, rng: &mut dr };
    // batch of two: full sequence, and its first two tokens padded to length 3
    let mut rows = Vec::new();
    for (l, tok) in seq.iter().enumerate() {
        rows.extend_from_slice(tok);
        if l < 2 {
            rows.extend_from_slice(tok);
        } else {
            rows.extend_from_slice(&[9.0, 9.0]);
        }
    }
    let x = t.constant(Tensor::matrix(6, 2, rows).unwrap());
    let out = bi.forward(&mut t, &v, x, &[3, 2], &mut drop).unwrap();
    assert_eq!(t.value(out.states).shape(), &[6, 6]);

    // the padded sequence must match running the short sequence alone
    let mut t2 = Tape::new();
    let v2 = s.bind(&mut t2);
    let short: Vec<f64> = seq[..2].iter().flatten().copied().collect();
    let x2 = t2.constant(Tensor::matrix(2, 2, short).unwrap());
    let out2 = bi.forward(&mut t2, &v2, x2, &[2], &mut drop).unwrap();
    for l in 0..2 {
        let a = t.value(out.states).row(l * 2 + 1);
        let b = t2.value(out2.states).row(l);
        for (x, y) in a.iter().zip(b) {
            assert!(close(*x, *y, 1e-12));
        }
    }
    let cb = t.value(out.final_cell_backward).row(1).to_vec();
    assert_eq!(cb, t2.value(out2.final_cell_backward).row(0));
}

#[test]
fn attention_over_single_key_has_unit_weight() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, "att", 3, 5, 4, 2, &mut r).unwrap();
    let mut t = Tape::new();
    let v = s.bind(&mut t);
    let q = t.constant(Tensor::full(&[2, 3], 0.3));
    let mem = t.constant(Tensor::full(&[2, 5], -0.2));
    let m = mha.memory(&mut t, &v, mem, 1, None).unwrap();
    let mut dr = ChaCha8Rng::seed_from_u64(0);
    let mut drop = Dropout { p: 0.3, training: false, rng: &mut dr };
    let out = mha.attend(&mut t, &v, q, &m, &mut drop).unwrap();
    for w in &out.weights {
        assert!(t.value(*w).data().iter().all(|&x| close(x, 1.0, 1e-12)));
    }
    assert_eq!(t.value(out.context).shape(), &[2, 4]);
}

#[test]
fn attention_over_identical_keys_is_uniform() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, "att", 3, 5, 4, 2, &mut r).unwrap();
    let mut t = Tape::new();
    let v = s.bind(&mut t);
    let q = t.constant(Tensor::full(&[1, 3], 0.3));
    let mem = t.constant(Tensor::full(&[4, 5], 0.8));
    let m = mha.memory(&mut t, &v, mem, 4, None).unwrap();
    let mut dr = ChaCha8Rng::seed_from_u64(0);
    let mut drop = Dropout { p: 0.0, training: false, rng: &mut dr };
    let out = mha.attend(&mut t, &v, q, &m, &mut drop).unwrap();
    for w in &out.weights {
        assert!(t.value(*w).data().iter().all(|&x| close(x, 0.25, 1e-12)));
    }
}

mod props {
    use proptest::prelude::*;
    use streetnav_tensor::{Tape, Tensor};

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-30.0f64..30.0, 12)) {
            let mut t = Tape::new();
            let x = t.constant(Tensor::matrix(3, 4, v).unwrap());
            let p = t.softmax(x);
            for r in 0..3 {
                let s: f64 = t.value(p).row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn matmul_matches_naive(a in proptest::collection::vec(-5.0f64..5.0, 6), b in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let mut t = Tape::new();
            let x = t.constant(Tensor::matrix(2, 3, a.clone()).unwrap());
            let y = t.constant(Tensor::matrix(3, 4, b.clone()).unwrap());
            let z = t.matmul(x, y).unwrap();
            for i in 0..2 {
                for j in 0..4 {
                    let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                    prop_assert!((t.value(z).data()[i * 4 + j] - want).abs() < 1e-9);
                }
            }
        }
    }
}

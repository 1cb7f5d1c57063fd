use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streetnav_tensor::layers::{BiLstm, Dropout, LstmCell, MultiHeadAttention};
use streetnav_tensor::{
    grad_check, GradCheckConfig, GradCheckError, ParamId, ParamStore, Tape, Tensor, TensorError,
    Var,
};

const TOL: f64 = 1e-4;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

/// Projects an arbitrary output onto fixed random weights so the checked
/// loss depends on every output element.
fn readout(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.value(y).shape().to_vec();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let w = tape.constant(Tensor::new(&shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())?);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check<F>(store: &mut ParamStore, f: F) -> f64
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let report = grad_check(store, f, &GradCheckConfig::default()).unwrap();
    assert!(report.checked > 0);
    report.max_rel_err
}

fn store_with(shapes: &[(&str, usize, usize)]) -> (ParamStore, Vec<ParamId>) {
    let mut r = rng();
    let mut s = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|&(n, a, b)| s.add(n, random(&mut r, a, b)).unwrap())
        .collect();
    (s, ids)
}

#[test]
fn matmul_add_gradients() {
    let (mut s, ids) = store_with(&[("a", 3, 4), ("b", 4, 2), ("c", 3, 2), ("r", 1, 2)]);
    let err = check(&mut s, |t, v| {
        let m = t.matmul(v[ids[0].0], v[ids[1].0])?;
        let a = t.add(m, v[ids[2].0])?;
        let y = t.add_row(a, v[ids[3].0])?;
        readout(t, y, 1)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn elementwise_gradients() {
    let (mut s, ids) = store_with(&[("x", 3, 5), ("y", 3, 5)]);
    let err = check(&mut s, |t, v| {
        let x = v[ids[0].0];
        let y = v[ids[1].0];
        let a = t.sigmoid(x);
        let b = t.tanh(y);
        let c = t.mul(a, b)?;
        let d = t.scale(c, 1.7);
        let shifted = t.add(d, x)?;
        let e = t.relu(shifted);
        readout(t, e, 2)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn shape_op_gradients() {
    let (mut s, ids) = store_with(&[("x", 4, 3), ("y", 4, 2), ("table", 6, 3)]);
    let err = check(&mut s, |t, v| {
        let c = t.concat(&[v[ids[0].0], v[ids[1].0]])?;
        let a = t.slice_cols(c, 1, 3)?;
        let b = t.slice_rows(a, 1, 2)?;
        let e = t.embedding(v[ids[2].0], &[5, 0, 5, 2])?;
        let st = t.stack_rows(&[b, e])?;
        let g = t.group_mean(st, 3)?;
        readout(t, g, 3)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn softmax_layer_norm_cross_entropy_gradients() {
    let (mut s, ids) = store_with(&[("x", 4, 5), ("g", 1, 5), ("b", 1, 5)]);
    let err = check(&mut s, |t, v| {
        let n = t.layer_norm(v[ids[0].0], v[ids[1].0], v[ids[2].0])?;
        let p = t.softmax(n);
        let l1 = readout(t, p, 4)?;
        let l2 = t.cross_entropy(n, &[0, 3, 4, 1], Some(&[1.0, 0.5, 0.0, 2.0]))?;
        t.add(l1, l2)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn recurrent_and_attention_op_gradients() {
    let (mut s, ids) = store_with(&[("gates", 3, 8), ("c", 3, 2), ("q", 2, 3), ("k", 8, 3), ("v", 8, 3)]);
    let err = check(&mut s, |t, v| {
        let hc = t.lstm_cell(v[ids[0].0], v[ids[1].0])?;
        let h = t.slice_cols(hc, 0, 2)?;
        let masked = t.mask_rows(h, v[ids[1].0], &[true, false, true])?;
        let l1 = readout(t, masked, 5)?;
        let sc = t.batch_dot(v[ids[2].0], v[ids[3].0], 4)?;
        let p = t.softmax(sc);
        let ws = t.batch_weighted_sum(p, v[ids[4].0], 4)?;
        let l2 = readout(t, ws, 6)?;
        t.add(l1, l2)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn layer_gradients() {
    let mut r = rng();
    let mut s = ParamStore::new();
    let bi = BiLstm::new(&mut s, "enc", 3, 4, 2, &mut r).unwrap();
    let cell = LstmCell::new(&mut s, "dec", 5, 4, &mut r).unwrap();
    let mha = MultiHeadAttention::new(&mut s, "att", 4, 8, 4, 2, &mut r).unwrap();
    let x = s.add("x", random(&mut r, 3 * 2, 3)).unwrap();
    let q = s.add("q", random(&mut r, 2, 5)).unwrap();
    let err = check(&mut s, |t, v| {
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let mut drop = Dropout { p: 0.3, training: false, rng: &mut drng };
        let enc = bi.forward(t, v, v[x.0], &[3, 2], &mut drop)?;
        let init = t.concat(&[enc.final_cell_forward])?;
        let st0 = cell.zero_state(t, 2);
        let st = cell.step(t, v, v[q.0], streetnav_tensor::layers::LstmState { h: st0.h, c: init })?;
        // batch-major memory for attention
        let perm: Vec<usize> = (0..2).flat_map(|b| (0..3).map(move |l| l * 2 + b)).collect();
        let mem_rows = t.embedding(enc.states, &perm)?;
        let mem = mha.memory(t, v, mem_rows, 3, None)?;
        let out = mha.attend(t, v, st.h, &mem, &mut drop)?;
        readout(t, out.context, 9)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn grad_check_rejects_dropout() {
    let (mut s, ids) = store_with(&[("x", 2, 3)]);
    let res = grad_check(
        &mut s,
        |t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(1);
            let d = t.dropout(v[ids[0].0], 0.5, true, &mut r)?;
            Ok(t.sum(d))
        },
        &GradCheckConfig::default(),
    );
    assert!(matches!(res, Err(GradCheckError::Stochastic)));
}

#[test]
fn grad_check_rejects_non_scalar() {
    let (mut s, ids) = store_with(&[("x", 2, 3)]);
    let res = grad_check(&mut s, |t, v| Ok(t.tanh(v[ids[0].0])), &GradCheckConfig::default());
    assert!(matches!(res, Err(GradCheckError::NotScalar(_))));
}

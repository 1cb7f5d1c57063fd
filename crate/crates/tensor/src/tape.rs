//! Reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and whatever
//! the backward pass needs. Nodes only reference earlier nodes, so a single
//! reverse sweep over the node list is a valid topological order.

use rand::Rng;

use crate::error::TensorError;
use crate::params::ParamId;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-6;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    StackRows(Vec<Var>),
    Embedding(Var, Vec<usize>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Dropout(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
        total_weight: f64,
    },
    LstmCell {
        gates: Var,
        c_prev: Var,
        act: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    MaskRows {
        new: Var,
        old: Var,
        keep_new: Vec<bool>,
    },
    BatchDot {
        q: Var,
        k: Var,
        len: usize,
    },
    BatchWeighted {
        p: Var,
        v: Var,
        len: usize,
    },
    GroupMean(Var, usize),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording context for one forward/backward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    stochastic: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c += a * b` for row-major `a: m x k`, `b: k x n` with optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // Row-major storage of the un-transposed operands: a is m x k (or k x m
    // when transposed), b is k x n (or n x k when transposed).
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Vars at or past
    /// `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// True once a dropout with non-zero rate was recorded.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub(crate) fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that collects a gradient (used by tests and probes).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub(crate) fn param_leaf(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Op::Param(id), true)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Tensor::zeros(&[rows, cols]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = shape2(self.value(a));
        let (k2, n) = shape2(self.value(b));
        if k != k2 {
            return Err(TensorError::dim(
                "matmul",
                format!("[{m}x{k}] * [{k2}x{n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (shape2(self.value(a)), shape2(self.value(b)));
        if sa != sb {
            return Err(TensorError::dim("add", format!("{sa:?} + {sb:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(sa.0, sa.1, data)?, Op::Add(a, b), rg))
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (m, n) = shape2(self.value(x));
        let (r, n2) = shape2(self.value(row));
        if r != 1 || n != n2 {
            return Err(TensorError::dim(
                "add_row",
                format!("[{m}x{n}] + [{r}x{n2}]"),
            ));
        }
        let b = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (d, bb) in chunk.iter_mut().zip(b) {
                *d += bb;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(x, row), rg))
    }

    /// `x * w + b` with `b` a row vector.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (shape2(self.value(a)), shape2(self.value(b)));
        if sa != sb {
            return Err(TensorError::dim("mul", format!("{sa:?} * {sb:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(sa.0, sa.1, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let (m, n) = shape2(self.value(x));
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let rg = self.rg(x);
        self.push(
            Tensor::matrix(m, n, data).expect("shape preserved"),
            Op::Scale(x, factor),
            rg,
        )
    }

    /// Column-wise concatenation of tensors that share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Argument {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = shape2(self.value(p));
            if r != m {
                return Err(TensorError::dim(
                    "concat",
                    format!("row counts differ: {m} vs {r}"),
                ));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                data[r * n + offset..r * n + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var, TensorError> {
        let (m, n) = shape2(self.value(x));
        if start + width > n {
            return Err(TensorError::dim(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + width),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * width);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + width]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, width, data)?, Op::SliceCols(x, start), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var, TensorError> {
        let (m, n) = shape2(self.value(x));
        if start + count > m {
            return Err(TensorError::dim(
                "slice_rows",
                format!("rows {start}..{} of {m}", start + count),
            ));
        }
        let data = self.value(x).data()[start * n..(start + count) * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(count, n, data)?, Op::SliceRows(x, start), rg))
    }

    /// Row-wise concatenation of tensors that share a column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Argument {
                op: "stack_rows",
                detail: "no inputs".into(),
            });
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (r, c) = shape2(self.value(p));
            if c != n {
                return Err(TensorError::dim(
                    "stack_rows",
                    format!("column counts differ: {n} vs {c}"),
                ));
            }
            data.extend_from_slice(self.value(p).data());
            m += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::StackRows(parts.to_vec()), rg))
    }

    /// Gathers rows of `table` (`vocab x dim`). Also serves as a general row
    /// permutation / selection.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (v, d) = shape2(self.value(table));
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), d, data)?,
            Op::Embedding(table, ids.to_vec()),
            rg,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = shape2(self.value(x));
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(m, n, data).expect("shape preserved"), op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (m, n) = shape2(self.value(x));
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        self.push(
            Tensor::matrix(m, n, data).expect("shape preserved"),
            Op::Softmax(x),
            rg,
        )
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)`. Identity
    /// when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Argument {
                op: "dropout",
                detail: format!("rate {p} outside [0, 1)"),
            });
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        self.stochastic = true;
        let (m, n) = shape2(self.value(x));
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..m * n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, k)| v * k)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::Dropout(x, mask), rg))
    }

    /// Normalizes every row to zero mean / unit variance, then applies the
    /// `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (m, n) = shape2(self.value(x));
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if shape2(self.value(p)) != (1, n) {
                return Err(TensorError::dim(
                    "layer_norm",
                    format!("{name} must be [1x{n}], got {:?}", self.value(p).shape()),
                ));
            }
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let xh = (row[c] - mean) * rs;
                xhat[r * n + c] = xh;
                out[r * n + c] = xh * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Weighted mean cross entropy over rows of `logits`. Rows with weight
    /// zero are ignored. Returns a `1 x 1` tensor.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Var, TensorError> {
        let (m, n) = shape2(self.value(logits));
        if targets.len() != m {
            return Err(TensorError::dim(
                "cross_entropy",
                format!("{m} rows but {} targets", targets.len()),
            ));
        }
        let weights = match weights {
            Some(w) if w.len() != m => {
                return Err(TensorError::dim(
                    "cross_entropy",
                    format!("{m} rows but {} weights", w.len()),
                ))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; m],
        };
        let total_weight: f64 = weights.iter().sum();
        if total_weight <= 0.0 {
            return Err(TensorError::Argument {
                op: "cross_entropy",
                detail: "total weight must be positive".into(),
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(n).enumerate() {
            let t = targets[r];
            if t >= n {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    bound: n,
                });
            }
            softmax_in_place(row);
            if weights[r] != 0.0 {
                loss -= weights[r] * row[t].max(f64::MIN_POSITIVE).ln();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / total_weight),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
                total_weight,
            },
            rg,
        ))
    }

    /// LSTM cell nonlinearity. `gates` holds pre-activations `[i f g o]`
    /// (`B x 4H`); returns `B x 2H` laid out as `[h | c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var, TensorError> {
        let (b, h4) = shape2(self.value(gates));
        let (b2, h) = shape2(self.value(c_prev));
        if h4 != 4 * h || b != b2 {
            return Err(TensorError::dim(
                "lstm_cell",
                format!("gates [{b}x{h4}] vs cell [{b2}x{h}]"),
            ));
        }
        let pre = self.value(gates).data();
        let cp = self.value(c_prev).data();
        let mut act = vec![0.0; b * h4];
        let mut tanh_c = vec![0.0; b * h];
        let mut out = vec![0.0; b * 2 * h];
        for r in 0..b {
            let g_row = &pre[r * h4..(r + 1) * h4];
            let a_row = &mut act[r * h4..(r + 1) * h4];
            for j in 0..h {
                a_row[j] = sigmoid(g_row[j]);
                a_row[h + j] = sigmoid(g_row[h + j]);
                a_row[2 * h + j] = g_row[2 * h + j].tanh();
                a_row[3 * h + j] = sigmoid(g_row[3 * h + j]);
            }
            for j in 0..h {
                let c = a_row[h + j] * cp[r * h + j] + a_row[j] * a_row[2 * h + j];
                let tc = c.tanh();
                tanh_c[r * h + j] = tc;
                out[r * 2 * h + j] = a_row[3 * h + j] * tc;
                out[r * 2 * h + h + j] = c;
            }
        }
        let rg = self.rg(gates) || self.rg(c_prev);
        Ok(self.push(
            Tensor::matrix(b, 2 * h, out)?,
            Op::LstmCell {
                gates,
                c_prev,
                act,
                tanh_c,
            },
            rg,
        ))
    }

    /// Row-wise select: row `r` comes from `new` when `keep_new[r]`, else
    /// from `old`.
    pub fn mask_rows(&mut self, new: Var, old: Var, keep_new: &[bool]) -> Result<Var, TensorError> {
        let (sn, so) = (shape2(self.value(new)), shape2(self.value(old)));
        if sn != so || keep_new.len() != sn.0 {
            return Err(TensorError::dim(
                "mask_rows",
                format!("{sn:?} vs {so:?} with {} flags", keep_new.len()),
            ));
        }
        let n = sn.1;
        let mut data = self.value(old).data().to_vec();
        let src = self.value(new).data();
        for (r, &k) in keep_new.iter().enumerate() {
            if k {
                data[r * n..(r + 1) * n].copy_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
        let rg = self.rg(new) || self.rg(old);
        Ok(self.push(
            Tensor::matrix(sn.0, n, data)?,
            Op::MaskRows {
                new,
                old,
                keep_new: keep_new.to_vec(),
            },
            rg,
        ))
    }

    /// Per-example dot products: `q` is `B x d`, `k` is `(B*len) x d`;
    /// returns `B x len`.
    pub fn batch_dot(&mut self, q: Var, k: Var, len: usize) -> Result<Var, TensorError> {
        let (b, d) = shape2(self.value(q));
        let (bl, d2) = shape2(self.value(k));
        if d != d2 || bl != b * len {
            return Err(TensorError::dim(
                "batch_dot",
                format!("q [{b}x{d}] keys [{bl}x{d2}] len {len}"),
            ));
        }
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let mut out = vec![0.0; b * len];
        for i in 0..b {
            let qr = &qd[i * d..(i + 1) * d];
            for l in 0..len {
                let kr = &kd[(i * len + l) * d..(i * len + l + 1) * d];
                out[i * len + l] = qr.iter().zip(kr).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.rg(q) || self.rg(k);
        Ok(self.push(Tensor::matrix(b, len, out)?, Op::BatchDot { q, k, len }, rg))
    }

    /// Per-example weighted sums: `p` is `B x len`, `v` is `(B*len) x d`;
    /// returns `B x d`.
    pub fn batch_weighted_sum(&mut self, p: Var, v: Var, len: usize) -> Result<Var, TensorError> {
        let (b, l) = shape2(self.value(p));
        let (bl, d) = shape2(self.value(v));
        if l != len || bl != b * len {
            return Err(TensorError::dim(
                "batch_weighted_sum",
                format!("weights [{b}x{l}] values [{bl}x{d}] len {len}"),
            ));
        }
        let pd = self.value(p).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..len {
                let w = pd[i * len + j];
                let vr = &vd[(i * len + j) * d..(i * len + j + 1) * d];
                for (x, y) in o.iter_mut().zip(vr) {
                    *x += w * y;
                }
            }
        }
        let rg = self.rg(p) || self.rg(v);
        Ok(self.push(
            Tensor::matrix(b, d, out)?,
            Op::BatchWeighted { p, v, len },
            rg,
        ))
    }

    /// Mean over consecutive groups of `group` rows: `(B*group) x d -> B x d`.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var, TensorError> {
        let (m, d) = shape2(self.value(x));
        if group == 0 || m % group != 0 {
            return Err(TensorError::dim(
                "group_mean",
                format!("{m} rows not divisible into groups of {group}"),
            ));
        }
        let b = m / group;
        let src = self.value(x).data();
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..group {
                for (x, y) in o.iter_mut().zip(&src[(i * group + j) * d..(i * group + j + 1) * d]) {
                    *x += y;
                }
            }
            o.iter_mut().for_each(|x| *x /= group as f64);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(b, d, out)?, Op::GroupMean(x, group), rg))
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::dim(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = shape2(self.value(*a));
                let n = self.value(*b).cols();
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                acc(*a, &mut |ga| gemm_acc(m, n, k, g, false, bd, true, ga));
                acc(*b, &mut |gb| gemm_acc(k, m, n, ad, true, g, false, gb));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(x, row) => {
                let n = out.cols();
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Mul(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for ((x, gy), y) in ga.iter_mut().zip(g).zip(bd) {
                        *x += gy * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gy), y) in gb.iter_mut().zip(g).zip(ad) {
                        *x += gy * y;
                    }
                });
            }
            Op::Scale(x, f) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += f * b));
            }
            Op::Concat(parts) => {
                let (m, n) = shape2(out);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |gp| {
                        for r in 0..m {
                            for c in 0..w {
                                gp[r * w + c] += g[r * n + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, w) = shape2(out);
                let n = self.value(*x).cols();
                acc(*x, &mut |gx| {
                    for r in 0..m {
                        for c in 0..w {
                            gx[r * n + start + c] += g[r * w + c];
                        }
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let n = out.cols();
                acc(*x, &mut |gx| {
                    gx[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b);
                });
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |gp| {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(a, b)| *a += b);
                    });
                    offset += len;
                }
            }
            Op::Embedding(table, ids) => {
                let d = out.cols();
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                acc(*x, &mut |gx| {
                    for ((a, gy), s) in gx.iter_mut().zip(g).zip(y) {
                        *a += gy * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = out.data();
                acc(*x, &mut |gx| {
                    for ((a, gy), t) in gx.iter_mut().zip(g).zip(y) {
                        *a += gy * (1.0 - t * t);
                    }
                });
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, gy), v) in gx.iter_mut().zip(g).zip(xd) {
                        if *v > 0.0 {
                            *a += gy;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let n = out.cols();
                let y = out.data();
                acc(*x, &mut |gx| {
                    for ((gr, yr), gyr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gyr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gr[j] += yr[j] * (gyr[j] - dot);
                        }
                    }
                });
            }
            Op::Dropout(x, mask) => {
                acc(*x, &mut |gx| {
                    for ((a, gy), k) in gx.iter_mut().zip(g).zip(mask) {
                        *a += gy * k;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, n) = shape2(out);
                let gd = self.value(*gain).data();
                acc(*gain, &mut |gg| {
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g[r * n + c];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    let nf = n as f64;
                    for r in 0..m {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..n {
                            let d = g[r * n + c] * gd[c];
                            sum_d += d;
                            sum_dx += d * xhat[r * n + c];
                        }
                        for c in 0..n {
                            let d = g[r * n + c] * gd[c];
                            gx[r * n + c] +=
                                rstd[r] / nf * (nf * d - sum_d - xhat[r * n + c] * sum_dx);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
                total_weight,
            } => {
                let n = self.value(*logits).cols();
                let scale = g[0] / total_weight;
                acc(*logits, &mut |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        let w = weights[r] * scale;
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..n {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[r * n + c] += w * (probs[r * n + c] - onehot);
                        }
                    }
                });
            }
            Op::LstmCell {
                gates,
                c_prev,
                act,
                tanh_c,
            } => {
                let (b, h2) = shape2(out);
                let h = h2 / 2;
                let cp = self.value(*c_prev).data();
                // Total cell gradient per unit: direct plus through h.
                let mut dc = vec![0.0; b * h];
                for r in 0..b {
                    for j in 0..h {
                        let o = act[r * 4 * h + 3 * h + j];
                        let tc = tanh_c[r * h + j];
                        dc[r * h + j] = g[r * h2 + h + j] + g[r * h2 + j] * o * (1.0 - tc * tc);
                    }
                }
                acc(*c_prev, &mut |gc| {
                    for r in 0..b {
                        for j in 0..h {
                            gc[r * h + j] += dc[r * h + j] * act[r * 4 * h + h + j];
                        }
                    }
                });
                acc(*gates, &mut |gg| {
                    for r in 0..b {
                        let a = &act[r * 4 * h..(r + 1) * 4 * h];
                        let row = &mut gg[r * 4 * h..(r + 1) * 4 * h];
                        for j in 0..h {
                            let d = dc[r * h + j];
                            let (i, f, gg_, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                            row[j] += d * gg_ * i * (1.0 - i);
                            row[h + j] += d * cp[r * h + j] * f * (1.0 - f);
                            row[2 * h + j] += d * i * (1.0 - gg_ * gg_);
                            row[3 * h + j] += g[r * h2 + j] * tanh_c[r * h + j] * o * (1.0 - o);
                        }
                    }
                });
            }
            Op::MaskRows { new, old, keep_new } => {
                let n = out.cols();
                acc(*new, &mut |gn| {
                    for (r, &k) in keep_new.iter().enumerate() {
                        if k {
                            for c in 0..n {
                                gn[r * n + c] += g[r * n + c];
                            }
                        }
                    }
                });
                acc(*old, &mut |go| {
                    for (r, &k) in keep_new.iter().enumerate() {
                        if !k {
                            for c in 0..n {
                                go[r * n + c] += g[r * n + c];
                            }
                        }
                    }
                });
            }
            Op::BatchDot { q, k, len } => {
                let (b, d) = shape2(self.value(*q));
                let qd = self.value(*q).data();
                let kd = self.value(*k).data();
                acc(*q, &mut |gq| {
                    for i in 0..b {
                        for l in 0..*len {
                            let w = g[i * len + l];
                            let kr = &kd[(i * len + l) * d..(i * len + l + 1) * d];
                            for (a, y) in gq[i * d..(i + 1) * d].iter_mut().zip(kr) {
                                *a += w * y;
                            }
                        }
                    }
                });
                acc(*k, &mut |gk| {
                    for i in 0..b {
                        let qr = &qd[i * d..(i + 1) * d];
                        for l in 0..*len {
                            let w = g[i * len + l];
                            for (a, y) in gk[(i * len + l) * d..(i * len + l + 1) * d]
                                .iter_mut()
                                .zip(qr)
                            {
                                *a += w * y;
                            }
                        }
                    }
                });
            }
            Op::BatchWeighted { p, v, len } => {
                let (b, d) = shape2(out);
                let pd = self.value(*p).data();
                let vd = self.value(*v).data();
                acc(*p, &mut |gp| {
                    for i in 0..b {
                        let gr = &g[i * d..(i + 1) * d];
                        for l in 0..*len {
                            let vr = &vd[(i * len + l) * d..(i * len + l + 1) * d];
                            gp[i * len + l] += gr.iter().zip(vr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*v, &mut |gv| {
                    for i in 0..b {
                        let gr = &g[i * d..(i + 1) * d];
                        for l in 0..*len {
                            let w = pd[i * len + l];
                            for (a, y) in gv[(i * len + l) * d..(i * len + l + 1) * d]
                                .iter_mut()
                                .zip(gr)
                            {
                                *a += w * y;
                            }
                        }
                    }
                });
            }
            Op::GroupMean(x, group) => {
                let (b, d) = shape2(out);
                let inv = 1.0 / *group as f64;
                acc(*x, &mut |gx| {
                    for i in 0..b {
                        for j in 0..*group {
                            for c in 0..d {
                                gx[(i * group + j) * d + c] += g[i * d + c] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

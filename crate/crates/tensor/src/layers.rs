//! Neural layers built from tape ops: dense, LSTM cell, stacked
//! bidirectional LSTM and multi-head attention.
//!
//! Layers only hold [`ParamId`]s. Forward passes take the parameter vars
//! returned by [`ParamStore::bind`], indexed by `ParamId`.

use rand::Rng;

use crate::error::TensorError;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Dropout settings threaded through a forward pass.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub p: f64,
    pub training: bool,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> Dropout<'_, R> {
    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        tape.dropout(x, self.p, self.training, self.rng)
    }

    pub fn apply_with(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var, TensorError> {
        tape.dropout(x, p, self.training, self.rng)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Ok(Linear {
            weight: store.add_uniform(format!("{name}.weight"), &[input, output], bound, rng)?,
            bias: store.add_uniform(format!("{name}.bias"), &[1, output], bound, rng)?,
            input,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, TensorError> {
        tape.linear(x, vars[self.weight.0], vars[self.bias.0])
    }
}

/// Recurrent state of one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell with gate order `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input = store.add_uniform(format!("{name}.w_input"), &[input, 4 * hidden], bound, rng)?;
        let w_hidden =
            store.add_uniform(format!("{name}.w_hidden"), &[hidden, 4 * hidden], bound, rng)?;
        let mut b = vec![0.0; 4 * hidden];
        // forget gate starts open
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::new(&[1, 4 * hidden], b)?)?;
        Ok(LstmCell {
            w_input,
            w_hidden,
            bias,
            input,
            hidden,
        })
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        let h = tape.zeros(batch, self.hidden);
        let c = tape.zeros(batch, self.hidden);
        LstmState { h, c }
    }

    /// `x W_input + b` for any number of rows; lets callers project a whole
    /// sequence with one matrix product.
    pub fn project_input(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, TensorError> {
        tape.linear(x, vars[self.w_input.0], vars[self.bias.0])
    }

    /// One step from an already projected input.
    pub fn step_projected(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        projected: Var,
        state: LstmState,
    ) -> Result<LstmState, TensorError> {
        let rec = tape.matmul(state.h, vars[self.w_hidden.0])?;
        let gates = tape.add(projected, rec)?;
        let hc = tape.lstm_cell(gates, state.c)?;
        let h = tape.slice_cols(hc, 0, self.hidden)?;
        let c = tape.slice_cols(hc, self.hidden, self.hidden)?;
        Ok(LstmState { h, c })
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        state: LstmState,
    ) -> Result<LstmState, TensorError> {
        let projected = self.project_input(tape, vars, x)?;
        self.step_projected(tape, vars, projected, state)
    }
}

/// Output of [`BiLstm::forward`].
pub struct BiLstmOutput {
    /// Position-major hidden states of the last layer, `(L*B) x 2H`, forward
    /// half first.
    pub states: Var,
    /// Final cell states of the last layer, forward and backward (`B x H`).
    pub final_cell_forward: Var,
    pub final_cell_backward: Var,
}

/// Stacked bidirectional LSTM over padded, variable-length batches.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let inp = if l == 0 { input } else { 2 * hidden };
            let f = LstmCell::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng)?;
            let b = LstmCell::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng)?;
            layers.push((f, b));
        }
        Ok(BiLstm { layers, hidden })
    }

    /// `x` is position-major `(L*B) x input` where row `l*B + b` is token `l`
    /// of sequence `b`; `lengths[b]` counts the real tokens of sequence `b`.
    /// Padding positions never touch the recurrent state, so the backward
    /// direction starts at each sequence's own last token.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        lengths: &[usize],
        dropout: &mut Dropout<'_, R>,
    ) -> Result<BiLstmOutput, TensorError> {
        let batch = lengths.len();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        if batch == 0 || max_len == 0 || lengths.iter().any(|&l| l == 0) {
            return Err(TensorError::Argument {
                op: "bilstm",
                detail: "empty sequence".into(),
            });
        }
        if tape.value(x).rows() != batch * max_len {
            return Err(TensorError::dim(
                "bilstm",
                format!(
                    "{} input rows for batch {batch} x length {max_len}",
                    tape.value(x).rows()
                ),
            ));
        }
        let masks: Vec<Vec<bool>> = (0..max_len)
            .map(|l| lengths.iter().map(|&n| l < n).collect())
            .collect();
        let mut input = x;
        let mut finals = None;
        for (li, (fwd, bwd)) in self.layers.iter().enumerate() {
            let mut outs_f = vec![None; max_len];
            let mut outs_b = vec![None; max_len];
            let proj_f = fwd.project_input(tape, vars, input)?;
            let proj_b = bwd.project_input(tape, vars, input)?;
            let mut sf = fwd.zero_state(tape, batch);
            for l in 0..max_len {
                let p = tape.slice_rows(proj_f, l * batch, batch)?;
                let next = fwd.step_projected(tape, vars, p, sf)?;
                sf = mask_state(tape, next, sf, &masks[l])?;
                outs_f[l] = Some(sf.h);
            }
            let mut sb = bwd.zero_state(tape, batch);
            for l in (0..max_len).rev() {
                let p = tape.slice_rows(proj_b, l * batch, batch)?;
                let next = bwd.step_projected(tape, vars, p, sb)?;
                sb = mask_state(tape, next, sb, &masks[l])?;
                outs_b[l] = Some(sb.h);
            }
            let mut rows = Vec::with_capacity(max_len);
            for l in 0..max_len {
                rows.push(tape.concat(&[outs_f[l].unwrap(), outs_b[l].unwrap()])?);
            }
            let stacked = tape.stack_rows(&rows)?;
            input = if li + 1 < self.layers.len() {
                dropout.apply(tape, stacked)?
            } else {
                stacked
            };
            finals = Some((sf.c, sb.c));
        }
        let (cf, cb) = finals.expect("at least one layer");
        Ok(BiLstmOutput {
            states: input,
            final_cell_forward: cf,
            final_cell_backward: cb,
        })
    }
}

fn mask_state(
    tape: &mut Tape,
    next: LstmState,
    prev: LstmState,
    keep: &[bool],
) -> Result<LstmState, TensorError> {
    if keep.iter().all(|&k| k) {
        return Ok(next);
    }
    Ok(LstmState {
        h: tape.mask_rows(next.h, prev.h, keep)?,
        c: tape.mask_rows(next.c, prev.c, keep)?,
    })
}

/// Projected keys and values for a batch of sequences, batch-major
/// `(B*len) x model`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    pub keys: Var,
    pub values: Var,
    pub len: usize,
    /// Optional constant `B x len` additive score mask (0 or a large
    /// negative number for padding).
    pub mask: Option<Var>,
}

/// Scaled dot-product multi-head attention for a single query per example,
/// followed by attention dropout on the weights, an output projection and
/// layer normalization.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub heads: usize,
    pub model: usize,
}

pub struct AttentionOutput {
    pub context: Var,
    /// Per-head attention weights, `B x len` each.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if heads == 0 || model % heads != 0 {
            return Err(TensorError::Argument {
                op: "MultiHeadAttention::new",
                detail: format!("{heads} heads do not divide model dim {model}"),
            });
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), query_dim, model, rng)?,
            key: Linear::new(store, &format!("{name}.key"), key_dim, model, rng)?,
            value: Linear::new(store, &format!("{name}.value"), key_dim, model, rng)?,
            output: Linear::new(store, &format!("{name}.output"), model, model, rng)?,
            ln_gain: store.add(format!("{name}.ln.gain"), Tensor::full(&[1, model], 1.0))?,
            ln_bias: store.add(format!("{name}.ln.bias"), Tensor::zeros(&[1, model]))?,
            heads,
            model,
        })
    }

    /// Projects batch-major `(B*len) x key_dim` memory rows.
    pub fn memory(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        rows: Var,
        len: usize,
        mask: Option<Var>,
    ) -> Result<AttentionMemory, TensorError> {
        if len == 0 {
            return Err(TensorError::Argument {
                op: "attention",
                detail: "empty memory".into(),
            });
        }
        Ok(AttentionMemory {
            keys: self.key.forward(tape, vars, rows)?,
            values: self.value.forward(tape, vars, rows)?,
            len,
            mask,
        })
    }

    pub fn attend<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        query: Var,
        memory: &AttentionMemory,
        dropout: &mut Dropout<'_, R>,
    ) -> Result<AttentionOutput, TensorError> {
        let q = self.query.forward(tape, vars, query)?;
        let dh = self.model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, memory.keys, memory.values)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(memory.keys, h * dh, dh)?,
                    tape.slice_cols(memory.values, h * dh, dh)?,
                )
            };
            let raw = tape.batch_dot(qh, kh, memory.len)?;
            let mut scores = tape.scale(raw, scale);
            if let Some(mask) = memory.mask {
                scores = tape.add(scores, mask)?;
            }
            let probs = tape.softmax(scores);
            weights.push(probs);
            let dropped = dropout.apply(tape, probs)?;
            contexts.push(tape.batch_weighted_sum(dropped, vh, memory.len)?);
        }
        let joined = tape.concat(&contexts)?;
        let projected = self.output.forward(tape, vars, joined)?;
        let context = tape.layer_norm(projected, vars[self.ln_gain.0], vars[self.ln_bias.0])?;
        Ok(AttentionOutput { context, weights })
    }
}

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streetnav_core::env::Action;
use streetnav_core::pano::{PanoVariant, SliceSet};
use streetnav_tensor::layers::{
    AttentionMemory, BiLstm, Dropout, Linear, LstmCell, LstmState, MultiHeadAttention,
};
use streetnav_tensor::{load_checkpoint, save_checkpoint, ParamId, ParamStore, Tape, Tensor, Var};

use crate::{OrarConfig, OrarError};

/// Row of the action table used before the first action.
pub const START_ACTION: usize = 4;

/// Score added to padded memory positions.
const MASKED: f64 = -1e9;

#[derive(Clone, Debug)]
struct VisualEncoder {
    variant: PanoVariant,
    slices: usize,
    width: usize,
    ffn: [Linear; 2],
    attention: MultiHeadAttention,
}

#[derive(Clone, Debug)]
struct Layers {
    token_emb: ParamId,
    encoder: BiLstm,
    cell_init: Linear,
    action_emb: ParamId,
    junction_emb: Option<ParamId>,
    timestep_emb: ParamId,
    visual: Vec<VisualEncoder>,
    first: LstmCell,
    text_attention: MultiHeadAttention,
    second: Option<LstmCell>,
    head: Linear,
}

/// Instruction encoding for a batch.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub batch: usize,
    /// Longest instruction in the batch.
    pub len: usize,
    /// Batch-major token states `(B*len) x 2H`.
    pub states: Var,
    /// Decoder cell initialization, `B x H`.
    pub init_cell: Var,
    memory: Option<AttentionMemory>,
}

impl Encoded {
    /// Keeps the first `n` sequences of the batch.
    pub fn truncate(&self, tape: &mut Tape, n: usize) -> Result<Encoded, OrarError> {
        if n == self.batch {
            return Ok(*self);
        }
        let rows = n * self.len;
        let memory = match self.memory {
            Some(m) => Some(AttentionMemory {
                keys: tape.slice_rows(m.keys, 0, rows)?,
                values: tape.slice_rows(m.values, 0, rows)?,
                len: m.len,
                mask: match m.mask {
                    Some(mask) => Some(tape.slice_rows(mask, 0, n)?),
                    None => None,
                },
            }),
            None => None,
        };
        Ok(Encoded {
            batch: n,
            len: self.len,
            states: tape.slice_rows(self.states, 0, rows)?,
            init_cell: tape.slice_rows(self.init_cell, 0, n)?,
            memory,
        })
    }
}

/// Recurrent state of both decoder layers.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub first: LstmState,
    pub second: Option<LstmState>,
}

impl DecoderState {
    /// Keeps the first `n` rows.
    pub fn truncate(&self, tape: &mut Tape, n: usize) -> Result<DecoderState, OrarError> {
        let cut = |tape: &mut Tape, s: LstmState| -> Result<LstmState, OrarError> {
            Ok(LstmState {
                h: tape.slice_rows(s.h, 0, n)?,
                c: tape.slice_rows(s.c, 0, n)?,
            })
        };
        Ok(DecoderState {
            first: cut(tape, self.first)?,
            second: match self.second {
                Some(s) => Some(cut(tape, s)?),
                None => None,
            },
        })
    }
}

/// Per-example inputs of one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    /// 0-based step index.
    pub t: usize,
    pub prev_action: Option<Action>,
    pub junction: usize,
    pub heading_delta: f64,
    /// Slices of the variant observed at this step; `None` for variant none.
    pub slices: Option<&'a SliceSet>,
}

pub struct StepOutput {
    /// `B x 4` action logits.
    pub logits: Var,
    pub state: DecoderState,
    /// Per-head text attention weights, `B x len` each.
    pub text_weights: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct OrarModel {
    pub config: OrarConfig,
    pub store: ParamStore,
    layers: Layers,
}

fn emb<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    dim: usize,
    rng: &mut R,
) -> Result<ParamId, OrarError> {
    Ok(store.add_uniform(name.to_string(), &[rows, dim], 0.1, rng)?)
}

impl OrarModel {
    /// Builds a model with parameters drawn from `seed`. Only parameters the
    /// configuration actually uses are created.
    pub fn new(config: OrarConfig, seed: u64) -> Result<Self, OrarError> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let he = c.encoder_hidden;
        let hd = c.decoder_hidden;

        let token_emb = emb(s, "token_emb", c.vocab_size, c.token_emb, rng)?;
        let encoder = BiLstm::new(s, "encoder", c.token_emb, he, c.encoder_layers, rng)?;
        let cell_init = Linear::new(s, "cell_init", 2 * he, hd, rng)?;
        let action_emb = emb(s, "action_emb", START_ACTION + 1, c.action_emb, rng)?;
        let junction_emb = if c.use_junction {
            Some(emb(s, "junction_emb", 4, c.junction_emb, rng)?)
        } else {
            None
        };
        let timestep_emb = emb(s, "timestep_emb", c.max_timestep + 1, c.timestep_emb, rng)?;

        let mut visual = Vec::new();
        for variant in c.variants() {
            if variant == PanoVariant::None {
                continue;
            }
            let (slices, width) = c.slice_shape(variant);
            let [w1, w2] = c.ffn_widths(variant);
            let name = variant.as_str();
            visual.push(VisualEncoder {
                variant,
                slices,
                width,
                ffn: [
                    Linear::new(s, &format!("visual.{name}.ffn1"), slices * width, w1, rng)?,
                    Linear::new(s, &format!("visual.{name}.ffn2"), w1, w2, rng)?,
                ],
                attention: MultiHeadAttention::new(
                    s,
                    &format!("visual.{name}.attention"),
                    hd,
                    width,
                    hd,
                    c.heads,
                    rng,
                )?,
            });
        }

        let first_in = c.action_emb
            + if c.use_junction { c.junction_emb } else { 0 }
            + usize::from(c.use_heading_delta)
            + c.visual_width();
        let first = LstmCell::new(s, "decoder.first", first_in, hd, rng)?;
        let text_attention = MultiHeadAttention::new(s, "text_attention", hd, 2 * he, hd, c.heads, rng)?;
        let second_in = c.timestep_emb + 3 * hd;
        let (second, head_in) = if c.use_second_rnn {
            (Some(LstmCell::new(s, "decoder.second", second_in, hd, rng)?), hd)
        } else {
            (None, second_in)
        };
        let head = Linear::new(s, "head", head_in, Action::ALL.len(), rng)?;

        Ok(OrarModel {
            layers: Layers {
                token_emb,
                encoder,
                cell_init,
                action_emb,
                junction_emb,
                timestep_emb,
                visual,
                first,
                text_attention,
                second,
                head,
            },
            config,
            store,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }

    /// Encodes a batch of token sequences.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        tokens: &[Vec<usize>],
        dropout: &mut Dropout<'_, R>,
    ) -> Result<Encoded, OrarError> {
        let batch = tokens.len();
        if batch == 0 || tokens.iter().any(|t| t.is_empty()) {
            return Err(OrarError::EmptyInput("instruction without tokens".into()));
        }
        let vocab = self.config.vocab_size;
        if let Some(&id) = tokens.iter().flatten().find(|&&id| id >= vocab) {
            return Err(OrarError::Vocab { id, vocab });
        }
        let len = tokens.iter().map(Vec::len).max().unwrap_or(0);
        let lengths: Vec<usize> = tokens.iter().map(Vec::len).collect();
        let mut ids = Vec::with_capacity(len * batch);
        for l in 0..len {
            for t in tokens {
                ids.push(t.get(l).copied().unwrap_or(0));
            }
        }
        let l = &self.layers;
        let x = tape.embedding(vars[l.token_emb.0], &ids)?;
        let out = l.encoder.forward(tape, vars, x, &lengths, dropout)?;
        let states_pm = dropout.apply(tape, out.states)?;
        let perm: Vec<usize> = (0..batch)
            .flat_map(|b| (0..len).map(move |p| p * batch + b))
            .collect();
        let states = tape.embedding(states_pm, &perm)?;
        let finals = tape.concat(&[out.final_cell_forward, out.final_cell_backward])?;
        let init_cell = l.cell_init.forward(tape, vars, finals)?;
        let memory = if self.config.use_text_attention {
            let mask = if lengths.iter().all(|&n| n == len) {
                None
            } else {
                let data = tokens
                    .iter()
                    .flat_map(|t| (0..len).map(move |p| if p < t.len() { 0.0 } else { MASKED }))
                    .collect();
                Some(tape.constant(Tensor::matrix(batch, len, data)?))
            };
            Some(l.text_attention.memory(tape, vars, states, len, mask)?)
        } else {
            None
        };
        Ok(Encoded {
            batch,
            len,
            states,
            init_cell,
            memory,
        })
    }

    /// Decoder state before the first step: zero hidden states, first-layer
    /// cell from the encoder.
    pub fn init_state(&self, tape: &mut Tape, encoded: &Encoded) -> DecoderState {
        let b = encoded.batch;
        let first = LstmState {
            h: tape.zeros(b, self.config.decoder_hidden),
            c: encoded.init_cell,
        };
        let second = self.layers.second.as_ref().map(|cell| cell.zero_state(tape, b));
        DecoderState { first, second }
    }

    fn visual_for(&self, variant: PanoVariant) -> Option<&VisualEncoder> {
        self.layers.visual.iter().find(|v| v.variant == variant)
    }

    /// One decoder step for a batch. `variant` is the feature variant every
    /// example observes at this step.
    pub fn decode_step<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        state: DecoderState,
        encoded: &Encoded,
        inputs: &[StepInput<'_>],
        variant: PanoVariant,
        dropout: &mut Dropout<'_, R>,
    ) -> Result<StepOutput, OrarError> {
        let c = &self.config;
        let l = &self.layers;
        let batch = inputs.len();
        if batch != encoded.batch {
            return Err(OrarError::EmptyInput(format!(
                "{batch} step inputs for a batch of {}",
                encoded.batch
            )));
        }
        if let Some(inp) = inputs.iter().find(|i| i.junction > 3) {
            return Err(OrarError::Features(format!("junction category {}", inp.junction)));
        }
        let hd = c.decoder_hidden;

        // The image attention is queried with c^w, which depends on h^first,
        // so the visual pathway is split: p̄ before the first layer, c^p after.
        let actions: Vec<usize> = inputs
            .iter()
            .map(|i| i.prev_action.map_or(START_ACTION, |a| a.code() as usize))
            .collect();
        let mut parts = vec![tape.embedding(vars[l.action_emb.0], &actions)?];
        if let Some(j) = l.junction_emb {
            let ids: Vec<usize> = inputs.iter().map(|i| i.junction).collect();
            parts.push(tape.embedding(vars[j.0], &ids)?);
        }
        if c.use_heading_delta {
            let d = inputs.iter().map(|i| i.heading_delta).collect();
            parts.push(tape.constant(Tensor::matrix(batch, 1, d)?));
        }

        let visual = self.visual_for(variant);
        if visual.is_none() && variant != PanoVariant::None {
            return Err(OrarError::Features(format!(
                "model has no visual pathway for variant {}",
                variant.as_str()
            )));
        }
        let pbar = match visual {
            Some(enc) => Some(self.pbar(tape, vars, inputs, enc, dropout)?),
            None => None,
        };
        let vw = c.visual_width();
        if vw > 0 {
            parts.push(match pbar {
                Some((p, _)) => p,
                None => tape.zeros(batch, vw),
            });
        }
        let x1 = tape.concat(&parts)?;
        let first = l.first.step(tape, vars, x1, state.first)?;
        let h1 = dropout.apply(tape, first.h)?;

        let (cw, text_weights) = match &encoded.memory {
            Some(memory) => {
                let mut adrop = Dropout {
                    p: c.attention_dropout,
                    training: dropout.training,
                    rng: &mut *dropout.rng,
                };
                let out = l.text_attention.attend(tape, vars, h1, memory, &mut adrop)?;
                (out.context, out.weights)
            }
            None => (tape.zeros(batch, hd), Vec::new()),
        };
        let cp = match (visual, pbar) {
            (Some(enc), Some((_, rows))) => self.image_context(tape, vars, enc, rows, cw, dropout)?,
            _ => tape.zeros(batch, hd),
        };

        let ts: Vec<usize> = inputs.iter().map(|i| i.t.min(c.max_timestep)).collect();
        let tbar = tape.embedding(vars[l.timestep_emb.0], &ts)?;
        let x2 = tape.concat(&[tbar, h1, cw, cp])?;
        let (out, second) = match (&l.second, state.second) {
            (Some(cell), Some(s)) => {
                let next = cell.step(tape, vars, x2, s)?;
                (dropout.apply(tape, next.h)?, Some(next))
            }
            _ => (x2, None),
        };
        let logits = l.head.forward(tape, vars, out)?;
        Ok(StepOutput {
            logits,
            state: DecoderState { first, second },
            text_weights,
        })
    }

    /// p̄ for the batch plus the raw slice rows, `(B*S) x width`.
    fn pbar<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        inputs: &[StepInput<'_>],
        enc: &VisualEncoder,
        dropout: &mut Dropout<'_, R>,
    ) -> Result<(Var, Var), OrarError> {
        let batch = inputs.len();
        let per = enc.slices * enc.width;
        let mut data = Vec::with_capacity(batch * per);
        for inp in inputs {
            let s = inp.slices.ok_or_else(|| {
                OrarError::Features(format!("step {} lacks {} slices", inp.t, enc.variant.as_str()))
            })?;
            if s.data.len() != per || s.width != enc.width {
                return Err(OrarError::Features(format!(
                    "{} slice set holds {} values of width {}, model expects {}x{}",
                    enc.variant.as_str(),
                    s.data.len(),
                    s.width,
                    enc.slices,
                    enc.width
                )));
            }
            data.extend(s.data.iter().map(|&v| v as f64));
        }
        let flat = tape.constant(Tensor::matrix(batch, per, data.clone())?);
        let rows = tape.constant(Tensor::matrix(batch * enc.slices, enc.width, data)?);

        let h = enc.ffn[0].forward(tape, vars, flat)?;
        let h = tape.relu(h);
        let h = dropout.apply(tape, h)?;
        let h = enc.ffn[1].forward(tape, vars, h)?;
        let h = tape.relu(h);
        let mut pbar = dropout.apply(tape, h)?;
        let pad = self.config.visual_width() - enc.ffn[1].output;
        if pad > 0 {
            let zeros = tape.zeros(batch, pad);
            pbar = tape.concat(&[pbar, zeros])?;
        }
        Ok((pbar, rows))
    }

    /// c^p: attention over the raw slices queried by c^w, or the unweighted
    /// mean of the projected slices when image attention is off.
    fn image_context<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        enc: &VisualEncoder,
        rows: Var,
        query: Var,
        dropout: &mut Dropout<'_, R>,
    ) -> Result<Var, OrarError> {
        let att = &enc.attention;
        if self.config.use_image_attention {
            let memory = att.memory(tape, vars, rows, enc.slices, None)?;
            let mut adrop = Dropout {
                p: self.config.attention_dropout,
                training: dropout.training,
                rng: &mut *dropout.rng,
            };
            Ok(att.attend(tape, vars, query, &memory, &mut adrop)?.context)
        } else {
            let values = att.value.forward(tape, vars, rows)?;
            let mean = tape.group_mean(values, enc.slices)?;
            let projected = att.output.forward(tape, vars, mean)?;
            Ok(tape.layer_norm(projected, vars[att.ln_gain.0], vars[att.ln_bias.0])?)
        }
    }

    /// Writes the parameter checkpoint and the JSON config sidecar.
    pub fn save(&self, checkpoint: &Path, config: &Path) -> Result<(), OrarError> {
        save_checkpoint(&self.store, checkpoint)?;
        std::fs::write(config, self.config.to_json())?;
        Ok(())
    }

    pub fn load(checkpoint: &Path, config: &Path) -> Result<Self, OrarError> {
        let cfg = OrarConfig::from_json(&std::fs::read_to_string(config)?)?;
        let loaded = load_checkpoint(checkpoint)?;
        Self::from_store(cfg, &loaded)
    }

    /// Rebuilds the model for `config` and takes its parameter values from
    /// `store`.
    pub fn from_store(config: OrarConfig, store: &ParamStore) -> Result<Self, OrarError> {
        let mut model = OrarModel::new(config, 0)?;
        model.store.copy_values_from(store)?;
        Ok(model)
    }
}

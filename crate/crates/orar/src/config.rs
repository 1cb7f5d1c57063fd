use serde::{Deserialize, Serialize};
use streetnav_core::env::DEFAULT_MAX_STEPS;
use streetnav_core::pano::{PanoVariant, DEFAULT_PREFINAL_DIM};

use crate::OrarError;

/// Model dimensions and ablation switches. Serialized field names are the
/// keys of the JSON config sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrarConfig {
    pub vocab_size: usize,
    pub token_emb: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_hidden: usize,
    pub heads: usize,
    pub action_emb: usize,
    pub junction_emb: usize,
    pub timestep_emb: usize,
    /// Widths of the two dense layers over the concatenated slices.
    pub visual_ffn: [usize; 2],
    pub semseg_ffn: [usize; 2],
    pub dropout: f64,
    pub attention_dropout: f64,
    pub use_heading_delta: bool,
    pub use_junction: bool,
    pub visual_variant: PanoVariant,
    pub use_second_rnn: bool,
    pub use_text_attention: bool,
    pub use_image_attention: bool,
    /// Variant observed for the first action; `None` means `visual_variant`.
    pub first_step_visual_variant: Option<PanoVariant>,
    pub max_timestep: usize,
    /// Width of one pre-final slice vector.
    pub prefinal_dim: usize,
}

impl Default for OrarConfig {
    fn default() -> Self {
        OrarConfig::paper()
    }
}

impl OrarConfig {
    /// Full-size model.
    pub fn paper() -> Self {
        OrarConfig {
            vocab_size: streetnav_core::tokenizer::DEFAULT_VOCAB_SIZE,
            token_emb: 32,
            encoder_hidden: 256,
            encoder_layers: 2,
            decoder_hidden: 256,
            heads: 2,
            action_emb: 16,
            junction_emb: 16,
            timestep_emb: 16,
            visual_ffn: [512, 256],
            semseg_ffn: [64, 64],
            dropout: 0.3,
            attention_dropout: 0.3,
            use_heading_delta: true,
            use_junction: true,
            visual_variant: PanoVariant::PreFinal,
            use_second_rnn: true,
            use_text_attention: true,
            use_image_attention: true,
            first_step_visual_variant: None,
            max_timestep: DEFAULT_MAX_STEPS,
            prefinal_dim: DEFAULT_PREFINAL_DIM,
        }
    }

    /// Laptop-scale model: hidden sizes shrunk to 64.
    pub fn desk() -> Self {
        OrarConfig {
            encoder_hidden: 64,
            decoder_hidden: 64,
            visual_ffn: [64, 64],
            ..OrarConfig::paper()
        }
    }

    pub fn first_variant(&self) -> PanoVariant {
        self.first_step_visual_variant.unwrap_or(self.visual_variant)
    }

    /// Variant observed at 0-based step `t`.
    pub fn variant_at(&self, t: usize) -> PanoVariant {
        if t == 0 {
            self.first_variant()
        } else {
            self.visual_variant
        }
    }

    /// Distinct variants the model reads, main variant first.
    pub fn variants(&self) -> Vec<PanoVariant> {
        let mut v = vec![self.visual_variant];
        if self.first_variant() != self.visual_variant {
            v.push(self.first_variant());
        }
        v
    }

    pub fn ffn_widths(&self, variant: PanoVariant) -> [usize; 2] {
        match variant {
            PanoVariant::Semseg => self.semseg_ffn,
            PanoVariant::None => [0, 0],
            _ => self.visual_ffn,
        }
    }

    /// `(slices, width)` of one observation of `variant`.
    pub fn slice_shape(&self, variant: PanoVariant) -> (usize, usize) {
        variant.slice_shape(self.prefinal_dim)
    }

    /// Width of p̄ as fed to the first decoder layer: the widest visual FFN
    /// output, narrower ones are zero-padded.
    pub fn visual_width(&self) -> usize {
        self.variants()
            .into_iter()
            .map(|v| self.ffn_widths(v)[1])
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), OrarError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("token_emb", self.token_emb),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("heads", self.heads),
            ("action_emb", self.action_emb),
            ("junction_emb", self.junction_emb),
            ("timestep_emb", self.timestep_emb),
            ("max_timestep", self.max_timestep),
            ("prefinal_dim", self.prefinal_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(OrarError::Config(format!("{name} must be positive")));
            }
        }
        for w in self.visual_ffn.iter().chain(&self.semseg_ffn) {
            if *w == 0 {
                return Err(OrarError::Config("visual FFN widths must be positive".into()));
            }
        }
        if self.decoder_hidden % self.heads != 0 {
            return Err(OrarError::Config(format!(
                "{} heads do not divide decoder_hidden {}",
                self.heads, self.decoder_hidden
            )));
        }
        for p in [self.dropout, self.attention_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(OrarError::Config(format!("dropout {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OrarError> {
        let c: OrarConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

//! Byte-pair-encoding tokenizer with BPE dropout and word-level masking.
//!
//! Text is split on whitespace, then into runs of alphanumerics and single
//! punctuation characters. A chunk that starts a whitespace-separated word
//! (other than the first) carries the `▁` marker, which decoding turns back
//! into a space.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WORD_MARKER: char = '▁';
pub const DEFAULT_VOCAB_SIZE: usize = 2000;
pub const DEFAULT_BPE_DROPOUT: f64 = 0.1;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
const SPECIALS: [&str; 5] = [PAD, UNK, MASK, BOS, EOS];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty training corpus")]
    EmptyCorpus,

    #[error("vocabulary size {requested} must exceed {minimum} (specials plus base symbols)")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("token id {0} out of range")]
    InvalidId(usize),

    #[error("invalid tokenizer file: {0}")]
    Format(String),

    #[error("tokenizer i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("tokenizer json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: usize,
    pub unk: usize,
    pub mask: usize,
    pub bos: usize,
    pub eos: usize,
}

#[derive(Serialize, Deserialize)]
struct BpeFile {
    merges: Vec<(String, String)>,
    vocab: BTreeMap<String, usize>,
    specials: Specials,
}

#[derive(Clone, Debug)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    specials: Specials,
}

/// Splits text into chunks; specials are kept verbatim and everything else is
/// lowercased.
pub fn pretokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (w, word) in text.split_whitespace().enumerate() {
        let mut first = true;
        let mut rest = word;
        while !rest.is_empty() {
            let (chunk, is_special, len) = if let Some(s) = SPECIALS.iter().find(|s| rest.starts_with(**s)) {
                (s.to_string(), true, s.len())
            } else {
                let c = rest.chars().next().expect("non-empty");
                if c.is_alphanumeric() {
                    let len = rest
                        .char_indices()
                        .find(|(_, c)| !c.is_alphanumeric())
                        .map(|(i, _)| i)
                        .unwrap_or(rest.len());
                    (rest[..len].to_lowercase(), false, len)
                } else {
                    (c.to_lowercase().collect(), false, c.len_utf8())
                }
            };
            if first && w > 0 && is_special {
                // the marker stays separate so the special remains intact
                out.push(WORD_MARKER.to_string());
                out.push(chunk);
            } else if first && w > 0 {
                out.push(format!("{WORD_MARKER}{chunk}"));
            } else {
                out.push(chunk);
            }
            first = false;
            rest = &rest[len..];
        }
    }
    out
}

fn is_special(chunk: &str) -> bool {
    SPECIALS.contains(&chunk)
}

impl BpeModel {
    /// Greedy BPE: repeatedly merges the most frequent adjacent pair, ties
    /// broken by the lexicographically smallest pair, until the vocabulary
    /// reaches `vocab_size` or no pair occurs twice.
    pub fn train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Self, TokenizerError> {
        let mut words: BTreeMap<String, usize> = BTreeMap::new();
        for line in corpus {
            for chunk in pretokenize(line.as_ref()) {
                if !is_special(&chunk) {
                    *words.entry(chunk).or_default() += 1;
                }
            }
        }
        if words.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut base: Vec<String> = words
            .keys()
            .flat_map(|w| w.chars().map(String::from))
            .collect();
        base.push(WORD_MARKER.to_string());
        base.sort();
        base.dedup();
        let minimum = SPECIALS.len() + base.len();
        if vocab_size <= minimum {
            return Err(TokenizerError::VocabTooSmall {
                requested: vocab_size,
                minimum,
            });
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(base);
        let mut vocab: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let mut seqs: Vec<(Vec<String>, usize)> = words
            .into_iter()
            .map(|(w, f)| (w.chars().map(String::from).collect(), f))
            .collect();
        let mut merges = Vec::new();
        while tokens.len() < vocab_size {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (s, f) in &seqs {
                for p in s.windows(2) {
                    *counts.entry((p[0].as_str(), p[1].as_str())).or_default() += f;
                }
            }
            let Some((pair, count)) = counts
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            else {
                break;
            };
            if count < 2 {
                break;
            }
            let (a, b) = (pair.0.to_string(), pair.1.to_string());
            let merged = format!("{a}{b}");
            for (s, _) in &mut seqs {
                *s = merge_all(s, &a, &b);
            }
            if !vocab.contains_key(&merged) {
                vocab.insert(merged.clone(), tokens.len());
                tokens.push(merged);
            }
            merges.push((a, b));
        }
        Ok(BpeModel::assemble(merges, tokens))
    }

    fn assemble(merges: Vec<(String, String)>, tokens: Vec<String>) -> Self {
        let vocab = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        BpeModel {
            merges,
            ranks,
            vocab,
            tokens,
            specials: Specials {
                pad: 0,
                unk: 1,
                mask: 2,
                bos: 3,
                eos: 4,
            },
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn specials(&self) -> &Specials {
        &self.specials
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    /// Segments one chunk; each merge candidate is skipped with probability
    /// `dropout` at every merge round.
    fn segment<R: Rng + ?Sized>(&self, chunk: &str, dropout: f64, rng: &mut R) -> Vec<String> {
        let mut syms: Vec<String> = chunk.chars().map(String::from).collect();
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..syms.len().saturating_sub(1) {
                let Some(&rank) = self.ranks.get(&(syms[i].clone(), syms[i + 1].clone())) else {
                    continue;
                };
                if dropout > 0.0 && rng.random::<f64>() < dropout {
                    continue;
                }
                if best.is_none_or(|(_, r)| rank < r) {
                    best = Some((i, rank));
                }
            }
            let Some((i, _)) = best else { break };
            let right = syms.remove(i + 1);
            syms[i].push_str(&right);
        }
        syms
    }

    /// Encodes text to ids; `dropout` is 0 at evaluation.
    pub fn encode<R: Rng + ?Sized>(&self, text: &str, dropout: f64, rng: &mut R) -> Vec<usize> {
        let mut ids = Vec::new();
        for chunk in pretokenize(text) {
            if let Some(i) = SPECIALS.iter().position(|s| *s == chunk) {
                ids.push(i);
                continue;
            }
            for sym in self.segment(&chunk, dropout, rng) {
                ids.push(self.vocab.get(&sym).copied().unwrap_or(self.specials.unk));
            }
        }
        ids
    }

    /// Deterministic encoding without dropout.
    pub fn encode_plain(&self, text: &str) -> Vec<usize> {
        let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        self.encode(text, 0.0, &mut unused)
    }

    /// Concatenates tokens, dropping specials and turning markers into spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TokenizerError> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.tokens.get(id).ok_or(TokenizerError::InvalidId(id))?;
            if id < SPECIALS.len() {
                continue;
            }
            s.push_str(tok);
        }
        Ok(s.replace(WORD_MARKER, " ").trim().to_string())
    }

    pub fn to_json(&self) -> String {
        let file = BpeFile {
            merges: self.merges.clone(),
            vocab: self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            specials: self.specials.clone(),
        };
        serde_json::to_string_pretty(&file).expect("bpe model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: BpeFile = serde_json::from_str(text)?;
        let n = file.vocab.len();
        let mut tokens = vec![None; n];
        for (t, &i) in &file.vocab {
            if i >= n || tokens[i].is_some() {
                return Err(TokenizerError::Format(format!("ids are not dense at {i}")));
            }
            tokens[i] = Some(t.clone());
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("dense")).collect();
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(TokenizerError::Format(format!("special {s} must have id {i}")));
            }
        }
        for (a, b) in &file.merges {
            if !file.vocab.contains_key(&format!("{a}{b}")) {
                return Err(TokenizerError::Format(format!("merge {a}+{b} not in vocab")));
            }
        }
        let model = BpeModel::assemble(file.merges, tokens);
        if model.specials != file.specials {
            return Err(TokenizerError::Format("special ids differ from the fixed layout".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        BpeModel::from_json(&std::fs::read_to_string(path)?)
    }
}

fn merge_all(s: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if i + 1 < s.len() && s[i] == a && s[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(s[i].clone());
            i += 1;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconKind {
    Direction,
    Object,
}

/// Ranked word list used by the masking experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskLexicon {
    pub kind: LexiconKind,
    pub words: Vec<String>,
}

/// Direction words, most salient first.
pub const DIRECTION_WORDS: [&str; 10] = [
    "left", "right", "straight", "turn", "around", "forward", "ahead", "through", "past", "end",
];

impl MaskLexicon {
    pub fn direction() -> Self {
        MaskLexicon {
            kind: LexiconKind::Direction,
            words: DIRECTION_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Object lexicon from candidate words ranked by their frequency in
    /// `corpus` (ties alphabetical); words absent from the corpus are dropped.
    pub fn objects_by_frequency<S: AsRef<str>>(candidates: &[String], corpus: &[S]) -> Self {
        let mut counts: BTreeMap<&str, usize> = candidates.iter().map(|w| (w.as_str(), 0)).collect();
        for line in corpus {
            for w in words_of(line.as_ref()) {
                if let Some(c) = counts.get_mut(w.as_str()) {
                    *c += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        MaskLexicon {
            kind: LexiconKind::Object,
            words: ranked.into_iter().map(|(w, _)| w.to_string()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let lex: MaskLexicon = serde_json::from_str(text)?;
        if lex.words.is_empty() {
            return Err(TokenizerError::Format("empty lexicon".into()));
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        MaskLexicon::from_json(&std::fs::read_to_string(path)?)
    }
}

fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Replaces every occurrence of the lexicon's top `k` words with the mask
/// token. Works on whitespace words; surrounding punctuation is kept.
pub fn mask_tokens(words: &[String], lexicon: &MaskLexicon, k: usize) -> Vec<String> {
    let top = &lexicon.words[..k.min(lexicon.words.len())];
    words
        .iter()
        .map(|w| {
            let start = w.find(|c: char| c.is_alphanumeric());
            let end = w.rfind(|c: char| c.is_alphanumeric()).map(|i| i + w[i..].chars().next().map_or(1, char::len_utf8));
            match (start, end) {
                (Some(s), Some(e)) if top.iter().any(|t| t.eq_ignore_ascii_case(&w[s..e])) => {
                    format!("{}{MASK}{}", &w[..s], &w[e..])
                }
                _ => w.clone(),
            }
        })
        .collect()
}

pub fn mask_text(text: &str, lexicon: &MaskLexicon, k: usize) -> String {
    let words: Vec<String> = text.split_whitespace().map(String::from).collect();
    mask_tokens(&words, lexicon, k).join(" ")
}

//! Vocabulary, word embeddings and speaker embeddings.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Speaker;
use crate::error::{Error, Result};
use crate::params::{uniform, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Bound of the uniform initializer for rows without a pretrained vector.
pub const INIT_BOUND: f64 = 0.1;

/// Token → index map with `PAD = 0` and `UNK = 1` always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Indexes tokens seen at least `min_count` times, most frequent first and
    /// lexically within equal counts.
    pub fn build<'a, I, S>(corpus: I, min_count: usize) -> Vocab
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tokens in corpus {
            for t in tokens.as_ref() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or `UNK` when it is out of vocabulary.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Parses a whitespace-separated vector file: a token followed by its
/// components, one token per line, every line the same width.
pub fn parse_static_vectors(text: &str, source_name: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut vectors = HashMap::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| err(format!("bad component {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(err(format!("token {token:?} has no components")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("token {token:?} has a non-finite component")));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(format!(
                    "width {} differs from earlier width {w}",
                    values.len()
                )))
            }
            Some(_) => {}
        }
        vectors.insert(token.to_string(), values);
    }
    Ok(vectors)
}

/// Initial embedding table for `vocab`: rows found in the vector file are
/// copied, the rest drawn from `uniform(-0.1, 0.1)` with `seed`; `PAD` is zero.
pub fn load_static_vectors(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vectors = parse_static_vectors(&text, &path.display().to_string())?;
    init_table(vocab, dim, Some(&vectors), seed)
}

pub(crate) fn init_table(
    vocab: &Vocab,
    dim: usize,
    vectors: Option<&HashMap<String, Vec<f64>>>,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Tensor::zeros(vocab.len(), dim);
    for (row, token) in vocab.tokens().iter().enumerate() {
        let pretrained = vectors.and_then(|v| v.get(token));
        for c in 0..dim {
            // draw for every row so a row's fallback does not depend on the file
            let fallback = rng.gen_range(-INIT_BOUND..=INIT_BOUND);
            let value = match pretrained {
                Some(v) if v.len() != dim => {
                    return Err(Error::config(format!(
                        "vector file width {} does not match embedding width {dim}",
                        v.len()
                    )))
                }
                Some(v) => v[c],
                None => fallback,
            };
            table.set(row, c, if row == PAD { 0.0 } else { value });
        }
    }
    Ok(table)
}

/// Trainable word and speaker embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub words: ParamId,
    pub speakers: ParamId,
    pub word_dim: usize,
    pub speaker_dim: usize,
    pub dropout: f64,
}

impl Embedder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        table: Tensor,
        speaker_dim: usize,
        dropout: f64,
    ) -> Embedder {
        let word_dim = table.cols();
        let words = store.add("embed.words", table);
        store.freeze_row(words, PAD);
        let speakers = store.add("embed.speakers", uniform(rng, 2, speaker_dim, INIT_BOUND));
        Embedder {
            words,
            speakers,
            word_dim,
            speaker_dim,
            dropout,
        }
    }

    /// Word matrix (`T × d_w`, dropout applied on training tapes) and speaker
    /// vector (`1 × d_s`). An empty utterance gives a `0 × d_w` matrix.
    pub fn embed_utterance<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        ids: &[usize],
        speaker: Speaker,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let words = tape
            .gather(tape.param(store, self.words), ids, Some(PAD))?
            .dropout(self.dropout)?;
        Ok((words, self.speaker(tape, store, speaker)?))
    }

    pub fn speaker<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        speaker: Speaker,
    ) -> Result<Var<'t>> {
        tape.gather(tape.param(store, self.speakers), &[speaker.index()], None)
    }
}

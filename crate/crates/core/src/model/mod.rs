//! Assembled networks: embeddings, a skeleton encoder, optional word
//! attention, and one scoring head per speaker × task setting.
//!
//! Several heads may share one encoder, which is how the multi-task
//! schedules train.

mod config;

pub use config::{HeadInput, ModelConfig, Preset, Scoring, Skeleton};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{Multihead, WordAttender};
use crate::data::{slots, Task, TaskKey, Window};
use crate::embed::{init_table, Embedder, Vocab, INIT_BOUND};
use crate::encoders::{encode_dialogue_concat, encode_dialogue_hgru, BiGru, GruCell};
use crate::error::{Error, Result};
use crate::loss::focal_loss_var;
use crate::params::{uniform, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// `x W + b`, initialized from `uniform(-1/√in, 1/√in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: store.add(format!("{name}.weight"), uniform(rng, d_in, d_out, bound)),
            bias: store.add(format!("{name}.bias"), uniform(rng, 1, d_out, bound)),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(store, self.weight))?
            .add_row(tape.param(store, self.bias))
    }
}

/// Dropout → Linear → ReLU → dropout → Linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        dropout: f64,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, rng, &format!("{name}.hidden"), d_in, d_hidden),
            output: Linear::new(store, rng, &format!("{name}.output"), d_hidden, d_out),
            dropout,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let h = self
            .hidden
            .forward(tape, store, x.dropout(self.dropout)?)?
            .relu();
        self.output.forward(tape, store, h.dropout(self.dropout)?)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [
            self.hidden.weight,
            self.hidden.bias,
            self.output.weight,
            self.output.bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Hgru {
        utterance: BiGru,
        dialogue: GruCell,
    },
    /// `boundary` is the learned token placed between utterances.
    Concat {
        bigru: BiGru,
        boundary: ParamId,
    },
}

/// One scoring head.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub config: ModelConfig,
    pub inputs: Vec<HeadInput>,
    pub attention: Option<Multihead>,
    /// One MLP in concat mode, one per input in add mode.
    pub mlps: Vec<Mlp>,
}

impl Head {
    pub fn key(&self) -> TaskKey {
        self.config.key()
    }
}

/// Encoder outputs for one window.
#[derive(Debug, Clone)]
pub struct Encoded<'t> {
    /// `H_1 … H_n` (HGRU only).
    pub dialogue_states: Vec<Var<'t>>,
    /// One row per window slot, the vectors utterance attention runs over.
    pub utterances: Var<'t>,
    /// Encodings available to heads, except the attention context.
    pub inputs: HashMap<HeadInput, Var<'t>>,
    /// Word attention weights, one row per query word.
    pub word_weights: Vec<Var<'t>>,
    /// Word attention ran against an anchor with no words.
    pub empty_keys: bool,
}

#[derive(Debug, Clone)]
pub struct Forward<'t> {
    pub logits: Var<'t>,
    pub probs: Var<'t>,
    pub encoded: Encoded<'t>,
    /// `[hop][head]` weights of the utterance attention, if any.
    pub utterance_weights: Vec<Vec<Var<'t>>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub vocab: Vocab,
    pub embedder: Embedder,
    pub encoder: Encoder,
    pub attender: Option<WordAttender>,
    pub heads: Vec<Head>,
    seed: u64,
}

impl Model {
    /// Builds a model with one head per config. All configs must agree on the
    /// encoder and name distinct settings. Without `table` the word
    /// embeddings are drawn from `seed`.
    pub fn new(
        configs: Vec<ModelConfig>,
        vocab: Vocab,
        table: Option<Tensor>,
        seed: u64,
    ) -> Result<Model> {
        let first = configs
            .first()
            .cloned()
            .ok_or_else(|| Error::config("a model needs at least one head"))?;
        for (i, c) in configs.iter().enumerate() {
            c.validate()?;
            if !c.shares_encoder_with(&first) {
                return Err(Error::config(format!(
                    "head {} ({}) does not share the encoder settings of head 0",
                    i,
                    c.key()
                )));
            }
            if configs[..i].iter().any(|o| o.key() == c.key()) {
                return Err(Error::config(format!("two heads for {}", c.key())));
            }
        }
        let (d_w, d_h, d_s) = (first.word_dim, first.hidden_dim, first.speaker_dim);
        let table = match table {
            Some(t) => t,
            None => init_table(&vocab, d_w, None, seed)?,
        };
        if table.shape() != [vocab.len(), d_w] {
            return Err(Error::config(format!(
                "embedding table {:?} does not match vocab size {} and width {d_w}",
                table.shape(),
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embedder = Embedder::new(&mut store, &mut rng, table, d_s, first.embedding_dropout);
        let encoder = match first.skeleton {
            Skeleton::Hgru => Encoder::Hgru {
                utterance: BiGru::new(&mut store, &mut rng, "utterance", d_w, d_h),
                dialogue: GruCell::new(&mut store, &mut rng, "dialogue", 2 * d_h + d_s, d_h),
            },
            Skeleton::Concat => Encoder::Concat {
                bigru: BiGru::new(&mut store, &mut rng, "concat", d_w + d_s, d_h),
                boundary: store.add(
                    "concat.boundary",
                    uniform(&mut rng, 1, d_w + d_s, INIT_BOUND),
                ),
            },
        };
        let attender = WordAttender::new(&mut store, &mut rng, first.word_attention, d_h);
        let mut heads = Vec::with_capacity(configs.len());
        for c in configs {
            let prefix = format!("head.{}", c.key());
            let attention = match c.utterance_attention.mode() {
                Some(_) => Some(Multihead::new(
                    &mut store,
                    &mut rng,
                    &format!("{prefix}.uttatt"),
                    c.utterance_width(),
                    c.heads,
                    c.hops,
                )?),
                None => None,
            };
            let inputs = c.resolved_inputs();
            let base = HeadInput::base(c.skeleton, c.task);
            let width = |i: HeadInput| {
                c.input_width(i)
                    + if c.task == Task::Forecast && i == base {
                        d_s
                    } else {
                        0
                    }
            };
            let labels = c.role.labels().len();
            let mlps = match c.scoring {
                Scoring::Concat => {
                    let total = inputs.iter().map(|&i| width(i)).sum();
                    vec![Mlp::new(
                        &mut store,
                        &mut rng,
                        &format!("{prefix}.mlp"),
                        total,
                        d_h,
                        labels,
                        c.head_dropout,
                    )]
                }
                Scoring::Add => inputs
                    .iter()
                    .map(|&i| {
                        Mlp::new(
                            &mut store,
                            &mut rng,
                            &format!("{prefix}.mlp.{}", i.name()),
                            width(i),
                            d_h,
                            labels,
                            c.head_dropout,
                        )
                    })
                    .collect(),
            };
            heads.push(Head {
                config: c,
                inputs,
                attention,
                mlps,
            });
        }
        Ok(Model {
            store,
            vocab,
            embedder,
            encoder,
            attender,
            heads,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn configs(&self) -> Vec<ModelConfig> {
        self.heads.iter().map(|h| h.config.clone()).collect()
    }

    /// Config of the first head; every head shares its encoder settings.
    pub fn config(&self) -> &ModelConfig {
        &self.heads[0].config
    }

    pub fn head_index(&self, key: TaskKey) -> Option<usize> {
        self.heads.iter().position(|h| h.key() == key)
    }

    pub fn keys(&self) -> Vec<TaskKey> {
        self.heads.iter().map(Head::key).collect()
    }

    fn check_window(&self, window: &Window) -> Result<()> {
        let want = slots(self.config().window);
        if window.turns.len() != want {
            return Err(Error::contract(format!(
                "window holds {} utterances, the model expects {want}",
                window.turns.len()
            )));
        }
        if window.task == Task::Forecast && window.next_speaker.is_none() {
            return Err(Error::contract("forecast window without a next speaker"));
        }
        Ok(())
    }

    /// Runs the shared encoder over a window.
    pub fn encode<'t>(&self, tape: &'t Tape, window: &Window) -> Result<Encoded<'t>> {
        self.encode_with(&self.store, tape, window)
    }

    /// As [`Model::encode`] with parameter values taken from `store`, which
    /// must have the layout of `self.store`.
    pub fn encode_with<'t>(
        &self,
        store: &ParamStore,
        tape: &'t Tape,
        window: &Window,
    ) -> Result<Encoded<'t>> {
        self.check_window(window)?;
        let d_h = self.config().hidden_dim;
        let embedded = window
            .turns
            .iter()
            .map(|t| {
                let ids = self.vocab.encode(&t.tokens);
                self.embedder.embed_utterance(tape, store, &ids, t.speaker)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = embedded.len();
        let mut inputs = HashMap::new();
        let mut word_weights = Vec::new();
        let mut empty_keys = false;
        match &self.encoder {
            Encoder::Hgru {
                utterance,
                dialogue,
            } => {
                let encodings = embedded
                    .iter()
                    .map(|&(words, _)| utterance.encode(tape, store, words))
                    .collect::<Result<Vec<_>>>()?;
                inputs.insert(HeadInput::Vn, encodings[n - 1].vector);
                let vectors = match &self.attender {
                    None => encodings.iter().map(|e| e.vector).collect::<Vec<_>>(),
                    Some(att) => {
                        let keys = encodings[n - 1].words;
                        let mut out = Vec::with_capacity(n);
                        for e in &encodings {
                            let a = att.attend(tape, store, e.words, keys)?;
                            word_weights.extend(a.weights);
                            empty_keys |= a.empty_keys && e.words.rows() > 0;
                            out.push(a.encoding.vector);
                        }
                        out
                    }
                };
                let dropout = self.config().dialogue_dropout;
                let steps = vectors
                    .iter()
                    .zip(&embedded)
                    .map(|(&v, &(_, s))| Ok((v.dropout(dropout)?, s)))
                    .collect::<Result<Vec<_>>>()?;
                let dial = encode_dialogue_hgru(dialogue, tape, store, &steps)?;
                inputs.insert(HeadInput::Hn, dial.last());
                Ok(Encoded {
                    dialogue_states: dial.states,
                    utterances: tape.concat(&vectors, 0)?,
                    inputs,
                    word_weights,
                    empty_keys,
                })
            }
            Encoder::Concat { bigru, boundary } => {
                let boundary = tape.param(store, *boundary);
                let mut rows = Vec::new();
                let mut spans: Vec<Option<(usize, usize)>> = Vec::with_capacity(n);
                let mut len = 0;
                let mut anchor_rows = None;
                for (i, &(words, speaker)) in embedded.iter().enumerate() {
                    let t = words.rows();
                    if t == 0 {
                        spans.push(None);
                        continue;
                    }
                    if len > 0 {
                        rows.push(boundary);
                        len += 1;
                    }
                    let tokens = tape.concat(&[words, speaker.repeat_rows(t)?], 1)?;
                    if i == n - 1 {
                        anchor_rows = Some(tokens);
                    }
                    rows.push(tokens);
                    spans.push(Some((len, len + t - 1)));
                    len += t;
                }
                if rows.is_empty() {
                    rows.push(boundary);
                }
                let flat = tape.concat(&rows, 0)?;
                let present: Vec<(usize, usize)> = spans.iter().flatten().copied().collect();
                let con = encode_dialogue_concat(bigru, tape, store, flat, &present)?;
                let mut segs = con.segments.iter();
                let zero_seg = tape.constant(Tensor::zeros(1, 4 * d_h));
                let seg_rows: Vec<Var<'t>> = spans
                    .iter()
                    .map(|s| match s {
                        Some(_) => *segs.next().expect("one segment per span"),
                        None => zero_seg,
                    })
                    .collect();
                inputs.insert(HeadInput::VSeg, seg_rows[n - 1]);
                inputs.insert(HeadInput::Cn, con.final_state);
                let v_n = match anchor_rows {
                    Some(rows) => bigru.encode(tape, store, rows)?.vector,
                    None => tape.constant(Tensor::zeros(1, 2 * d_h)),
                };
                inputs.insert(HeadInput::Vn, v_n);
                if let Some(att) = &self.attender {
                    let v = match spans[n - 1] {
                        Some((start, end)) => {
                            let queries = con.states.slice(0, start, end - start + 1)?;
                            let keys = con.states.slice(0, 0, start)?;
                            let a = att.attend(tape, store, queries, keys)?;
                            word_weights.extend(a.weights);
                            empty_keys |= a.empty_keys;
                            a.encoding.vector
                        }
                        None => tape.constant(Tensor::zeros(1, 2 * d_h)),
                    };
                    inputs.insert(HeadInput::VWordatt, v);
                }
                Ok(Encoded {
                    dialogue_states: Vec::new(),
                    utterances: tape.concat(&seg_rows, 0)?,
                    inputs,
                    word_weights,
                    empty_keys,
                })
            }
        }
    }

    /// Full forward pass of head `head` on `window`.
    pub fn forward<'t>(&self, tape: &'t Tape, window: &Window, head: usize) -> Result<Forward<'t>> {
        self.forward_with(&self.store, tape, window, head)
    }

    pub fn forward_with<'t>(
        &self,
        store: &ParamStore,
        tape: &'t Tape,
        window: &Window,
        head: usize,
    ) -> Result<Forward<'t>> {
        let h = self
            .heads
            .get(head)
            .ok_or_else(|| Error::contract(format!("no head {head}")))?;
        let c = &h.config;
        if window.task != c.task || window.role() != c.role {
            return Err(Error::contract(format!(
                "{} {} window given to the {} head",
                window.role(),
                window.task,
                c.key()
            )));
        }
        let encoded = self.encode_with(store, tape, window)?;
        let mut utterance_weights = Vec::new();
        let mut context = None;
        if let (Some(att), Some(mode)) = (&h.attention, c.utterance_attention.mode()) {
            let out = att.context(tape, store, mode, encoded.utterances)?;
            utterance_weights = out.weights;
            context = Some(out.output);
        }
        let base = HeadInput::base(c.skeleton, c.task);
        let mut parts = Vec::with_capacity(h.inputs.len());
        for &input in &h.inputs {
            let v = match input {
                HeadInput::VSelfatt => {
                    context.ok_or_else(|| Error::contract("missing attention context"))?
                }
                other => *encoded
                    .inputs
                    .get(&other)
                    .ok_or_else(|| Error::contract(format!("encoder did not produce {other}")))?,
            };
            let v = match window.next_speaker {
                Some(next) if c.task == Task::Forecast && input == base => {
                    tape.concat(&[v, self.embedder.speaker(tape, store, next)?], 1)?
                }
                _ => v,
            };
            parts.push(v);
        }
        let logits = match c.scoring {
            Scoring::Concat => h.mlps[0].forward(tape, store, tape.concat(&parts, 1)?)?,
            Scoring::Add => {
                let mut total = h.mlps[0].forward(tape, store, parts[0])?;
                for (mlp, &x) in h.mlps.iter().zip(&parts).skip(1) {
                    total = total.add(mlp.forward(tape, store, x)?)?;
                }
                total
            }
        };
        let probs = logits.softmax(1)?;
        Ok(Forward {
            logits,
            probs,
            encoded,
            utterance_weights,
        })
    }

    fn head_for(&self, window: &Window) -> Result<usize> {
        let key = TaskKey::new(window.role(), window.task);
        self.head_index(key)
            .ok_or_else(|| Error::contract(format!("model has no {key} head")))
    }

    /// Label distribution for a window, on an evaluation tape.
    pub fn predict(&self, window: &Window) -> Result<Vec<f64>> {
        let head = self.head_for(window)?;
        let tape = Tape::new();
        let out = self.forward(&tape, window, head)?;
        let probs = out.probs.value();
        Ok(probs.data().to_vec())
    }

    /// Predictions for many windows, spread over `threads` workers. Results
    /// come back in input order and do not depend on the thread count.
    pub fn predict_many(&self, windows: &[Window], threads: usize) -> Result<Vec<Vec<f64>>> {
        let threads = threads.max(1).min(windows.len().max(1));
        if threads == 1 {
            return windows.iter().map(|w| self.predict(w)).collect();
        }
        let chunk = windows.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = windows
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|w| self.predict(w))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(windows.len());
            for h in handles {
                out.extend(h.join().expect("prediction worker panicked")?);
            }
            Ok(out)
        })
    }

    /// Loss of head `head` on a labeled window.
    pub fn loss<'t>(&self, tape: &'t Tape, window: &Window, head: usize) -> Result<Var<'t>> {
        self.loss_with(&self.store, tape, window, head)
    }

    pub fn loss_with<'t>(
        &self,
        store: &ParamStore,
        tape: &'t Tape,
        window: &Window,
        head: usize,
    ) -> Result<Var<'t>> {
        let target = window
            .target
            .ok_or_else(|| Error::contract("training window has no target label"))?;
        let out = self.forward_with(store, tape, window, head)?;
        let c = &self.heads[head].config;
        let gold =
            c.role.labels().index_of(target).ok_or_else(|| {
                Error::contract(format!("label {target} is not a {} code", c.role))
            })?;
        focal_loss_var(out.probs, gold, &c.loss)
    }
}

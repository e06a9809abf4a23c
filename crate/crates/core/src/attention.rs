//! Word-level attention (BiDAF, gated match-GRU) and multi-head multi-hop
//! utterance attention.
//!
//! Word attention treats the word states of an utterance as queries and the
//! word states of the anchor utterance as keys. Each query gets a convex
//! combination of the keys, `a_j = Σ_k α_jk v_nk`, with the weights
//! normalized over keys.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{BiGru, GruCell, UtteranceEncoding};
use crate::error::{Error, Result};
use crate::params::{uniform, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordAttention {
    None,
    Bidaf,
    Gmgru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtteranceAttention {
    None,
    Anchor42,
    Self42,
}

impl UtteranceAttention {
    pub fn mode(self) -> Option<AttentionMode> {
        match self {
            UtteranceAttention::None => None,
            UtteranceAttention::Anchor42 => Some(AttentionMode::Anchor),
            UtteranceAttention::Self42 => Some(AttentionMode::SelfAttention),
        }
    }
}

/// Attended words of one utterance.
#[derive(Debug, Clone)]
pub struct WordAttended<'t> {
    /// Combined representation `z_j`, one row per query word.
    pub z: Var<'t>,
    /// Re-encoded utterance; same contract as the plain utterance encoder.
    pub encoding: UtteranceEncoding<'t>,
    /// Attention weights, each row a distribution over the anchor words.
    pub weights: Vec<Var<'t>>,
    /// Set when the anchor had no words: the queries pass through with zero
    /// attention vectors.
    pub empty_keys: bool,
}

/// `[v; a; v ⊙ a; v ⊙ a′]`.
pub fn bidaf_combine<'t>(v: Var<'t>, a: Var<'t>, a_prime: Var<'t>) -> Result<Var<'t>> {
    let tape = v.tape();
    tape.concat(&[v, a, v.mul(a)?, v.mul(a_prime)?], 1)
}

/// Multiplicative attention with a bidirectional combine, re-encoded by a BiGRU.
#[derive(Debug, Clone, PartialEq)]
pub struct Bidaf {
    pub reencode: BiGru,
}

impl Bidaf {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d_h: usize) -> Self {
        Bidaf {
            reencode: BiGru::new(store, rng, "wordatt.bidaf.reencode", 8 * d_h, d_h),
        }
    }

    pub fn attend<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        queries: Var<'t>,
        keys: Var<'t>,
    ) -> Result<WordAttended<'t>> {
        check_widths(queries, keys)?;
        let (t_q, width) = (queries.rows(), queries.cols());
        if t_q == 0 {
            return Ok(WordAttended {
                z: tape.constant(Tensor::zeros(0, 4 * width)),
                encoding: self.reencode.encode(
                    tape,
                    store,
                    tape.constant(Tensor::zeros(0, 4 * width)),
                )?,
                weights: Vec::new(),
                empty_keys: keys.rows() == 0,
            });
        }
        let (z, weights, empty_keys) = if keys.rows() == 0 {
            let zero = tape.constant(Tensor::zeros(t_q, width));
            (bidaf_combine(queries, zero, zero)?, Vec::new(), true)
        } else {
            let scores = queries.matmul(keys.transpose())?;
            let alpha = scores.softmax(1)?;
            let a = alpha.matmul(keys)?;
            let beta = scores.row_max().softmax(0)?;
            let a_prime = beta.transpose().matmul(queries)?.repeat_rows(t_q)?;
            (
                bidaf_combine(queries, a, a_prime)?,
                vec![alpha, beta.transpose()],
                false,
            )
        };
        let encoding = self.reencode.encode(tape, store, z)?;
        Ok(WordAttended {
            z,
            encoding,
            weights,
            empty_keys,
        })
    }
}

/// Additive attention conditioned on a match-GRU state; the match-GRU runs in
/// both directions over `[v_j; a_j]` and its states are the re-encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmgru {
    /// `W^k`, `2d_h × d_h`.
    pub key_proj: ParamId,
    /// `W^q`, applied to `[v_j; h_{j-1}]`, `3d_h × d_h`.
    pub query_proj: ParamId,
    /// `w^e`, `d_h × 1`.
    pub score: ParamId,
    pub forward: GruCell,
    pub backward: GruCell,
}

impl Gmgru {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d_h: usize) -> Self {
        let bound = 1.0 / (d_h as f64).sqrt();
        Gmgru {
            key_proj: store.add("wordatt.gmgru.key", uniform(rng, 2 * d_h, d_h, bound)),
            query_proj: store.add("wordatt.gmgru.query", uniform(rng, 3 * d_h, d_h, bound)),
            score: store.add("wordatt.gmgru.score", uniform(rng, d_h, 1, bound)),
            forward: GruCell::new(store, rng, "wordatt.gmgru.fwd", 4 * d_h, d_h),
            backward: GruCell::new(store, rng, "wordatt.gmgru.bwd", 4 * d_h, d_h),
        }
    }

    pub fn attend<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        queries: Var<'t>,
        keys: Var<'t>,
    ) -> Result<WordAttended<'t>> {
        check_widths(queries, keys)?;
        let d_h = self.forward.d_h;
        if queries.cols() != 2 * d_h {
            return Err(Error::dim(format!(
                "GMGRU expects word states of width {}, got {}",
                2 * d_h,
                queries.cols()
            )));
        }
        let t_q = queries.rows();
        if t_q == 0 {
            return Ok(WordAttended {
                z: tape.constant(Tensor::zeros(0, 4 * d_h)),
                encoding: UtteranceEncoding {
                    vector: tape.constant(Tensor::zeros(1, 2 * d_h)),
                    words: tape.constant(Tensor::zeros(0, 2 * d_h)),
                },
                weights: Vec::new(),
                empty_keys: keys.rows() == 0,
            });
        }
        let empty_keys = keys.rows() == 0;
        let projected_keys = if empty_keys {
            None
        } else {
            Some(keys.matmul(tape.param(store, self.key_proj))?)
        };
        let (fwd, z, weights) = self.run(
            tape,
            store,
            &self.forward,
            queries,
            keys,
            projected_keys,
            false,
        )?;
        let (bwd, _, _) = self.run(
            tape,
            store,
            &self.backward,
            queries,
            keys,
            projected_keys,
            true,
        )?;
        let fwd_m = tape.concat(&fwd, 0)?;
        let bwd_m = tape.concat(&bwd, 0)?;
        let encoding = UtteranceEncoding {
            vector: tape.concat(&[fwd[t_q - 1], bwd[0]], 1)?,
            words: tape.concat(&[fwd_m, bwd_m], 1)?,
        };
        Ok(WordAttended {
            z,
            encoding,
            weights,
            empty_keys,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        cell: &GruCell,
        queries: Var<'t>,
        keys: Var<'t>,
        projected_keys: Option<Var<'t>>,
        reverse: bool,
    ) -> Result<(Vec<Var<'t>>, Var<'t>, Vec<Var<'t>>)> {
        let t_q = queries.rows();
        let order: Vec<usize> = if reverse {
            (0..t_q).rev().collect()
        } else {
            (0..t_q).collect()
        };
        let mut h = cell.zero_state(tape);
        let mut states = Vec::with_capacity(t_q);
        let mut zs = Vec::with_capacity(t_q);
        let mut weights = Vec::new();
        for j in order {
            let v = queries.row(j)?;
            let a = match projected_keys {
                None => tape.constant(Tensor::zeros(1, keys.cols())),
                Some(pk) => {
                    let q = tape
                        .concat(&[v, h], 1)?
                        .matmul(tape.param(store, self.query_proj))?;
                    let scores = pk
                        .add_row(q)?
                        .tanh()
                        .matmul(tape.param(store, self.score))?
                        .transpose();
                    let alpha = scores.softmax(1)?;
                    weights.push(alpha);
                    alpha.matmul(keys)?
                }
            };
            let z = tape.concat(&[v, a], 1)?;
            h = cell.step(tape, store, z, h)?;
            states.push(h);
            zs.push(z);
        }
        if reverse {
            states.reverse();
            zs.reverse();
            weights.reverse();
        }
        Ok((states, tape.concat(&zs, 0)?, weights))
    }
}

fn check_widths(queries: Var<'_>, keys: Var<'_>) -> Result<()> {
    if queries.cols() != keys.cols() {
        return Err(Error::dim(format!(
            "query width {} differs from key width {}",
            queries.cols(),
            keys.cols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum WordAttender {
    Bidaf(Bidaf),
    Gmgru(Gmgru),
}

impl WordAttender {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        kind: WordAttention,
        d_h: usize,
    ) -> Option<Self> {
        match kind {
            WordAttention::None => None,
            WordAttention::Bidaf => Some(WordAttender::Bidaf(Bidaf::new(store, rng, d_h))),
            WordAttention::Gmgru => Some(WordAttender::Gmgru(Gmgru::new(store, rng, d_h))),
        }
    }

    pub fn attend<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        queries: Var<'t>,
        keys: Var<'t>,
    ) -> Result<WordAttended<'t>> {
        match self {
            WordAttender::Bidaf(b) => b.attend(tape, store, queries, keys),
            WordAttender::Gmgru(g) => g.attend(tape, store, queries, keys),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// `Q = [v_n]`, `K = V = [v_1 … v_n]`.
    Anchor,
    /// `Q = K = V = [v_1 … v_n]`, pooled at position `n`.
    SelfAttention,
}

#[derive(Debug, Clone, PartialEq)]
struct Hop {
    query: ParamId,
    key: ParamId,
    value: ParamId,
    output: ParamId,
}

/// `[head_1; …; head_h] W^O` with
/// `head_i = softmax(Q W^Q_i (K W^K_i)^T / √d_k) V W^V_i`, stacked for
/// several hops. Each hop has its own projections; its output is the next
/// hop's query while keys and values stay fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Multihead {
    hops: Vec<Hop>,
    pub heads: usize,
    pub width: usize,
}

/// Output of [`Multihead::attend`].
#[derive(Debug, Clone)]
pub struct MultiheadOutput<'t> {
    pub output: Var<'t>,
    /// `weights[hop][head]`, one row per query.
    pub weights: Vec<Vec<Var<'t>>>,
}

impl Multihead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        heads: usize,
        hops: usize,
    ) -> Result<Self> {
        if heads == 0 || hops == 0 {
            return Err(Error::config(
                "multihead attention needs at least one head and one hop",
            ));
        }
        if width % heads != 0 {
            return Err(Error::config(format!(
                "attention width {width} is not divisible by {heads} heads"
            )));
        }
        let bound = 1.0 / (width as f64).sqrt();
        let hops = (0..hops)
            .map(|t| {
                let mut add = |part: &str| {
                    store.add(
                        format!("{name}.hop{t}.{part}"),
                        uniform(rng, width, width, bound),
                    )
                };
                Hop {
                    query: add("query"),
                    key: add("key"),
                    value: add("value"),
                    output: add("output"),
                }
            })
            .collect();
        Ok(Multihead { hops, heads, width })
    }

    pub fn hops(&self) -> usize {
        self.hops.len()
    }

    /// Projection ids of hop `t` as `(W^Q, W^K, W^V, W^O)`.
    pub fn projections(&self, t: usize) -> (ParamId, ParamId, ParamId, ParamId) {
        let h = &self.hops[t];
        (h.query, h.key, h.value, h.output)
    }

    pub fn attend<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        q: Var<'t>,
        kv: Var<'t>,
    ) -> Result<MultiheadOutput<'t>> {
        if q.cols() != self.width || kv.cols() != self.width {
            return Err(Error::dim(format!(
                "multihead width {} got query {:?} and keys {:?}",
                self.width,
                q.shape(),
                kv.shape()
            )));
        }
        if kv.rows() == 0 {
            return Err(Error::dim("multihead attention over zero keys"));
        }
        let d_k = self.width / self.heads;
        let scale = 1.0 / (d_k as f64).sqrt();
        let widths = vec![d_k; self.heads];
        let mut query = q;
        let mut weights = Vec::with_capacity(self.hops.len());
        for hop in &self.hops {
            let qs = query.matmul(tape.param(store, hop.query))?.split(&widths)?;
            let ks = kv.matmul(tape.param(store, hop.key))?.split(&widths)?;
            let vs = kv.matmul(tape.param(store, hop.value))?.split(&widths)?;
            let mut heads = Vec::with_capacity(self.heads);
            let mut hop_weights = Vec::with_capacity(self.heads);
            for i in 0..self.heads {
                let w = qs[i].matmul(ks[i].transpose())?.scale(scale).softmax(1)?;
                heads.push(w.matmul(vs[i])?);
                hop_weights.push(w);
            }
            query = tape
                .concat(&heads, 1)?
                .matmul(tape.param(store, hop.output))?;
            weights.push(hop_weights);
        }
        Ok(MultiheadOutput {
            output: query,
            weights,
        })
    }

    /// Context vector for the anchor (last row of `utterances`).
    pub fn context<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        mode: AttentionMode,
        utterances: Var<'t>,
    ) -> Result<MultiheadOutput<'t>> {
        let n = utterances.rows();
        if n == 0 {
            return Err(Error::contract(
                "utterance attention needs at least one utterance",
            ));
        }
        let q = match mode {
            AttentionMode::Anchor => utterances.row(n - 1)?,
            AttentionMode::SelfAttention => utterances,
        };
        let out = self.attend(tape, store, q, utterances)?;
        let pooled = match mode {
            AttentionMode::Anchor => out.output,
            AttentionMode::SelfAttention => out.output.row(n - 1)?,
        };
        Ok(MultiheadOutput {
            output: pooled,
            weights: out.weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn assert_simplex_rows(t: &Tensor) {
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn bidaf_single_key_copies_key() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let b = Bidaf::new(&mut store, &mut r, 2);
        let tape = Tape::new();
        let q = tape.constant(random(&mut r, 3, 4));
        let k = tape.constant(random(&mut r, 1, 4));
        let out = b.attend(&tape, &store, q, k).unwrap();
        let z = out.z.value();
        for j in 0..3 {
            assert_eq!(&z.row_slice(j)[4..8], k.value().data());
        }
        assert_eq!(out.weights[0].value().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn bidaf_prefers_colinear_key() {
        let mut store = ParamStore::new();
        let b = Bidaf::new(&mut store, &mut rng(), 1);
        let tape = Tape::new();
        let q = tape.constant(Tensor::row(vec![1.0, 0.0]));
        let k = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap());
        let out = b.attend(&tape, &store, q, k).unwrap();
        let w = out.weights[0].value();
        // scores 0 and 2
        let e2 = 2f64.exp();
        close(w.data(), &[1.0 / (1.0 + e2), e2 / (1.0 + e2)], 1e-15);
        assert!(w.data()[0] < w.data()[1]);
    }

    #[test]
    fn bidaf_combine_examples() {
        let tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(1, 2));
        let a = tape.constant(Tensor::row(vec![3.0, -1.0]));
        let z = bidaf_combine(zero, a, a).unwrap();
        assert_eq!(z.value().data(), &[0.0, 0.0, 3.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let v = tape.constant(Tensor::row(vec![2.0, -0.5]));
        let z = bidaf_combine(v, v, v).unwrap();
        assert_eq!(
            z.value().data(),
            &[2.0, -0.5, 2.0, -0.5, 4.0, 0.25, 4.0, 0.25]
        );
    }

    #[test]
    fn bidaf_matches_scalar_oracle_on_two_by_two() {
        let q = [[0.3, -1.2], [0.8, 0.5]];
        let k = [[1.0, 0.2], [-0.4, 0.9]];
        let mut store = ParamStore::new();
        let b = Bidaf::new(&mut store, &mut rng(), 1);
        let tape = Tape::new();
        let qv = tape.constant(Tensor::from_rows(&q.map(|r| r.to_vec())).unwrap());
        let kv = tape.constant(Tensor::from_rows(&k.map(|r| r.to_vec())).unwrap());
        let z = b.attend(&tape, &store, qv, kv).unwrap().z.value();

        let dot = |x: [f64; 2], y: [f64; 2]| x[0] * y[0] + x[1] * y[1];
        let s = [
            [dot(q[0], k[0]), dot(q[0], k[1])],
            [dot(q[1], k[0]), dot(q[1], k[1])],
        ];
        let softmax2 = |x: [f64; 2]| {
            let m = x[0].max(x[1]);
            let e = [(x[0] - m).exp(), (x[1] - m).exp()];
            [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
        };
        let beta = softmax2([s[0][0].max(s[0][1]), s[1][0].max(s[1][1])]);
        let a_prime = [
            beta[0] * q[0][0] + beta[1] * q[1][0],
            beta[0] * q[0][1] + beta[1] * q[1][1],
        ];
        for j in 0..2 {
            let al = softmax2(s[j]);
            let a = [
                al[0] * k[0][0] + al[1] * k[1][0],
                al[0] * k[0][1] + al[1] * k[1][1],
            ];
            let v = q[j];
            let want = [
                v[0],
                v[1],
                a[0],
                a[1],
                v[0] * a[0],
                v[1] * a[1],
                v[0] * a_prime[0],
                v[1] * a_prime[1],
            ];
            close(z.row_slice(j), &want, 1e-14);
        }
    }

    #[test]
    fn empty_keys_are_flagged() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let b = Bidaf::new(&mut store, &mut r, 2);
        let g = Gmgru::new(&mut store, &mut r, 2);
        let tape = Tape::new();
        let q = tape.constant(random(&mut r, 2, 4));
        let k = tape.constant(Tensor::zeros(0, 4));
        let out = b.attend(&tape, &store, q, k).unwrap();
        assert!(out.empty_keys && out.weights.is_empty());
        let z = out.z.value();
        assert_eq!(&z.row_slice(1)[..4], q.value().row_slice(1));
        assert!(z.row_slice(1)[4..].iter().all(|&x| x == 0.0));
        let out = g.attend(&tape, &store, q, k).unwrap();
        assert!(out.empty_keys);
        assert!(out.z.value().row_slice(0)[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gmgru_zero_score_vector_gives_uniform_weights() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let g = Gmgru::new(&mut store, &mut r, 2);
        store.set(g.score, Tensor::zeros(2, 1)).unwrap();
        let tape = Tape::new();
        let q = tape.constant(random(&mut r, 3, 4));
        let k = tape.constant(random(&mut r, 4, 4));
        let out = g.attend(&tape, &store, q, k).unwrap();
        assert_eq!(out.weights.len(), 3);
        for w in &out.weights {
            close(w.value().data(), &[0.25; 4], 1e-15);
        }
        assert_eq!(out.encoding.vector.shape(), [1, 4]);
        assert_eq!(out.z.shape(), [3, 8]);
    }

    #[test]
    fn word_attention_weights_are_simplexes() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let b = Bidaf::new(&mut store, &mut r, 3);
        let g = Gmgru::new(&mut store, &mut r, 3);
        for _ in 0..20 {
            let tq = r.gen_range(1..6);
            let tk = r.gen_range(1..6);
            let tape = Tape::new();
            let q = tape.constant(random(&mut r, tq, 6).map(|x| 4.0 * x));
            let k = tape.constant(random(&mut r, tk, 6).map(|x| 4.0 * x));
            for out in [
                b.attend(&tape, &store, q, k).unwrap(),
                g.attend(&tape, &store, q, k).unwrap(),
            ] {
                for w in &out.weights {
                    assert_simplex_rows(&w.value());
                }
            }
        }
    }

    fn identity_multihead(width: usize, heads: usize, hops: usize) -> (ParamStore, Multihead) {
        let mut store = ParamStore::new();
        let m = Multihead::new(&mut store, &mut rng(), "m", width, heads, hops).unwrap();
        for t in 0..hops {
            let (q, k, v, o) = m.projections(t);
            for id in [q, k, v, o] {
                store.set(id, Tensor::identity(width)).unwrap();
            }
        }
        (store, m)
    }

    #[test]
    fn multihead_picks_matching_row_at_scale() {
        let (store, m) = identity_multihead(2, 1, 1);
        let tape = Tape::new();
        let kv = tape.constant(Tensor::from_rows(&[vec![40.0, 0.0], vec![0.0, 40.0]]).unwrap());
        let q = tape.constant(Tensor::row(vec![40.0, 0.0]));
        let out = m.attend(&tape, &store, q, kv).unwrap();
        close(out.output.value().data(), &[40.0, 0.0], 1e-9);
    }

    #[test]
    fn multihead_with_equal_values_ignores_scores() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let m = Multihead::new(&mut store, &mut r, "m", 4, 2, 1).unwrap();
        let c = random(&mut r, 1, 4);
        let (_, _, wv, wo) = m.projections(0);
        let want = c
            .matmul(store.get(wv))
            .unwrap()
            .matmul(store.get(wo))
            .unwrap();
        let tape = Tape::new();
        let keys = tape.constant(random(&mut r, 3, 4));
        let values = Tensor::from_rows(&vec![c.data().to_vec(); 3]).unwrap();
        // keys feed scores only through W^K, so reuse the same rows for K and V
        let kv = tape.constant(values);
        let out = m.attend(&tape, &store, keys.row(0).unwrap(), kv).unwrap();
        close(out.output.value().data(), want.data(), 1e-12);
    }

    #[test]
    fn multihead_rejects_indivisible_width() {
        let mut store = ParamStore::new();
        assert!(matches!(
            Multihead::new(&mut store, &mut rng(), "m", 6, 4, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn anchor_with_one_utterance_attends_to_itself() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let m = Multihead::new(&mut store, &mut r, "m", 8, 4, 2).unwrap();
        let tape = Tape::new();
        let vs = tape.constant(random(&mut r, 1, 8));
        let out = m.context(&tape, &store, AttentionMode::Anchor, vs).unwrap();
        for hop in &out.weights {
            for w in hop {
                assert_eq!(w.value().data(), &[1.0]);
            }
        }
        assert_eq!(out.output.shape(), [1, 8]);
    }

    #[test]
    fn anchor_is_symmetric_in_history_order_under_equal_scores() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let m = Multihead::new(&mut store, &mut r, "m", 4, 2, 2).unwrap();
        for t in 0..2 {
            let (_, k, _, _) = m.projections(t);
            store.set(k, Tensor::zeros(4, 4)).unwrap();
        }
        let rows: Vec<Vec<f64>> = (0..4).map(|_| random(&mut r, 1, 4).into_data()).collect();
        let mut permuted = vec![
            rows[2].clone(),
            rows[0].clone(),
            rows[1].clone(),
            rows[3].clone(),
        ];
        let run = |rs: &[Vec<f64>]| {
            let tape = Tape::new();
            let vs = tape.constant(Tensor::from_rows(rs).unwrap());
            (*m.context(&tape, &store, AttentionMode::Anchor, vs)
                .unwrap()
                .output
                .value())
            .clone()
        };
        let a = run(&rows);
        let b = run(&permuted);
        close(a.data(), b.data(), 1e-12);
        permuted.swap(0, 3);
        assert_ne!(run(&permuted), a);
    }

    #[test]
    fn one_hop_one_head_identity_is_plain_attention() {
        let (store, m) = identity_multihead(3, 1, 1);
        let mut r = rng();
        let vs = random(&mut r, 4, 3);
        let tape = Tape::new();
        let out = m
            .context(
                &tape,
                &store,
                AttentionMode::Anchor,
                tape.constant(vs.clone()),
            )
            .unwrap();
        let q = Tensor::row(vs.row_slice(3).to_vec());
        let scores = q.matmul(&vs.transpose()).unwrap().map(|x| x / 3f64.sqrt());
        let want = scores.softmax(1).unwrap().matmul(&vs).unwrap();
        close(out.output.value().data(), want.data(), 1e-14);
    }

    #[test]
    fn self_attention_pools_last_position_and_weights_are_simplexes() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let m = Multihead::new(&mut store, &mut r, "m", 8, 4, 2).unwrap();
        let tape = Tape::new();
        let vs = tape.constant(random(&mut r, 5, 8).map(|x| 6.0 * x));
        let out = m
            .context(&tape, &store, AttentionMode::SelfAttention, vs)
            .unwrap();
        assert_eq!(out.output.shape(), [1, 8]);
        assert_eq!(out.weights.len(), 2);
        for hop in &out.weights {
            assert_eq!(hop.len(), 4);
            for w in hop {
                assert_eq!(w.shape(), [5, 5]);
                assert_simplex_rows(&w.value());
            }
        }
        let full = m.attend(&tape, &store, vs, vs).unwrap().output.value();
        assert_eq!(out.output.value().data(), full.row_slice(4));
    }
}

//! GRU recurrences and the two dialogue skeletons.
//!
//! * HGRU: a BiGRU encodes each utterance; a unidirectional GRU runs over the
//!   utterance vectors (each concatenated with its speaker vector). The
//!   dialogue GRU is unidirectional so `H_i` only ever sees `u_1..u_i`.
//! * CON: one BiGRU over the flattened token sequence of the whole window;
//!   an utterance is represented by the states at its first and last token.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{uniform, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Standard GRU cell. Weight columns are laid out `[update | reset | candidate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    /// Every matrix and bias drawn from `uniform(-1/√d_h, 1/√d_h)`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_h: usize,
    ) -> Self {
        let bound = 1.0 / (d_h as f64).sqrt();
        GruCell {
            input: store.add(format!("{name}.input"), uniform(rng, d_in, 3 * d_h, bound)),
            recurrent: store.add(
                format!("{name}.recurrent"),
                uniform(rng, d_h, 3 * d_h, bound),
            ),
            bias: store.add(format!("{name}.bias"), uniform(rng, 1, 3 * d_h, bound)),
            d_in,
            d_h,
        }
    }

    /// Input projection `x·W + b` for every row of `x`.
    pub fn project<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        if x.cols() != self.d_in {
            return Err(Error::dim(format!(
                "GRU expects input width {}, got {}",
                self.d_in,
                x.cols()
            )));
        }
        x.matmul(tape.param(store, self.input))?
            .add_row(tape.param(store, self.bias))
    }

    /// `h' = (1 - z) ⊙ h + z ⊙ tanh(x W_c + (r ⊙ h) U_c + b_c)`.
    pub fn step<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        h: Var<'t>,
    ) -> Result<Var<'t>> {
        if h.cols() != self.d_h {
            return Err(Error::dim(format!(
                "GRU expects state width {}, got {}",
                self.d_h,
                h.cols()
            )));
        }
        let xp = self.project(tape, store, x)?;
        self.step_projected(tape, store, xp, h)
    }

    pub fn step_projected<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        xp: Var<'t>,
        h: Var<'t>,
    ) -> Result<Var<'t>> {
        tape.gru(xp, h, tape.param(store, self.recurrent))
    }

    pub fn zero_state<'t>(&self, tape: &'t Tape) -> Var<'t> {
        tape.constant(Tensor::zeros(1, self.d_h))
    }

    /// Runs over the rows of `x` from a zero state. States come back in input
    /// position order; with `reverse` the recurrence starts at the last row.
    pub fn run<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        reverse: bool,
    ) -> Result<Vec<Var<'t>>> {
        let len = x.rows();
        if len == 0 {
            return Ok(Vec::new());
        }
        let xp = self.project(tape, store, x)?;
        let mut h = self.zero_state(tape);
        let mut states = Vec::with_capacity(len);
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        };
        for t in order {
            h = self.step_projected(tape, store, xp.row(t)?, h)?;
            states.push(h);
        }
        if reverse {
            states.reverse();
        }
        Ok(states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

/// Output of a BiGRU over one sequence.
#[derive(Debug, Clone, Copy)]
pub struct UtteranceEncoding<'t> {
    /// `[forward_T; backward_1]`, width `2 d_h`; zero for an empty sequence.
    pub vector: Var<'t>,
    /// Per-position `[forward_j; backward_j]`, `T × 2 d_h`.
    pub words: Var<'t>,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_h: usize,
    ) -> Self {
        BiGru {
            forward: GruCell::new(store, rng, &format!("{name}.fwd"), d_in, d_h),
            backward: GruCell::new(store, rng, &format!("{name}.bwd"), d_in, d_h),
        }
    }

    pub fn d_in(&self) -> usize {
        self.forward.d_in
    }

    pub fn d_h(&self) -> usize {
        self.forward.d_h
    }

    /// Encodes the rows of `x`. Zero rows give a zero vector and an empty
    /// word matrix.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
    ) -> Result<UtteranceEncoding<'t>> {
        let width = 2 * self.d_h();
        if x.rows() == 0 {
            return Ok(UtteranceEncoding {
                vector: tape.constant(Tensor::zeros(1, width)),
                words: tape.constant(Tensor::zeros(0, width)),
            });
        }
        let fwd = self.forward.run(tape, store, x, false)?;
        let bwd = self.backward.run(tape, store, x, true)?;
        let fwd_m = tape.concat(&fwd, 0)?;
        let bwd_m = tape.concat(&bwd, 0)?;
        let words = tape.concat(&[fwd_m, bwd_m], 1)?;
        let vector = tape.concat(&[*fwd.last().expect("non-empty"), bwd[0]], 1)?;
        Ok(UtteranceEncoding { vector, words })
    }
}

/// Per-step states of the dialogue GRU.
#[derive(Debug, Clone)]
pub struct DialogueEncoding<'t> {
    pub states: Vec<Var<'t>>,
}

impl<'t> DialogueEncoding<'t> {
    /// `H_n`, the state after the anchor utterance.
    pub fn last(&self) -> Var<'t> {
        *self.states.last().expect("dialogue has at least one step")
    }
}

/// Unidirectional GRU over `[v_i; s_i]` for each utterance in order.
pub fn encode_dialogue_hgru<'t>(
    gru: &GruCell,
    tape: &'t Tape,
    store: &ParamStore,
    steps: &[(Var<'t>, Var<'t>)],
) -> Result<DialogueEncoding<'t>> {
    if steps.is_empty() {
        return Err(Error::contract(
            "dialogue encoder needs at least one utterance",
        ));
    }
    let rows = steps
        .iter()
        .map(|&(v, s)| tape.concat(&[v, s], 1))
        .collect::<Result<Vec<_>>>()?;
    let x = tape.concat(&rows, 0)?;
    let states = gru.run(tape, store, x, false)?;
    Ok(DialogueEncoding { states })
}

/// BiGRU states over a flattened dialogue.
#[derive(Debug, Clone)]
pub struct ConcatEncoding<'t> {
    /// `L × 2 d_h` states `[forward_t; backward_t]`.
    pub states: Var<'t>,
    /// `[state(start); state(end)]` per segment, width `4 d_h`.
    pub segments: Vec<Var<'t>>,
    /// `C_n = [forward_L; backward_1]`, width `2 d_h`.
    pub final_state: Var<'t>,
}

/// Runs `bigru` over `tokens` (`L × d`) and reads off one segment vector per
/// inclusive `(start, end)` span. Spans must be ordered, non-overlapping and
/// inside the sequence.
pub fn encode_dialogue_concat<'t>(
    bigru: &BiGru,
    tape: &'t Tape,
    store: &ParamStore,
    tokens: Var<'t>,
    spans: &[(usize, usize)],
) -> Result<ConcatEncoding<'t>> {
    let len = tokens.rows();
    let mut prev_end: Option<usize> = None;
    for &(start, end) in spans {
        if start > end || end >= len || prev_end.is_some_and(|p| start <= p) {
            return Err(Error::contract(format!(
                "segment ({start}, {end}) is not a strictly increasing span of a {len}-token dialogue"
            )));
        }
        prev_end = Some(end);
    }
    let enc = bigru.encode(tape, store, tokens)?;
    let segments = spans
        .iter()
        .map(|&(start, end)| tape.concat(&[enc.words.row(start)?, enc.words.row(end)?], 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConcatEncoding {
        states: enc.words,
        segments,
        final_state: enc.vector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Scalar reference GRU step, independent of the fused tape op.
    fn reference_step(store: &ParamStore, cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d = cell.d_h;
        let w = store.get(cell.input);
        let u = store.get(cell.recurrent);
        let b = store.get(cell.bias);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |gate: usize, j: usize, hv: &[f64]| {
            let mut acc = b.get(0, gate * d + j);
            for (k, xk) in x.iter().enumerate() {
                acc += xk * w.get(k, gate * d + j);
            }
            for (k, hk) in hv.iter().enumerate() {
                acc += hk * u.get(k, gate * d + j);
            }
            acc
        };
        let z: Vec<f64> = (0..d).map(|j| sig(pre(0, j, h))).collect();
        let r: Vec<f64> = (0..d).map(|j| sig(pre(1, j, h))).collect();
        let rh: Vec<f64> = (0..d).map(|j| r[j] * h[j]).collect();
        (0..d)
            .map(|j| {
                let c = pre(2, j, &rh).tanh();
                (1.0 - z[j]) * h[j] + z[j] * c
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_half_state() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut rng(), "g", 3, 2);
        for id in [cell.input, cell.recurrent, cell.bias] {
            let shape = store.get(id).shape();
            store.set(id, Tensor::zeros(shape[0], shape[1])).unwrap();
        }
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.3, -2.0, 5.0]));
        let h = tape.constant(Tensor::row(vec![1.0, 1.0]));
        let out = cell.step(&tape, &store, x, h).unwrap().value();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut rng(), "g", 3, 2);
        let mut bias = Tensor::zeros(1, 6);
        bias.set(0, 0, -60.0);
        bias.set(0, 1, -60.0);
        store.set(cell.bias, bias).unwrap();
        let mut w = store.get(cell.input).clone();
        for k in 0..3 {
            for j in 0..2 {
                w.set(k, j, 0.0);
                w.set(k, 4 + j, 0.0);
            }
        }
        store.set(cell.input, w).unwrap();
        store.set(cell.recurrent, Tensor::zeros(2, 6)).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.9, -0.4, 2.0]));
        let h = tape.constant(Tensor::row(vec![0.7, -0.2]));
        let out = cell.step(&tape, &store, x, h).unwrap().value();
        assert!((out.data()[0] - 0.7).abs() < 1e-12);
        assert!((out.data()[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn step_matches_scalar_reference_and_is_deterministic() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut r, "g", 4, 3);
        let x = random(&mut r, 1, 4);
        let h = random(&mut r, 1, 3);
        let run = || {
            let tape = Tape::new();
            let out = cell
                .step(
                    &tape,
                    &store,
                    tape.constant(x.clone()),
                    tape.constant(h.clone()),
                )
                .unwrap();
            (*out.value()).clone()
        };
        let expected = reference_step(&store, &cell, x.data(), h.data());
        for (a, b) in run().data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(run(), run());
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut rng(), "g", 4, 3);
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 5));
        let h = cell.zero_state(&tape);
        assert!(matches!(
            cell.step(&tape, &store, x, h),
            Err(Error::Dimension(_))
        ));
        let x = tape.constant(Tensor::zeros(1, 4));
        let h = tape.constant(Tensor::zeros(1, 2));
        assert!(matches!(
            cell.step(&tape, &store, x, h),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn empty_utterance_encodes_to_zero() {
        let mut store = ParamStore::new();
        let bi = BiGru::new(&mut store, &mut rng(), "u", 4, 3);
        let tape = Tape::new();
        let enc = bi
            .encode(&tape, &store, tape.constant(Tensor::zeros(0, 4)))
            .unwrap();
        assert_eq!(enc.vector.value().data(), &[0.0; 6]);
        assert_eq!(enc.words.shape(), [0, 6]);
    }

    #[test]
    fn single_token_vector_equals_word_state() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let bi = BiGru::new(&mut store, &mut r, "u", 4, 3);
        let tape = Tape::new();
        let enc = bi
            .encode(&tape, &store, tape.constant(random(&mut r, 1, 4)))
            .unwrap();
        assert_eq!(enc.vector.value().data(), enc.words.value().data());
    }

    #[test]
    fn reverse_pass_equals_forward_pass_on_reversed_input() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut r, "g", 4, 3);
        let x = random(&mut r, 5, 4);
        let mut reversed_rows: Vec<Vec<f64>> = (0..5).map(|i| x.row_slice(i).to_vec()).collect();
        reversed_rows.reverse();
        let xr = Tensor::from_rows(&reversed_rows).unwrap();

        let tape = Tape::new();
        let back = cell.run(&tape, &store, tape.constant(x), true).unwrap();
        let fwd = cell.run(&tape, &store, tape.constant(xr), false).unwrap();
        for i in 0..5 {
            assert_eq!(back[i].value(), fwd[4 - i].value());
        }

        // brute-force unrolled loop with the scalar reference
        let mut h = vec![0.0; 3];
        for i in (0..5).rev() {
            h = reference_step(&store, &cell, &reversed_rows[4 - i], &h);
            for (a, b) in back[i].value().data().iter().zip(&h) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn dialogue_gru_unrolls_and_is_causal() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, &mut r, "d", 6, 3);
        let vs: Vec<Tensor> = (0..4).map(|_| random(&mut r, 1, 4)).collect();
        let ss: Vec<Tensor> = (0..4).map(|_| random(&mut r, 1, 2)).collect();

        let tape = Tape::new();
        let steps: Vec<_> = vs
            .iter()
            .zip(&ss)
            .map(|(v, s)| (tape.constant(v.clone()), tape.constant(s.clone())))
            .collect();
        let enc = encode_dialogue_hgru(&gru, &tape, &store, &steps[..3]).unwrap();

        // n = 1 is one step from zero
        let one = encode_dialogue_hgru(&gru, &tape, &store, &steps[..1]).unwrap();
        let x0 = tape.concat(&[steps[0].0, steps[0].1], 1).unwrap();
        let h1 = gru.step(&tape, &store, x0, gru.zero_state(&tape)).unwrap();
        assert_eq!(one.last().value(), h1.value());

        // unrolled reference on n = 3
        let mut h = vec![0.0; 3];
        for i in 0..3 {
            let x = [vs[i].data(), ss[i].data()].concat();
            h = reference_step(&store, &gru, &x, &h);
            for (a, b) in enc.states[i].value().data().iter().zip(&h) {
                assert!((a - b).abs() < 1e-13);
            }
        }

        // appending an utterance leaves earlier states untouched
        let longer = encode_dialogue_hgru(&gru, &tape, &store, &steps).unwrap();
        for i in 0..3 {
            assert_eq!(longer.states[i].value(), enc.states[i].value());
        }
    }

    #[test]
    fn concat_segments() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let bi = BiGru::new(&mut store, &mut r, "c", 4, 3);
        let tape = Tape::new();
        let tokens = tape.constant(random(&mut r, 5, 4));
        let enc =
            encode_dialogue_concat(&bi, &tape, &store, tokens, &[(0, 1), (3, 3), (4, 4)]).unwrap();
        let states = enc.states.value();
        let seg = enc.segments[0].value();
        assert_eq!(seg.cols(), 12);
        assert_eq!(&seg.data()[..6], states.row_slice(0));
        assert_eq!(&seg.data()[6..], states.row_slice(1));
        // single-token segment duplicates its state
        let seg = enc.segments[1].value();
        assert_eq!(&seg.data()[..6], &seg.data()[6..]);

        for bad in [vec![(1, 0)], vec![(0, 2), (2, 3)], vec![(0, 5)]] {
            assert!(encode_dialogue_concat(&bi, &tape, &store, tokens, &bad).is_err());
        }
    }

    #[test]
    fn concat_on_one_utterance_matches_utterance_encoder() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let bi = BiGru::new(&mut store, &mut r, "c", 4, 3);
        let x = random(&mut r, 4, 4);
        let tape = Tape::new();
        let con = encode_dialogue_concat(&bi, &tape, &store, tape.constant(x.clone()), &[(0, 3)])
            .unwrap();
        let utt = bi.encode(&tape, &store, tape.constant(x)).unwrap();
        assert_eq!(con.final_state.value(), utt.vector.value());
        assert_eq!(con.states.value(), utt.words.value());
        let seg = con.segments[0].value();
        let words = utt.words.value();
        assert_eq!(&seg.data()[..6], words.row_slice(0));
        assert_eq!(&seg.data()[6..], words.row_slice(3));
        // v_1 = [fwd_T; bwd_1] sits inside the segment vector
        let v = utt.vector.value();
        assert_eq!(&v.data()[..3], &seg.data()[6..9]);
        assert_eq!(&v.data()[3..], &seg.data()[3..6]);
    }
}

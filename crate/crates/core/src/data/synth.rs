//! Deterministic synthetic MI transcripts.
//!
//! Each MISC code owns a disjoint keyword pool; utterances mix one or two
//! keywords with shared filler words, so the code of any utterance is
//! recoverable from its text. Codes follow a first-order Markov chain over
//! all eleven codes with one or two dominant successors per code (a closed
//! question is usually answered neutrally, change talk is usually reflected,
//! and so on), which makes the next code forecastable from the history.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Label, Session, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 7,
            sessions: 200,
            min_len: 40,
            max_len: 40,
        }
    }
}

/// Probability mass spread uniformly over every code in each row.
const SMOOTHING: f64 = 0.1;

fn successors(label: Label) -> &'static [(Label, f64)] {
    use Label::*;
    match label {
        Fn => &[(Fa, 0.4), (Res, 0.25), (Gi, 0.15), (Fn, 0.1)],
        Ct => &[(Rec, 0.45), (Res, 0.3), (Mia, 0.1)],
        St => &[(Rec, 0.35), (Min, 0.25), (Quo, 0.2)],
        Fa => &[(Fn, 0.6), (Ct, 0.15), (Gi, 0.1)],
        Res => &[(Ct, 0.5), (Fn, 0.3)],
        Rec => &[(St, 0.4), (Ct, 0.4)],
        Gi => &[(Quc, 0.5), (Gi, 0.2), (Mia, 0.15)],
        Quc => &[(Fn, 0.8)],
        Quo => &[(Ct, 0.6), (St, 0.2)],
        Mia => &[(Fn, 0.4), (Quo, 0.4)],
        Min => &[(St, 0.7), (Fn, 0.1)],
    }
}

fn keywords(label: Label) -> &'static [&'static str] {
    use Label::*;
    match label {
        Fn => &["weekend", "yesterday", "brother", "usually", "morning"],
        Ct => &["quit", "healthier", "cutting", "ready", "goal"],
        St => &["enjoy", "relax", "never", "harmless", "fine"],
        Fa => &["mhm", "okay", "right", "gotcha", "sure"],
        Res => &["avoided", "sounds", "noticed", "saying", "mean"],
        Rec => &["wonder", "torn", "deeper", "pattern", "beneath"],
        Gi => &["alcohol", "depressant", "research", "studies", "percent"],
        Quc => &["did", "have", "were", "could", "anything"],
        Quo => &["describe", "what", "how", "tell", "explain"],
        Mia => &[
            "accomplished",
            "proud",
            "permission",
            "decision",
            "strength",
        ],
        Min => &["must", "warn", "should", "wrong", "stop"],
    }
}

const FILLER: &[&str] = &[
    "i", "you", "the", "a", "it", "that", "and", "to", "of", "so", "well", "just", "really",
    "like", "maybe", "kind", "about", "with", "this", "week", "then", "there", "we", "my", "your",
    "in",
];

/// Row-stochastic transition matrix over [`Label::ALL`].
pub fn transition_matrix() -> Vec<Vec<f64>> {
    let n = Label::ALL.len();
    Label::ALL
        .iter()
        .map(|&from| {
            let succ = successors(from);
            let total: f64 = succ.iter().map(|(_, w)| w).sum();
            let mut row = vec![SMOOTHING / n as f64; n];
            for &(to, w) in succ {
                row[to as usize] += (1.0 - SMOOTHING) * w / total;
            }
            row
        })
        .collect()
}

/// Stationary distribution of [`transition_matrix`] by power iteration.
pub fn stationary_distribution() -> Vec<f64> {
    let p = transition_matrix();
    let n = p.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for (i, row) in p.iter().enumerate() {
            for (j, pij) in row.iter().enumerate() {
                next[j] += pi[i] * pij;
            }
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn utterance_text(rng: &mut ChaCha8Rng, label: Label) -> String {
    let pool = keywords(label);
    let mut words: Vec<&str> = Vec::new();
    let n_key = rng.gen_range(1..=2);
    for _ in 0..n_key {
        words.push(pool[rng.gen_range(0..pool.len())]);
    }
    let n_fill = rng.gen_range(2..=5);
    for _ in 0..n_fill {
        words.push(FILLER[rng.gen_range(0..FILLER.len())]);
    }
    words.shuffle(rng);
    let mut text = words.join(" ");
    if let Some(first) = text.get(0..1) {
        let upper = first.to_uppercase();
        text.replace_range(0..1, &upper);
    }
    text.push(if matches!(label, Label::Quc | Label::Quo) {
        '?'
    } else {
        '.'
    });
    text
}

/// Generates `config.sessions` labeled sessions. Identical configs give
/// identical corpora.
pub fn gen_synthetic(config: &GenConfig) -> Result<Vec<Session>> {
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::config(format!(
            "session length range [{}, {}] is invalid",
            config.min_len, config.max_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = transition_matrix();
    let pi = stationary_distribution();
    let mut sessions = Vec::with_capacity(config.sessions);
    for s in 0..config.sessions {
        let len = rng.gen_range(config.min_len..=config.max_len);
        let mut state = sample(&mut rng, &pi);
        let mut utterances = Vec::with_capacity(len);
        for i in 0..len {
            if i > 0 {
                state = sample(&mut rng, &p[state]);
            }
            let label = Label::ALL[state];
            let text = utterance_text(&mut rng, label);
            utterances.push(Utterance::new(label.speaker(), text, Some(label)));
        }
        sessions.push(Session {
            session_id: format!("synth-{s:04}"),
            utterances,
        });
    }
    Ok(sessions)
}

/// The generator's own classifier: the code whose keyword pool contains a
/// token of `text`.
pub fn oracle_label(text: &str) -> Option<Label> {
    tokenize(text).iter().find_map(|tok| {
        Label::ALL
            .into_iter()
            .find(|&l| keywords(l).contains(&tok.as_str()))
    })
}

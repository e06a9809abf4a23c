use serde::{Deserialize, Serialize};

use super::{tokenize, Label, Session, Speaker, Task, Utterance};
use crate::error::{Error, Result};

/// One slot of a window: a real utterance or left padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
    pub pad: bool,
}

/// A fixed-length history ending at the anchor utterance.
///
/// For categorization the anchor is the utterance being labeled; for
/// forecasting it is the last utterance before the one being predicted, and
/// only the identity of the next speaker is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub session_id: String,
    /// Session index of the anchor utterance.
    pub anchor_index: usize,
    pub turns: Vec<Turn>,
    pub task: Task,
    pub target: Option<Label>,
    pub next_speaker: Option<Speaker>,
}

/// Number of slots a window of configured size `n` holds. Size 0 means the
/// anchor utterance alone.
pub fn slots(n: usize) -> usize {
    n.max(1)
}

fn turns_for(history: &[Utterance], n: usize) -> Vec<Turn> {
    let len = slots(n);
    let real = &history[history.len().saturating_sub(len)..];
    let pads = len - real.len();
    let first = real[0].speaker;
    let mut turns = Vec::with_capacity(len);
    for p in 0..pads {
        // pads alternate backwards from the first real speaker
        let speaker = if (pads - p) % 2 == 0 {
            first
        } else {
            first.other()
        };
        turns.push(Turn {
            speaker,
            tokens: Vec::new(),
            pad: true,
        });
    }
    turns.extend(real.iter().map(|u| Turn {
        speaker: u.speaker,
        tokens: tokenize(&u.text),
        pad: false,
    }));
    turns
}

impl Window {
    /// Window whose anchor is the last element of `history`.
    pub fn categorize(session_id: &str, history: &[Utterance], n: usize) -> Result<Window> {
        let anchor = history
            .last()
            .ok_or_else(|| Error::contract("categorization needs at least one utterance"))?;
        Ok(Window {
            session_id: session_id.to_string(),
            anchor_index: history.len() - 1,
            turns: turns_for(history, n),
            task: Task::Categorize,
            target: anchor.label,
            next_speaker: None,
        })
    }

    /// Window predicting the utterance that follows `history`, to be spoken
    /// by `next`. The utterance itself is never part of the input.
    pub fn forecast(
        session_id: &str,
        history: &[Utterance],
        n: usize,
        next: Speaker,
    ) -> Result<Window> {
        if history.is_empty() {
            return Err(Error::contract("forecasting needs a non-empty history"));
        }
        Ok(Window {
            session_id: session_id.to_string(),
            anchor_index: history.len() - 1,
            turns: turns_for(history, n),
            task: Task::Forecast,
            target: None,
            next_speaker: Some(next),
        })
    }

    pub fn anchor(&self) -> &Turn {
        self.turns.last().expect("windows are never empty")
    }

    /// Speaker role whose model consumes this window.
    pub fn role(&self) -> Speaker {
        match self.task {
            Task::Categorize => self.anchor().speaker,
            Task::Forecast => self
                .next_speaker
                .expect("forecast windows carry the next speaker"),
        }
    }
}

/// All windows of `session` for one role and task.
///
/// Categorization yields one window per utterance spoken by `role`.
/// Forecasting yields one window per non-initial utterance spoken by `role`,
/// ending just before it; the session-initial utterance has no history and is
/// skipped.
pub fn make_windows(session: &Session, n: usize, task: Task, role: Speaker) -> Result<Vec<Window>> {
    let utts = &session.utterances;
    let mut out = Vec::new();
    for (i, u) in utts.iter().enumerate() {
        if u.speaker != role {
            continue;
        }
        match task {
            Task::Categorize => out.push(Window::categorize(&session.session_id, &utts[..=i], n)?),
            Task::Forecast if i > 0 => {
                let mut w = Window::forecast(&session.session_id, &utts[..i], n, role)?;
                w.target = u.label;
                out.push(w);
            }
            Task::Forecast => {}
        }
    }
    Ok(out)
}

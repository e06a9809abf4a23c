//! Transcripts, MISC labels and the sliding windows models consume.

mod corpus;
pub mod synth;
mod tokenize;
mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use corpus::{load_corpus, parse_corpus, read_corpus, write_corpus, SessionSplit};
pub use tokenize::tokenize;
pub use window::{make_windows, slots, Turn, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "C")]
    Client,
    #[serde(rename = "T")]
    Therapist,
}

impl Speaker {
    pub const ALL: [Speaker; 2] = [Speaker::Client, Speaker::Therapist];

    pub fn other(self) -> Speaker {
        match self {
            Speaker::Client => Speaker::Therapist,
            Speaker::Therapist => Speaker::Client,
        }
    }

    /// Row of this speaker in the speaker embedding table.
    pub fn index(self) -> usize {
        match self {
            Speaker::Client => 0,
            Speaker::Therapist => 1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Speaker::Client => "C",
            Speaker::Therapist => "T",
        }
    }

    pub fn labels(self) -> LabelSet {
        LabelSet::for_role(self)
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Speaker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C" | "c" => Ok(Speaker::Client),
            "T" | "t" => Ok(Speaker::Therapist),
            other => Err(format!(
                "unknown speaker {other:?} (expected \"C\" or \"T\")"
            )),
        }
    }
}

/// The eleven grouped MISC codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Fn,
    Ct,
    St,
    Fa,
    Res,
    Rec,
    Gi,
    Quc,
    Quo,
    Mia,
    Min,
}

impl Label {
    pub const ALL: [Label; 11] = [
        Label::Fn,
        Label::Ct,
        Label::St,
        Label::Fa,
        Label::Res,
        Label::Rec,
        Label::Gi,
        Label::Quc,
        Label::Quo,
        Label::Mia,
        Label::Min,
    ];

    pub fn speaker(self) -> Speaker {
        match self {
            Label::Fn | Label::Ct | Label::St => Speaker::Client,
            _ => Speaker::Therapist,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::Fn => "Fn",
            Label::Ct => "Ct",
            Label::St => "St",
            Label::Fa => "Fa",
            Label::Res => "Res",
            Label::Rec => "Rec",
            Label::Gi => "Gi",
            Label::Quc => "Quc",
            Label::Quo => "Quo",
            Label::Mia => "Mia",
            Label::Min => "Min",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| format!("unknown MISC code {s:?}"))
    }
}

const CLIENT_LABELS: [Label; 3] = [Label::Fn, Label::Ct, Label::St];
const THERAPIST_LABELS: [Label; 8] = [
    Label::Fa,
    Label::Res,
    Label::Rec,
    Label::Gi,
    Label::Quc,
    Label::Quo,
    Label::Mia,
    Label::Min,
];

/// Ordered output space of one speaker role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSet {
    role: Speaker,
}

impl LabelSet {
    pub fn for_role(role: Speaker) -> Self {
        LabelSet { role }
    }

    pub fn role(&self) -> Speaker {
        self.role
    }

    pub fn labels(&self) -> &'static [Label] {
        match self.role {
            Speaker::Client => &CLIENT_LABELS,
            Speaker::Therapist => &THERAPIST_LABELS,
        }
    }

    pub fn len(&self) -> usize {
        self.labels().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, label: Label) -> Option<usize> {
        self.labels().iter().position(|&l| l == label)
    }

    pub fn label(&self, index: usize) -> Label {
        self.labels()[index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>, label: Option<Label>) -> Self {
        Utterance {
            speaker,
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Categorize,
    Forecast,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Categorize => "categorize",
            Task::Forecast => "forecast",
        })
    }
}

/// One of the four speaker × task settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskKey {
    pub role: Speaker,
    pub task: Task,
}

impl TaskKey {
    pub fn new(role: Speaker, task: Task) -> Self {
        TaskKey { role, task }
    }

    pub fn labels(&self) -> LabelSet {
        self.role.labels()
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.role, self.task)
    }
}

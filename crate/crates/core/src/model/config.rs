use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{UtteranceAttention, WordAttention};
use crate::data::{Speaker, Task, TaskKey};
use crate::error::{Error, Result};
use crate::loss::{default_alpha, FocalConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Skeleton {
    /// Utterance BiGRU + unidirectional dialogue GRU.
    Hgru,
    /// One BiGRU over the flattened window.
    Concat,
}

/// Encodings a head may score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadInput {
    /// Last dialogue GRU state (HGRU).
    #[serde(rename = "H_n")]
    Hn,
    /// Anchor utterance vector before any word attention.
    #[serde(rename = "v_n")]
    Vn,
    /// Anchor start/end states in the flattened window (CON).
    #[serde(rename = "v_seg")]
    VSeg,
    /// Anchor re-encoded after attending to the earlier words (CON).
    #[serde(rename = "v_wordatt")]
    VWordatt,
    /// Utterance-attention context at the anchor.
    #[serde(rename = "v_selfatt")]
    VSelfatt,
    /// Final states of the flattened-window BiGRU (CON).
    #[serde(rename = "C_n")]
    Cn,
}

impl HeadInput {
    pub const ALL: [HeadInput; 6] = [
        HeadInput::Hn,
        HeadInput::Vn,
        HeadInput::VSeg,
        HeadInput::VWordatt,
        HeadInput::VSelfatt,
        HeadInput::Cn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadInput::Hn => "H_n",
            HeadInput::Vn => "v_n",
            HeadInput::VSeg => "v_seg",
            HeadInput::VWordatt => "v_wordatt",
            HeadInput::VSelfatt => "v_selfatt",
            HeadInput::Cn => "C_n",
        }
    }

    /// Inputs a head may use for a skeleton and task.
    pub fn allowed(skeleton: Skeleton, task: Task) -> &'static [HeadInput] {
        use HeadInput::*;
        match (skeleton, task) {
            (Skeleton::Hgru, Task::Categorize) => &[Hn, VSelfatt, Vn],
            (Skeleton::Hgru, Task::Forecast) => &[Hn, VSelfatt],
            (Skeleton::Concat, Task::Categorize) => &[VSeg, VWordatt, Vn, VSelfatt],
            (Skeleton::Concat, Task::Forecast) => &[Cn, VSelfatt],
        }
    }

    /// The dialogue-level encoding of a skeleton for a task.
    pub fn base(skeleton: Skeleton, task: Task) -> HeadInput {
        match (skeleton, task) {
            (Skeleton::Hgru, _) => HeadInput::Hn,
            (Skeleton::Concat, Task::Categorize) => HeadInput::VSeg,
            (Skeleton::Concat, Task::Forecast) => HeadInput::Cn,
        }
    }
}

impl fmt::Display for HeadInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadInput::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::config(format!("unknown head input {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// `MLP([A; B])`.
    Concat,
    /// `MLP(A) + MLP(B)`.
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "C_C")]
    CC,
    #[serde(rename = "C_T")]
    CT,
    #[serde(rename = "F_C")]
    FC,
    #[serde(rename = "F_T")]
    FT,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::CC, Preset::CT, Preset::FC, Preset::FT];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CC => "C_C",
            Preset::CT => "C_T",
            Preset::FC => "F_C",
            Preset::FT => "F_T",
        }
    }

    pub fn key(self) -> TaskKey {
        match self {
            Preset::CC => TaskKey::new(Speaker::Client, Task::Categorize),
            Preset::CT => TaskKey::new(Speaker::Therapist, Task::Categorize),
            Preset::FC => TaskKey::new(Speaker::Client, Task::Forecast),
            Preset::FT => TaskKey::new(Speaker::Therapist, Task::Forecast),
        }
    }

    pub fn for_key(key: TaskKey) -> Preset {
        Preset::ALL
            .into_iter()
            .find(|p| p.key() == key)
            .expect("every key has a preset")
    }

    pub fn config(self) -> ModelConfig {
        let key = self.key();
        let (word, utt, inputs, scoring, gamma) = match self {
            Preset::CC => (
                WordAttention::None,
                UtteranceAttention::None,
                vec![HeadInput::Hn, HeadInput::Vn],
                Scoring::Add,
                1.0,
            ),
            Preset::CT => (
                WordAttention::Gmgru,
                UtteranceAttention::Anchor42,
                vec![HeadInput::Hn],
                Scoring::Concat,
                0.0,
            ),
            Preset::FC => (
                WordAttention::None,
                UtteranceAttention::Self42,
                vec![HeadInput::Hn],
                Scoring::Concat,
                1.0,
            ),
            Preset::FT => (
                WordAttention::None,
                UtteranceAttention::Self42,
                vec![HeadInput::Hn],
                Scoring::Concat,
                3.0,
            ),
        };
        ModelConfig {
            task: key.task,
            role: key.role,
            skeleton: Skeleton::Hgru,
            word_attention: word,
            utterance_attention: utt,
            head_inputs: inputs,
            scoring,
            window: 8,
            word_dim: 300,
            hidden_dim: 64,
            speaker_dim: 8,
            heads: 4,
            hops: 2,
            embedding_dropout: 0.3,
            head_dropout: 0.2,
            dialogue_dropout: 0.0,
            loss: FocalConfig::for_role(key.role, gamma),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown preset {s:?}; expected C_C, C_T, F_C or F_T"
                ))
            })
    }
}

/// Declarative description of one model head and the encoder it sits on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub role: Speaker,
    pub skeleton: Skeleton,
    pub word_attention: WordAttention,
    pub utterance_attention: UtteranceAttention,
    pub head_inputs: Vec<HeadInput>,
    pub scoring: Scoring,
    /// History size `N`; 0 means the anchor alone.
    pub window: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub speaker_dim: usize,
    pub heads: usize,
    pub hops: usize,
    pub embedding_dropout: f64,
    pub head_dropout: f64,
    /// Dropout on the dialogue GRU inputs.
    pub dialogue_dropout: f64,
    pub loss: FocalConfig,
}

impl ModelConfig {
    pub fn key(&self) -> TaskKey {
        TaskKey::new(self.role, self.task)
    }

    /// Width of the vectors utterance attention runs over.
    pub fn utterance_width(&self) -> usize {
        match self.skeleton {
            Skeleton::Hgru => 2 * self.hidden_dim,
            Skeleton::Concat => 4 * self.hidden_dim,
        }
    }

    pub fn input_width(&self, input: HeadInput) -> usize {
        let d = self.hidden_dim;
        match input {
            HeadInput::Hn => d,
            HeadInput::Vn | HeadInput::VWordatt | HeadInput::Cn => 2 * d,
            HeadInput::VSeg => 4 * d,
            HeadInput::VSelfatt => self.utterance_width(),
        }
    }

    /// Head inputs after adding the encodings the enabled attention
    /// mechanisms produce.
    pub fn resolved_inputs(&self) -> Vec<HeadInput> {
        let mut inputs = self.head_inputs.clone();
        if self.skeleton == Skeleton::Concat
            && self.task == Task::Categorize
            && self.word_attention != WordAttention::None
            && !inputs.contains(&HeadInput::VWordatt)
        {
            inputs.push(HeadInput::VWordatt);
        }
        if self.utterance_attention != UtteranceAttention::None
            && !inputs.contains(&HeadInput::VSelfatt)
        {
            inputs.push(HeadInput::VSelfatt);
        }
        inputs
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_dim", self.word_dim),
            ("hidden_dim", self.hidden_dim),
            ("speaker_dim", self.speaker_dim),
            ("heads", self.heads),
            ("hops", self.hops),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        for (name, p) in [
            ("embedding_dropout", self.embedding_dropout),
            ("head_dropout", self.head_dropout),
            ("dialogue_dropout", self.dialogue_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} {p} outside [0, 1)")));
            }
        }
        if self.head_inputs.is_empty() {
            return Err(Error::config("a head needs at least one input"));
        }
        let allowed = HeadInput::allowed(self.skeleton, self.task);
        let mut seen = Vec::new();
        for &input in &self.head_inputs {
            if !allowed.contains(&input) {
                return Err(Error::config(format!(
                    "head input {input} is not available to a {:?} {} model",
                    self.skeleton, self.task
                )));
            }
            if seen.contains(&input) {
                return Err(Error::config(format!("head input {input} listed twice")));
            }
            seen.push(input);
        }
        if self.head_inputs.contains(&HeadInput::VSelfatt)
            && self.utterance_attention == UtteranceAttention::None
        {
            return Err(Error::config("v_selfatt needs utterance attention"));
        }
        if self.head_inputs.contains(&HeadInput::VWordatt)
            && self.word_attention == WordAttention::None
        {
            return Err(Error::config("v_wordatt needs word attention"));
        }
        if self.task == Task::Forecast {
            let base = HeadInput::base(self.skeleton, self.task);
            if !self.head_inputs.contains(&base) {
                return Err(Error::config(format!("forecast heads must score {base}")));
            }
            if self.skeleton == Skeleton::Concat && self.word_attention != WordAttention::None {
                return Err(Error::config(
                    "word attention has no effect on a CON forecast head (it scores C_n only)",
                ));
            }
        }
        if self.utterance_attention != UtteranceAttention::None
            && self.utterance_width() % self.heads != 0
        {
            return Err(Error::config(format!(
                "utterance width {} is not divisible by {} heads",
                self.utterance_width(),
                self.heads
            )));
        }
        self.loss.validate(&self.role.labels())
    }

    /// Same model for another setting: the loss weights follow the role and
    /// inputs not available to the new task are swapped for its base input.
    pub fn for_key(&self, key: TaskKey) -> ModelConfig {
        let mut c = self.clone();
        c.task = key.task;
        c.role = key.role;
        if key.role != self.role {
            c.loss = match self.loss.variant {
                crate::loss::LossVariant::Ce => FocalConfig::ce(key.role.labels().len()),
                crate::loss::LossVariant::Wce => FocalConfig::wce(default_alpha(key.role)),
                crate::loss::LossVariant::Focal => {
                    FocalConfig::focal(default_alpha(key.role), self.loss.gamma)
                }
            };
        }
        c.head_inputs = remap_inputs(&self.head_inputs, c.skeleton, c.task);
        c
    }

    /// Same model on another skeleton, with head inputs mapped to their
    /// counterparts.
    pub fn with_skeleton(&self, skeleton: Skeleton) -> ModelConfig {
        let mut c = self.clone();
        c.skeleton = skeleton;
        c.head_inputs = remap_inputs(&self.head_inputs, skeleton, c.task);
        c
    }

    /// Shrinks every width, for tests and quick experiments.
    pub fn with_widths(
        mut self,
        word_dim: usize,
        hidden_dim: usize,
        speaker_dim: usize,
    ) -> ModelConfig {
        self.word_dim = word_dim;
        self.hidden_dim = hidden_dim;
        self.speaker_dim = speaker_dim;
        self
    }

    /// True when two configs can share one encoder.
    pub fn shares_encoder_with(&self, other: &ModelConfig) -> bool {
        self.skeleton == other.skeleton
            && self.word_attention == other.word_attention
            && self.window == other.window
            && self.word_dim == other.word_dim
            && self.hidden_dim == other.hidden_dim
            && self.speaker_dim == other.speaker_dim
            && self.embedding_dropout == other.embedding_dropout
            && self.dialogue_dropout == other.dialogue_dropout
    }
}

fn remap_inputs(inputs: &[HeadInput], skeleton: Skeleton, task: Task) -> Vec<HeadInput> {
    let allowed = HeadInput::allowed(skeleton, task);
    let base = HeadInput::base(skeleton, task);
    let mut out = Vec::new();
    for &i in inputs {
        let mapped = match i {
            HeadInput::Hn | HeadInput::VSeg | HeadInput::Cn => base,
            other => other,
        };
        if allowed.contains(&mapped) && !out.contains(&mapped) {
            out.push(mapped);
        }
    }
    if task == Task::Forecast && !out.contains(&base) {
        out.insert(0, base);
    }
    if out.is_empty() {
        out.push(base);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_the_published_configurations() {
        let cc = Preset::CC.config();
        assert_eq!(
            (
                cc.skeleton,
                cc.word_attention,
                cc.utterance_attention,
                cc.scoring
            ),
            (
                Skeleton::Hgru,
                WordAttention::None,
                UtteranceAttention::None,
                Scoring::Add
            )
        );
        assert_eq!(cc.head_inputs, [HeadInput::Hn, HeadInput::Vn]);
        let ct = Preset::CT.config();
        assert_eq!(
            (
                ct.skeleton,
                ct.word_attention,
                ct.utterance_attention,
                ct.scoring
            ),
            (
                Skeleton::Hgru,
                WordAttention::Gmgru,
                UtteranceAttention::Anchor42,
                Scoring::Concat
            )
        );
        assert_eq!(ct.head_inputs, [HeadInput::Hn]);
        for p in [Preset::FC, Preset::FT] {
            let f = p.config();
            assert_eq!(
                (f.skeleton, f.word_attention, f.utterance_attention),
                (
                    Skeleton::Hgru,
                    WordAttention::None,
                    UtteranceAttention::Self42
                )
            );
            assert_eq!(f.task, Task::Forecast);
        }
        assert_eq!(cc.loss.gamma, 1.0);
        assert_eq!(ct.loss.gamma, 0.0);
        assert_eq!(Preset::FC.config().loss.gamma, 1.0);
        assert_eq!(Preset::FT.config().loss.gamma, 3.0);
        for p in Preset::ALL {
            let c = p.config();
            assert_eq!((c.window, c.heads, c.hops, c.speaker_dim), (8, 4, 2, 8));
            c.validate().unwrap();
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn attention_contexts_are_appended() {
        assert_eq!(
            Preset::CT.config().resolved_inputs(),
            [HeadInput::Hn, HeadInput::VSelfatt]
        );
        let mut c = Preset::CC.config().with_skeleton(Skeleton::Concat);
        assert_eq!(c.head_inputs, [HeadInput::VSeg, HeadInput::Vn]);
        c.word_attention = WordAttention::Bidaf;
        assert_eq!(
            c.resolved_inputs(),
            [HeadInput::VSeg, HeadInput::Vn, HeadInput::VWordatt]
        );
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut c = Preset::FC.config();
        c.head_inputs = vec![HeadInput::Hn, HeadInput::Vn];
        assert!(c.validate().is_err());
        let mut c = Preset::CC.config();
        c.head_inputs = vec![HeadInput::Cn];
        assert!(c.validate().is_err());
        c.head_inputs = vec![];
        assert!(c.validate().is_err());
        let mut c = Preset::CC.config();
        c.head_inputs = vec![HeadInput::Hn, HeadInput::VSelfatt];
        assert!(c.validate().is_err());
        let mut c = Preset::FC.config().with_skeleton(Skeleton::Concat);
        assert_eq!(c.head_inputs, [HeadInput::Cn]);
        c.validate().unwrap();
        c.word_attention = WordAttention::Gmgru;
        assert!(c.validate().is_err());
        let mut c = Preset::CT.config();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = Preset::CC.config();
        c.embedding_dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn for_key_switches_role_weights() {
        let c = Preset::CC
            .config()
            .for_key(TaskKey::new(Speaker::Therapist, Task::Forecast));
        assert_eq!(c.loss.alpha.len(), 8);
        assert_eq!(c.head_inputs, [HeadInput::Hn]);
        c.validate().unwrap();
    }

    #[test]
    fn serde_names() {
        let json = serde_json::to_value(Preset::CT.config()).unwrap();
        assert_eq!(json["head_inputs"][0], "H_n");
        assert_eq!(json["utterance_attention"], "anchor42");
        assert_eq!(json["role"], "T");
        let back: ModelConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, Preset::CT.config());
    }
}

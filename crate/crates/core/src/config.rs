//! TOML run configuration.
//!
//! ```toml
//! mtl = "ct_all"          # optional; defaults to the model's own task
//!
//! [model]
//! preset = "C_T"          # optional base, C_C when absent
//! hidden_dim = 32         # any other key overrides one preset field
//!
//! [train]
//! lr = 0.005
//!
//! [data]
//! dev_fraction = 0.1
//! vectors = "vectors.txt"
//!
//! [generate]
//! sessions = 200
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synth::GenConfig;
use crate::data::{tokenize, Session, Speaker, Task, TaskKey};
use crate::embed::{load_static_vectors, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Preset, Skeleton};
use crate::train::{MtlMode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dev_fraction: f64,
    pub test_fraction: f64,
    /// Tokens rarer than this in the training split map to UNK.
    pub min_count: usize,
    /// Optional static word vectors in text format.
    pub vectors: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dev_fraction: 0.1,
            test_fraction: 0.1,
            min_count: 1,
            vectors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub mtl: MtlMode,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub generate: GenConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mtl: Option<MtlMode>,
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    generate: GenConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn take<T: for<'de> Deserialize<'de>>(table: &mut toml::Table, key: &str) -> Result<Option<T>> {
    table
        .remove(key)
        .map(|v| {
            v.try_into()
                .map_err(|e: toml::de::Error| Error::config(format!("[model] {key}: {e}")))
        })
        .transpose()
}

fn model_config(mut table: toml::Table) -> Result<ModelConfig> {
    let preset: Option<String> = take(&mut table, "preset")?;
    let mut base = preset
        .as_deref()
        .unwrap_or("C_C")
        .parse::<Preset>()?
        .config();
    let role: Option<Speaker> = take(&mut table, "role")?;
    let task: Option<Task> = take(&mut table, "task")?;
    if role.is_some() || task.is_some() {
        base = base.for_key(TaskKey::new(
            role.unwrap_or(base.role),
            task.unwrap_or(base.task),
        ));
    }
    if let Some(skeleton) = take::<Skeleton>(&mut table, "skeleton")? {
        base = base.with_skeleton(skeleton);
    }
    let mut merged = match toml::Value::try_from(&base) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("model configs serialize to tables"),
    };
    merge(&mut merged, table);
    let config: ModelConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(format!("[model]: {e}")))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let model = preset.config();
        RunConfig {
            mtl: MtlMode::Single(model.key()),
            model,
            train: TrainConfig::default(),
            data: DataConfig::default(),
            generate: GenConfig::default(),
        }
    }

    pub fn parse(text: &str, source_name: &str) -> Result<RunConfig> {
        RunConfig::parse_with_preset(text, source_name, None)
    }

    /// As [`RunConfig::parse`], with `preset` replacing the file's own.
    pub fn parse_with_preset(
        text: &str,
        source_name: &str,
        preset: Option<Preset>,
    ) -> Result<RunConfig> {
        let mut raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: e.span().map_or(0, |s| {
                text[..s.start.min(text.len())].matches('\n').count() + 1
            }),
            message: e.message().to_string(),
        })?;
        if let Some(p) = preset {
            raw.model
                .insert("preset".into(), toml::Value::String(p.name().into()));
        }
        let model = model_config(raw.model)?;
        raw.train.validate()?;
        let run = RunConfig {
            mtl: raw.mtl.unwrap_or(MtlMode::Single(model.key())),
            model,
            train: raw.train,
            data: raw.data,
            generate: raw.generate,
        };
        run.head_configs()?;
        Ok(run)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    /// One head config per task the schedule trains. The configured model
    /// serves its own task; other tasks get [`ModelConfig::for_key`] copies.
    pub fn head_configs(&self) -> Result<Vec<ModelConfig>> {
        let configs: Vec<ModelConfig> = self
            .mtl
            .keys()
            .into_iter()
            .map(|k| {
                if k == self.model.key() {
                    self.model.clone()
                } else {
                    self.model.for_key(k)
                }
            })
            .collect();
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }

    /// Fresh model for the schedule, with a vocabulary built from `train`.
    pub fn build_model(&self, train: &[Session]) -> Result<Model> {
        let tokens: Vec<Vec<String>> = train
            .iter()
            .flat_map(|s| s.utterances.iter().map(|u| tokenize(&u.text)))
            .collect();
        let vocab = Vocab::build(&tokens, self.data.min_count.max(1));
        let table = match &self.data.vectors {
            Some(path) => Some(load_static_vectors(
                path,
                &vocab,
                self.model.word_dim,
                self.train.seed,
            )?),
            None => None,
        };
        Model::new(self.head_configs()?, vocab, table, self.train.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::WordAttention;
    use crate::model::HeadInput;

    #[test]
    fn empty_file_is_the_c_c_preset() {
        let run = RunConfig::parse("", "mem").unwrap();
        assert_eq!(run, RunConfig::from_preset(Preset::CC));
    }

    #[test]
    fn overrides_apply_on_top_of_the_preset() {
        let text = r#"
            [model]
            preset = "C_T"
            hidden_dim = 32
            window = 4
            loss = { gamma = 2.0 }

            [train]
            lr = 0.01
            max_epochs = 5

            [data]
            min_count = 2
        "#;
        let run = RunConfig::parse(text, "mem").unwrap();
        let mut want = Preset::CT.config();
        want.hidden_dim = 32;
        want.window = 4;
        want.loss.gamma = 2.0;
        assert_eq!(run.model, want);
        assert_eq!(run.train.lr, 0.01);
        assert_eq!(run.train.batch_size, 32);
        assert_eq!(run.data.min_count, 2);
        assert_eq!(run.mtl, MtlMode::Single(want.key()));
    }

    #[test]
    fn preset_argument_replaces_the_file_preset() {
        let text = "[model]\npreset = \"C_C\"\nwindow = 2\n";
        let run = RunConfig::parse_with_preset(text, "mem", Some(Preset::FT)).unwrap();
        assert_eq!(run.model.key(), Preset::FT.key());
        assert_eq!(run.model.window, 2);
        assert_eq!(run.mtl, MtlMode::Single(Preset::FT.key()));
    }

    #[test]
    fn task_and_skeleton_overrides_remap_inputs() {
        let text = "[model]\npreset = \"C_C\"\ntask = \"forecast\"\nskeleton = \"concat\"\n";
        let run = RunConfig::parse(text, "mem").unwrap();
        assert_eq!(run.model.task, Task::Forecast);
        assert_eq!(run.model.head_inputs, vec![HeadInput::Cn]);
    }

    #[test]
    fn mtl_schedules_get_one_head_per_task() {
        let run = RunConfig::parse("mtl = \"ct_all\"\n[model]\npreset = \"F_T\"\n", "mem").unwrap();
        let heads = run.head_configs().unwrap();
        assert_eq!(heads.len(), 4);
        assert!(heads.iter().any(|h| *h == Preset::FT.config()));
        let run = RunConfig::parse("mtl = { joint = \"C\" }\n", "mem").unwrap();
        assert_eq!(run.mtl, MtlMode::Joint(Speaker::Client));
    }

    #[test]
    fn bad_files_are_rejected() {
        for (text, config_error) in [
            ("[model]\nhidden_dimm = 3\n", true),
            ("[model]\npreset = \"X\"\n", true),
            ("[model]\npreset = \"F_C\"\nheads = 3\n", true),
            (
                "[model]\nword_attention = \"gmgru\"\ntask = \"forecast\"\nskeleton = \"concat\"\n",
                true,
            ),
            ("[train]\nlr = -1.0\n", true),
            ("[trian]\n", false),
            ("[model\n", false),
            ("mtl = \"everything\"\n", false),
        ] {
            let err = RunConfig::parse(text, "mem").unwrap_err();
            assert_eq!(
                matches!(err, Error::Config(_)),
                config_error,
                "{text}: {err}"
            );
        }
        match RunConfig::parse("\n\n[data]\nmin_count = \"x\"\n", "run.toml") {
            Err(Error::Parse {
                source_name, line, ..
            }) => {
                assert_eq!(source_name, "run.toml");
                assert_eq!(line, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn build_model_uses_training_vocab_and_vectors() {
        let sessions = crate::data::synth::gen_synthetic(&GenConfig {
            sessions: 2,
            min_len: 4,
            max_len: 4,
            ..GenConfig::default()
        })
        .unwrap();
        let mut run = RunConfig::from_preset(Preset::CC);
        run.model = run.model.with_widths(3, 4, 2);
        let model = run.build_model(&sessions).unwrap();
        assert!(model.vocab.len() > 2);
        let first = tokenize(&sessions[0].utterances[0].text);
        assert!(first.iter().all(|t| model.vocab.get(t).is_some()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        fs::write(&path, format!("{} 1 2 3\n", first[0])).unwrap();
        run.data.vectors = Some(path);
        let model = run.build_model(&sessions).unwrap();
        let table = model.store.get(model.store.find("embed.words").unwrap());
        assert_eq!(
            table.row_slice(model.vocab.lookup(&first[0])),
            &[1.0, 2.0, 3.0]
        );
        run.model.word_attention = WordAttention::Bidaf;
        run.data.vectors = Some(dir.path().join("missing.txt"));
        assert!(matches!(run.build_model(&sessions), Err(Error::Io { .. })));
    }
}

//! Optimization loop, multi-task schedules, evaluation and checkpoints.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, RngState, MAGIC, VERSION};
pub use optim::{clip_global_norm, global_norm, Adam, BETA1, BETA2, EPSILON};

use crate::data::{make_windows, Label, Session, Speaker, Task, TaskKey, Window};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::Model;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Worker threads for dev evaluation. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            clip_norm: 5.0,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 13,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::config(format!(
                "clip norm {} must be positive",
                self.clip_norm
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.threads == 0 {
            return Err(Error::config(
                "batch size, max epochs and threads must be positive",
            ));
        }
        Ok(())
    }
}

/// Which task heads train together and how their batches are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtlMode {
    Single(TaskKey),
    /// Categorize and forecast for one role, losses summed per batch.
    Joint(Speaker),
    /// Client and therapist categorization, alternating batches.
    CtAnno,
    /// Client and therapist forecasting, alternating batches.
    CtFore,
    /// Both roles alternate; each role sums its two task losses.
    CtAll,
}

impl MtlMode {
    /// Step groups in schedule order. Keys inside a group share one
    /// optimizer step with their losses summed.
    pub fn groups(self) -> Vec<Vec<TaskKey>> {
        use Speaker::{Client as C, Therapist as T};
        use Task::{Categorize as Cat, Forecast as Fore};
        let k = TaskKey::new;
        match self {
            MtlMode::Single(key) => vec![vec![key]],
            MtlMode::Joint(role) => vec![vec![k(role, Cat), k(role, Fore)]],
            MtlMode::CtAnno => vec![vec![k(C, Cat)], vec![k(T, Cat)]],
            MtlMode::CtFore => vec![vec![k(C, Fore)], vec![k(T, Fore)]],
            MtlMode::CtAll => vec![vec![k(C, Cat), k(C, Fore)], vec![k(T, Cat), k(T, Fore)]],
        }
    }

    pub fn keys(self) -> Vec<TaskKey> {
        self.groups().into_iter().flatten().collect()
    }

    pub fn name(self) -> String {
        match self {
            MtlMode::Single(key) => key.to_string(),
            MtlMode::Joint(role) => format!("{role}_JOINT"),
            MtlMode::CtAnno => "CT_ANNO".into(),
            MtlMode::CtFore => "CT_FORE".into(),
            MtlMode::CtAll => "CT_ALL".into(),
        }
    }
}

/// One optimizer step: the keys it trains and the batch index of each.
pub type Step = Vec<(TaskKey, usize)>;

/// Steps of one epoch. Rounds continue until the task with the most batches
/// is exhausted; tasks with fewer batches wrap around. Every round visits
/// each group once, in order.
pub fn epoch_schedule(groups: &[Vec<TaskKey>], batches: &BTreeMap<TaskKey, usize>) -> Vec<Step> {
    let count = |k: &TaskKey| batches.get(k).copied().unwrap_or(0);
    let rounds = groups.iter().flatten().map(count).max().unwrap_or(0);
    let mut steps = Vec::new();
    for r in 0..rounds {
        for g in groups {
            let step: Step = g
                .iter()
                .filter(|k| count(k) > 0)
                .map(|&k| (k, r % count(&k)))
                .collect();
            if !step.is_empty() {
                steps.push(step);
            }
        }
    }
    steps
}

/// Labeled windows of every session for one task.
pub fn task_windows(sessions: &[Session], key: TaskKey, n: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for s in sessions {
        out.extend(
            make_windows(s, n, key.task, key.role)?
                .into_iter()
                .filter(|w| w.target.is_some()),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub max_grad_norm: f64,
    /// Dev macro F1 per task key.
    pub dev_macro_f1: BTreeMap<String, f64>,
    pub dev_metric: Option<f64>,
    pub best_metric: Option<f64>,
    pub improved: bool,
}

pub struct FitOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn gold_indices(windows: &[Window], key: TaskKey) -> Result<Vec<usize>> {
    let labels = key.labels();
    windows
        .iter()
        .map(|w| {
            let target = w
                .target
                .ok_or_else(|| Error::contract("evaluation window has no target label"))?;
            labels.index_of(target).ok_or_else(|| {
                Error::contract(format!("label {target} is not a {} code", key.role))
            })
        })
        .collect()
}

/// Scores `model` on labeled windows of a single task.
pub fn evaluate(
    model: &Model,
    windows: &[Window],
    key: TaskKey,
    k: usize,
    threads: usize,
) -> Result<EvalReport> {
    if model.head_index(key).is_none() {
        return Err(Error::contract(format!("model has no {key} head")));
    }
    if let Some(w) = windows
        .iter()
        .find(|w| TaskKey::new(w.role(), w.task) != key)
    {
        return Err(Error::contract(format!(
            "window at {}:{} is not a {key} window",
            w.session_id, w.anchor_index
        )));
    }
    let gold = gold_indices(windows, key)?;
    let probs = model.predict_many(windows, threads)?;
    EvalReport::from_probabilities(&key.labels(), &probs, &gold, k.min(key.labels().len()))
}

/// Most frequent training label for a task, ties broken by label order.
pub fn majority_label(windows: &[Window], key: TaskKey) -> Result<Label> {
    let gold = gold_indices(windows, key)?;
    let labels = key.labels();
    let mut counts = vec![0usize; labels.len()];
    for g in gold {
        counts[g] += 1;
    }
    let best = (0..counts.len())
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .expect("label sets are never empty");
    Ok(labels.label(best))
}

/// Report for always predicting `label` on `windows`.
pub fn constant_report(windows: &[Window], key: TaskKey, label: Label) -> Result<EvalReport> {
    let labels = key.labels();
    let index = labels
        .index_of(label)
        .ok_or_else(|| Error::contract(format!("label {label} is not a {} code", key.role)))?;
    let gold = gold_indices(windows, key)?;
    EvalReport::from_predictions(&labels, &vec![index; gold.len()], &gold, 1)
}

fn param_grads(model: &Model, grads: &crate::tensor::Gradients) -> Vec<Option<Tensor>> {
    model
        .store
        .ids()
        .map(|id| grads.param(id).cloned())
        .collect()
}

/// Trains the heads named by `mtl` on `train`, selecting the epoch with the
/// best mean dev macro F1 over those heads. `on_epoch` sees every epoch log
/// as it is produced. Without dev windows the final epoch is kept.
pub fn fit(
    mut model: Model,
    train: &[Session],
    dev: &[Session],
    cfg: &TrainConfig,
    mtl: MtlMode,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutput> {
    cfg.validate()?;
    let keys = mtl.keys();
    for &key in &keys {
        if model.head_index(key).is_none() {
            return Err(Error::config(format!(
                "{} schedule needs a {key} head",
                mtl.name()
            )));
        }
    }
    let train_ids: std::collections::HashSet<&str> =
        train.iter().map(|s| s.session_id.as_str()).collect();
    if let Some(s) = dev
        .iter()
        .find(|s| train_ids.contains(s.session_id.as_str()))
    {
        return Err(Error::contract(format!(
            "session {} is in both train and dev",
            s.session_id
        )));
    }
    let n = model.config().window;
    let mut train_windows = BTreeMap::new();
    let mut dev_windows = BTreeMap::new();
    for &key in &keys {
        train_windows.insert(key, task_windows(train, key, n)?);
        dev_windows.insert(key, task_windows(dev, key, n)?);
    }
    if train_windows.values().all(Vec::is_empty) {
        return Err(Error::contract("no labeled training windows"));
    }
    let groups = mtl.groups();
    let batches: BTreeMap<TaskKey, usize> = train_windows
        .iter()
        .map(|(&k, w)| (k, w.len().div_ceil(cfg.batch_size)))
        .collect();
    let has_dev = dev_windows.values().any(|w| !w.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut orders: BTreeMap<TaskKey, Vec<usize>> = train_windows
        .iter()
        .map(|(&k, w)| (k, (0..w.len()).collect()))
        .collect();
    let mut best: Option<(f64, crate::params::ParamStore)> = None;
    let mut stale = 0;
    let mut log = Vec::new();
    let mut epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        for order in orders.values_mut() {
            order.shuffle(&mut rng);
        }
        let steps = epoch_schedule(&groups, &batches);
        let mut loss_sum = 0.0;
        let mut max_norm: f64 = 0.0;
        for (b, step) in steps.iter().enumerate() {
            let tape = Tape::training(rng);
            let mut total: Option<crate::tensor::Var<'_>> = None;
            for &(key, batch) in step {
                let head = model.head_index(key).expect("checked above");
                let order = &orders[&key];
                let start = batch * cfg.batch_size;
                let idx = &order[start..(start + cfg.batch_size).min(order.len())];
                let windows = &train_windows[&key];
                let mut sum: Option<crate::tensor::Var<'_>> = None;
                for &i in idx {
                    let l = model.loss(&tape, &windows[i], head)?;
                    sum = Some(match sum {
                        Some(s) => s.add(l)?,
                        None => l,
                    });
                }
                let mean = sum
                    .expect("batches are never empty")
                    .scale(1.0 / idx.len() as f64);
                total = Some(match total {
                    Some(t) => t.add(mean)?,
                    None => mean,
                });
            }
            let total = total.expect("steps are never empty");
            let loss = total.value().item()?;
            let grads = tape.backward(total)?;
            let mut grads = param_grads(&model, &grads);
            rng = tape.into_rng().expect("training tape owns the generator");
            let norm = global_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    grad_norm: norm,
                    loss,
                });
            }
            clip_global_norm(&mut grads, cfg.clip_norm)?;
            adam.step(&mut model.store, &grads)?;
            loss_sum += loss;
            max_norm = max_norm.max(norm);
        }

        let mut dev_f1 = BTreeMap::new();
        let mut scored = Vec::new();
        for &key in &keys {
            let w = &dev_windows[&key];
            if w.is_empty() {
                continue;
            }
            let report = evaluate(&model, w, key, 1, cfg.threads)?;
            dev_f1.insert(key.to_string(), report.macro_f1);
            scored.push(report.macro_f1);
        }
        let metric = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
        let improved = match (metric, &best) {
            (Some(m), Some((b, _))) => m > *b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            best = Some((
                metric.expect("improved implies a metric"),
                model.store.clone(),
            ));
            stale = 0;
        } else {
            stale += 1;
        }
        let entry = EpochLog {
            epoch,
            steps: steps.len(),
            train_loss: loss_sum / steps.len().max(1) as f64,
            max_grad_norm: max_norm,
            dev_macro_f1: dev_f1,
            dev_metric: metric,
            best_metric: best.as_ref().map(|(m, _)| *m),
            improved,
        };
        on_epoch(&entry);
        log.push(entry);
        if has_dev && stale > cfg.patience {
            break;
        }
    }

    let best_metric = best.as_ref().map(|(m, _)| *m);
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(FitOutput {
        checkpoint: Checkpoint {
            model,
            train: cfg.clone(),
            mtl,
            rng: RngState::capture(&rng),
            best_metric,
            epochs,
        },
        log,
    })
}

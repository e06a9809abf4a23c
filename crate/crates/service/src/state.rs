use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::SystemTime;

use misc_observer::data::{slots, Speaker, Task, TaskKey, Utterance, Window};
use misc_observer::model::Model;
use serde::{Deserialize, Serialize};

use crate::wire::{Categorized, Forecast};
use crate::ServiceError;

/// Model handle per speaker × task. One model may serve several keys.
#[derive(Debug, Clone, Default)]
pub struct Models {
    handles: BTreeMap<TaskKey, Arc<Model>>,
}

impl Models {
    pub fn new() -> Self {
        Models::default()
    }

    /// Routes `key` to `model`, which must have a head for it.
    pub fn insert(&mut self, key: TaskKey, model: Arc<Model>) -> Result<(), ServiceError> {
        if model.head_index(key).is_none() {
            return Err(ServiceError::Unavailable(format!(
                "model has no {key} head"
            )));
        }
        self.handles.insert(key, model);
        Ok(())
    }

    /// Routes every key `model` has a head for, keeping earlier routes.
    pub fn insert_all(&mut self, model: Arc<Model>) {
        for key in model.keys() {
            self.handles.entry(key).or_insert_with(|| model.clone());
        }
    }

    pub fn get(&self, key: TaskKey) -> Option<&Arc<Model>> {
        self.handles.get(&key)
    }

    pub fn keys(&self) -> Vec<TaskKey> {
        self.handles.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    /// Utterances a session must keep so every model sees its full window.
    pub fn capacity(&self) -> usize {
        self.handles
            .values()
            .map(|m| slots(m.config().window))
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    pub id: String,
    /// The most recent utterances, at most `capacity` of them.
    pub buffer: VecDeque<Utterance>,
    pub capacity: usize,
    /// Utterances received over the session's lifetime.
    pub total: usize,
    pub created: SystemTime,
    pub updated: SystemTime,
}

impl LiveSession {
    fn push(&mut self, u: Utterance) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(u);
        self.total += 1;
        self.updated = SystemTime::now();
    }
}

/// One line of the replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogRecord {
    Create {
        session_id: String,
    },
    Utterance {
        session_id: String,
        speaker: Speaker,
        text: String,
        response: Categorized,
    },
    Forecast {
        session_id: String,
        speaker: Speaker,
        k: usize,
        response: Forecast,
    },
    Clone {
        source: String,
        session_id: String,
    },
}

pub fn read_log(path: impl AsRef<Path>) -> std::io::Result<Vec<LogRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

type Shared = Arc<Mutex<LiveSession>>;

/// In-memory live sessions over immutable models.
pub struct Service {
    models: Models,
    capacity: usize,
    sessions: RwLock<HashMap<String, Shared>>,
    next_id: AtomicU64,
    log: Option<Mutex<File>>,
}

pub const DEFAULT_K: usize = 3;

impl Service {
    pub fn new(models: Models) -> Self {
        Service {
            capacity: models.capacity(),
            models,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            log: None,
        }
    }

    /// Appends every request and its response to `path`.
    pub fn with_log(mut self, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.log = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    fn record(&self, rec: &LogRecord) -> Result<(), ServiceError> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(rec).expect("log records serialize");
            line.push('\n');
            let mut f = log.lock().expect("log lock");
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| ServiceError::Internal(format!("replay log: {e}")))?;
        }
        Ok(())
    }

    fn session(&self, id: &str) -> Result<Shared, ServiceError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("no session {id:?}")))
    }

    fn insert(&self, session: LiveSession) -> String {
        let id = session.id.clone();
        self.sessions
            .write()
            .expect("session table lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }

    fn fresh_id(&self) -> String {
        format!("s{:06}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub fn create(&self) -> Result<String, ServiceError> {
        let now = SystemTime::now();
        let id = self.insert(LiveSession {
            id: self.fresh_id(),
            buffer: VecDeque::with_capacity(self.capacity),
            capacity: self.capacity,
            total: 0,
            created: now,
            updated: now,
        });
        self.record(&LogRecord::Create {
            session_id: id.clone(),
        })?;
        Ok(id)
    }

    /// Copy of a session under a new id; later changes to either are
    /// independent.
    pub fn clone_session(&self, source: &str) -> Result<String, ServiceError> {
        let copy = {
            let shared = self.session(source)?;
            let s = shared.lock().expect("session lock");
            let now = SystemTime::now();
            LiveSession {
                id: self.fresh_id(),
                created: now,
                updated: now,
                ..s.clone()
            }
        };
        let id = self.insert(copy);
        self.record(&LogRecord::Clone {
            source: source.to_string(),
            session_id: id.clone(),
        })?;
        Ok(id)
    }

    fn model(&self, key: TaskKey) -> Result<&Arc<Model>, ServiceError> {
        self.models
            .get(key)
            .ok_or_else(|| ServiceError::Unavailable(format!("no model loaded for {key}")))
    }

    /// Appends an utterance and categorizes it with its speaker's model.
    pub fn add_utterance(
        &self,
        id: &str,
        speaker: Speaker,
        text: &str,
    ) -> Result<Categorized, ServiceError> {
        let model = self.model(TaskKey::new(speaker, Task::Categorize))?;
        let shared = self.session(id)?;
        let mut s = shared.lock().expect("session lock");
        let mut history = s.buffer.clone();
        history.push_back(Utterance::new(speaker, text, None));
        let window = Window::categorize(id, history.make_contiguous(), model.config().window)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let probs = model
            .predict(&window)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let response = Categorized::new(id, s.total, speaker, &probs);
        s.push(Utterance::new(speaker, text, Some(response.code)));
        self.record(&LogRecord::Utterance {
            session_id: id.to_string(),
            speaker,
            text: text.to_string(),
            response: response.clone(),
        })?;
        Ok(response)
    }

    /// Top-`k` codes for the next utterance, to be spoken by `speaker`.
    pub fn forecast(&self, id: &str, speaker: Speaker, k: usize) -> Result<Forecast, ServiceError> {
        let labels = speaker.labels().len();
        if k == 0 || k > labels {
            return Err(ServiceError::Unprocessable(format!(
                "k={k} outside 1..={labels} for speaker {speaker}"
            )));
        }
        let model = self.model(TaskKey::new(speaker, Task::Forecast))?;
        let shared = self.session(id)?;
        let mut s = shared.lock().expect("session lock");
        if s.buffer.is_empty() {
            return Err(ServiceError::Conflict(format!(
                "session {id:?} has no utterances yet"
            )));
        }
        let window = Window::forecast(
            id,
            s.buffer.make_contiguous(),
            model.config().window,
            speaker,
        )
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let probs = model
            .predict(&window)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let response = Forecast::new(id, speaker, &probs, k);
        self.record(&LogRecord::Forecast {
            session_id: id.to_string(),
            speaker,
            k,
            response: response.clone(),
        })?;
        Ok(response)
    }

    /// Re-issues recorded requests in order and returns the indices of
    /// records whose response differs from the recorded one.
    pub fn replay(&self, records: &[LogRecord]) -> Result<Vec<usize>, ServiceError> {
        let mut mismatches = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            let same = match rec {
                LogRecord::Create { session_id } => self.create()? == *session_id,
                LogRecord::Clone { source, session_id } => {
                    self.clone_session(source)? == *session_id
                }
                LogRecord::Utterance {
                    session_id,
                    speaker,
                    text,
                    response,
                } => self.add_utterance(session_id, *speaker, text)? == *response,
                LogRecord::Forecast {
                    session_id,
                    speaker,
                    k,
                    response,
                } => self.forecast(session_id, *speaker, *k)? == *response,
            };
            if !same {
                mismatches.push(i);
            }
        }
        Ok(mismatches)
    }

    /// Snapshot of a session's buffered utterances.
    pub fn history(&self, id: &str) -> Result<Vec<Utterance>, ServiceError> {
        let shared = self.session(id)?;
        let s = shared.lock().expect("session lock");
        Ok(s.buffer.iter().cloned().collect())
    }
}

//! The `misc` command line.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use misc_observer::attention::{UtteranceAttention, WordAttention};
use misc_observer::config::RunConfig;
use misc_observer::data::synth::gen_synthetic;
use misc_observer::data::{
    load_corpus, write_corpus, Session, SessionSplit, Speaker, Task, TaskKey, Window,
};
use misc_observer::metrics::{recall_at_k, ConfusionMatrix, EvalReport};
use misc_observer::model::{Model, Preset, Skeleton};
use misc_observer::train::{evaluate, fit, task_windows, Checkpoint, MtlMode};
use misc_service::wire::Categorized;
use misc_service::{Models, Service};

#[derive(Debug, Parser)]
#[command(
    name = "misc",
    version,
    about = "Categorize and forecast MISC codes in MI dialogues"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the command's random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base model preset, replacing the config's.
    #[arg(long)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled corpus.
    GenData {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSON log; defaults to the checkpoint path plus `.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score checkpoints, or a predictions file, against a labeled corpus.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Output of `misc predict` to score instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Categorize every utterance of a corpus, one JSON line each.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Train and score one model per grid cell and write a comparison table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 4, 8, 16])]
        windows: Vec<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_skeleton)]
        skeletons: Vec<Skeleton>,
        #[arg(long, value_delimiter = ',', value_parser = parse_word_attention)]
        word_attention: Vec<WordAttention>,
        #[arg(long, value_delimiter = ',', value_parser = parse_utterance_attention)]
        utterance_attention: Vec<UtteranceAttention>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Grid cells trained in parallel.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Checkpoints whose heads serve every task they cover.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        checkpoint_client_cat: Option<PathBuf>,
        #[arg(long)]
        checkpoint_client_fore: Option<PathBuf>,
        #[arg(long)]
        checkpoint_therapist_cat: Option<PathBuf>,
        #[arg(long)]
        checkpoint_therapist_fore: Option<PathBuf>,
        /// Append-only replay log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn parse_serde<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_skeleton(s: &str) -> Result<Skeleton, String> {
    parse_serde(s)
}

fn parse_word_attention(s: &str) -> Result<WordAttention, String> {
    parse_serde(s)
}

fn parse_utterance_attention(s: &str) -> Result<UtteranceAttention, String> {
    parse_serde(s)
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: missing inputs or conflicting flags. Exit code 2.
    Usage(String),
    /// The command ran and failed. Exit code 1.
    Failed(anyhow::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

impl From<misc_observer::Error> for CliError {
    fn from(e: misc_observer::Error) -> Self {
        CliError::Failed(e.into())
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn dir_of(path: &Path) -> PathBuf {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    parent
        .canonicalize()
        .unwrap_or_else(|_| parent.to_path_buf())
}

/// Outputs never go next to the corpus they were computed from.
fn check_output(out: &Path, corpus: &Path) -> Result<()> {
    if dir_of(out) == dir_of(corpus) {
        return Err(CliError::Usage(format!(
            "{} would be written into the corpus directory",
            out.display()
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_run(config: Option<&Path>, preset: Option<Preset>) -> Result<RunConfig> {
    let (text, source) = match config {
        Some(p) => {
            require_file(p, "config")?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            (text, p.display().to_string())
        }
        None => (String::new(), "<defaults>".to_string()),
    };
    Ok(RunConfig::parse_with_preset(&text, &source, preset)?)
}

fn corpus(path: &Path) -> Result<Vec<Session>> {
    require_file(path, "corpus")?;
    Ok(load_corpus(path)?)
}

fn checkpoints(paths: &[PathBuf]) -> Result<Vec<Arc<Model>>> {
    paths
        .iter()
        .map(|p| {
            require_file(p, "checkpoint")?;
            Ok(Arc::new(Checkpoint::load(p)?.model))
        })
        .collect()
}

fn split_sessions(run: &RunConfig, sessions: Vec<Session>) -> Result<SessionSplit> {
    Ok(SessionSplit::by_fraction(
        sessions,
        run.data.dev_fraction,
        run.data.test_fraction,
    )?)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { run, out } => {
            let mut cfg = load_run(run.config.as_deref(), run.preset)?;
            if let Some(seed) = run.seed {
                cfg.generate.seed = seed;
            }
            let sessions = gen_synthetic(&cfg.generate)?;
            write_corpus(&out, &sessions)?;
            eprintln!("wrote {} sessions to {}", sessions.len(), out.display());
            Ok(())
        }
        Command::Train {
            run,
            corpus: path,
            out,
            log,
        } => {
            let mut cfg = load_run(run.config.as_deref(), run.preset)?;
            if let Some(seed) = run.seed {
                cfg.train.seed = seed;
            }
            check_output(&out, &path)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.jsonl");
                PathBuf::from(p)
            });
            check_output(&log_path, &path)?;
            let split = split_sessions(&cfg, corpus(&path)?)?;
            let model = cfg.build_model(&split.train)?;
            let mut log = create(&log_path)?;
            let mut write_err = None;
            let fitted = fit(model, &split.train, &split.dev, &cfg.train, cfg.mtl, |e| {
                let line = serde_json::to_string(e).expect("epoch logs serialize");
                eprintln!("{line}");
                if let Err(err) = writeln!(log, "{line}") {
                    write_err.get_or_insert(err);
                }
            })?;
            if let Some(err) = write_err {
                return Err(anyhow!(err)
                    .context(format!("writing {}", log_path.display()))
                    .into());
            }
            log.flush()
                .with_context(|| format!("writing {}", log_path.display()))?;
            fitted.checkpoint.save(&out)?;
            eprintln!(
                "trained {} for {} epochs, best dev macro F1 {}; checkpoint {}",
                cfg.mtl.name(),
                fitted.checkpoint.epochs,
                fitted
                    .checkpoint
                    .best_metric
                    .map_or("n/a (no dev data)".into(), |m| format!("{m:.4}")),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            config,
            corpus: path,
            checkpoint,
            predictions,
            out,
            k,
            split,
            threads,
        } => {
            check_output(&out, &path)?;
            let sessions = corpus(&path)?;
            let reports = match predictions {
                Some(pred) => {
                    require_file(&pred, "predictions")?;
                    eval_predictions(&sessions, &pred, k)?
                }
                None => {
                    if checkpoint.is_empty() {
                        return Err(CliError::Usage(
                            "eval needs --checkpoint or --predictions".into(),
                        ));
                    }
                    let cfg = load_run(config.as_deref(), None)?;
                    let parts = split_sessions(&cfg, sessions)?;
                    let chosen = match split {
                        Split::Train => parts.train,
                        Split::Dev => parts.dev,
                        Split::Test => parts.test,
                        Split::All => [parts.train, parts.dev, parts.test].concat(),
                    };
                    eval_checkpoints(&checkpoints(&checkpoint)?, &chosen, k, threads)?
                }
            };
            for (key, r) in &reports {
                eprintln!(
                    "{key}: n={} macro F1 {:.4} recall@{} {}",
                    r.count,
                    r.macro_f1,
                    r.k,
                    r.recall_at_k.map_or("-".to_string(), |x| format!("{x:.4}"))
                );
            }
            let mut w = create(&out)?;
            serde_json::to_writer_pretty(&mut w, &reports).context("writing report")?;
            writeln!(w)
                .and_then(|_| w.flush())
                .context("writing report")?;
            Ok(())
        }
        Command::Predict {
            corpus: path,
            checkpoint,
            out,
            threads,
        } => {
            check_output(&out, &path)?;
            let sessions = corpus(&path)?;
            let mut models = Models::new();
            for m in checkpoints(&checkpoint)? {
                models.insert_all(m);
            }
            let records = predict(&models, &sessions, threads)?;
            let mut w = create(&out)?;
            for r in &records {
                serde_json::to_writer(&mut w, r).context("writing predictions")?;
                writeln!(w).context("writing predictions")?;
            }
            w.flush().context("writing predictions")?;
            eprintln!(
                "labeled {} utterances into {}",
                records.len(),
                out.display()
            );
            Ok(())
        }
        Command::Ablate {
            run,
            corpus: path,
            out,
            windows,
            skeletons,
            word_attention,
            utterance_attention,
            k,
            threads,
        } => {
            let mut cfg = load_run(run.config.as_deref(), run.preset)?;
            if let Some(seed) = run.seed {
                cfg.train.seed = seed;
            }
            check_output(&out, &path)?;
            let split = split_sessions(&cfg, corpus(&path)?)?;
            let grid = Grid {
                windows,
                skeletons,
                word_attention,
                utterance_attention,
            };
            let rows = ablate(&cfg, &grid, &split, k, threads)?;
            let table = render_table(&rows, k);
            print!("{table}");
            let mut w = create(&out)?;
            w.write_all(table.as_bytes())
                .and_then(|_| w.flush())
                .context("writing table")?;
            Ok(())
        }
        Command::Serve {
            port,
            host,
            checkpoint,
            checkpoint_client_cat,
            checkpoint_client_fore,
            checkpoint_therapist_cat,
            checkpoint_therapist_fore,
            log,
        } => {
            let mut models = Models::new();
            let routes = [
                (checkpoint_client_cat, Speaker::Client, Task::Categorize),
                (checkpoint_client_fore, Speaker::Client, Task::Forecast),
                (
                    checkpoint_therapist_cat,
                    Speaker::Therapist,
                    Task::Categorize,
                ),
                (
                    checkpoint_therapist_fore,
                    Speaker::Therapist,
                    Task::Forecast,
                ),
            ];
            for (path, role, task) in routes {
                if let Some(p) = path {
                    let model = checkpoints(&[p])?.remove(0);
                    models
                        .insert(TaskKey::new(role, task), model)
                        .map_err(|e| CliError::Usage(e.to_string()))?;
                }
            }
            for m in checkpoints(&checkpoint)? {
                models.insert_all(m);
            }
            if models.is_empty() {
                return Err(CliError::Usage(
                    "serve needs at least one checkpoint".into(),
                ));
            }
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
            let mut service = Service::new(models);
            if let Some(p) = log {
                service = service
                    .with_log(&p)
                    .with_context(|| format!("opening {}", p.display()))?;
            }
            let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
            eprintln!("listening on http://{addr}");
            runtime
                .block_on(misc_service::serve(addr, Arc::new(service)))
                .with_context(|| format!("serving on {addr}"))?;
            Ok(())
        }
    }
}

/// Reports per task head, keyed like `C-categorize`. The first checkpoint
/// with a head for a task scores it.
pub fn eval_checkpoints(
    models: &[Arc<Model>],
    sessions: &[Session],
    k: usize,
    threads: usize,
) -> Result<BTreeMap<String, EvalReport>> {
    let mut routed = Models::new();
    for m in models {
        routed.insert_all(m.clone());
    }
    let mut out = BTreeMap::new();
    for key in routed.keys() {
        let model = routed.get(key).expect("listed keys are routed");
        let windows = task_windows(sessions, key, model.config().window)?;
        out.insert(key.to_string(), evaluate(model, &windows, key, k, threads)?);
    }
    Ok(out)
}

/// Scores `misc predict` output against the gold labels of `sessions`.
pub fn eval_predictions(
    sessions: &[Session],
    path: &Path,
    k: usize,
) -> Result<BTreeMap<String, EvalReport>> {
    let gold: HashMap<(&str, usize), _> = sessions
        .iter()
        .flat_map(|s| {
            s.utterances
                .iter()
                .enumerate()
                .map(move |(i, u)| ((s.session_id.as_str(), i), u))
        })
        .collect();
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut by_role: BTreeMap<Speaker, (ConfusionMatrix, Vec<Vec<f64>>, Vec<usize>)> =
        BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Categorized = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad prediction record", path.display(), n + 1))?;
        let u = gold.get(&(p.session_id.as_str(), p.index)).ok_or_else(|| {
            anyhow!(
                "{}:{}: no utterance {}#{}",
                path.display(),
                n + 1,
                p.session_id,
                p.index
            )
        })?;
        let Some(label) = u.label else { continue };
        let labels = u.speaker.labels();
        let g = labels
            .index_of(label)
            .ok_or_else(|| anyhow!("gold label {label} does not match speaker {}", u.speaker))?;
        let predicted = labels.index_of(p.code).ok_or_else(|| {
            anyhow!(
                "{}:{}: {} is not a {} code",
                path.display(),
                n + 1,
                p.code,
                u.speaker
            )
        })?;
        let entry = by_role
            .entry(u.speaker)
            .or_insert_with(|| (ConfusionMatrix::new(labels.len()), Vec::new(), Vec::new()));
        entry.0.add(g, predicted)?;
        let mut probs = vec![0.0; labels.len()];
        for d in &p.distribution {
            if let Some(i) = labels.index_of(d.code) {
                probs[i] = d.probability;
            }
        }
        entry.1.push(probs);
        entry.2.push(g);
    }
    let mut out = BTreeMap::new();
    for (role, (m, probs, gold)) in by_role {
        let labels = role.labels();
        let k = k.min(labels.len());
        let recall = Some(recall_at_k(&probs, &gold, k)?);
        out.insert(
            TaskKey::new(role, Task::Categorize).to_string(),
            EvalReport::from_confusion(&labels, &m, k, recall),
        );
    }
    Ok(out)
}

/// Categorizes every utterance whose speaker has a categorize model, in
/// corpus order.
pub fn predict(models: &Models, sessions: &[Session], threads: usize) -> Result<Vec<Categorized>> {
    let mut per_key: BTreeMap<Speaker, (Vec<Window>, Vec<usize>)> = BTreeMap::new();
    let mut slots = Vec::new();
    for s in sessions {
        for (i, u) in s.utterances.iter().enumerate() {
            let Some(model) = models.get(TaskKey::new(u.speaker, Task::Categorize)) else {
                continue;
            };
            let w = Window::categorize(&s.session_id, &s.utterances[..=i], model.config().window)?;
            let entry = per_key.entry(u.speaker).or_default();
            entry.0.push(w);
            entry.1.push(slots.len());
            slots.push(None);
        }
    }
    for (speaker, (windows, at)) in per_key {
        let model = models
            .get(TaskKey::new(speaker, Task::Categorize))
            .expect("grouped by routed key");
        let probs = model.predict_many(&windows, threads)?;
        for ((w, p), slot) in windows.iter().zip(probs).zip(at) {
            slots[slot] = Some(Categorized::new(&w.session_id, w.anchor_index, speaker, &p));
        }
    }
    let skipped = sessions.iter().map(|s| s.utterances.len()).sum::<usize>() - slots.len();
    if skipped > 0 {
        eprintln!("skipped {skipped} utterances with no categorize model for their speaker");
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect())
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub windows: Vec<usize>,
    /// Empty lists keep the configured value.
    pub skeletons: Vec<Skeleton>,
    pub word_attention: Vec<WordAttention>,
    pub utterance_attention: Vec<UtteranceAttention>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AblationRow {
    pub window: usize,
    pub skeleton: Skeleton,
    pub word_attention: WordAttention,
    pub utterance_attention: UtteranceAttention,
    pub epochs: usize,
    pub dev_macro_f1: Option<f64>,
    pub test_macro_f1: Option<f64>,
    pub test_recall_at_k: Option<f64>,
    /// Why the cell could not run.
    pub error: Option<String>,
}

fn or_default<T: Copy>(list: &[T], fallback: T) -> Vec<T> {
    if list.is_empty() {
        vec![fallback]
    } else {
        list.to_vec()
    }
}

fn ablation_cell(
    base: &RunConfig,
    split: &SessionSplit,
    k: usize,
    row: &mut AblationRow,
) -> anyhow::Result<()> {
    let mut cfg = base.clone();
    cfg.model = cfg.model.with_skeleton(row.skeleton);
    cfg.model.window = row.window;
    cfg.model.word_attention = row.word_attention;
    cfg.model.utterance_attention = row.utterance_attention;
    cfg.mtl = MtlMode::Single(cfg.model.key());
    cfg.model.validate()?;
    let model = cfg.build_model(&split.train)?;
    let fitted = fit(model, &split.train, &split.dev, &cfg.train, cfg.mtl, |_| {})?;
    row.epochs = fitted.checkpoint.epochs;
    row.dev_macro_f1 = fitted.checkpoint.best_metric;
    let key = cfg.model.key();
    let windows = task_windows(&split.test, key, row.window)?;
    if !windows.is_empty() {
        let report = evaluate(&fitted.checkpoint.model, &windows, key, k, 1)?;
        row.test_macro_f1 = Some(report.macro_f1);
        row.test_recall_at_k = report.recall_at_k;
    }
    Ok(())
}

/// Trains every cell of the grid on `split`; rows come back in grid order
/// regardless of `threads`.
pub fn ablate(
    base: &RunConfig,
    grid: &Grid,
    split: &SessionSplit,
    k: usize,
    threads: usize,
) -> Result<Vec<AblationRow>> {
    if grid.windows.is_empty() {
        return Err(CliError::Usage(
            "ablation needs at least one window size".into(),
        ));
    }
    let m = &base.model;
    let mut rows = Vec::new();
    for &window in &grid.windows {
        for skeleton in or_default(&grid.skeletons, m.skeleton) {
            for word_attention in or_default(&grid.word_attention, m.word_attention) {
                for utterance_attention in
                    or_default(&grid.utterance_attention, m.utterance_attention)
                {
                    rows.push(AblationRow {
                        window,
                        skeleton,
                        word_attention,
                        utterance_attention,
                        epochs: 0,
                        dev_macro_f1: None,
                        test_macro_f1: None,
                        test_recall_at_k: None,
                        error: None,
                    });
                }
            }
        }
    }
    let run = |row: &mut AblationRow| {
        if let Err(e) = ablation_cell(base, split, k, row) {
            row.error = Some(format!("{e:#}"));
        }
    };
    let threads = threads.clamp(1, rows.len());
    let chunk = rows.len().div_ceil(threads);
    std::thread::scope(|s| {
        for part in rows.chunks_mut(chunk) {
            s.spawn(|| part.iter_mut().for_each(run));
        }
    });
    Ok(rows)
}

fn cell(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn name<T: serde::Serialize>(x: &T) -> String {
    serde_json::to_value(x)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Markdown table, one row per grid cell.
pub fn render_table(rows: &[AblationRow], k: usize) -> String {
    let mut s = format!(
        "| window | skeleton | word attention | utterance attention | epochs | dev macro F1 | test macro F1 | test recall@{k} | note |\n"
    );
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            r.window,
            name(&r.skeleton),
            name(&r.word_attention),
            name(&r.utterance_attention),
            r.epochs,
            cell(r.dev_macro_f1),
            cell(r.test_macro_f1),
            cell(r.test_recall_at_k),
            r.error.as_deref().unwrap_or(""),
        ));
    }
    s
}

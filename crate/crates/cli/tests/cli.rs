use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TOY: &str = r#"
[model]
preset = "C_C"
word_dim = 8
hidden_dim = 8
speaker_dim = 2
window = 2

[train]
lr = 0.01
batch_size = 16
max_epochs = 2
seed = 5

[data]
dev_fraction = 0.2
test_fraction = 0.2

[generate]
sessions = 10
min_len = 8
max_len = 12
"#;

struct Dirs {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

impl Dirs {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let out = tmp.path().join("out");
        fs::create_dir_all(&data).unwrap();
        fs::create_dir_all(&out).unwrap();
        fs::write(out.join("toy.toml"), TOY).unwrap();
        Dirs {
            _tmp: tmp,
            data,
            out,
        }
    }

    fn config(&self) -> PathBuf {
        self.out.join("toy.toml")
    }

    fn corpus(&self) -> PathBuf {
        let path = self.data.join("corpus.jsonl");
        if !path.exists() {
            ok(&misc(&[
                "gen-data",
                "--config",
                s(&self.config()),
                "--out",
                s(&path),
            ]));
        }
        path
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn misc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misc"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn train(d: &Dirs, preset: &str, name: &str) -> PathBuf {
    let ckpt = d.out.join(name);
    ok(&misc(&[
        "train",
        "--config",
        s(&d.config()),
        "--corpus",
        s(&d.corpus()),
        "--preset",
        preset,
        "--out",
        s(&ckpt),
    ]));
    ckpt
}

#[test]
fn gen_data_is_deterministic() {
    let d = Dirs::new();
    let a = d.out.join("a.jsonl");
    let b = d.out.join("b.jsonl");
    let c = d.out.join("c.jsonl");
    ok(&misc(&[
        "gen-data",
        "--config",
        s(&d.config()),
        "--seed",
        "7",
        "--out",
        s(&a),
    ]));
    ok(&misc(&[
        "gen-data",
        "--config",
        s(&d.config()),
        "--seed",
        "7",
        "--out",
        s(&b),
    ]));
    ok(&misc(&[
        "gen-data",
        "--config",
        s(&d.config()),
        "--seed",
        "8",
        "--out",
        s(&c),
    ]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 10);
}

#[test]
fn usage_errors_exit_nonzero() {
    let d = Dirs::new();
    let missing = d.data.join("missing.jsonl");
    let out = d.out.join("x");
    for args in [
        vec!["train", "--corpus", s(&missing), "--out", s(&out)],
        vec![
            "predict",
            "--corpus",
            s(&missing),
            "--checkpoint",
            s(&out),
            "--out",
            s(&out),
        ],
        vec![
            "eval",
            "--corpus",
            s(&missing),
            "--checkpoint",
            s(&out),
            "--out",
            s(&out),
        ],
        vec!["serve", "--port", "0"],
        vec!["train", "--bogus"],
        vec![
            "train",
            "--preset",
            "Z_Z",
            "--corpus",
            s(&missing),
            "--out",
            s(&out),
        ],
    ] {
        let o = misc(&args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let corpus = d.corpus();
    let o = misc(&[
        "predict",
        "--corpus",
        s(&corpus),
        "--checkpoint",
        s(&out),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let beside = d.data.join("preds.jsonl");
    let ckpt = train(&d, "C_C", "cc.ckpt");
    let o = misc(&[
        "predict",
        "--corpus",
        s(&corpus),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&beside),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!beside.exists());
    let o = misc(&["eval", "--corpus", s(&corpus), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_predict_eval_round_trip() {
    let d = Dirs::new();
    let corpus = d.corpus();
    let cc = train(&d, "C_C", "cc.ckpt");
    let ct = train(&d, "C_T", "ct.ckpt");
    let log = fs::read_to_string(d.out.join("cc.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);

    let preds = d.out.join("preds.jsonl");
    ok(&misc(&[
        "predict",
        "--corpus",
        s(&corpus),
        "--checkpoint",
        s(&cc),
        "--checkpoint",
        s(&ct),
        "--out",
        s(&preds),
        "--threads",
        "2",
    ]));
    let text = fs::read_to_string(&preds).unwrap();
    let total: usize = fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["utterances"]
                .as_array()
                .unwrap()
                .len()
        })
        .sum();
    assert_eq!(text.lines().count(), total);
    let rec: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(rec["distribution"].is_array() && rec["code"].is_string());

    let report = d.out.join("report.json");
    ok(&misc(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--config",
        s(&d.config()),
        "--checkpoint",
        s(&cc),
        "--out",
        s(&report),
        "--split",
        "all",
    ]));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let cat = &r["C-categorize"];
    assert_eq!(cat["labels"].as_array().unwrap().len(), 3);
    for row in cat["confusion_row_normalized"].as_array().unwrap() {
        let sum: f64 = row
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn eval_of_gold_predictions_is_perfect() {
    let d = Dirs::new();
    let corpus = d.corpus();
    let mut lines = String::new();
    for l in fs::read_to_string(&corpus).unwrap().lines() {
        let session: Value = serde_json::from_str(l).unwrap();
        for (i, u) in session["utterances"].as_array().unwrap().iter().enumerate() {
            let rec = serde_json::json!({
                "session_id": session["session_id"],
                "index": i,
                "speaker": u["speaker"],
                "code": u["label"],
                "distribution": [{"code": u["label"], "probability": 1.0}],
            });
            lines.push_str(&format!("{rec}\n"));
        }
    }
    let preds = d.out.join("gold.jsonl");
    fs::write(&preds, lines).unwrap();
    let report = d.out.join("gold-report.json");
    ok(&misc(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--predictions",
        s(&preds),
        "--out",
        s(&report),
    ]));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["C-categorize", "T-categorize"] {
        assert_eq!(r[key]["macro_f1"], 1.0, "{key}");
        assert_eq!(r[key]["recall_at_k"], 1.0, "{key}");
    }
}

#[test]
fn ablate_emits_one_row_per_cell() {
    let d = Dirs::new();
    let corpus = d.corpus();
    let table = d.out.join("ablation.md");
    ok(&misc(&[
        "ablate",
        "--config",
        s(&d.config()),
        "--corpus",
        s(&corpus),
        "--windows",
        "1,4",
        "--out",
        s(&table),
        "--threads",
        "2",
    ]));
    let text = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(
        rows[0].starts_with("| 1 |") && rows[1].starts_with("| 4 |"),
        "{text}"
    );

    let grid = d.out.join("grid.md");
    ok(&misc(&[
        "ablate",
        "--config",
        s(&d.config()),
        "--corpus",
        s(&corpus),
        "--windows",
        "0",
        "--word-attention",
        "none,bidaf",
        "--skeletons",
        "hgru,concat",
        "--out",
        s(&grid),
    ]));
    assert_eq!(fs::read_to_string(&grid).unwrap().lines().count(), 2 + 4);
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let d = Dirs::new();
    let a = train(&d, "F_T", "a.ckpt");
    let b = train(&d, "F_T", "b.ckpt");
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

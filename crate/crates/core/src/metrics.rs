//! Confusion matrices, precision/recall/F1, recall@k and evaluation reports.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};

/// Square count matrix, rows = gold, columns = predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::dim("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn from_pairs(n: usize, gold: &[usize], predicted: &[usize]) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(Error::dim(format!(
                "{} gold labels vs {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        let mut m = ConfusionMatrix::new(n);
        for (&g, &p) in gold.iter().zip(predicted) {
            m.add(g, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, gold: usize, predicted: usize) -> Result<()> {
        let n = self.size();
        if gold >= n || predicted >= n {
            return Err(Error::contract(format!(
                "label index ({gold}, {predicted}) out of range for {n} labels"
            )));
        }
        self.counts[gold][predicted] += 1;
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn gold_counts(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn predicted_counts(&self) -> Vec<u64> {
        (0..self.size())
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }

    /// Each row divided by its gold count; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| {
                let total: u64 = r.iter().sum();
                r.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-label scores and their unweighted mean F1. Any zero denominator gives 0.
pub fn prf1(m: &ConfusionMatrix) -> (Vec<Prf>, f64) {
    let gold = m.gold_counts();
    let pred = m.predicted_counts();
    let per: Vec<Prf> = (0..m.size())
        .map(|i| {
            let tp = m.counts[i][i] as f64;
            let precision = ratio(tp, pred[i] as f64);
            let recall = ratio(tp, gold[i] as f64);
            Prf {
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support: gold[i],
            }
        })
        .collect();
    let macro_f1 = ratio(per.iter().map(|p| p.f1).sum(), per.len() as f64);
    (per, macro_f1)
}

/// Indices of the `k` largest probabilities, ties broken by label order.
pub fn top_k(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn argmax(p: &[f64]) -> usize {
    top_k(p, 1).first().copied().unwrap_or(0)
}

/// Fraction of rows whose gold label is among the top `k`.
pub fn recall_at_k(probs: &[Vec<f64>], gold: &[usize], k: usize) -> Result<f64> {
    if probs.len() != gold.len() {
        return Err(Error::dim(format!(
            "{} probability rows vs {} gold labels",
            probs.len(),
            gold.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::contract("recall@k of zero rows"));
    }
    let mut hits = 0usize;
    for (p, &g) in probs.iter().zip(gold) {
        if k == 0 || k > p.len() {
            return Err(Error::contract(format!("k = {k} outside 1..={}", p.len())));
        }
        if top_k(p, k).contains(&g) {
            hits += 1;
        }
    }
    Ok(hits as f64 / probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub label: String,
    #[serde(flatten)]
    pub scores: Prf,
}

/// Evaluation summary, written as pretty-printed JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub count: u64,
    pub per_label: Vec<LabelReport>,
    pub macro_f1: f64,
    pub k: usize,
    /// Absent when only hard predictions were available.
    pub recall_at_k: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub confusion_row_normalized: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn from_confusion(
        labels: &LabelSet,
        m: &ConfusionMatrix,
        k: usize,
        recall: Option<f64>,
    ) -> Self {
        let (per, macro_f1) = prf1(m);
        EvalReport {
            labels: labels
                .labels()
                .iter()
                .map(|l| l.code().to_string())
                .collect(),
            count: m.total(),
            per_label: labels
                .labels()
                .iter()
                .zip(per)
                .map(|(l, scores)| LabelReport {
                    label: l.code().to_string(),
                    scores,
                })
                .collect(),
            macro_f1,
            k,
            recall_at_k: recall,
            confusion: m.counts().to_vec(),
            confusion_row_normalized: m.row_normalized(),
        }
    }

    /// Scores argmax predictions and recall@k from probability rows.
    pub fn from_probabilities(
        labels: &LabelSet,
        probs: &[Vec<f64>],
        gold: &[usize],
        k: usize,
    ) -> Result<Self> {
        if probs.iter().any(|p| p.len() != labels.len()) {
            return Err(Error::dim(format!(
                "probability rows must have {} entries",
                labels.len()
            )));
        }
        let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let m = ConfusionMatrix::from_pairs(labels.len(), gold, &predicted)?;
        let recall = if probs.is_empty() {
            None
        } else {
            Some(recall_at_k(probs, gold, k)?)
        };
        Ok(EvalReport::from_confusion(labels, &m, k, recall))
    }

    pub fn from_predictions(
        labels: &LabelSet,
        predicted: &[usize],
        gold: &[usize],
        k: usize,
    ) -> Result<Self> {
        let m = ConfusionMatrix::from_pairs(labels.len(), gold, predicted)?;
        Ok(EvalReport::from_confusion(labels, &m, k, None))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

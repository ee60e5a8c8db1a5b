//! Corpus scoring, macro-averaged reports, and their JSON/CSV forms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::text::{bleu_k, exact_match, rouge_l, rouge_lsum, rouge_n, rwb, token_f1};
use crate::error::{contract, Result};
use crate::par;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub em: f64,
    pub f1: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rwb: f64,
}

/// CSV column names, in the order of [`MetricScores::values`].
pub const METRIC_COLUMNS: [&str; 11] =
    ["EM", "Rouge1", "RougeL", "RWB", "F1", "Rouge2", "RougeLsum", "BLEU1", "BLEU2", "BLEU3", "BLEU4"];

impl MetricScores {
    pub fn score(prediction: &str, reference: &str) -> Self {
        Self {
            em: exact_match(prediction, reference),
            f1: token_f1(prediction, reference),
            rouge1: rouge_n(prediction, reference, 1),
            rouge2: rouge_n(prediction, reference, 2),
            rouge_l: rouge_l(prediction, reference),
            rouge_lsum: rouge_lsum(prediction, reference),
            bleu1: bleu_k(prediction, reference, 1),
            bleu2: bleu_k(prediction, reference, 2),
            bleu3: bleu_k(prediction, reference, 3),
            bleu4: bleu_k(prediction, reference, 4),
            rwb: rwb(prediction, reference),
        }
    }

    pub fn values(&self) -> [f64; 11] {
        [
            self.em,
            self.rouge1,
            self.rouge_l,
            self.rwb,
            self.f1,
            self.rouge2,
            self.rouge_lsum,
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
        ]
    }

    fn from_values(v: [f64; 11]) -> Self {
        Self {
            em: v[0],
            rouge1: v[1],
            rouge_l: v[2],
            rwb: v[3],
            f1: v[4],
            rouge2: v[5],
            rouge_lsum: v[6],
            bleu1: v[7],
            bleu2: v[8],
            bleu3: v[9],
            bleu4: v[10],
        }
    }

    /// Componentwise `self - other`.
    pub fn minus(&self, other: &Self) -> Self {
        let (a, b) = (self.values(), other.values());
        Self::from_values(std::array::from_fn(|i| a[i] - b[i]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub mean: MetricScores,
    pub per_example: Vec<MetricScores>,
}

impl MetricReport {
    /// Scores each pair (in parallel when enabled) and macro-averages in
    /// input order.
    pub fn compute(predictions: &[String], references: &[String]) -> Result<Self> {
        if predictions.len() != references.len() {
            return contract(format!("{} predictions for {} references", predictions.len(), references.len()));
        }
        let idx: Vec<usize> = (0..predictions.len()).collect();
        let per_example = par::map(&idx, |&i| MetricScores::score(&predictions[i], &references[i]));
        Ok(Self::from_scores(per_example))
    }

    pub fn from_scores(per_example: Vec<MetricScores>) -> Self {
        let mut sum = [0.0; 11];
        for s in &per_example {
            for (acc, v) in sum.iter_mut().zip(s.values()) {
                *acc += v;
            }
        }
        let n = per_example.len().max(1) as f64;
        Self { count: per_example.len(), mean: MetricScores::from_values(sum.map(|v| v / n)), per_example }
    }

    /// Report restricted to the given example indices.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::from_scores(indices.iter().map(|&i| self.per_example[i]).collect())
    }

    pub fn column(&self, f: impl Fn(&MetricScores) -> f64) -> Vec<f64> {
        self.per_example.iter().map(f).collect()
    }
}

pub fn csv_header() -> String {
    format!("model,{}", METRIC_COLUMNS.join(","))
}

pub fn csv_row(name: &str, scores: &MetricScores) -> String {
    let mut row = name.to_owned();
    for v in scores.values() {
        write!(row, ",{v:.6}").expect("write to string");
    }
    row
}

//! Group-wise evaluation: ROC-AUC on bias-aligned, bias-conflicting and all samples.

use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, Mlp};
use crate::synth::Dataset;
use crate::{Error, Result};

/// Decision threshold for accuracies.
pub const THRESHOLD: f64 = 0.5;

/// Anything that scores a feature batch with one value per row.
pub trait Scorer {
    fn input_dim(&self) -> usize;
    fn scores(&self, batch: &Matrix) -> Result<Vec<f64>>;
}

impl Scorer for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn scores(&self, batch: &Matrix) -> Result<Vec<f64>> {
        self.predict_proba(batch)
    }
}

/// Mann-Whitney AUC with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * tied_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC restricted to a subgroup, `None` when the subgroup lacks a class.
fn subgroup_auc(scores: &[f64], labels: &[u8], keep: impl Fn(usize) -> bool) -> Result<Option<f64>> {
    let (s, l): (Vec<f64>, Vec<u8>) = (0..scores.len())
        .filter(|&i| keep(i))
        .map(|i| (scores[i], labels[i]))
        .unzip();
    match auc(&s, &l) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellAccuracy {
    pub t1b1: Option<f64>,
    pub t1b0: Option<f64>,
    pub t0b1: Option<f64>,
    pub t0b0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricBlock {
    pub aligned_auc: Option<f64>,
    pub conflicting_auc: Option<f64>,
    pub balanced_auc: Option<f64>,
    pub overall_auc: Option<f64>,
    pub aligned_accuracy: Option<f64>,
    pub conflicting_accuracy: Option<f64>,
    pub cells: CellAccuracy,
}

impl MetricBlock {
    pub const CSV_HEADER: &'static str = "aligned_auc,conflicting_auc,balanced_auc,overall_auc,\
aligned_acc,conflicting_acc,acc_t1b1,acc_t1b0,acc_t0b1,acc_t0b0";

    /// One CSV row matching [`MetricBlock::CSV_HEADER`]; undefined entries are left empty.
    pub fn csv_row(&self) -> String {
        [
            self.aligned_auc,
            self.conflicting_auc,
            self.balanced_auc,
            self.overall_auc,
            self.aligned_accuracy,
            self.conflicting_accuracy,
            self.cells.t1b1,
            self.cells.t1b0,
            self.cells.t0b1,
            self.cells.t0b0,
        ]
        .iter()
        .map(|v| v.map(|x| format!("{x}")).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(",")
    }
}

fn accuracy(scores: &[f64], labels: &[u8], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for i in (0..scores.len()).filter(|&i| keep(i)) {
        n += 1;
        if (scores[i] > THRESHOLD) == (labels[i] == 1) {
            hit += 1;
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Metric block for precomputed scores, one per sample of `data`.
pub fn evaluate_scores(scores: &[f64], data: &Dataset) -> Result<MetricBlock> {
    if scores.len() != data.len() {
        return Err(Error::shape(format!(
            "{} scores for {} samples",
            scores.len(),
            data.len()
        )));
    }
    let samples = data.samples();
    let labels = data.labels();
    let aligned = |i: usize| samples[i].aligned();
    let cell = |t: u8, b: u8| move |i: usize| samples[i].t == t && samples[i].b == b;

    let aligned_auc = subgroup_auc(scores, &labels, aligned)?;
    let conflicting_auc = subgroup_auc(scores, &labels, |i| !aligned(i))?;
    let overall_auc = subgroup_auc(scores, &labels, |_| true)?;
    let balanced_auc = match (aligned_auc, conflicting_auc) {
        (Some(a), Some(c)) => Some((a + c) / 2.0),
        _ => None,
    };
    Ok(MetricBlock {
        aligned_auc,
        conflicting_auc,
        balanced_auc,
        overall_auc,
        aligned_accuracy: accuracy(scores, &labels, aligned),
        conflicting_accuracy: accuracy(scores, &labels, |i| !aligned(i)),
        cells: CellAccuracy {
            t1b1: accuracy(scores, &labels, cell(1, 1)),
            t1b0: accuracy(scores, &labels, cell(1, 0)),
            t0b1: accuracy(scores, &labels, cell(0, 1)),
            t0b0: accuracy(scores, &labels, cell(0, 0)),
        },
    })
}

pub fn evaluate_groups(model: &dyn Scorer, data: &Dataset) -> Result<MetricBlock> {
    let scores = model.scores(&data.features())?;
    evaluate_scores(&scores, data)
}

//! Ranking and classification metrics.

use std::collections::BTreeSet;

use serde::Serialize;

/// Single-target NDCG@k and Recall@k for a 1-based rank.
pub fn rank_metrics(rank: usize, k: usize) -> (f64, f64) {
    assert!(rank >= 1, "ranks are 1-based");
    if rank <= k {
        (1.0 / ((rank + 1) as f64).log2(), 1.0)
    } else {
        (0.0, 0.0)
    }
}

pub const CUTOFFS: [usize; 3] = [1, 5, 10];

/// Percentages averaged over students.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecReport {
    #[serde(rename = "ndcg@1")]
    pub ndcg_1: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg_5: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg_10: f64,
    #[serde(rename = "recall@1")]
    pub recall_1: f64,
    #[serde(rename = "recall@5")]
    pub recall_5: f64,
    #[serde(rename = "recall@10")]
    pub recall_10: f64,
    pub students: usize,
    pub mean_rank: f64,
}

impl RecReport {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let mut ndcg = [0.0; 3];
        let mut recall = [0.0; 3];
        for &r in ranks {
            for (i, &k) in CUTOFFS.iter().enumerate() {
                let (a, b) = rank_metrics(r, k);
                ndcg[i] += a;
                recall[i] += b;
            }
        }
        let pct = |x: f64| 100.0 * x / n;
        RecReport {
            ndcg_1: pct(ndcg[0]),
            ndcg_5: pct(ndcg[1]),
            ndcg_10: pct(ndcg[2]),
            recall_1: pct(recall[0]),
            recall_5: pct(recall[1]),
            recall_10: pct(recall[2]),
            students: ranks.len(),
            mean_rank: ranks.iter().sum::<usize>() as f64 / n,
        }
    }
}

/// Ranks with ties sharing their mean rank, 1-based.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the rank-sum statistic; ties count half.
/// Returns 0.5 when one class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let ranks = average_ranks(scores);
    let sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    (sum - (pos * (pos + 1)) as f64 / 2.0) / (pos as f64 * neg as f64)
}

/// Average precision of the ranking by descending score (ties broken by
/// input order).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, &k) in idx.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / pos as f64
}

pub fn rmse(probs: &[f64], labels: &[bool]) -> f64 {
    let n = probs.len().max(1) as f64;
    (probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| (p - if l { 1.0 } else { 0.0 }).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len().max(1) as f64;
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / n
}

/// Macro precision, recall and F1 over the union of true and predicted
/// labels.
pub fn macro_prf(truth: &[usize], pred: &[usize]) -> (f64, f64, f64) {
    let labels: BTreeSet<usize> = truth.iter().chain(pred).copied().collect();
    if labels.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for &c in &labels {
        let tp = truth.iter().zip(pred).filter(|&(&t, &q)| t == c && q == c).count() as f64;
        let predicted = pred.iter().filter(|&&q| q == c).count() as f64;
        let actual = truth.iter().filter(|&&t| t == c).count() as f64;
        let pc = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rc = if actual > 0.0 { tp / actual } else { 0.0 };
        p += pc;
        r += rc;
        f += if pc + rc > 0.0 { 2.0 * pc * rc / (pc + rc) } else { 0.0 };
    }
    let k = labels.len() as f64;
    (p / k, r / k, f / k)
}

//! Ranking and classification metrics.
//!
//! Whenever an order over companies matters, rows are ranked by descending
//! score with ties broken by ascending company id, so every metric is a
//! function of the set of rows and not of their input order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// Parallel company ids, class-1 probabilities and binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    companies: Vec<String>,
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(companies: Vec<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if companies.len() != scores.len() || scores.len() != labels.len() {
            return Err(Error::Invalid(format!(
                "scored set lengths differ: {} companies, {} scores, {} labels",
                companies.len(),
                scores.len(),
                labels.len()
            )));
        }
        if companies.is_empty() {
            return Err(Error::Invalid("scored set is empty".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "scored_set" });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Invalid("labels must be 0 or 1".into()));
        }
        Ok(Self {
            companies,
            scores,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn companies(&self) -> &[String] {
        &self.companies
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn base_rate(&self) -> f64 {
        self.n_pos() as f64 / self.len() as f64
    }

    /// Row indices in rank order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.rank_cmp(a, b));
        order
    }

    fn rank_cmp(&self, a: usize, b: usize) -> Ordering {
        self.scores[b]
            .total_cmp(&self.scores[a])
            .then_with(|| self.companies[a].cmp(&self.companies[b]))
    }
}

/// Non-interpolated average precision.
pub fn auprc(s: &ScoredSet) -> Result<f64> {
    let n_pos = s.n_pos();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("auprc needs at least one positive"));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in s.ranking().iter().enumerate() {
        if s.labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Probability that a random positive outscores a random negative; ties count half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let n_pos = s.n_pos();
    let n_neg = s.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("auroc needs both classes"));
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    // Sum of (1-based, tie-averaged) ascending ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && s.scores[order[end]] == s.scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| s.labels[i] == 1).count();
        rank_sum += avg_rank * pos_in_group as f64;
        start = end;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 of the rule `score >= threshold`.
pub fn f1_at(s: &ScoredSet, threshold: f64) -> f64 {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        match (score >= threshold, label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

/// Threshold maximizing F1 on `val` over its distinct scores (lowest wins ties).
pub fn best_threshold(val: &ScoredSet) -> Result<(f64, f64)> {
    if val.n_pos() == 0 {
        return Err(Error::UndefinedMetric("f1 threshold needs a validation positive"));
    }
    let mut order: Vec<usize> = (0..val.len()).collect();
    order.sort_by(|&a, &b| val.scores[b].total_cmp(&val.scores[a]));
    let n_pos = val.n_pos();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NAN, -1.0);
    let mut i = 0;
    // Descending sweep: each distinct score admits its whole tie group.
    while i < order.len() {
        let t = val.scores[order[i]];
        while i < order.len() && val.scores[order[i]] == t {
            if val.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = f1_from_counts(tp, fp, n_pos - tp);
        if f1 >= best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// Picks the threshold on `val` and reports it with the F1 it gives on `test`.
pub fn f1_optimal(val: &ScoredSet, test: &ScoredSet) -> Result<(f64, f64)> {
    let (threshold, _) = best_threshold(val)?;
    Ok((threshold, f1_at(test, threshold)))
}

pub fn precision_at_k(s: &ScoredSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if k > s.len() {
        return Err(Error::KExceedsN { k, n: s.len() });
    }
    let hits = s.ranking()[..k].iter().filter(|&&i| s.labels[i] == 1).count();
    Ok(hits as f64 / k as f64)
}

pub fn lift_at_k(s: &ScoredSet, k: usize) -> Result<f64> {
    lift(precision_at_k(s, k)?, s.base_rate())
}

/// Precision relative to the base positive rate.
pub fn lift(precision: f64, base_rate: f64) -> Result<f64> {
    if base_rate <= 0.0 {
        return Err(Error::ZeroBaseRate);
    }
    Ok(precision / base_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub seed: u64,
    pub auprc: f64,
    pub auroc: f64,
    pub f1: f64,
    /// Chosen on the validation scores.
    pub threshold: f64,
    pub precision_at: BTreeMap<usize, f64>,
    pub lift_at: BTreeMap<usize, f64>,
    /// Requested cutoffs larger than the test set.
    pub skipped_k: Vec<usize>,
    pub base_rate: f64,
    pub n: usize,
    pub n_pos: usize,
}

impl EvalReport {
    /// Named scalar metrics in a fixed order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::from([
            (String::from("auprc"), self.auprc),
            ("auroc".into(), self.auroc),
            ("f1".into(), self.f1),
        ]);
        for (k, p) in &self.precision_at {
            out.push((format!("precision@{k}"), *p));
        }
        for (k, l) in &self.lift_at {
            out.push((format!("lift@{k}"), *l));
        }
        out
    }
}

/// Scores one run: threshold from `val`, everything else on `test`.
pub fn evaluate(model: &str, seed: u64, val: &ScoredSet, test: &ScoredSet, ks: &[usize]) -> Result<EvalReport> {
    let (threshold, f1) = f1_optimal(val, test)?;
    let base_rate = test.base_rate();
    let mut precision_at = BTreeMap::new();
    let mut lift_at = BTreeMap::new();
    let mut skipped_k = Vec::new();
    for &k in ks {
        match precision_at_k(test, k) {
            Ok(p) => {
                precision_at.insert(k, p);
                lift_at.insert(k, lift(p, base_rate)?);
            }
            Err(Error::KExceedsN { .. }) => skipped_k.push(k),
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport {
        model: model.into(),
        seed,
        auprc: auprc(test)?,
        auroc: auroc(test)?,
        f1,
        threshold,
        precision_at,
        lift_at,
        skipped_k,
        base_rate,
        n: test.len(),
        n_pos: test.n_pos(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (divisor n - 1); zero for a single run.
    pub std: f64,
    pub runs: usize,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Invalid("cannot aggregate zero runs".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    };
    Ok(MeanStd {
        mean,
        std,
        runs: values.len(),
    })
}

/// Per-model, per-metric mean and sample std across seeds.
pub fn aggregate(reports: &[EvalReport]) -> Result<BTreeMap<String, BTreeMap<String, MeanStd>>> {
    let mut grouped: BTreeMap<&str, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in reports {
        let per_metric = grouped.entry(r.model.as_str()).or_default();
        for (name, v) in r.metrics() {
            per_metric.entry(name).or_default().push(v);
        }
    }
    let mut out = BTreeMap::new();
    for (model, metrics) in grouped {
        let mut row = BTreeMap::new();
        for (name, values) in metrics {
            row.insert(name, mean_std(&values)?);
        }
        out.insert(model.into(), row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

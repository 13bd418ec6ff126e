//! Accuracy of CATE predictions against the truth, and selection bookkeeping
//! across replicates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RuleModel;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} true values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    Ok(())
}

pub fn bias(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| p - t).sum::<f64>() / pred.len() as f64)
}

/// RMSE within `q` equal-count bins of subjects ordered by true CATE,
/// averaged over bins. The first `N mod q` bins hold one extra subject.
pub fn binned_rmse(pred: &[f64], truth: &[f64], q: usize) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len();
    if q == 0 || n < q {
        return Err(Error::InvalidArgument(format!("{n} subjects cannot fill {q} bins")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]).then(a.cmp(&b)));
    let (base, extra) = (n / q, n % q);
    let mut start = 0;
    let mut total = 0.0;
    for b in 0..q {
        let size = base + usize::from(b < extra);
        let sse: f64 = order[start..start + size]
            .iter()
            .map(|&i| (pred[i] - truth[i]).powi(2))
            .sum();
        total += (sse / size as f64).sqrt();
        start += size;
    }
    Ok(total / q as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `1 - 6 sum d_i^2 / (N (N^2 - 1))` on average ranks.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let n = pred.len();
    if n < 2 {
        return Err(Error::InvalidArgument("spearman needs at least two points".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(pred) || constant(truth) {
        return Err(Error::InvalidArgument("spearman undefined for a constant vector".into()));
    }
    let (rp, rt) = (average_ranks(pred), average_ranks(truth));
    let d2: f64 = rp.iter().zip(&rt).map(|(a, b)| (a - b).powi(2)).sum();
    let nf = n as f64;
    Ok((1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0))).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub bias: f64,
    pub binned_rmse: f64,
    pub bins: usize,
    /// `None` when the predictions are constant.
    pub spearman: Option<f64>,
    pub n: usize,
}

pub fn evaluate_predictions(pred: &[f64], truth: &[f64], q: usize) -> Result<PredictionMetrics> {
    Ok(PredictionMetrics {
        bias: bias(pred, truth)?,
        binned_rmse: binned_rmse(pred, truth, q)?,
        bins: q,
        spearman: spearman(pred, truth).ok(),
        n: pred.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub replicates: usize,
    /// Replicates whose selected rules mention each covariate.
    pub counts: BTreeMap<String, usize>,
    pub l: Vec<usize>,
}

impl SelectionSummary {
    pub fn median_l(&self) -> f64 {
        median_usize(&self.l)
    }

    pub fn min_l(&self) -> usize {
        self.l.iter().copied().min().unwrap_or(0)
    }

    pub fn max_l(&self) -> usize {
        self.l.iter().copied().max().unwrap_or(0)
    }

    pub fn count(&self, covariate: &str) -> usize {
        self.counts.get(covariate).copied().unwrap_or(0)
    }
}

pub fn median_usize(v: &[usize]) -> f64 {
    let mut s: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    median(&mut s)
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `None` entries are failed replicates and count as `L = 0`.
pub fn selection_frequency(models: &[Option<&RuleModel>], covariates: &[String]) -> SelectionSummary {
    let mut counts: BTreeMap<String, usize> = covariates.iter().map(|c| (c.clone(), 0)).collect();
    let mut l = Vec::with_capacity(models.len());
    for m in models {
        let Some(m) = m else {
            l.push(0);
            continue;
        };
        l.push(m.l());
        let mut used: Vec<&str> = m.rules.iter().flat_map(|r| r.covariates()).collect();
        used.sort_unstable();
        used.dedup();
        for c in used {
            *counts.entry(c.to_string()).or_insert(0) += 1;
        }
    }
    SelectionSummary { replicates: models.len(), counts, l }
}

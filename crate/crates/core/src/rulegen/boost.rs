use ndarray::{Array2, Axis};
use rand::seq::index::sample;

use super::ctree::{fit_ctree, CTreeConfig};
use super::{dedup_rules, Candidate, Rule};
use crate::data::CovariateKind;
use crate::error::{Error, Result};
use crate::pseudo::PseudoSample;
use crate::rng::{self, label};

#[derive(Debug, Clone)]
pub struct BoostOutput {
    /// Dataset rows of the complete cases the ensemble was trained on.
    pub rows: Vec<usize>,
    /// Raw node rules in emission order, before deduplication.
    pub rules: Vec<Rule>,
    pub f0: f64,
    /// Final ensemble fit on the complete cases, aligned with `rows`.
    pub fitted: Vec<f64>,
    /// Trees that split at least once.
    pub trees_split: usize,
}

/// Gradient boosting of conditional inference trees on the pseudo outcomes,
/// collecting one rule per non-root node of every tree.
pub fn boost_rules(
    x: &Array2<f64>,
    kinds: &[CovariateKind],
    samples: &[PseudoSample],
    cfg: &CTreeConfig,
    seed: u64,
) -> Result<BoostOutput> {
    cfg.validate()?;
    let rows: Vec<usize> = samples.iter().filter(|s| s.complete).map(|s| s.index).collect();
    if rows.is_empty() {
        return Err(Error::NoCompleteCases);
    }
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("boosting needs at least two complete cases".into()));
    }
    let xc = x.select(Axis(0), &rows);
    let y: Vec<f64> = samples.iter().filter(|s| s.complete).map(|s| s.y_star).collect();
    let w: Vec<f64> = samples.iter().filter(|s| s.complete).map(|s| s.weight()).collect();
    let n = rows.len();

    let sw: f64 = w.iter().sum();
    let f0 = if sw > 0.0 {
        w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / sw
    } else {
        0.0
    };
    let mut fitted = vec![f0; n];
    let mut resid = vec![0.0; n];
    let take = ((cfg.subsample_fraction * n as f64).floor() as usize).clamp(1, n);
    let mut rules = Vec::new();
    let mut trees_split = 0;
    for m in 0..cfg.max_trees {
        for i in 0..n {
            resid[i] = y[i] - fitted[i];
        }
        let mut r = rng::stream(seed, &[label::RULES, m as u64]);
        let mut sub: Vec<usize> = sample(&mut r, n, take).into_vec();
        sub.sort_unstable();
        let tree = fit_ctree(
            &xc,
            kinds,
            &sub,
            &resid,
            &w,
            cfg,
            rng::derive_seed(seed, &[label::RULES, m as u64, 1]),
        );
        if tree.is_root_only() {
            if cfg.learn_rate != 0.0 {
                // a root-only tree adds the (near zero) weighted mean residual
                let v = tree.predict(xc.row(0));
                fitted.iter_mut().for_each(|f| *f += cfg.learn_rate * v);
            }
            continue;
        }
        trees_split += 1;
        if cfg.learn_rate != 0.0 {
            for (i, f) in fitted.iter_mut().enumerate() {
                *f += cfg.learn_rate * tree.predict(xc.row(i));
            }
        }
        rules.extend(tree.rules());
    }
    Ok(BoostOutput { rows, rules, f0, fitted, trees_split })
}

/// Boosting followed by deduplication on the complete-case rows.
pub fn generate_candidates(
    x: &Array2<f64>,
    kinds: &[CovariateKind],
    samples: &[PseudoSample],
    cfg: &CTreeConfig,
    seed: u64,
) -> Result<(Vec<Candidate>, BoostOutput)> {
    let out = boost_rules(x, kinds, samples, cfg, seed)?;
    let xc = x.select(Axis(0), &out.rows);
    let cands = dedup_rules(out.rules.clone(), &xc);
    Ok((cands, out))
}

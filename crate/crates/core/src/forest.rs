//! Bootstrap tree ensembles: a Gini classification forest for propensity
//! scores and a log-rank random survival forest with Nelson–Aalen leaves.
//!
//! Each tree draws from its own RNG stream `(seed, tree index)` and trees are
//! collected in index order, so fits do not depend on the thread count.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::km::CumulativeHazard;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate covariates per split; defaults to `ceil(sqrt(p))` for
    /// classification and `ceil(p/3)` for survival.
    pub mtry: Option<usize>,
    /// Minimum number of (bootstrap) observations in a terminal node.
    pub min_node: usize,
    /// Random cutpoints tried per survival split; 0 means every cutpoint.
    pub nsplit: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            min_node: 15,
            nsplit: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Split {
        var: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree<L> {
    nodes: Vec<Node>,
    leaves: Vec<L>,
    /// Bootstrap multiplicity of each training position.
    inbag: Vec<u32>,
}

impl<L> Tree<L> {
    fn leaf(&self, row: ArrayView1<'_, f64>) -> &L {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(l) => return &self.leaves[l],
                Node::Split { var, threshold, left, right } => {
                    k = if row[var] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Work item for iterative tree growth.
struct Pending {
    node: usize,
    samples: Vec<usize>,
}

fn bootstrap(m: usize, rng: &mut Rng) -> (Vec<usize>, Vec<u32>) {
    let mut inbag = vec![0u32; m];
    let draws: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
    for &d in &draws {
        inbag[d] += 1;
    }
    (draws, inbag)
}

fn pick_vars(p: usize, mtry: usize, rng: &mut Rng) -> Vec<usize> {
    let mut vars: Vec<usize> = (0..p).collect();
    let (chosen, _) = vars.partial_shuffle(rng, mtry.min(p));
    chosen.to_vec()
}

/// Grows one tree. `split` returns `(var, threshold)` for a node or `None`
/// to make it terminal; `make_leaf` summarizes the node's samples.
fn grow<L>(
    samples: Vec<usize>,
    inbag: Vec<u32>,
    mut split: impl FnMut(&[usize]) -> Option<(usize, f64)>,
    value: impl Fn(usize, usize) -> f64,
    make_leaf: impl Fn(&[usize]) -> L,
) -> Tree<L> {
    let mut nodes = vec![Node::Leaf(0)];
    let mut leaves = Vec::new();
    let mut stack = vec![Pending { node: 0, samples }];
    while let Some(Pending { node, samples }) = stack.pop() {
        match split(&samples) {
            Some((var, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    samples.iter().partition(|&&s| value(s, var) <= threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf(0));
                let right = nodes.len();
                nodes.push(Node::Leaf(0));
                nodes[node] = Node::Split { var, threshold, left, right };
                stack.push(Pending { node: right, samples: r });
                stack.push(Pending { node: left, samples: l });
            }
            None => {
                nodes[node] = Node::Leaf(leaves.len());
                leaves.push(make_leaf(&samples));
            }
        }
    }
    Tree { nodes, leaves, inbag }
}

/// Random forest classifier for a 0/1 label.
#[derive(Debug, Clone)]
pub struct ClassificationForest {
    trees: Vec<Tree<f64>>,
}

impl ClassificationForest {
    pub fn fit(x: &Array2<f64>, y: &[u8], cfg: &ForestConfig) -> Result<Self> {
        let (m, p) = x.dim();
        if m == 0 || y.len() != m {
            return Err(Error::InvalidArgument("classification forest needs aligned, non-empty data".into()));
        }
        let mtry = cfg.mtry.unwrap_or(((p as f64).sqrt()).ceil() as usize).clamp(1, p);
        let min_node = cfg.min_node.max(1);
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng::stream(cfg.seed, &[b as u64]);
                let (draws, inbag) = bootstrap(m, &mut rng);
                let split = |s: &[usize]| gini_split(x, y, s, p, mtry, min_node, &mut rng);
                grow(
                    draws,
                    inbag,
                    split,
                    |s, var| x[[s, var]],
                    |s| s.iter().map(|&i| y[i] as f64).sum::<f64>() / s.len() as f64,
                )
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.trees.iter().map(|t| *t.leaf(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// Out-of-bag class-1 probability for every training row.
    pub fn oob_predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        (0..x.nrows())
            .map(|i| {
                let (sum, count) = self
                    .trees
                    .iter()
                    .filter(|t| t.inbag[i] == 0)
                    .fold((0.0, 0usize), |(s, c), t| (s + *t.leaf(x.row(i)), c + 1));
                if count == 0 {
                    Err(Error::NeverOutOfBag(i))
                } else {
                    Ok(sum / count as f64)
                }
            })
            .collect()
    }
}

fn gini_split(
    x: &Array2<f64>,
    y: &[u8],
    samples: &[usize],
    p: usize,
    mtry: usize,
    min_node: usize,
    rng: &mut Rng,
) -> Option<(usize, f64)> {
    let n = samples.len();
    if n < 2 * min_node {
        return None;
    }
    let total_pos: usize = samples.iter().map(|&s| y[s] as usize).sum();
    if total_pos == 0 || total_pos == n {
        return None;
    }
    let impurity = |pos: usize, cnt: usize| {
        let q = pos as f64 / cnt as f64;
        cnt as f64 * 2.0 * q * (1.0 - q)
    };
    let parent = impurity(total_pos, n);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(n);
    for var in pick_vars(p, mtry, rng) {
        sorted.clear();
        sorted.extend(samples.iter().map(|&s| (x[[s, var]], y[s])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0usize;
        for k in 0..n - 1 {
            left_pos += sorted[k].1 as usize;
            let nl = k + 1;
            if sorted[k].0 == sorted[k + 1].0 || nl < min_node || n - nl < min_node {
                continue;
            }
            let score = impurity(left_pos, nl) + impurity(total_pos - left_pos, n - nl);
            if best.is_none_or(|b| score < b.0) {
                best = Some((score, var, 0.5 * (sorted[k].0 + sorted[k + 1].0)));
            }
        }
    }
    best.filter(|b| b.0 < parent - 1e-12).map(|b| (b.1, b.2))
}

/// Random survival forest with log-rank splitting.
#[derive(Debug, Clone)]
pub struct SurvivalForest {
    trees: Vec<Tree<CumulativeHazard>>,
    n_train: usize,
}

impl SurvivalForest {
    /// Fits on the rows `rows` of `x`, with `time`/`event` indexed by row.
    /// OOB positions refer to the order of `rows`.
    pub fn fit(
        x: &Array2<f64>,
        rows: &[usize],
        time: &[f64],
        event: &[bool],
        cfg: &ForestConfig,
    ) -> Result<Self> {
        let m = rows.len();
        let p = x.ncols();
        if m == 0 {
            return Err(Error::InvalidArgument("survival forest needs at least one row".into()));
        }
        if !rows.iter().any(|&r| event[r]) {
            return Err(Error::NoEvents);
        }
        let mtry = cfg
            .mtry
            .unwrap_or(((p as f64) / 3.0).ceil() as usize)
            .clamp(1, p);
        let min_node = cfg.min_node.max(1);
        let t_of = |s: usize| time[rows[s]];
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng::stream(cfg.seed, &[b as u64]);
                let (mut draws, inbag) = bootstrap(m, &mut rng);
                draws.sort_by(|&a, &b| t_of(a).total_cmp(&t_of(b)));
                let split = |s: &[usize]| {
                    logrank_split(x, rows, time, event, s, p, mtry, min_node, cfg.nsplit, &mut rng)
                };
                grow(
                    draws,
                    inbag,
                    split,
                    |s, var| x[[rows[s], var]],
                    |s| {
                        let pairs: Vec<(f64, bool)> =
                            s.iter().map(|&k| (time[rows[k]], event[rows[k]])).collect();
                        CumulativeHazard::from_sorted(&pairs)
                    },
                )
            })
            .collect();
        Ok(Self { trees, n_train: m })
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Average number of terminal nodes per tree.
    pub fn mean_leaves(&self) -> f64 {
        self.trees.iter().map(|t| t.leaves.len()).sum::<usize>() as f64 / self.trees.len() as f64
    }

    /// Ensemble cumulative hazard at `t` (left limit if `left`). With
    /// `oob = Some(pos)` only trees not trained on position `pos` vote.
    pub fn cumulative_hazard(
        &self,
        row: ArrayView1<'_, f64>,
        t: f64,
        left: bool,
        oob: Option<usize>,
    ) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for tree in &self.trees {
            if oob.is_some_and(|pos| tree.inbag[pos] > 0) {
                continue;
            }
            let leaf = tree.leaf(row);
            sum += if left { leaf.eval_left(t) } else { leaf.eval(t) };
            count += 1;
        }
        if count == 0 {
            return Err(Error::NeverOutOfBag(oob.unwrap_or(0)));
        }
        Ok(sum / count as f64)
    }

    /// `exp(-H(t))`.
    pub fn survival(&self, row: ArrayView1<'_, f64>, t: f64, left: bool, oob: Option<usize>) -> Result<f64> {
        Ok((-self.cumulative_hazard(row, t, left, oob)?).exp())
    }
}

#[allow(clippy::too_many_arguments)]
fn logrank_split(
    x: &Array2<f64>,
    rows: &[usize],
    time: &[f64],
    event: &[bool],
    samples: &[usize],
    p: usize,
    mtry: usize,
    min_node: usize,
    nsplit: usize,
    rng: &mut Rng,
) -> Option<(usize, f64)> {
    let n = samples.len();
    if n < 2 * min_node || !samples.iter().any(|&s| event[rows[s]]) {
        return None;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    let mut left = vec![false; n];
    for var in pick_vars(p, mtry, rng) {
        let mut values: Vec<f64> = samples.iter().map(|&s| x[[rows[s], var]]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        if values.len() < 2 {
            continue;
        }
        let gaps = values.len() - 1;
        let mut cut_idx: Vec<usize> = (0..gaps).collect();
        if nsplit > 0 && gaps > nsplit {
            let (chosen, _) = cut_idx.partial_shuffle(rng, nsplit);
            cut_idx = chosen.to_vec();
        }
        for k in cut_idx {
            let threshold = 0.5 * (values[k] + values[k + 1]);
            let mut nl = 0;
            for (flag, &s) in left.iter_mut().zip(samples) {
                *flag = x[[rows[s], var]] <= threshold;
                nl += *flag as usize;
            }
            if nl < min_node || n - nl < min_node {
                continue;
            }
            if let Some(stat) = logrank_statistic(samples, &left, |s| time[rows[s]], |s| event[rows[s]]) {
                if best.is_none_or(|b| stat > b.0) {
                    best = Some((stat, var, threshold));
                }
            }
        }
    }
    best.map(|b| (b.1, b.2))
}

/// Standardized two-sample log-rank statistic (squared). `samples` must be
/// sorted by time; `left[k]` flags group membership of `samples[k]`.
pub fn logrank_statistic(
    samples: &[usize],
    left: &[bool],
    time: impl Fn(usize) -> f64,
    event: impl Fn(usize) -> bool,
) -> Option<f64> {
    let mut at_risk = 0.0;
    let mut at_risk_left = 0.0;
    let mut num = 0.0;
    let mut var = 0.0;
    let mut k = samples.len();
    while k > 0 {
        let t = time(samples[k - 1]);
        let mut d = 0.0;
        let mut d_left = 0.0;
        while k > 0 && time(samples[k - 1]) == t {
            k -= 1;
            let s = samples[k];
            at_risk += 1.0;
            if left[k] {
                at_risk_left += 1.0;
            }
            if event(s) {
                d += 1.0;
                if left[k] {
                    d_left += 1.0;
                }
            }
        }
        if d > 0.0 {
            let frac = at_risk_left / at_risk;
            num += d_left - d * frac;
            if at_risk > 1.0 {
                var += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
            }
        }
    }
    (var > 0.0).then(|| num * num / var)
}

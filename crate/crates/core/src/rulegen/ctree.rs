use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Comparator, Condition, Rule};
use crate::data::CovariateKind;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CTreeConfig {
    pub alpha: f64,
    pub bonferroni: bool,
    pub max_depth: usize,
    pub max_trees: usize,
    /// Minimum total weight in a node for it to be split.
    pub min_split: f64,
    /// Minimum total weight in each child.
    pub min_bucket: f64,
    pub learn_rate: f64,
    pub subsample_fraction: f64,
    pub permutations: usize,
}

impl Default for CTreeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            bonferroni: false,
            max_depth: 5,
            max_trees: 500,
            min_split: 20.0,
            min_bucket: 10.0,
            learn_rate: 0.01,
            subsample_fraction: 0.5,
            permutations: 999,
        }
    }
}

impl CTreeConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidArgument(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad("subsample_fraction must lie in (0, 1]");
        }
        if self.permutations == 0 {
            return bad("permutations must be positive");
        }
        if !(self.learn_rate >= 0.0) {
            return bad("learn_rate must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum CNode {
    Leaf(f64),
    Split {
        var: usize,
        threshold: f64,
        binary: bool,
        left: usize,
        right: usize,
    },
}

/// A fitted conditional inference tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CTree {
    nodes: Vec<CNode>,
}

impl CTree {
    pub fn is_root_only(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Covariate used at the root split, if any.
    pub fn root_split(&self) -> Option<usize> {
        match self.nodes[0] {
            CNode::Split { var, .. } => Some(var),
            CNode::Leaf(_) => None,
        }
    }

    pub fn predict(&self, row: ndarray::ArrayView1<'_, f64>) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                CNode::Leaf(v) => return v,
                CNode::Split { var, threshold, left, right, .. } => {
                    k = if row[var] <= threshold { left } else { right };
                }
            }
        }
    }

    /// One rule per non-root node, in depth-first (left before right) order.
    pub fn rules(&self) -> Vec<Rule> {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<Condition>)> = vec![(0, Vec::new())];
        while let Some((k, path)) = stack.pop() {
            if !path.is_empty() {
                out.push(Rule::new(path.clone()).expect("non-empty path"));
            }
            if let CNode::Split { var, threshold, binary, left, right } = self.nodes[k] {
                let (lc, rc) = if binary {
                    (
                        Condition::new(var, Comparator::Eq, 0.0),
                        Condition::new(var, Comparator::Eq, 1.0),
                    )
                } else {
                    (
                        Condition::new(var, Comparator::Le, threshold),
                        Condition::new(var, Comparator::Gt, threshold),
                    )
                };
                let mut rp = path.clone();
                rp.push(rc);
                let mut lp = path;
                lp.push(lc);
                stack.push((right, rp));
                stack.push((left, lp));
            }
        }
        out
    }
}

/// Result of the per-covariate permutation test at a node.
#[derive(Debug, Clone, Copy)]
struct Association {
    var: usize,
    p_value: f64,
    z: f64,
}

/// Observed statistic of one covariate and its running exceedance count.
struct Tally {
    z: f64,
    limit: f64,
    exceed: usize,
    active: bool,
}

/// Monte Carlo permutation p-values for `T_j = sum_i x_ij u_i` (`sum u = 0`),
/// one per column; `None` for constant columns.
///
/// Case weights count as replicated observations: the observed statistic is
/// standardized with the weight total as sample size (`syy_w` is
/// `sum w (y - ybar)^2`), then referred to the permutation distribution of the
/// standardized statistic over the rows. With unit weights this is the plain
/// permutation test.
///
/// Each draw permutes `u` once and scores every column against it. A column
/// stops counting once `(1 + exceedances)/(B + 1)` exceeds `give_up`; past
/// that point it cannot be selected, so the split decision is the same as
/// with all `B` draws.
#[allow(clippy::too_many_arguments)]
fn permutation_tests(
    columns: &[Vec<f64>],
    w: &[f64],
    u: &[f64],
    sum_u2: f64,
    syy_w: f64,
    b: usize,
    give_up: f64,
    rng: &mut Rng,
) -> Vec<Option<(f64, f64)>> {
    let n = u.len();
    let sw: f64 = w.iter().sum();
    let u_abs: f64 = u.iter().map(|v| v.abs()).sum();
    let mut tallies: Vec<Option<Tally>> = columns
        .iter()
        .map(|x| {
            let mean_x = x.iter().sum::<f64>() / n as f64;
            let ss_x: f64 = x.iter().map(|v| (v - mean_x).powi(2)).sum();
            if ss_x <= 0.0 || n < 2 || sw <= 1.0 {
                return None;
            }
            let mean_xw = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
            let ssx_w: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mean_xw).powi(2)).sum();
            let t_obs: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
            let z = t_obs.abs() / (ssx_w * syy_w / (sw - 1.0)).sqrt();
            // permuted T is compared on the unit-count scale
            let var_t = ss_x * sum_u2 / (n as f64 - 1.0);
            let slack = 1e-9 * u_abs * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            Some(Tally { z, limit: z * var_t.sqrt() - slack, exceed: 0, active: true })
        })
        .collect();

    let mut scratch: Vec<f64> = u.to_vec();
    let mut active = tallies.iter().flatten().count();
    for _ in 0..b {
        if active == 0 {
            break;
        }
        scratch.shuffle(rng);
        for (x, t) in columns.iter().zip(tallies.iter_mut()) {
            let Some(t) = t.as_mut().filter(|t| t.active) else { continue };
            let t_perm: f64 = x.iter().zip(&scratch).map(|(a, b)| a * b).sum();
            if t_perm.abs() >= t.limit {
                t.exceed += 1;
                if (1 + t.exceed) as f64 / (b + 1) as f64 > give_up {
                    t.active = false;
                    active -= 1;
                }
            }
        }
    }
    tallies
        .into_iter()
        .map(|t| t.map(|t| ((1 + t.exceed) as f64 / (b + 1) as f64, t.z)))
        .collect()
}

struct Grower<'a> {
    x: &'a Array2<f64>,
    kinds: &'a [CovariateKind],
    y: &'a [f64],
    w: &'a [f64],
    cfg: &'a CTreeConfig,
    seed: u64,
    nodes: Vec<CNode>,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let sw: f64 = rows.iter().map(|&i| self.w[i]).sum();
        if sw > 0.0 {
            rows.iter().map(|&i| self.w[i] * self.y[i]).sum::<f64>() / sw
        } else {
            0.0
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, path_id: u64) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(CNode::Leaf(self.leaf_value(&rows)));
        let Some((var, threshold)) = self.find_split(&rows, depth, path_id) else {
            return slot;
        };
        let binary = self.kinds[var] == CovariateKind::Binary;
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[[i, var]] <= threshold);
        let left = self.grow(l, depth + 1, path_id * 2);
        let right = self.grow(r, depth + 1, path_id * 2 + 1);
        self.nodes[slot] = CNode::Split { var, threshold, binary, left, right };
        slot
    }

    fn find_split(&self, rows: &[usize], depth: usize, path_id: u64) -> Option<(usize, f64)> {
        let cfg = self.cfg;
        if depth >= cfg.max_depth || rows.len() < 2 {
            return None;
        }
        let sw: f64 = rows.iter().map(|&i| self.w[i]).sum();
        if sw < cfg.min_split || sw <= 0.0 {
            return None;
        }
        let ybar = rows.iter().map(|&i| self.w[i] * self.y[i]).sum::<f64>() / sw;
        let u: Vec<f64> = rows.iter().map(|&i| self.w[i] * (self.y[i] - ybar)).collect();
        let sum_u2: f64 = u.iter().map(|v| v * v).sum();
        let syy_w: f64 = rows.iter().map(|&i| self.w[i] * (self.y[i] - ybar).powi(2)).sum();
        let wv: Vec<f64> = rows.iter().map(|&i| self.w[i]).collect();
        if sum_u2 <= 0.0 {
            return None;
        }
        let p = self.x.ncols();
        let columns: Vec<Vec<f64>> = (0..p)
            .map(|j| rows.iter().map(|&i| self.x[[i, j]]).collect())
            .collect();
        let tested = columns
            .iter()
            .filter(|c| c.iter().any(|&v| v != c[0]))
            .count();
        if tested == 0 {
            return None;
        }
        let m = if cfg.bonferroni { tested as f64 } else { 1.0 };
        let give_up = cfg.alpha / m;
        let mut rng = rng::stream(self.seed, &[path_id]);
        let tests: Vec<Association> = permutation_tests(&columns, &wv, &u, sum_u2, syy_w, cfg.permutations, give_up, &mut rng)
            .into_iter()
            .enumerate()
            .filter_map(|(j, r)| r.map(|(pv, z)| Association { var: j, p_value: (pv * m).min(1.0), z }))
            .collect();
        let best = tests.into_iter().min_by(|a, b| {
            a.p_value
                .total_cmp(&b.p_value)
                .then(b.z.total_cmp(&a.z))
                .then(a.var.cmp(&b.var))
        })?;
        if best.p_value > cfg.alpha {
            return None;
        }
        self.best_cut(&columns[best.var], &u, rows).map(|t| (best.var, t))
    }

    /// Cutpoint maximizing the standardized two-sample statistic
    /// `|sum_left u| / sqrt(w_L w_R)` with both children at least
    /// `min_bucket` in weight.
    fn best_cut(&self, xv: &[f64], u: &[f64], rows: &[usize]) -> Option<f64> {
        let n = xv.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| xv[a].total_cmp(&xv[b]));
        let total_w: f64 = rows.iter().map(|&i| self.w[i]).sum();
        let mut s_left = 0.0;
        let mut w_left = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for k in 0..n - 1 {
            let o = order[k];
            s_left += u[o];
            w_left += self.w[rows[o]];
            let (a, b) = (xv[o], xv[order[k + 1]]);
            if a == b {
                continue;
            }
            if w_left < self.cfg.min_bucket || total_w - w_left < self.cfg.min_bucket {
                continue;
            }
            let stat = s_left.abs() / (w_left * (total_w - w_left)).sqrt();
            if best.is_none_or(|bb| stat > bb.0) {
                best = Some((stat, 0.5 * (a + b)));
            }
        }
        best.map(|b| b.1)
    }
}

/// Fits one conditional inference tree on `rows` of `x` to response `y` with
/// case weights `w` (both indexed by row of `x`).
pub fn fit_ctree(
    x: &Array2<f64>,
    kinds: &[CovariateKind],
    rows: &[usize],
    y: &[f64],
    w: &[f64],
    cfg: &CTreeConfig,
    seed: u64,
) -> CTree {
    let mut g = Grower { x, kinds, y, w, cfg, seed, nodes: Vec::new() };
    g.grow(rows.to_vec(), 0, 1);
    CTree { nodes: g.nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn mixed(n: usize, seed: u64) -> (Array2<f64>, Vec<CovariateKind>) {
        let mut r = rng::stream(seed, &[]);
        let x = Array2::from_shape_fn((n, 10), |(_, j)| {
            let z: f64 = StandardNormal.sample(&mut r);
            if j < 5 {
                (z > 0.0) as u8 as f64
            } else {
                z
            }
        });
        let kinds = (0..10)
            .map(|j| if j < 5 { CovariateKind::Binary } else { CovariateKind::Continuous })
            .collect();
        (x, kinds)
    }

    #[test]
    fn constant_response_gives_root_only() {
        let (x, kinds) = mixed(200, 1);
        let rows: Vec<usize> = (0..200).collect();
        let t = fit_ctree(&x, &kinds, &rows, &[1.0; 200], &[1.0; 200], &CTreeConfig::default(), 3);
        assert!(t.is_root_only());
        assert!(t.rules().is_empty());
    }

    #[test]
    fn perfect_association_splits_on_that_covariate() {
        let (x, kinds) = mixed(200, 2);
        let rows: Vec<usize> = (0..200).collect();
        let y: Vec<f64> = (0..200).map(|i| x[[i, 0]]).collect();
        let t = fit_ctree(&x, &kinds, &rows, &y, &[1.0; 200], &CTreeConfig::default(), 4);
        assert_eq!(t.root_split(), Some(0));
        let rules = t.rules();
        assert_eq!(rules[0].conditions(), &[Condition::new(0, Comparator::Eq, 0.0)]);
        assert_eq!(t.predict(x.row(0)), x[[0, 0]]);
    }

    #[test]
    fn continuous_split_rules_are_intervals() {
        let (x, kinds) = mixed(300, 3);
        let rows: Vec<usize> = (0..300).collect();
        let y: Vec<f64> = (0..300).map(|i| (x[[i, 6]] > 0.3) as u8 as f64 * 2.0).collect();
        let cfg = CTreeConfig { max_depth: 1, ..Default::default() };
        let t = fit_ctree(&x, &kinds, &rows, &y, &[1.0; 300], &cfg, 5);
        assert_eq!(t.root_split(), Some(6));
        let rules = t.rules();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].conditions()[0].op, Comparator::Le);
        assert_eq!(rules[1].conditions()[0].op, Comparator::Gt);
        assert!((rules[0].conditions()[0].value - 0.3).abs() < 0.1);
    }

    #[test]
    fn early_stopping_preserves_p_value_ordering() {
        let mut r = rng::stream(6, &[]);
        let x: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut r)).collect();
        let mut u: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let m = u.iter().sum::<f64>() / 100.0;
        u.iter_mut().for_each(|v| *v -= m);
        let s2: f64 = u.iter().map(|v| v * v).sum();
        let ones = vec![1.0; 100];
        let (p, z) = permutation_tests(&[x.clone()], &ones, &u, s2, s2, 999, 0.05, &mut rng::stream(1, &[]))[0].unwrap();
        assert_eq!(p, 1.0 / 1000.0);
        assert!(z > 5.0);
    }

    #[test]
    fn weights_act_as_frequencies() {
        let mut r = rng::stream(8, &[]);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let e: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 0.15 * a + b).collect();
        let z_at = |c: f64| {
            let w = vec![c; n];
            let ybar = y.iter().sum::<f64>() / n as f64;
            let u: Vec<f64> = y.iter().map(|v| c * (v - ybar)).collect();
            let s2: f64 = u.iter().map(|v| v * v).sum();
            let syy: f64 = y.iter().map(|v| c * (v - ybar).powi(2)).sum();
            permutation_tests(&[x.clone()], &w, &u, s2, syy, 199, 1.0, &mut rng::stream(2, &[]))[0].unwrap()
        };
        let (p1, z1) = z_at(1.0);
        let (p4, z4) = z_at(4.0);
        let ratio = z4 / z1;
        assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
        assert!(p4 <= p1);
    }
}

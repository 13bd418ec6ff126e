//! Weighted Lasso on binary rule indicators by cyclic coordinate descent.
//!
//! Objective for a fixed `lambda`, with `n` complete cases:
//!
//! ```text
//! (1/n) * sum_i w_i (y_i - b0 - sum_k b_k r_ik)^2 + lambda * sum_k |b_k|
//! ```
//!
//! The intercept is unpenalized. Columns are stored sparsely as the rows where
//! the rule holds.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label};
use crate::rulegen::Candidate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub n_lambda: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub lambda_ratio: f64,
    pub folds: usize,
    pub tol: f64,
    /// Cap on coordinate sweeps per grid point.
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { n_lambda: 100, lambda_ratio: 1e-3, folds: 10, tol: 1e-7, max_sweeps: 100_000 }
    }
}

/// Binary design matrix of rule indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    cols: Vec<Vec<u32>>,
}

impl Design {
    pub fn from_columns(n: usize, cols: Vec<Vec<u32>>) -> Self {
        Self { n, cols }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, k: usize) -> &[u32] {
        &self.cols[k]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.k()));
        for (k, col) in self.cols.iter().enumerate() {
            for &i in col {
                m[[i as usize, k]] = 1.0;
            }
        }
        m
    }

    /// Restriction to `rows` (ascending), renumbered from zero.
    pub fn subset(&self, rows: &[usize]) -> Design {
        let mut map = vec![u32::MAX; self.n];
        for (new, &old) in rows.iter().enumerate() {
            map[old] = new as u32;
        }
        let cols = self
            .cols
            .iter()
            .map(|c| c.iter().filter_map(|&i| Some(map[i as usize]).filter(|&v| v != u32::MAX)).collect())
            .collect();
        Design { n: rows.len(), cols }
    }

    pub fn predict(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![intercept; self.n];
        for (k, col) in self.cols.iter().enumerate() {
            if beta[k] != 0.0 {
                for &i in col {
                    out[i as usize] += beta[k];
                }
            }
        }
        out
    }
}

/// Evaluates each candidate on the complete-case rows of `x`.
pub fn build_design(candidates: &[Candidate], x: &Array2<f64>) -> Result<Design> {
    if candidates.len() < 2 {
        return Err(Error::InsufficientCandidates(candidates.len()));
    }
    let cols = candidates
        .iter()
        .map(|c| {
            for cond in c.rule.conditions() {
                if cond.var >= x.ncols() {
                    return Err(Error::CovariateOutOfRange { index: cond.var, width: x.ncols() });
                }
            }
            Ok((0..x.nrows())
                .filter(|&i| c.rule.holds(x.row(i)))
                .map(|i| i as u32)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(Design { n: x.nrows(), cols })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
}

fn check_inputs(design: &Design, y: &[f64], w: &[f64]) -> Result<()> {
    if y.len() != design.n || w.len() != design.n {
        return Err(Error::InvalidArgument("response and weights must match the design rows".into()));
    }
    if design.k() < 2 {
        return Err(Error::InsufficientCandidates(design.k()));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument("total weight must be positive".into()));
    }
    Ok(())
}

fn weighted_mean(y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
}

/// Smallest penalty at which every rule coefficient is zero.
pub fn lambda_max(design: &Design, y: &[f64], w: &[f64]) -> f64 {
    let ybar = weighted_mean(y, w);
    let n = design.n as f64;
    design
        .cols
        .iter()
        .map(|col| (2.0 / n * col.iter().map(|&i| w[i as usize] * (y[i as usize] - ybar)).sum::<f64>()).abs())
        .fold(0.0, f64::max)
}

pub fn lambda_grid(lmax: f64, cfg: &LassoConfig) -> Vec<f64> {
    let m = cfg.n_lambda.max(1);
    if m == 1 || lmax <= 0.0 {
        return vec![lmax; m];
    }
    let lo = (lmax * cfg.lambda_ratio).ln();
    let hi = lmax.ln();
    (0..m)
        .map(|j| {
            if j == 0 {
                lmax
            } else {
                (hi + (lo - hi) * j as f64 / (m - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn objective(design: &Design, y: &[f64], w: &[f64], intercept: f64, beta: &[f64], lambda: f64) -> f64 {
    let pred = design.predict(intercept, beta);
    let loss: f64 = (0..design.n).map(|i| w[i] * (y[i] - pred[i]).powi(2)).sum::<f64>() / design.n as f64;
    loss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Coordinate descent with covariance updates: `g` holds
/// `(1/n) sum_{i in col} w_i r_i` for every column, and Gram rows are built
/// only for columns that have ever moved.
struct Solver<'a> {
    design: &'a Design,
    w: &'a [f64],
    /// `(1/n) sum_{i in col} w_i`
    z: Vec<f64>,
    sw: f64,
    g: Vec<f64>,
    /// `sum_i w_i r_i`
    wr: f64,
    gram: Vec<Option<Vec<f64>>>,
    intercept: f64,
    beta: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(design: &'a Design, y: &[f64], w: &'a [f64]) -> Self {
        let n = design.n as f64;
        let z = design
            .cols
            .iter()
            .map(|c| c.iter().map(|&i| w[i as usize]).sum::<f64>() / n)
            .collect();
        let intercept = weighted_mean(y, w);
        let wr: Vec<f64> = y.iter().zip(w).map(|(v, w)| w * (v - intercept)).collect();
        let g = design
            .cols
            .iter()
            .map(|c| c.iter().map(|&i| wr[i as usize]).sum::<f64>() / n)
            .collect();
        Self {
            design,
            w,
            z,
            sw: w.iter().sum(),
            g,
            wr: wr.iter().sum(),
            gram: vec![None; design.k()],
            intercept,
            beta: vec![0.0; design.k()],
        }
    }

    fn ensure_gram_row(&mut self, k: usize) {
        if self.gram[k].is_none() {
            let n = self.design.n as f64;
            let mut wk = vec![0.0; self.design.n];
            for &i in &self.design.cols[k] {
                wk[i as usize] = self.w[i as usize];
            }
            let row = self
                .design
                .cols
                .iter()
                .map(|c| c.iter().map(|&i| wk[i as usize]).sum::<f64>() / n)
                .collect();
            self.gram[k] = Some(row);
        }
    }

    fn update(&mut self, k: usize, lambda: f64) -> f64 {
        if self.z[k] <= 0.0 {
            return 0.0;
        }
        let old = self.beta[k];
        let rho = self.g[k] + self.z[k] * old;
        let half = 0.5 * lambda;
        let new = if rho > half {
            (rho - half) / self.z[k]
        } else if rho < -half {
            (rho + half) / self.z[k]
        } else {
            0.0
        };
        if new != old {
            let d = new - old;
            self.ensure_gram_row(k);
            let row = self.gram[k].as_ref().unwrap();
            self.g.iter_mut().zip(row).for_each(|(g, c)| *g -= d * c);
            self.wr -= d * self.z[k] * self.design.n as f64;
            self.beta[k] = new;
        }
        (new - old).abs()
    }

    fn update_intercept(&mut self) -> f64 {
        let shift = self.wr / self.sw;
        if shift != 0.0 {
            self.intercept += shift;
            self.g.iter_mut().zip(&self.z).for_each(|(g, z)| *g -= shift * z);
            self.wr -= shift * self.sw;
        }
        shift.abs()
    }

    fn sweep(&mut self, lambda: f64, only_active: bool) -> f64 {
        let mut delta = 0.0f64;
        for k in 0..self.beta.len() {
            if only_active && self.beta[k] == 0.0 {
                continue;
            }
            delta = delta.max(self.update(k, lambda));
        }
        delta.max(self.update_intercept())
    }

    /// Full sweeps alternate with sweeps over the active set until a full
    /// sweep moves no coefficient by more than `tol`.
    fn solve(&mut self, lambda: f64, cfg: &LassoConfig, lambda_index: usize) -> Result<()> {
        let mut sweeps = 0;
        loop {
            let d = self.sweep(lambda, false);
            sweeps += 1;
            if d < cfg.tol {
                return Ok(());
            }
            loop {
                if sweeps >= cfg.max_sweeps {
                    return Err(Error::NonConvergence { lambda_index });
                }
                let d = self.sweep(lambda, true);
                sweeps += 1;
                if d < cfg.tol {
                    break;
                }
            }
        }
    }
}

/// Warm-started path over `lambdas` (normally descending).
pub fn fit_lasso_path(design: &Design, y: &[f64], w: &[f64], lambdas: &[f64], cfg: &LassoConfig) -> Result<LassoPath> {
    check_inputs(design, y, w)?;
    let mut s = Solver::new(design, y, w);
    let mut path = LassoPath { lambdas: lambdas.to_vec(), intercepts: Vec::new(), betas: Vec::new() };
    for (j, &lambda) in lambdas.iter().enumerate() {
        s.solve(lambda, cfg, j)?;
        path.intercepts.push(s.intercept);
        path.betas.push(s.beta.clone());
    }
    Ok(path)
}

/// Path on the default grid derived from the data.
pub fn fit_lasso_default(design: &Design, y: &[f64], w: &[f64], cfg: &LassoConfig) -> Result<LassoPath> {
    check_inputs(design, y, w)?;
    let grid = lambda_grid(lambda_max(design, y, w), cfg);
    fit_lasso_path(design, y, w, &grid, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub path: LassoPath,
    pub cv_error: Vec<f64>,
    pub best: usize,
}

impl CvResult {
    pub fn lambda(&self) -> f64 {
        self.path.lambdas[self.best]
    }

    pub fn intercept(&self) -> f64 {
        self.path.intercepts[self.best]
    }

    pub fn beta(&self) -> &[f64] {
        &self.path.betas[self.best]
    }
}

/// K-fold cross-validation over the full-data grid; the penalty with the
/// smallest held-out weighted squared error is chosen (ties go to the larger
/// penalty).
pub fn cross_validate(design: &Design, y: &[f64], w: &[f64], cfg: &LassoConfig, seed: u64) -> Result<CvResult> {
    check_inputs(design, y, w)?;
    let n = design.n;
    if cfg.folds < 2 || n < cfg.folds {
        return Err(Error::TooFewForFolds { cases: n, folds: cfg.folds });
    }
    let grid = lambda_grid(lambda_max(design, y, w), cfg);
    let path = fit_lasso_path(design, y, w, &grid, cfg)?;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[label::CV]));
    let mut fold = vec![0usize; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % cfg.folds;
    }

    let per_fold: Vec<Vec<f64>> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            let dt = design.subset(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let wt: Vec<f64> = train.iter().map(|&i| w[i]).collect();
            let mut errs = vec![0.0; grid.len()];
            if wt.iter().sum::<f64>() <= 0.0 {
                return Ok(errs);
            }
            let mut s = Solver::new(&dt, &yt, &wt);
            let dv = design.subset(&test);
            for (j, &lambda) in grid.iter().enumerate() {
                s.solve(lambda, cfg, j)?;
                let pred = dv.predict(s.intercept, &s.beta);
                errs[j] = test
                    .iter()
                    .zip(&pred)
                    .map(|(&i, p)| w[i] * (y[i] - p).powi(2))
                    .sum();
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;

    let sw: f64 = w.iter().sum();
    let cv_error: Vec<f64> = (0..grid.len())
        .map(|j| per_fold.iter().map(|e| e[j]).sum::<f64>() / sw)
        .collect();
    let mut best = 0;
    for j in 1..cv_error.len() {
        if cv_error[j] < cv_error[best] {
            best = j;
        }
    }
    Ok(CvResult { path, cv_error, best })
}

/// Closed-form weighted least squares with intercept, for checking the
/// unpenalized end of the path. Returns `(intercept, beta)`.
pub fn weighted_least_squares(x: &Array2<f64>, y: &[f64], w: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (n, k) = x.dim();
    let p = k + 1;
    let mut a = Array2::<f64>::zeros((p, p));
    let mut b = Array1::<f64>::zeros(p);
    for i in 0..n {
        let row: Vec<f64> = std::iter::once(1.0).chain(x.row(i).iter().copied()).collect();
        for r in 0..p {
            b[r] += w[i] * row[r] * y[i];
            for c in 0..p {
                a[[r, c]] += w[i] * row[r] * row[c];
            }
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]].abs() < 1e-12 {
            return None;
        }
        for c in 0..p {
            a.swap([col, c], [piv, c]);
        }
        b.swap(col, piv);
        for r in col + 1..p {
            let f = a[[r, col]] / a[[col, col]];
            for c in col..p {
                a[[r, c]] -= f * a[[col, c]];
            }
            b[r] -= f * b[col];
        }
    }
    let mut sol = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = (r + 1..p).map(|c| a[[r, c]] * sol[c]).sum();
        sol[r] = (b[r] - s) / a[[r, r]];
    }
    Some((sol[0], sol[1..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulegen::{Comparator, Condition, Rule};
    use ndarray::array;

    fn toy() -> (Design, Vec<f64>, Vec<f64>) {
        let x = array![
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 1.0],
            [0.0, 0.0, 0.0],
        ];
        let cols = (0..3)
            .map(|k| (0..8).filter(|&i| x[[i, k]] == 1.0).map(|i| i as u32).collect())
            .collect();
        let y = vec![1.3, 0.2, 0.9, 0.5, 1.1, -0.4, 1.0, 0.1];
        let w = vec![1.0, 2.0, 0.5, 1.5, 1.0, 0.7, 1.2, 0.9];
        (Design::from_columns(8, cols), y, w)
    }

    #[test]
    fn build_design_requires_two_candidates() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let c = |v| Candidate { rule: Rule::new(vec![Condition::new(v, Comparator::Eq, 1.0)]).unwrap(), support: 0.5 };
        let d = build_design(&[c(0), c(1)], &x).unwrap();
        assert_eq!(d.to_dense(), array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(build_design(&[c(0)], &x), Err(Error::InsufficientCandidates(1))));
    }

    #[test]
    fn null_model_at_lambda_max() {
        let (d, y, w) = toy();
        let lm = lambda_max(&d, &y, &w);
        let p = fit_lasso_path(&d, &y, &w, &[lm, 2.0 * lm], &LassoConfig::default()).unwrap();
        for j in 0..2 {
            assert!(p.betas[j].iter().all(|&b| b == 0.0));
            assert!((p.intercepts[j] - weighted_mean(&y, &w)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_penalty_matches_normal_equations() {
        let (d, y, w) = toy();
        let cfg = LassoConfig { tol: 1e-13, ..Default::default() };
        let p = fit_lasso_path(&d, &y, &w, &[0.0], &cfg).unwrap();
        let (b0, b) = weighted_least_squares(&d.to_dense(), &y, &w).unwrap();
        assert!((p.intercepts[0] - b0).abs() < 1e-8);
        for k in 0..3 {
            assert!((p.betas[0][k] - b[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn kkt_along_default_path() {
        let (d, y, w) = toy();
        let p = fit_lasso_default(&d, &y, &w, &LassoConfig::default()).unwrap();
        for (j, &lambda) in p.lambdas.iter().enumerate() {
            let pred = d.predict(p.intercepts[j], &p.betas[j]);
            for k in 0..d.k() {
                let g = 2.0 / 8.0 * d.column(k).iter().map(|&i| w[i as usize] * (y[i as usize] - pred[i as usize])).sum::<f64>();
                let b = p.betas[j][k];
                if b == 0.0 {
                    assert!(g.abs() <= lambda + 1e-6);
                } else {
                    assert!((g - lambda * b.signum()).abs() <= 1e-6, "lambda {lambda} k {k} g {g}");
                }
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn sweeps_never_increase_objective(
            rows in proptest::collection::vec(
                (proptest::collection::vec(proptest::bool::ANY, 4), -2.0f64..2.0, 0.1f64..3.0),
                12..40,
            ),
            frac in 0.0f64..1.0,
        ) {
            let n = rows.len();
            let cols = (0..4)
                .map(|k| (0..n).filter(|&i| rows[i].0[k]).map(|i| i as u32).collect())
                .collect();
            let d = Design::from_columns(n, cols);
            let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let w: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let lambda = frac * lambda_max(&d, &y, &w);
            let mut s = Solver::new(&d, &y, &w);
            let mut prev = objective(&d, &y, &w, s.intercept, &s.beta, lambda);
            for _ in 0..50 {
                s.sweep(lambda, false);
                let cur = objective(&d, &y, &w, s.intercept, &s.beta, lambda);
                proptest::prop_assert!(cur <= prev + 1e-12 * prev.abs().max(1.0));
                prev = cur;
            }
        }
    }

    #[test]
    fn cv_is_deterministic_and_recovers_planted_rule() {
        let n = 300;
        let mut r = rng::stream(5, &[]);
        use rand::Rng as _;
        let cols: Vec<Vec<u32>> = (0..6)
            .map(|_| (0..n as u32).filter(|_| r.random_bool(0.4)).collect())
            .collect();
        let d = Design::from_columns(n, cols);
        let dense = d.to_dense();
        let y: Vec<f64> = (0..n).map(|i| 0.2 + 0.6 * dense[[i, 2]] + 0.1 * (r.random::<f64>() - 0.5)).collect();
        let w = vec![1.0; n];
        let a = cross_validate(&d, &y, &w, &LassoConfig::default(), 9).unwrap();
        let b = cross_validate(&d, &y, &w, &LassoConfig::default(), 9).unwrap();
        assert_eq!(a, b);
        assert!((a.beta()[2] - 0.6).abs() < 0.05);
        assert!(matches!(
            cross_validate(&d.subset(&[0, 1, 2]), &y[..3], &w[..3], &LassoConfig::default(), 0),
            Err(Error::TooFewForFolds { .. })
        ));
    }
}

//! Nuisance estimation: propensity score, arm-wise and pooled survival at the
//! horizon, and the censoring survival function `G(c | X, A)`.

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Horizon};
use crate::error::{Error, Result};
use crate::forest::{ClassificationForest, ForestConfig, SurvivalForest};
use crate::km::KaplanMeier;
use crate::rng::{derive_seed, label};
use crate::simgen::{CensoringParam, TruthTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMethod {
    Forest,
    Oracle,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalMethod {
    Forest,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringMethod {
    Km,
    Forest,
    Oracle,
}

/// How the treatment-agnostic survival `S(t*|X)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PooledMethod {
    /// A survival forest fit on all subjects ignoring treatment.
    Forest,
    /// `e*S_1 + (1-e)*S_0` from the arm-wise fits.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub propensity: PropensityMethod,
    pub survival: SurvivalMethod,
    pub censoring: CensoringMethod,
    pub pooled: PooledMethod,
    pub trees: usize,
    pub min_node: usize,
    pub nsplit: usize,
    /// Propensity estimates are clamped to `[clamp, 1 - clamp]`.
    pub clamp: f64,
    /// Censoring survival is floored here before inversion.
    pub censor_floor: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            propensity: PropensityMethod::Forest,
            survival: SurvivalMethod::Forest,
            censoring: CensoringMethod::Km,
            pooled: PooledMethod::Forest,
            trees: 500,
            min_node: 15,
            nsplit: 10,
            clamp: 0.025,
            censor_floor: 0.01,
        }
    }
}

impl NuisanceConfig {
    fn forest(&self, seed: u64, part: u64) -> ForestConfig {
        ForestConfig {
            n_trees: self.trees,
            mtry: None,
            min_node: self.min_node,
            nsplit: self.nsplit,
            seed: derive_seed(seed, &[label::NUISANCE, part]),
        }
    }
}

/// Which outcome-regression nuisances a fit must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Needs {
    pub arms: bool,
    pub pooled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Estimated,
    Oracle,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmSubset {
    Control,
    Treated,
    Pooled,
}

/// Evaluable censoring survival `G(c | X_i, A_i)` for training subjects.
#[derive(Debug, Clone)]
pub enum CensorModel {
    Uncensored,
    Km(KaplanMeier),
    Forest {
        forest: SurvivalForest,
        predictors: Array2<f64>,
    },
    Oracle {
        param: CensoringParam,
        covariates: Array2<f64>,
    },
}

impl CensorModel {
    /// `G(c)` for training subject `i`, or the left limit `G(c-)`.
    pub fn survival(&self, i: usize, c: f64, left: bool) -> Result<f64> {
        Ok(match self {
            CensorModel::Uncensored => 1.0,
            CensorModel::Km(km) => {
                if left {
                    km.eval_left(c)
                } else {
                    km.eval(c)
                }
            }
            CensorModel::Forest { forest, predictors } => {
                forest.survival(predictors.row(i), c, left, Some(i))?
            }
            CensorModel::Oracle { param, covariates } => {
                param.survival(c, covariates.row(i).as_slice().expect("row-major"))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub e_hat: Vec<f64>,
    pub s1_hat: Option<Vec<f64>>,
    pub s0_hat: Option<Vec<f64>>,
    pub s_pool_hat: Option<Vec<f64>>,
    pub censor_model: CensorModel,
    pub censor_floor: f64,
    pub provenance: Provenance,
}

impl NuisanceFit {
    pub fn s1(&self) -> Result<&[f64]> {
        self.s1_hat.as_deref().ok_or(Error::MissingNuisance("S_1"))
    }

    pub fn s0(&self) -> Result<&[f64]> {
        self.s0_hat.as_deref().ok_or(Error::MissingNuisance("S_0"))
    }

    pub fn s_pool(&self) -> Result<&[f64]> {
        self.s_pool_hat.as_deref().ok_or(Error::MissingNuisance("pooled S"))
    }
}

fn require_both_arms(d: &Dataset) -> Result<()> {
    let treated = d.treatment().iter().filter(|&&a| a == 1).count();
    if treated == 0 || treated == d.n() {
        return Err(Error::SingleArm);
    }
    Ok(())
}

/// Out-of-bag random-forest propensity, clamped to `[clamp, 1 - clamp]`.
pub fn fit_propensity_forest(d: &Dataset, cfg: &NuisanceConfig, seed: u64) -> Result<Vec<f64>> {
    require_both_arms(d)?;
    let forest = ClassificationForest::fit(d.covariates(), d.treatment(), &cfg.forest(seed, label::PROPENSITY))?;
    let e = forest.oob_predict(d.covariates())?;
    Ok(e.into_iter().map(|v| v.clamp(cfg.clamp, 1.0 - cfg.clamp)).collect())
}

/// Survival at `t` from a random survival forest fit on one arm (or all
/// subjects). Subjects in the fitted subset receive out-of-bag predictions.
pub fn fit_survival_forest(
    d: &Dataset,
    t: f64,
    arm: ArmSubset,
    cfg: &NuisanceConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let (rows, part): (Vec<usize>, u64) = match arm {
        ArmSubset::Pooled => ((0..d.n()).collect(), label::SURV_POOLED),
        ArmSubset::Control => (arm_rows(d, 0), label::SURV_ARM0),
        ArmSubset::Treated => (arm_rows(d, 1), label::SURV_ARM1),
    };
    if rows.is_empty() {
        return Err(Error::SingleArm);
    }
    let event: Vec<bool> = d.event().iter().map(|&e| e == 1).collect();
    let forest = SurvivalForest::fit(d.covariates(), &rows, d.time(), &event, &cfg.forest(seed, part))?;
    let mut pos = vec![None; d.n()];
    for (k, &r) in rows.iter().enumerate() {
        pos[r] = Some(k);
    }
    (0..d.n())
        .into_par_iter()
        .map(|i| forest.survival(d.row(i), t, false, pos[i]))
        .collect()
}

fn arm_rows(d: &Dataset, a: u8) -> Vec<usize> {
    (0..d.n()).filter(|&i| d.treatment()[i] == a).collect()
}

/// Kaplan–Meier on the flipped indicator; `G == 1` when nothing is censored.
pub fn fit_censoring_km(d: &Dataset) -> KaplanMeier {
    KaplanMeier::censoring_curve(d.time(), d.event())
}

/// Survival forest for the censoring time with `(X, A)` as predictors.
pub fn fit_censoring_forest(d: &Dataset, cfg: &NuisanceConfig, seed: u64) -> Result<CensorModel> {
    let (n, p) = d.covariates().dim();
    let mut predictors = Array2::zeros((n, p + 1));
    predictors.slice_mut(s![.., ..p]).assign(d.covariates());
    for i in 0..n {
        predictors[[i, p]] = d.treatment()[i] as f64;
    }
    let censored: Vec<bool> = d.event().iter().map(|&e| e == 0).collect();
    let rows: Vec<usize> = (0..n).collect();
    let forest = SurvivalForest::fit(&predictors, &rows, d.time(), &censored, &cfg.forest(seed, label::CENSORING))?;
    Ok(CensorModel::Forest { forest, predictors })
}

/// Plug-in truth from a simulation, for testing the downstream steps.
pub fn oracle_nuisance(
    truth: &TruthTable,
    censoring: Option<CensoringParam>,
    covariates: &Array2<f64>,
    censor_floor: f64,
) -> NuisanceFit {
    let s_pool = (0..truth.len())
        .map(|i| truth.e[i] * truth.s1[i] + (1.0 - truth.e[i]) * truth.s0[i])
        .collect();
    NuisanceFit {
        e_hat: truth.e.clone(),
        s1_hat: Some(truth.s1.clone()),
        s0_hat: Some(truth.s0.clone()),
        s_pool_hat: Some(s_pool),
        censor_model: match censoring {
            Some(CensoringParam::Never) | None => CensorModel::Uncensored,
            Some(param) => CensorModel::Oracle { param, covariates: covariates.clone() },
        },
        censor_floor,
        provenance: Provenance::Oracle,
    }
}

/// Oracle quantities available for a simulated training set.
#[derive(Debug, Clone)]
pub struct OracleInputs {
    pub truth: TruthTable,
    pub censoring: Option<CensoringParam>,
}

/// Runs every configured nuisance estimator; oracle components are taken
/// from `oracle`.
pub fn estimate_nuisance(
    d: &Dataset,
    h: Horizon,
    cfg: &NuisanceConfig,
    needs: Needs,
    oracle: Option<&OracleInputs>,
    seed: u64,
) -> Result<NuisanceFit> {
    require_both_arms(d)?;
    let t = h.t_star();
    let need_oracle = || {
        oracle.ok_or_else(|| Error::InvalidArgument("oracle nuisance requested without truth".into()))
    };
    if let Some(o) = oracle {
        if o.truth.len() != d.n() {
            return Err(Error::SchemaMismatch(format!(
                "truth has {} rows, data has {}",
                o.truth.len(),
                d.n()
            )));
        }
    }
    let mut estimated = false;
    let mut from_truth = false;

    let e_hat = match cfg.propensity {
        PropensityMethod::Forest => {
            estimated = true;
            fit_propensity_forest(d, cfg, seed)?
        }
        PropensityMethod::Oracle => {
            from_truth = true;
            need_oracle()?
                .truth
                .e
                .iter()
                .map(|v| v.clamp(cfg.clamp, 1.0 - cfg.clamp))
                .collect()
        }
        PropensityMethod::Constant(v) => {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("constant propensity {v} outside (0,1)")));
            }
            vec![v.clamp(cfg.clamp, 1.0 - cfg.clamp); d.n()]
        }
    };

    let needs_arms = needs.arms || (needs.pooled && cfg.pooled == PooledMethod::Mixture);
    let (s1_hat, s0_hat) = if needs_arms {
        match cfg.survival {
            SurvivalMethod::Forest => {
                estimated = true;
                (
                    Some(fit_survival_forest(d, t, ArmSubset::Treated, cfg, seed)?),
                    Some(fit_survival_forest(d, t, ArmSubset::Control, cfg, seed)?),
                )
            }
            SurvivalMethod::Oracle => {
                from_truth = true;
                let o = need_oracle()?;
                (Some(o.truth.s1.clone()), Some(o.truth.s0.clone()))
            }
        }
    } else {
        (None, None)
    };

    let s_pool_hat = if needs.pooled {
        Some(match (cfg.survival, cfg.pooled) {
            (SurvivalMethod::Forest, PooledMethod::Forest) => {
                fit_survival_forest(d, t, ArmSubset::Pooled, cfg, seed)?
            }
            (SurvivalMethod::Oracle, PooledMethod::Forest) => {
                let o = &need_oracle()?.truth;
                (0..d.n()).map(|i| o.e[i] * o.s1[i] + (1.0 - o.e[i]) * o.s0[i]).collect()
            }
            (_, PooledMethod::Mixture) => {
                let s1 = s1_hat.as_ref().expect("arm fits computed");
                let s0 = s0_hat.as_ref().expect("arm fits computed");
                (0..d.n()).map(|i| e_hat[i] * s1[i] + (1.0 - e_hat[i]) * s0[i]).collect()
            }
        })
    } else {
        None
    };

    let censor_model = match cfg.censoring {
        CensoringMethod::Km => CensorModel::Km(fit_censoring_km(d)),
        CensoringMethod::Forest => {
            estimated = true;
            if d.event().iter().all(|&e| e == 1) {
                CensorModel::Uncensored
            } else {
                fit_censoring_forest(d, cfg, seed)?
            }
        }
        CensoringMethod::Oracle => {
            from_truth = true;
            match need_oracle()?.censoring {
                Some(CensoringParam::Never) => CensorModel::Uncensored,
                Some(param) => CensorModel::Oracle { param, covariates: d.covariates().clone() },
                None => {
                    return Err(Error::InvalidArgument(
                        "oracle censoring requested but the censoring parameter is unknown".into(),
                    ))
                }
            }
        }
    };

    let provenance = match (estimated, from_truth) {
        (_, false) => Provenance::Estimated,
        (false, true) => Provenance::Oracle,
        (true, true) => Provenance::Mixed,
    };
    Ok(NuisanceFit {
        e_hat,
        s1_hat,
        s0_hat,
        s_pool_hat,
        censor_model,
        censor_floor: cfg.censor_floor,
        provenance,
    })
}

//! End-to-end fit: nuisances, pseudo outcomes, candidate rules, penalized
//! selection.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Horizon, HorizonRule};
use crate::error::{Error, Result};
use crate::lasso::{build_design, cross_validate, LassoConfig};
use crate::model::{name_rule, rule_importance, ImportanceDivisor, RuleModel, SelectedRule};
use crate::nuisance::{estimate_nuisance, NuisanceConfig, NuisanceFit, OracleInputs};
use crate::pseudo::{build_pseudo, Learner, PseudoSample};
use crate::rng::{derive_seed, label};
use crate::rulegen::{generate_candidates, CTreeConfig, Candidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learner: Learner,
    pub horizon: HorizonRule,
    pub nuisance: NuisanceConfig,
    pub ctree: CTreeConfig,
    pub lasso: LassoConfig,
    pub importance: ImportanceDivisor,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learner: Learner::Dea,
            horizon: HorizonRule::PooledMedian,
            nuisance: NuisanceConfig::default(),
            ctree: CTreeConfig::default(),
            lasso: LassoConfig::default(),
            importance: ImportanceDivisor::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: RuleModel,
    pub horizon: Horizon,
    pub samples: Vec<PseudoSample>,
    /// Dataset rows of the complete cases.
    pub complete_rows: Vec<usize>,
    pub candidates: Vec<Candidate>,
}

impl FitOutput {
    /// Complete-case covariate rows the candidates were generated on.
    pub fn complete_covariates(&self, d: &Dataset) -> Array2<f64> {
        d.covariates().select(Axis(0), &self.complete_rows)
    }
}

pub fn fit(d: &Dataset, cfg: &FitConfig, oracle: Option<&OracleInputs>, seed: u64) -> Result<FitOutput> {
    let h = cfg.horizon.resolve(d)?;
    let nf = estimate_nuisance(d, h, &cfg.nuisance, cfg.learner.needs(), oracle, seed)?;
    fit_with_nuisance(d, h, &nf, cfg, seed)
}

/// Steps after nuisance estimation; lets several learners share one fit.
pub fn fit_with_nuisance(d: &Dataset, h: Horizon, nf: &NuisanceFit, cfg: &FitConfig, seed: u64) -> Result<FitOutput> {
    let samples = build_pseudo(d, h, nf, cfg.learner)?;
    let (candidates, boost) = generate_candidates(
        d.covariates(),
        d.kinds(),
        &samples,
        &cfg.ctree,
        derive_seed(seed, &[label::RULES]),
    )?;
    let rows = boost.rows;
    let xc = d.covariates().select(Axis(0), &rows);
    let design = build_design(&candidates, &xc)?;
    let y: Vec<f64> = rows.iter().map(|&i| samples[i].y_star).collect();
    let w: Vec<f64> = rows.iter().map(|&i| samples[i].weight()).collect();
    if rows.len() < cfg.lasso.folds {
        return Err(Error::TooFewForFolds { cases: rows.len(), folds: cfg.lasso.folds });
    }
    let cv = cross_validate(&design, &y, &w, &cfg.lasso, derive_seed(seed, &[label::CV]))?;

    let rules = candidates
        .iter()
        .zip(cv.beta())
        .filter(|(_, &b)| b != 0.0)
        .map(|(c, &b)| SelectedRule {
            conditions: name_rule(&c.rule, d.names()),
            coefficient: b,
            support: c.support,
            importance: rule_importance(b, c.support),
        })
        .collect();
    let model = RuleModel {
        learner: cfg.learner,
        horizon: h.t_star(),
        lambda: cv.lambda(),
        intercept: cv.intercept(),
        rules,
        candidates_count: candidates.len(),
        n_complete: rows.len(),
        covariates: d.names().to_vec(),
        config: serde_json::json!({ "fit": cfg, "seed": seed }),
    };
    Ok(FitOutput { model, horizon: h, samples, complete_rows: rows, candidates })
}

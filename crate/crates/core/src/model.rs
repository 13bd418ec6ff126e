//! The fitted sparse rule model, its importance scores and JSON persistence.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudo::Learner;
use crate::rulegen::{Comparator, Condition, Rule};

/// Divisor `c` in the covariate importance `V_j = sum_l R_l / c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceDivisor {
    /// Number of selected rules that mention the covariate.
    #[default]
    RulesWithCovariate,
    /// Number of covariates mentioned by the rule.
    CovariatesInRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCondition {
    pub var: String,
    pub op: Comparator,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRule {
    pub conditions: Vec<NamedCondition>,
    pub coefficient: f64,
    pub support: f64,
    pub importance: f64,
}

impl SelectedRule {
    pub fn describe(&self) -> String {
        self.conditions
            .iter()
            .map(|c| format!("{} {} {}", c.var, c.op.symbol(), c.value))
            .collect::<Vec<_>>()
            .join(" & ")
    }

    pub fn covariates(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.conditions.iter().map(|c| c.var.as_str()).collect();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleModel {
    pub learner: Learner,
    pub horizon: f64,
    pub lambda: f64,
    pub intercept: f64,
    pub rules: Vec<SelectedRule>,
    pub candidates_count: usize,
    pub n_complete: usize,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// `R = |beta| * sqrt(s (1 - s))`.
pub fn rule_importance(coefficient: f64, support: f64) -> f64 {
    coefficient.abs() * (support * (1.0 - support)).max(0.0).sqrt()
}

pub fn name_rule(rule: &Rule, names: &[String]) -> Vec<NamedCondition> {
    rule.conditions()
        .iter()
        .map(|c| NamedCondition { var: names[c.var].clone(), op: c.op, value: c.value })
        .collect()
}

impl RuleModel {
    /// Number of selected subgroups.
    pub fn l(&self) -> usize {
        self.rules.len()
    }

    /// Resolves rule covariates against `names`, failing if any is absent.
    pub fn compile(&self, names: &[String]) -> Result<Vec<(Rule, f64)>> {
        let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        self.rules
            .iter()
            .map(|r| {
                let conds = r
                    .conditions
                    .iter()
                    .map(|c| {
                        index
                            .get(c.var.as_str())
                            .map(|&j| Condition::new(j, c.op, c.value))
                            .ok_or_else(|| {
                                Error::SchemaMismatch(format!("model uses covariate `{}` absent from the data", c.var))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((Rule::new(conds)?, r.coefficient))
            })
            .collect()
    }

    pub fn predict(&self, x: &Array2<f64>, names: &[String]) -> Result<Vec<f64>> {
        if names.len() != x.ncols() {
            return Err(Error::InvalidArgument("covariate names do not match the matrix width".into()));
        }
        let compiled = self.compile(names)?;
        Ok((0..x.nrows())
            .map(|i| {
                let row = x.row(i);
                compiled
                    .iter()
                    .filter(|(r, _)| r.holds(row))
                    .fold(self.intercept, |acc, (_, b)| acc + b)
            })
            .collect())
    }

    pub fn importance(&self, divisor: ImportanceDivisor) -> ImportanceReport {
        let mut rules: Vec<RuleImportance> = self
            .rules
            .iter()
            .map(|r| RuleImportance {
                rule: r.describe(),
                coefficient: r.coefficient,
                support: r.support,
                importance: rule_importance(r.coefficient, r.support),
            })
            .collect();
        rules.sort_by(|a, b| b.importance.total_cmp(&a.importance));

        let mut covs: Vec<CovariateImportance> = Vec::new();
        for name in &self.covariates {
            let containing: Vec<&SelectedRule> =
                self.rules.iter().filter(|r| r.covariates().contains(&name.as_str())).collect();
            if containing.is_empty() {
                continue;
            }
            let v = match divisor {
                ImportanceDivisor::RulesWithCovariate => {
                    containing.iter().map(|r| rule_importance(r.coefficient, r.support)).sum::<f64>()
                        / containing.len() as f64
                }
                ImportanceDivisor::CovariatesInRule => containing
                    .iter()
                    .map(|r| rule_importance(r.coefficient, r.support) / r.covariates().len() as f64)
                    .sum(),
            };
            covs.push(CovariateImportance { covariate: name.clone(), importance: v, rules: containing.len() });
        }
        covs.sort_by(|a, b| b.importance.total_cmp(&a.importance));
        ImportanceReport { divisor, rules, covariates: covs }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let m: RuleModel = serde_json::from_str(&s)?;
        for r in &m.rules {
            if r.conditions.is_empty() {
                return Err(Error::EmptyRule);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleImportance {
    pub rule: String,
    pub coefficient: f64,
    pub support: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateImportance {
    pub covariate: String,
    pub importance: f64,
    /// Selected rules mentioning the covariate.
    pub rules: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub divisor: ImportanceDivisor,
    pub rules: Vec<RuleImportance>,
    pub covariates: Vec<CovariateImportance>,
}

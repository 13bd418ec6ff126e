//! Interpretable heterogeneous treatment effect estimation for right-censored
//! survival outcomes.
//!
//! A fit has three stages. Nuisance models (propensity, outcome survival,
//! censoring survival) turn each complete case into a pseudo treatment effect
//! and a weight. Boosted conditional inference trees on those pseudo outcomes
//! yield candidate subgroups as conjunctive rules. A weighted Lasso with
//! cross-validation keeps a sparse set of rules, and the fitted model predicts
//! the effect on the survival-probability scale at a fixed horizon.

pub mod data;
pub mod error;
pub mod expr;
pub mod forest;
pub mod km;
pub mod lasso;
pub mod metrics;
pub mod model;
pub mod nuisance;
pub mod pipeline;
pub mod pseudo;
pub mod rng;
pub mod rulegen;
pub mod simgen;
pub mod study;

pub use data::{CovariateKind, CsvSchema, Dataset, Horizon, HorizonRule, HorizonStatus};
pub use error::{Error, ErrorKind, Result};
pub use model::{ImportanceDivisor, RuleModel};
pub use pipeline::{fit, fit_with_nuisance, FitConfig, FitOutput};
pub use pseudo::Learner;
pub use study::{run_study, StudyConfig, StudyResults};

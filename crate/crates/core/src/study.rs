//! Simulation study harness: repeated training sets from one scenario, fits
//! for one or more learners, evaluation on a shared test set.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, ErrorKind, Result};
use crate::metrics::{evaluate_predictions, selection_frequency, PredictionMetrics, SelectionSummary};
use crate::model::RuleModel;
use crate::nuisance::{estimate_nuisance, OracleInputs};
use crate::pipeline::{fit_with_nuisance, FitConfig, FitOutput};
use crate::pseudo::{combined_needs, Learner};
use crate::rng::{self, derive_seed, label};
use crate::simgen::{
    calibrate_censoring, gen_covariates, simulate, true_cate, CensoringParam, CensoringSpec, ScenarioId,
    SimScenario, Setting,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub scenario: ScenarioId,
    pub setting: Setting,
    pub censoring: CensoringSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub learners: Vec<Learner>,
    /// Its `learner` field is replaced by each entry of `learners`.
    pub fit: FitConfig,
    /// Bin count for the binned RMSE.
    pub bins: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioId::S1,
            setting: Setting::Independent,
            censoring: CensoringSpec::IndependentExponential { target_rate: 0.3 },
            n_train: 1000,
            n_test: 10_000,
            replicates: 100,
            learners: vec![Learner::Dr, Learner::Dea, Learner::R],
            fit: FitConfig::default(),
            bins: 50,
            seed: 1,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.learners.is_empty() {
            return bad("at least one learner is required");
        }
        if self.n_train < 2 || self.n_test < self.bins.max(2) {
            return bad("training set needs 2 rows and the test set at least one per bin");
        }
        self.fit.ctree.validate()
    }

    pub fn scenario(&self) -> SimScenario {
        SimScenario::builtin(self.scenario, self.setting, self.censoring, self.seed)
    }

    pub fn replicate_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, &[label::REPLICATE, r as u64])
    }
}

#[derive(Debug, Clone)]
pub struct LearnerRun {
    pub learner: Learner,
    pub outcome: std::result::Result<(FitOutput, PredictionMetrics), (ErrorKind, String)>,
}

impl LearnerRun {
    pub fn model(&self) -> Option<&RuleModel> {
        self.outcome.as_ref().ok().map(|(f, _)| &f.model)
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub horizon: Option<f64>,
    pub train: Option<Dataset>,
    pub runs: Vec<LearnerRun>,
}

#[derive(Debug, Clone)]
pub struct StudyResults {
    pub config: StudyConfig,
    pub censoring: CensoringParam,
    pub replicates: Vec<ReplicateResult>,
}

fn failed(learners: &[Learner], e: &Error) -> Vec<LearnerRun> {
    learners
        .iter()
        .map(|&learner| LearnerRun { learner, outcome: Err((e.kind(), e.to_string())) })
        .collect()
}

fn run_replicate(
    cfg: &StudyConfig,
    scn: &SimScenario,
    censoring: &CensoringParam,
    x_test: &Array2<f64>,
    r: usize,
) -> ReplicateResult {
    let seed = cfg.replicate_seed(r);
    let mut res = ReplicateResult { index: r, seed, horizon: None, train: None, runs: Vec::new() };
    let trial = match simulate(scn, cfg.n_train, censoring, seed) {
        Ok(t) => t,
        Err(e) => {
            res.runs = failed(&cfg.learners, &e);
            return res;
        }
    };
    let d = trial.dataset;
    let prep = cfg.fit.horizon.resolve(&d).and_then(|h| {
        let oracle = OracleInputs { truth: true_cate(d.covariates(), scn, h.t_star()), censoring: Some(*censoring) };
        let nf = estimate_nuisance(&d, h, &cfg.fit.nuisance, combined_needs(&cfg.learners), Some(&oracle), seed)?;
        Ok((h, nf))
    });
    let (h, nf) = match prep {
        Ok(v) => v,
        Err(e) => {
            res.runs = failed(&cfg.learners, &e);
            res.train = Some(d);
            return res;
        }
    };
    res.horizon = Some(h.t_star());
    let tau_test = true_cate(x_test, scn, h.t_star()).tau;
    for &learner in &cfg.learners {
        let fc = FitConfig { learner, ..cfg.fit.clone() };
        let outcome = fit_with_nuisance(&d, h, &nf, &fc, seed)
            .and_then(|f| {
                let pred = f.model.predict(x_test, d.names())?;
                let m = evaluate_predictions(&pred, &tau_test, cfg.bins)?;
                Ok((f, m))
            })
            .map_err(|e| (e.kind(), e.to_string()));
        res.runs.push(LearnerRun { learner, outcome });
    }
    res.train = Some(d);
    res
}

/// Runs every replicate; individual failures are recorded, not fatal.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResults> {
    cfg.validate()?;
    let scn = cfg.scenario();
    let censoring = calibrate_censoring(&scn, cfg.censoring.target_rate(), derive_seed(cfg.seed, &[label::CALIBRATION]))?;
    let x_test = gen_covariates(cfg.setting, cfg.n_test, &mut rng::stream(cfg.seed, &[label::TEST_SET]));
    let replicates = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &scn, &censoring, &x_test, r))
        .collect();
    Ok(StudyResults { config: cfg.clone(), censoring, replicates })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyManifest {
    pub config: StudyConfig,
    pub censoring: CensoringParam,
    pub replicate_seeds: Vec<u64>,
    pub failures: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StudyResults {
    pub fn runs_for(&self, learner: Learner) -> impl Iterator<Item = &LearnerRun> {
        self.replicates
            .iter()
            .flat_map(move |r| r.runs.iter().filter(move |l| l.learner == learner))
    }

    pub fn selection(&self, learner: Learner) -> SelectionSummary {
        let models: Vec<Option<&RuleModel>> = self.runs_for(learner).map(|r| r.model()).collect();
        let names: Vec<String> = (1..=self.config.setting.p()).map(|j| format!("X{j}")).collect();
        selection_frequency(&models, &names)
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("replicate,learner,seed,status,horizon,bias,binned_rmse,spearman,selected,candidates,reason\n");
        for r in &self.replicates {
            for run in &r.runs {
                match &run.outcome {
                    Ok((f, m)) => writeln!(
                        s,
                        "{},{},{},ok,{},{},{},{},{},{},",
                        r.index,
                        run.learner,
                        r.seed,
                        opt(r.horizon),
                        m.bias,
                        m.binned_rmse,
                        opt(m.spearman),
                        f.model.l(),
                        f.model.candidates_count
                    ),
                    Err((kind, msg)) => writeln!(
                        s,
                        "{},{},{},{:?},{},,,,0,,\"{}\"",
                        r.index,
                        run.learner,
                        r.seed,
                        kind,
                        opt(r.horizon),
                        msg.replace('"', "'")
                    ),
                }
                .expect("write to string");
            }
        }
        s
    }

    pub fn selection_csv(&self) -> String {
        let mut s = String::from("learner,covariate,count,replicates\n");
        for &l in &self.config.learners {
            let sel = self.selection(l);
            for j in 1..=self.config.setting.p() {
                let name = format!("X{j}");
                writeln!(s, "{l},{name},{},{}", sel.count(&name), sel.replicates).expect("write to string");
            }
        }
        s
    }

    pub fn table1_csv(&self) -> String {
        let mut s = String::from("learner,median_selected,min_selected,max_selected,failed,replicates\n");
        for &l in &self.config.learners {
            let sel = self.selection(l);
            let failed = self.runs_for(l).filter(|r| r.outcome.is_err()).count();
            writeln!(s, "{l},{},{},{},{failed},{}", sel.median_l(), sel.min_l(), sel.max_l(), sel.replicates)
                .expect("write to string");
        }
        s
    }

    pub fn manifest(&self) -> StudyManifest {
        let failures = self
            .replicates
            .iter()
            .flat_map(|r| {
                r.runs.iter().filter_map(move |run| {
                    run.outcome
                        .as_ref()
                        .err()
                        .map(|(_, msg)| format!("replicate {} {}: {msg}", r.index, run.learner))
                })
            })
            .collect();
        StudyManifest {
            config: self.config.clone(),
            censoring: self.censoring,
            replicate_seeds: self.replicates.iter().map(|r| r.seed).collect(),
            failures,
        }
    }

    /// Writes `metrics.csv`, `selection.csv`, `table1.csv`, `manifest.json`
    /// and one model per successful fit under `models/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("models"))?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        std::fs::write(dir.join("selection.csv"), self.selection_csv())?;
        std::fs::write(dir.join("table1.csv"), self.table1_csv())?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest())? + "\n")?;
        for r in &self.replicates {
            for run in &r.runs {
                if let Some(m) = run.model() {
                    m.save(&dir.join("models").join(format!("rep{:03}_{}.json", r.index, run.learner)))?;
                }
            }
        }
        Ok(())
    }
}

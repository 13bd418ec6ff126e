use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use survrule::data::{load_csv, read_covariates, CsvSchema, HorizonRule};
use survrule::metrics::evaluate_predictions;
use survrule::model::{ImportanceDivisor, RuleModel};
use survrule::nuisance::{CensoringMethod, OracleInputs, PropensityMethod, SurvivalMethod};
use survrule::simgen::{calibrate_censoring, simulate, true_cate, CensoringParam, CensoringSpec, ScenarioId, SimScenario, Setting, TruthTable};
use survrule::study::StudyConfig;
use survrule::{fit, Error, ErrorKind, FitConfig, Learner, Result};

#[derive(Parser)]
#[command(name = "survrule", version, about = "Rule-based treatment effect subgroups for survival outcomes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SURVRULE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated trial with its true effects.
    Simulate(SimulateArgs),
    /// Fit a rule model on a CSV dataset.
    Fit(FitArgs),
    /// Predict effects for new subjects.
    Predict(PredictArgs),
    /// Compare predictions with true effects.
    Evaluate(EvaluateArgs),
    /// Print the subgroup importance table of a model.
    Report(ReportArgs),
    /// Run a replicated simulation study.
    Replicate(ReplicateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CensoringKind {
    Independent,
    Covariate,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "s1")]
    scenario: ScenarioId,
    #[arg(long, default_value = "independent")]
    setting: Setting,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Target censoring fraction; 0 disables censoring.
    #[arg(long, default_value_t = 0.0)]
    censor_rate: f64,
    #[arg(long, value_enum, default_value = "independent")]
    censoring: CensoringKind,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    b1: f64,
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    b2: f64,
    /// Horizon for the truth table: `auto`, `arm0`, `arm1` or a time.
    #[arg(long, default_value = "auto")]
    horizon: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NuisanceMode {
    Estimate,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum CensorArg {
    Km,
    Forest,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum DivisorArg {
    /// Number of selected rules mentioning the covariate.
    Rules,
    /// Number of covariates in each rule.
    Length,
}

impl From<DivisorArg> for ImportanceDivisor {
    fn from(d: DivisorArg) -> Self {
        match d {
            DivisorArg::Rules => ImportanceDivisor::RulesWithCovariate,
            DivisorArg::Length => ImportanceDivisor::CovariatesInRule,
        }
    }
}

/// Fit options shared by `fit` and `replicate`; unset flags keep the
/// configured value.
#[derive(Args)]
struct FitFlags {
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    bonferroni: bool,
    #[arg(long)]
    max_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learn_rate: Option<f64>,
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    min_split: Option<f64>,
    #[arg(long)]
    min_bucket: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Trees per nuisance forest.
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    min_node: Option<usize>,
    #[arg(long, value_enum)]
    censoring_model: Option<CensorArg>,
    #[arg(long, value_enum)]
    importance: Option<DivisorArg>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON column-role schema for the CSV.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "dea")]
    learner: Learner,
    /// Base fit configuration (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: FitFlags,
    #[arg(long, value_enum, default_value = "estimate")]
    nuisance: NuisanceMode,
    /// Truth table for oracle nuisances.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Simulation manifest supplying the true censoring distribution.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "id")]
    id: String,
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "rules")]
    importance: DivisorArg,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Study configuration (JSON); supersedes the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "s1")]
    scenario: ScenarioId,
    #[arg(long, default_value = "independent")]
    setting: Setting,
    #[arg(long, default_value_t = 0.3)]
    censor_rate: f64,
    #[arg(long, value_enum, default_value = "independent")]
    censoring: CensoringKind,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 10_000)]
    n_test: usize,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "dr,dea,r")]
    learners: Vec<Learner>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[command(flatten)]
    flags: FitFlags,
    #[arg(long)]
    oracle_nuisance: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_horizon(s: &str) -> Result<HorizonRule> {
    match s {
        "auto" => Ok(HorizonRule::PooledMedian),
        "arm0" => Ok(HorizonRule::ArmMedian(0)),
        "arm1" => Ok(HorizonRule::ArmMedian(1)),
        v => v
            .parse::<f64>()
            .map(HorizonRule::Fixed)
            .map_err(|_| Error::InvalidArgument(format!("horizon must be auto, arm0, arm1 or a number, got `{v}`"))),
    }
}

fn censoring_spec(kind: CensoringKind, rate: f64, b1: f64, b2: f64) -> CensoringSpec {
    if rate == 0.0 {
        return CensoringSpec::None;
    }
    match kind {
        CensoringKind::Independent => CensoringSpec::IndependentExponential { target_rate: rate },
        CensoringKind::Covariate => CensoringSpec::CovariateDependent { b1, b2, target_rate: rate },
    }
}

fn apply_flags(cfg: &mut FitConfig, f: &FitFlags) -> Result<()> {
    if let Some(h) = &f.horizon {
        cfg.horizon = parse_horizon(h)?;
    }
    let ct = &mut cfg.ctree;
    if let Some(v) = f.alpha {
        ct.alpha = v;
    }
    if f.bonferroni {
        ct.bonferroni = true;
    }
    if let Some(v) = f.max_trees {
        ct.max_trees = v;
    }
    if let Some(v) = f.max_depth {
        ct.max_depth = v;
    }
    if let Some(v) = f.learn_rate {
        ct.learn_rate = v;
    }
    if let Some(v) = f.subsample {
        ct.subsample_fraction = v;
    }
    if let Some(v) = f.permutations {
        ct.permutations = v;
    }
    if let Some(v) = f.min_split {
        ct.min_split = v;
    }
    if let Some(v) = f.min_bucket {
        ct.min_bucket = v;
    }
    if let Some(v) = f.folds {
        cfg.lasso.folds = v;
    }
    if let Some(v) = f.trees {
        cfg.nuisance.trees = v;
    }
    if let Some(v) = f.min_node {
        cfg.nuisance.min_node = v;
    }
    if let Some(c) = f.censoring_model {
        cfg.nuisance.censoring = match c {
            CensorArg::Km => CensoringMethod::Km,
            CensorArg::Forest => CensoringMethod::Forest,
            CensorArg::Oracle => CensoringMethod::Oracle,
        };
    }
    if let Some(d) = f.importance {
        cfg.importance = d.into();
    }
    cfg.ctree.validate()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct SimManifest {
    scenario: ScenarioId,
    setting: Setting,
    n: usize,
    seed: u64,
    censoring_spec: CensoringSpec,
    censoring: CensoringParam,
    observed_censoring_rate: f64,
    horizon: f64,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = censoring_spec(a.censoring, a.censor_rate, a.b1, a.b2);
    let scn = SimScenario::builtin(a.scenario, a.setting, spec, a.seed);
    let param = calibrate_censoring(&scn, spec.target_rate(), a.seed)?;
    let trial = simulate(&scn, a.n, &param, a.seed)?;
    let d = &trial.dataset;
    let h = parse_horizon(&a.horizon)?.resolve(d)?;
    let truth = true_cate(d.covariates(), &scn, h.t_star());
    fs::create_dir_all(&a.out)?;
    d.save_csv(&a.out.join("data.csv"))?;
    truth.write_csv(d.ids(), fs::File::create(a.out.join("truth.csv"))?)?;
    let censored = d.event().iter().filter(|&&e| e == 0).count() as f64 / d.n() as f64;
    write_json(
        &a.out.join("manifest.json"),
        &SimManifest {
            scenario: a.scenario,
            setting: a.setting,
            n: a.n,
            seed: a.seed,
            censoring_spec: spec,
            censoring: param,
            observed_censoring_rate: censored,
            horizon: h.t_star(),
        },
    )
}

fn read_truth(path: &Path) -> Result<TruthTable> {
    TruthTable::read_csv(fs::File::open(path)?)
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let schema = match &a.schema {
        Some(p) => CsvSchema::from_json_file(p)?,
        None => CsvSchema::default(),
    };
    let d = load_csv(&a.data, &schema)?;
    let mut cfg: FitConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => FitConfig::default(),
    };
    cfg.learner = a.learner;
    apply_flags(&mut cfg, &a.flags)?;

    let oracle = match a.nuisance {
        NuisanceMode::Estimate => None,
        NuisanceMode::Oracle => {
            let path = a
                .truth
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--nuisance oracle needs --truth".into()))?;
            let censoring = match &a.manifest {
                Some(m) => {
                    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(m)?)?;
                    Some(serde_json::from_value::<CensoringParam>(v["censoring"].clone())?)
                }
                None => None,
            };
            cfg.nuisance.propensity = PropensityMethod::Oracle;
            cfg.nuisance.survival = SurvivalMethod::Oracle;
            if censoring.is_some() {
                cfg.nuisance.censoring = CensoringMethod::Oracle;
            }
            Some(OracleInputs { truth: read_truth(path)?, censoring })
        }
    };
    let out = fit(&d, &cfg, oracle.as_ref(), a.seed)?;
    out.model.save(&a.out)?;
    eprintln!(
        "{}: {} of {} candidate subgroups selected (t* = {}, {} complete cases)",
        a.learner,
        out.model.l(),
        out.model.candidates_count,
        out.model.horizon,
        out.model.n_complete
    );
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = RuleModel::load(&a.model)?;
    let mut used: Vec<String> = model
        .rules
        .iter()
        .flat_map(|r| r.conditions.iter().map(|c| c.var.clone()))
        .collect();
    used.sort();
    used.dedup();
    let (x, ids) = read_covariates(fs::File::open(&a.data)?, &used, Some(&a.id))?;
    let pred = model.predict(&x, &used)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["id", "tau_hat"])?;
    for (i, p) in pred.iter().enumerate() {
        let id = ids.as_ref().map_or_else(|| (i + 1).to_string(), |v| v[i].clone());
        w.write_record([id, p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "tau_hat")
        .ok_or_else(|| Error::MissingColumn("tau_hat".into()))?;
    rdr.records()
        .enumerate()
        .map(|(r, rec)| {
            let rec = rec?;
            let s = rec.get(col).unwrap_or("");
            s.parse::<f64>().map_err(|_| Error::Parse { row: r + 1, column: "tau_hat".into(), value: s.to_string() })
        })
        .collect()
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = read_predictions(&a.predictions)?;
    let truth = read_truth(&a.truth)?;
    let m = evaluate_predictions(&pred, &truth.tau, a.bins)?;
    let s = serde_json::to_string_pretty(&m)? + "\n";
    match &a.out {
        Some(p) => fs::write(p, s)?,
        None => print!("{s}"),
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let model = RuleModel::load(&a.model)?;
    println!(
        "learner {}  horizon {}  lambda {:.6}  intercept {:.4}  selected {} of {}",
        model.learner,
        model.horizon,
        model.lambda,
        model.intercept,
        model.l(),
        model.candidates_count
    );
    if model.rules.is_empty() {
        println!("no subgroups selected; the model predicts the intercept for every subject");
        return Ok(());
    }
    let rep = model.importance(a.importance.into());
    let width = rep.rules.iter().map(|r| r.rule.len()).max().unwrap_or(4).max(4);
    println!("\n{:<width$}  {:>4}  {:>10}  {:>8}  {:>10}", "rule", "sign", "coef", "support", "importance");
    for r in &rep.rules {
        let sign = if r.coefficient > 0.0 { "+" } else { "-" };
        println!(
            "{:<width$}  {:>4}  {:>10.4}  {:>8.3}  {:>10.4}",
            r.rule, sign, r.coefficient, r.support, r.importance
        );
    }
    println!("\n{:<12}  {:>10}  {:>6}", "covariate", "importance", "rules");
    for c in &rep.covariates {
        println!("{:<12}  {:>10.4}  {:>6}", c.covariate, c.importance, c.rules);
    }
    Ok(())
}

fn cmd_replicate(a: &ReplicateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => serde_json::from_str::<StudyConfig>(&fs::read_to_string(p)?)?,
        None => {
            let mut fit = FitConfig::default();
            apply_flags(&mut fit, &a.flags)?;
            if a.oracle_nuisance {
                fit.nuisance.propensity = PropensityMethod::Oracle;
                fit.nuisance.survival = SurvivalMethod::Oracle;
                fit.nuisance.censoring = CensoringMethod::Oracle;
            }
            StudyConfig {
                scenario: a.scenario,
                setting: a.setting,
                censoring: censoring_spec(a.censoring, a.censor_rate, 0.5, -0.5),
                n_train: a.n_train,
                n_test: a.n_test,
                replicates: a.replicates,
                learners: a.learners.clone(),
                fit,
                bins: a.bins,
                seed: a.seed,
            }
        }
    };
    let res = survrule::run_study(&cfg)?;
    res.write(&a.out)?;
    eprint!("{}", res.table1_csv());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Report(a) => cmd_report(a),
        Command::Replicate(a) => cmd_replicate(a),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::InsufficientCandidates => 4,
        ErrorKind::Numerical => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

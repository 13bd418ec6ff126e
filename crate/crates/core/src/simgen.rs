//! Synthetic trials with Weibull potential outcomes and a closed-form truth.
//!
//! `T(a|X) = lambda_a * (-log U / exp(f_a(X)))^(1/eta)` with
//! `f_a(X) = b(X) + a*h(X)`, so `S_a(t|x) = exp(-(t/lambda_a)^eta * exp(f_a(x)))`.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, Dataset};
use crate::error::{Error, Result};
use crate::expr::Polynomial;
use crate::rng::{self, label, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioId {
    S1,
    S2,
    S3,
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(ScenarioId::S1),
            "s2" | "2" => Ok(ScenarioId::S2),
            "s3" | "3" => Ok(ScenarioId::S3),
            _ => Err(Error::InvalidArgument(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// X1..X5 binary, X6..X10 standard normal, all independent.
    Independent,
    /// 100 covariates from MVN(0, 0.5*Sigma), `sigma_jk = exp(-|j-k|)`;
    /// columns 1..5 and 11..55 dichotomized at zero.
    HighdimCorrelated,
}

impl Setting {
    pub fn p(self) -> usize {
        match self {
            Setting::Independent => 10,
            Setting::HighdimCorrelated => 100,
        }
    }

    pub fn kind(self, j: usize) -> CovariateKind {
        let binary = match self {
            Setting::Independent => j < 5,
            Setting::HighdimCorrelated => j < 5 || (10..55).contains(&j),
        };
        if binary {
            CovariateKind::Binary
        } else {
            CovariateKind::Continuous
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" | "indep" => Ok(Setting::Independent),
            "highdim" | "highdim_correlated" | "correlated" => Ok(Setting::HighdimCorrelated),
            _ => Err(Error::InvalidArgument(format!("unknown setting `{s}`"))),
        }
    }
}

/// Censoring mechanism and its target censoring fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CensoringSpec {
    None,
    /// `C ~ Exp(rate)`, rate calibrated.
    IndependentExponential { target_rate: f64 },
    /// `C = -2 log(U) / exp(b0 + b1*X1 + b2*X2)`, `b0` calibrated.
    CovariateDependent { b1: f64, b2: f64, target_rate: f64 },
}

impl CensoringSpec {
    pub fn target_rate(&self) -> f64 {
        match *self {
            CensoringSpec::None => 0.0,
            CensoringSpec::IndependentExponential { target_rate }
            | CensoringSpec::CovariateDependent { target_rate, .. } => target_rate,
        }
    }
}

/// Calibrated censoring distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CensoringParam {
    Never,
    Exponential { rate: f64 },
    CovariateDependent { b0: f64, b1: f64, b2: f64 },
}

impl CensoringParam {
    /// `P(C > c | x)`.
    pub fn survival(&self, c: f64, row: &[f64]) -> f64 {
        match *self {
            CensoringParam::Never => 1.0,
            CensoringParam::Exponential { rate } => (-rate * c.max(0.0)).exp(),
            CensoringParam::CovariateDependent { b0, b1, b2 } => {
                let lp = b0 + b1 * row[0] + b2 * row[1];
                (-c.max(0.0) * lp.exp() / 2.0).exp()
            }
        }
    }

    fn draw(&self, row: &[f64], std_exp: f64) -> f64 {
        match *self {
            CensoringParam::Never => f64::INFINITY,
            CensoringParam::Exponential { rate } => std_exp / rate,
            CensoringParam::CovariateDependent { b0, b1, b2 } => {
                2.0 * std_exp / (b0 + b1 * row[0] + b2 * row[1]).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub id: String,
    pub setting: Setting,
    pub shape: f64,
    pub scale0: f64,
    pub scale1: f64,
    /// Prognostic part shared by both arms.
    pub b: Polynomial,
    /// Treatment-arm-only part; the source of heterogeneity.
    pub h: Polynomial,
    /// Logit of the propensity score, intercept included.
    pub propensity: Polynomial,
    pub censoring: CensoringSpec,
    pub seed: u64,
}

const PROPENSITY_LOGIT: &str = "0.4 - 0.3*X1 - 0.2*X6 - 0.3*X2 - 0.35*X7 - 0.2*X3 - 0.25*X8";

impl SimScenario {
    pub fn builtin(id: ScenarioId, setting: Setting, censoring: CensoringSpec, seed: u64) -> Self {
        let (name, scale0, scale1, b, h) = match id {
            ScenarioId::S1 => ("s1", 16.0, 26.0, "2*X6 - 1.2*X7", "2.8*X1 + 1.4*X2"),
            ScenarioId::S2 => (
                "s2",
                20.0,
                22.0,
                "1.6*X1 - 1.4*X6 - 1.2*X7",
                "2.5*X1 - 1.8*X2 - 2*X3",
            ),
            ScenarioId::S3 => (
                "s3",
                20.0,
                22.0,
                "1.6*X1 - 1.4*X6 - 1.2*X7 - X1*X7 - 0.8*X8^2",
                "2.5*X1 - 1.8*X2 - 2*X3 - 1.4*X1*X3",
            ),
        };
        Self {
            id: name.to_string(),
            setting,
            shape: 2.0,
            scale0,
            scale1,
            b: b.parse().expect("builtin expression"),
            h: h.parse().expect("builtin expression"),
            propensity: PROPENSITY_LOGIT.parse().expect("builtin expression"),
            censoring,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.setting.p();
        for (name, poly) in [("b", &self.b), ("h", &self.h), ("propensity", &self.propensity)] {
            if poly.max_var().is_some_and(|j| j >= p) {
                return Err(Error::InvalidArgument(format!(
                    "expression `{name}` references a column beyond p={p}"
                )));
            }
        }
        if !(self.shape > 0.0 && self.scale0 > 0.0 && self.scale1 > 0.0) {
            return Err(Error::InvalidArgument("Weibull parameters must be positive".into()));
        }
        let r = self.censoring.target_rate();
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("censoring rate {r} outside [0, 1)")));
        }
        Ok(())
    }

    fn scale(&self, arm: u8) -> f64 {
        if arm == 1 {
            self.scale1
        } else {
            self.scale0
        }
    }

    pub fn linear_predictor(&self, arm: u8, row: &[f64]) -> f64 {
        let mut f = self.b.eval(row);
        if arm == 1 {
            f += self.h.eval(row);
        }
        f
    }

    /// Closed-form `S_a(t | x)`.
    pub fn survival(&self, arm: u8, row: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        (-(t / self.scale(arm)).powf(self.shape) * self.linear_predictor(arm, row).exp()).exp()
    }

    /// Weibull inversion for a given uniform draw `u` in (0, 1].
    pub fn event_time(&self, arm: u8, row: &[f64], u: f64) -> f64 {
        let base = -u.ln() / self.linear_predictor(arm, row).exp();
        self.scale(arm) * base.powf(1.0 / self.shape)
    }

    pub fn propensity_score(&self, row: &[f64]) -> f64 {
        expit(self.propensity.eval(row))
    }
}

pub fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Uniform on (0, 1]; never exactly zero so `log` stays finite.
fn unit_open(rng: &mut Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

pub fn gen_covariates(setting: Setting, n: usize, rng: &mut Rng) -> Array2<f64> {
    let p = setting.p();
    let mut x = Array2::zeros((n, p));
    match setting {
        Setting::Independent => {
            for i in 0..n {
                for j in 0..p {
                    let z: f64 = StandardNormal.sample(rng);
                    x[[i, j]] = if j < 5 { (z > 0.0) as u8 as f64 } else { z };
                }
            }
        }
        Setting::HighdimCorrelated => {
            // exp(-|j-k|) = rho^|j-k| with rho = e^-1: a stationary AR(1) chain.
            let rho = (-1.0f64).exp();
            let innov = (1.0 - rho * rho).sqrt();
            let sd = 0.5f64.sqrt();
            for i in 0..n {
                let mut z: f64 = StandardNormal.sample(rng);
                for j in 0..p {
                    if j > 0 {
                        let e: f64 = StandardNormal.sample(rng);
                        z = rho * z + innov * e;
                    }
                    let v = sd * z;
                    x[[i, j]] = match setting.kind(j) {
                        CovariateKind::Binary => (v > 0.0) as u8 as f64,
                        CovariateKind::Continuous => v,
                    };
                }
            }
        }
    }
    x
}

/// Draws `A_i ~ Bernoulli(e(x_i))`; returns the assignments and true scores.
pub fn assign_treatment(x: &Array2<f64>, scn: &SimScenario, rng: &mut Rng) -> (Vec<u8>, Vec<f64>) {
    let mut a = Vec::with_capacity(x.nrows());
    let mut e = Vec::with_capacity(x.nrows());
    for row in x.rows() {
        let p = scn.propensity_score(row.as_slice().expect("row-major"));
        e.push(p);
        a.push((rng.random::<f64>() < p) as u8);
    }
    (a, e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes {
    pub time: Vec<f64>,
    pub event: Vec<u8>,
    pub latent_t: Vec<f64>,
    pub latent_c: Vec<f64>,
}

pub fn gen_outcomes(
    x: &Array2<f64>,
    a: &[u8],
    scn: &SimScenario,
    censor: &CensoringParam,
    rng: &mut Rng,
) -> Outcomes {
    let n = x.nrows();
    let mut out = Outcomes {
        time: Vec::with_capacity(n),
        event: Vec::with_capacity(n),
        latent_t: Vec::with_capacity(n),
        latent_c: Vec::with_capacity(n),
    };
    for (i, row) in x.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("row-major");
        let t = scn.event_time(a[i], row, unit_open(rng));
        let c = censor.draw(row, -unit_open(rng).ln());
        out.time.push(t.min(c));
        out.event.push((t < c) as u8);
        out.latent_t.push(t);
        out.latent_c.push(c);
    }
    out
}

pub const CALIBRATION_DRAWS: usize = 100_000;
pub const CALIBRATION_TOL: f64 = 0.005;

/// Finds the censoring parameter giving `target_rate` censoring by bisection on
/// a fixed Monte Carlo sample (common random numbers make the censored
/// fraction monotone in the parameter).
pub fn calibrate_censoring(scn: &SimScenario, target_rate: f64, seed: u64) -> Result<CensoringParam> {
    if !(0.0..1.0).contains(&target_rate) {
        return Err(Error::InvalidArgument(format!(
            "target censoring rate {target_rate} outside [0, 1)"
        )));
    }
    if target_rate == 0.0 || scn.censoring == CensoringSpec::None {
        return Ok(CensoringParam::Never);
    }
    let mut rng = rng::stream(seed, &[label::CALIBRATION]);
    let x = gen_covariates(scn.setting, CALIBRATION_DRAWS, &mut rng);
    let (a, _) = assign_treatment(&x, scn, &mut rng);
    let mut t = Vec::with_capacity(CALIBRATION_DRAWS);
    let mut base = Vec::with_capacity(CALIBRATION_DRAWS);
    let mut lin = Vec::with_capacity(CALIBRATION_DRAWS);
    for (i, row) in x.rows().into_iter().enumerate() {
        let row = row.as_slice().expect("row-major");
        t.push(scn.event_time(a[i], row, unit_open(&mut rng)));
        base.push(-unit_open(&mut rng).ln());
        lin.push(row[0..2].to_vec());
    }
    let frac = |param: &CensoringParam| {
        let censored = (0..t.len())
            .filter(|&i| param.draw(&lin[i], base[i]) <= t[i])
            .count();
        censored as f64 / t.len() as f64
    };

    match scn.censoring {
        CensoringSpec::None => Ok(CensoringParam::Never),
        CensoringSpec::IndependentExponential { .. } => {
            let make = |rate: f64| CensoringParam::Exponential { rate };
            let mean_t = t.iter().sum::<f64>() / t.len() as f64;
            let (lo, hi) = bracket(1e-12, 1.0 / mean_t, |r| frac(&make(r)), target_rate, true)?;
            bisect(lo, hi, |r| frac(&make(r)), target_rate).map(make)
        }
        CensoringSpec::CovariateDependent { b1, b2, .. } => {
            let make = |b0: f64| CensoringParam::CovariateDependent { b0, b1, b2 };
            let (lo, hi) = bracket(-1.0, 1.0, |b| frac(&make(b)), target_rate, false)?;
            bisect(lo, hi, |b| frac(&make(b)), target_rate).map(make)
        }
    }
}

const MAX_EXPANSIONS: usize = 64;

/// Expands `[lo, hi]` until `f(lo) <= target <= f(hi)` for an increasing `f`.
/// `multiplicative` expands by doubling (for positive rates).
fn bracket(
    mut lo: f64,
    mut hi: f64,
    f: impl Fn(f64) -> f64,
    target: f64,
    multiplicative: bool,
) -> Result<(f64, f64)> {
    for _ in 0..MAX_EXPANSIONS {
        let (flo, fhi) = (f(lo), f(hi));
        if flo <= target && target <= fhi {
            return Ok((lo, hi));
        }
        if fhi < target {
            if multiplicative {
                hi *= 2.0;
            } else {
                let w = hi - lo;
                hi += w;
            }
        }
        if flo > target {
            if multiplicative {
                lo /= 2.0;
            } else {
                let w = hi - lo;
                lo -= w;
            }
        }
    }
    Err(Error::Calibration(format!(
        "target rate {target} not bracketed after {MAX_EXPANSIONS} expansions"
    )))
}

/// Bisects to the narrowest bracket, then checks the tolerance.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, target: f64) -> Result<f64> {
    let mut best = (f64::INFINITY, lo);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v - target).abs() < best.0 {
            best = ((v - target).abs(), mid);
        }
        if v == target {
            break;
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 < CALIBRATION_TOL {
        Ok(best.1)
    } else {
        Err(Error::Calibration(format!("bisection did not reach target {target}")))
    }
}

/// Per-subject truth at a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub tau: Vec<f64>,
    pub e: Vec<f64>,
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
}

impl TruthTable {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, ids: Option<&[String]>, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "tau", "e", "S0", "S1"])?;
        for i in 0..self.len() {
            let id = ids.map_or_else(|| (i + 1).to_string(), |v| v[i].clone());
            out.write_record([
                id,
                self.tau[i].to_string(),
                self.e[i].to_string(),
                self.s0[i].to_string(),
                self.s1[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let cols = [col("tau")?, col("e")?, col("S0")?, col("S1")?];
        let mut t = TruthTable { tau: vec![], e: vec![], s0: vec![], s1: vec![] };
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0; 4];
            for (k, &c) in cols.iter().enumerate() {
                let s = rec.get(c).unwrap_or("");
                vals[k] = s.parse().map_err(|_| Error::Parse {
                    row: r + 1,
                    column: header[c].clone(),
                    value: s.to_string(),
                })?;
            }
            t.tau.push(vals[0]);
            t.e.push(vals[1]);
            t.s0.push(vals[2]);
            t.s1.push(vals[3]);
        }
        Ok(t)
    }
}

/// `tau(x; t) = S_1(t|x) - S_0(t|x)` from the closed form.
pub fn true_cate(x: &Array2<f64>, scn: &SimScenario, t: f64) -> TruthTable {
    let mut out = TruthTable {
        tau: Vec::with_capacity(x.nrows()),
        e: Vec::with_capacity(x.nrows()),
        s0: Vec::with_capacity(x.nrows()),
        s1: Vec::with_capacity(x.nrows()),
    };
    for row in x.rows() {
        let row = row.as_slice().expect("row-major");
        let s0 = scn.survival(0, row, t);
        let s1 = scn.survival(1, row, t);
        out.tau.push(s1 - s0);
        out.s0.push(s0);
        out.s1.push(s1);
        out.e.push(scn.propensity_score(row));
    }
    out
}

/// A generated trial with its latent quantities.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub dataset: Dataset,
    pub propensity: Vec<f64>,
    pub outcomes: Outcomes,
}

/// Generates one trial of size `n` from independent streams keyed by `seed`.
pub fn simulate(scn: &SimScenario, n: usize, censor: &CensoringParam, seed: u64) -> Result<SimulatedTrial> {
    scn.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let x = gen_covariates(scn.setting, n, &mut rng::stream(seed, &[label::COVARIATES]));
    let (a, e) = assign_treatment(&x, scn, &mut rng::stream(seed, &[label::TREATMENT]));
    let outcomes = gen_outcomes(&x, &a, scn, censor, &mut rng::stream(seed, &[label::OUTCOMES]));
    let p = scn.setting.p();
    let names = (1..=p).map(|j| format!("X{j}")).collect();
    let kinds = (0..p).map(|j| scn.setting.kind(j)).collect();
    let ids = (1..=n).map(|i| i.to_string()).collect();
    let dataset = Dataset::new(
        x,
        names,
        kinds,
        a,
        outcomes.time.clone(),
        outcomes.event.clone(),
        Some(ids),
    )?;
    Ok(SimulatedTrial { dataset, propensity: e, outcomes })
}

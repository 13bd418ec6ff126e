//! Pseudo individual treatment effects and their regression weights.
//!
//! For complete cases (horizon status known) with `I = I(T > t*)`:
//!
//! | learner | `Y*`                                            | `w^M`                              |
//! |---------|-------------------------------------------------|------------------------------------|
//! | DR      | `(A-e)/(e(1-e)) * (I - S_A) + S_1 - S_0`        | `1`                                |
//! | DEA     | `2(2A-1) * (I - S)`                             | `(2A-1)(A-e) / (4e(1-e))`          |
//! | R       | `(I - S) / (A - e)`                             | `(A-e)^2`                          |
//!
//! The censoring weight is `w^C = 1 / G(min(T, t*) | X, A)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{classify_at_horizon, Dataset, Horizon, HorizonStatus};
use crate::error::{Error, Result};
use crate::nuisance::{Needs, NuisanceFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Dr,
    Dea,
    R,
}

impl Learner {
    pub fn needs(self) -> Needs {
        match self {
            Learner::Dr => Needs { arms: true, pooled: false },
            Learner::Dea | Learner::R => Needs { arms: false, pooled: true },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Learner::Dr => "dr",
            Learner::Dea => "dea",
            Learner::R => "r",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dr" => Ok(Learner::Dr),
            "dea" => Ok(Learner::Dea),
            "r" => Ok(Learner::R),
            _ => Err(Error::InvalidArgument(format!("unknown learner `{s}`"))),
        }
    }
}

pub fn combined_needs(learners: &[Learner]) -> Needs {
    learners.iter().fold(Needs::default(), |acc, l| {
        let n = l.needs();
        Needs { arms: acc.arms || n.arms, pooled: acc.pooled || n.pooled }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoSample {
    pub index: usize,
    pub y_star: f64,
    pub w_method: f64,
    pub w_censor: f64,
    pub complete: bool,
}

impl PseudoSample {
    pub fn weight(&self) -> f64 {
        self.w_censor * self.w_method
    }
}

/// Inverse probability of censoring weights; zero for incomplete cases.
pub fn ipcw_weights(d: &Dataset, h: Horizon, nf: &NuisanceFit) -> Result<Vec<f64>> {
    let status = classify_at_horizon(d, h);
    let floor = nf.censor_floor;
    status
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let g = match st {
                HorizonStatus::CensoredUnknown => return Ok(0.0),
                // not censored strictly before the event
                HorizonStatus::EventBeforeHorizon => nf.censor_model.survival(i, d.time()[i], true)?,
                HorizonStatus::SurvivedPastHorizon => nf.censor_model.survival(i, h.t_star(), false)?,
            };
            Ok(1.0 / g.max(floor).min(1.0))
        })
        .collect()
}

pub fn build_pseudo(d: &Dataset, h: Horizon, nf: &NuisanceFit, learner: Learner) -> Result<Vec<PseudoSample>> {
    if nf.e_hat.len() != d.n() {
        return Err(Error::SchemaMismatch("nuisance fit does not match dataset".into()));
    }
    let status = classify_at_horizon(d, h);
    let w_c = ipcw_weights(d, h, nf)?;
    let (s1, s0, s) = match learner {
        Learner::Dr => (Some(nf.s1()?), Some(nf.s0()?), None),
        Learner::Dea | Learner::R => (None, None, Some(nf.s_pool()?)),
    };
    let mut out = Vec::with_capacity(d.n());
    for i in 0..d.n() {
        let Some(survived) = status[i].survived() else {
            out.push(PseudoSample { index: i, y_star: 0.0, w_method: 0.0, w_censor: 0.0, complete: false });
            continue;
        };
        let e = nf.e_hat[i];
        assert!(e > 0.0 && e < 1.0, "propensity {e} outside (0,1) for subject {i}");
        let a = d.treatment()[i] as f64;
        let ind = survived as u8 as f64;
        let (y_star, w_method) = match learner {
            Learner::Dr => {
                let (s1, s0) = (s1.unwrap()[i], s0.unwrap()[i]);
                let s_a = if a == 1.0 { s1 } else { s0 };
                ((a - e) / (e * (1.0 - e)) * (ind - s_a) + s1 - s0, 1.0)
            }
            Learner::Dea => {
                let sign = 2.0 * a - 1.0;
                (
                    2.0 * sign * (ind - s.unwrap()[i]),
                    sign * (a - e) / (4.0 * e * (1.0 - e)),
                )
            }
            Learner::R => ((ind - s.unwrap()[i]) / (a - e), (a - e) * (a - e)),
        };
        out.push(PseudoSample { index: i, y_star, w_method, w_censor: w_c[i], complete: true });
    }
    Ok(out)
}

/// `(1/n^o) * sum over complete cases of w^C w^M (Y* - tau_hat)^2`.
pub fn weighted_loss(samples: &[PseudoSample], tau_hat: &[f64]) -> Result<f64> {
    if samples.len() != tau_hat.len() {
        return Err(Error::InvalidArgument("predictions not aligned with samples".into()));
    }
    let (sum, count) = samples
        .iter()
        .zip(tau_hat)
        .filter(|(s, _)| s.complete)
        .fold((0.0, 0usize), |(acc, c), (s, &t)| {
            (acc + s.weight() * (s.y_star - t).powi(2), c + 1)
        });
    if count == 0 {
        return Err(Error::NoCompleteCases);
    }
    Ok(sum / count as f64)
}

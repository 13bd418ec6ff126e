//! Product-limit and Nelson–Aalen step functions.

use serde::{Deserialize, Serialize};

/// Right-continuous step function `S(t)`, equal to 1 before the first jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    times: Vec<f64>,
    survival: Vec<f64>,
}

impl KaplanMeier {
    /// Product-limit estimate where `is_event(i)` marks subject `i` as
    /// experiencing the event of interest. The risk set at `t` is every subject
    /// with `time >= t`.
    pub fn fit(time: &[f64], is_event: impl Fn(usize) -> bool) -> Self {
        let mut order: Vec<usize> = (0..time.len()).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));

        let mut times = Vec::new();
        let mut survival = Vec::new();
        let mut s = 1.0;
        let mut at_risk = time.len();
        let mut k = 0;
        while k < order.len() {
            let t = time[order[k]];
            let mut events = 0usize;
            let mut tied = 0usize;
            while k + tied < order.len() && time[order[k + tied]] == t {
                if is_event(order[k + tied]) {
                    events += 1;
                }
                tied += 1;
            }
            if events > 0 {
                s *= (at_risk - events) as f64 / at_risk as f64;
                times.push(t);
                survival.push(s);
            }
            at_risk -= tied;
            k += tied;
        }
        Self { times, survival }
    }

    /// Survival for the event indicator `event[i] == 1`.
    pub fn survival_curve(time: &[f64], event: &[u8]) -> Self {
        Self::fit(time, |i| event[i] == 1)
    }

    /// Censoring survival `G(c) = P(C > c)`: the product-limit estimator on the
    /// flipped indicator.
    pub fn censoring_curve(time: &[f64], event: &[u8]) -> Self {
        Self::fit(time, |i| event[i] == 0)
    }

    /// `S(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Left limit `S(t-)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.survival
    }

    /// Smallest jump time with `S(t) <= 0.5`.
    pub fn median(&self) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.survival)
            .find(|(_, &s)| s <= 0.5)
            .map(|(&t, _)| t)
    }
}

/// Nelson–Aalen cumulative hazard, stored at its jump times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeHazard {
    times: Vec<f64>,
    hazard: Vec<f64>,
}

impl CumulativeHazard {
    /// Builds the estimator from `(time, event)` pairs sorted by time.
    pub fn from_sorted(pairs: &[(f64, bool)]) -> Self {
        let mut times = Vec::new();
        let mut hazard = Vec::new();
        let mut h = 0.0;
        let mut at_risk = pairs.len();
        let mut k = 0;
        while k < pairs.len() {
            let t = pairs[k].0;
            let mut events = 0usize;
            let mut tied = 0usize;
            while k + tied < pairs.len() && pairs[k + tied].0 == t {
                events += pairs[k + tied].1 as usize;
                tied += 1;
            }
            if events > 0 {
                h += events as f64 / at_risk as f64;
                times.push(t);
                hazard.push(h);
            }
            at_risk -= tied;
            k += tied;
        }
        Self { times, hazard }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.hazard[k - 1]
        }
    }

    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0.0
        } else {
            self.hazard[k - 1]
        }
    }
}

//! Candidate subgroup generation: rules extracted from a boosted ensemble of
//! conditional inference trees, then deduplicated.

mod boost;
mod ctree;

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use boost::{boost_rules, generate_candidates, BoostOutput};
pub use ctree::{fit_ctree, CTree, CTreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "<=" => Ok(Comparator::Le),
            ">" => Ok(Comparator::Gt),
            "==" | "=" => Ok(Comparator::Eq),
            "!=" => Ok(Comparator::Ne),
            _ => Err(Error::InvalidArgument(format!("unknown comparator `{s}`"))),
        }
    }
}

/// One atom `x[var] <op> value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub var: usize,
    pub op: Comparator,
    pub value: f64,
}

impl Condition {
    pub fn new(var: usize, op: Comparator, value: f64) -> Self {
        Self { var, op, value }
    }

    pub fn holds(&self, x: f64) -> bool {
        match self.op {
            Comparator::Le => x <= self.value,
            Comparator::Gt => x > self.value,
            Comparator::Eq => x == self.value,
            Comparator::Ne => x != self.value,
        }
    }
}

/// A conjunction of conditions in canonical form: binary `!=` rewritten as
/// `==`, bounds on the same covariate merged into one interval, and atoms
/// sorted by `(covariate, comparator)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    conditions: Vec<Condition>,
}

impl Rule {
    pub fn new(conditions: Vec<Condition>) -> Result<Self> {
        if conditions.is_empty() {
            return Err(Error::EmptyRule);
        }
        for c in &conditions {
            if !c.value.is_finite() {
                return Err(Error::InvalidArgument("rule threshold must be finite".into()));
            }
        }
        Ok(Self { conditions: canonicalize(conditions) })
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    /// 1 iff every condition holds; checks covariate indices.
    pub fn evaluate(&self, row: ArrayView1<'_, f64>) -> Result<u8> {
        for c in &self.conditions {
            if c.var >= row.len() {
                return Err(Error::CovariateOutOfRange { index: c.var, width: row.len() });
            }
        }
        Ok(self.holds(row) as u8)
    }

    pub fn holds(&self, row: ArrayView1<'_, f64>) -> bool {
        self.conditions.iter().all(|c| c.holds(row[c.var]))
    }

    /// Covariates mentioned, sorted and unique.
    pub fn vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.conditions.iter().map(|c| c.var).collect();
        v.dedup();
        v
    }

    fn key(&self) -> Vec<(usize, Comparator, u64)> {
        self.conditions
            .iter()
            .map(|c| (c.var, c.op, c.value.to_bits()))
            .collect()
    }

    pub fn describe(&self, names: &[String]) -> String {
        self.conditions
            .iter()
            .map(|c| {
                let name = names.get(c.var).cloned().unwrap_or_else(|| format!("X{}", c.var + 1));
                format!("{name} {} {}", c.op.symbol(), c.value)
            })
            .collect::<Vec<_>>()
            .join(" & ")
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.describe(&[]))
    }
}

fn canonicalize(conditions: Vec<Condition>) -> Vec<Condition> {
    let mut out: Vec<Condition> = Vec::new();
    for mut c in conditions {
        if c.op == Comparator::Ne && (c.value == 0.0 || c.value == 1.0) {
            c = Condition::new(c.var, Comparator::Eq, 1.0 - c.value);
        }
        if let Some(prev) = out.iter_mut().find(|p| p.var == c.var && p.op == c.op) {
            match c.op {
                Comparator::Le => prev.value = prev.value.min(c.value),
                Comparator::Gt => prev.value = prev.value.max(c.value),
                // two different equalities contradict; keep both so the rule
                // evaluates to zero everywhere and is dropped downstream
                Comparator::Eq | Comparator::Ne if prev.value != c.value => out.push(c),
                _ => {}
            }
        } else {
            out.push(c);
        }
    }
    out.sort_by(|a, b| {
        (a.var, a.op)
            .cmp(&(b.var, b.op))
            .then(a.value.total_cmp(&b.value))
    });
    out
}

/// `evaluate_rule` in free-function form.
pub fn evaluate_rule(rule: &Rule, row: ArrayView1<'_, f64>) -> Result<u8> {
    rule.evaluate(row)
}

/// A deduplicated rule with its training support.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub rule: Rule,
    pub support: f64,
}

struct BitRow(Vec<u64>);

impl BitRow {
    fn of(rule: &Rule, x: &Array2<f64>) -> (Self, usize) {
        let n = x.nrows();
        let mut words = vec![0u64; n.div_ceil(64)];
        let mut count = 0;
        for i in 0..n {
            if rule.holds(x.row(i)) {
                words[i / 64] |= 1 << (i % 64);
                count += 1;
            }
        }
        (BitRow(words), count)
    }

    fn complement(&self, n: usize) -> Vec<u64> {
        let mut c: Vec<u64> = self.0.iter().map(|w| !w).collect();
        if n % 64 != 0 {
            let last = c.len() - 1;
            c[last] &= (1u64 << (n % 64)) - 1;
        }
        c
    }
}

/// Drops constant rules, canonical duplicates, empirical duplicates and
/// empirical complements (`r + r' = 1` on every training row), keeping the
/// first occurrence in input order.
pub fn dedup_rules(rules: Vec<Rule>, x: &Array2<f64>) -> Vec<Candidate> {
    let n = x.nrows();
    let mut keys = HashSet::new();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut out = Vec::new();
    for rule in rules {
        let key = rule.key();
        if keys.contains(&key) {
            continue;
        }
        let (bits, count) = BitRow::of(&rule, x);
        if count == 0 || count == n {
            continue;
        }
        if seen.contains(&bits.0) || seen.contains(&bits.complement(n)) {
            continue;
        }
        keys.insert(key);
        seen.insert(bits.0);
        out.push(Candidate { rule, support: count as f64 / n as f64 });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(var: usize, op: Comparator, v: f64) -> Condition {
        Condition::new(var, op, v)
    }

    #[test]
    fn evaluate_conjunction_with_strict_bound() {
        // bmi (binary: high = 1) and age
        let rule = Rule::new(vec![c(0, Comparator::Eq, 1.0), c(1, Comparator::Gt, 45.0)]).unwrap();
        assert_eq!(rule.evaluate(array![1.0, 50.0].view()).unwrap(), 1);
        assert_eq!(rule.evaluate(array![1.0, 45.0].view()).unwrap(), 0);
        assert!(matches!(
            rule.evaluate(array![1.0].view()),
            Err(Error::CovariateOutOfRange { .. })
        ));
        assert!(matches!(Rule::new(vec![]), Err(Error::EmptyRule)));
    }

    #[test]
    fn canonical_merge_and_binary_rewrite() {
        let r = Rule::new(vec![c(5, Comparator::Gt, 2.0), c(5, Comparator::Gt, 1.0)]).unwrap();
        assert_eq!(r.conditions(), &[c(5, Comparator::Gt, 2.0)]);
        let r = Rule::new(vec![c(2, Comparator::Le, 3.0), c(0, Comparator::Ne, 0.0), c(2, Comparator::Le, 1.0)]).unwrap();
        assert_eq!(r.conditions(), &[c(0, Comparator::Eq, 1.0), c(2, Comparator::Le, 1.0)]);
    }

    #[test]
    fn dedup_drops_complements_duplicates_and_constants() {
        let x = array![[0.0, 1.5], [1.0, 0.5], [1.0, 2.5], [0.0, 3.0]];
        let rules = vec![
            Rule::new(vec![c(0, Comparator::Eq, 1.0)]).unwrap(),
            Rule::new(vec![c(0, Comparator::Eq, 0.0)]).unwrap(),
            Rule::new(vec![c(0, Comparator::Eq, 1.0)]).unwrap(),
            Rule::new(vec![c(1, Comparator::Gt, 10.0)]).unwrap(),
            Rule::new(vec![c(1, Comparator::Gt, 1.0)]).unwrap(),
            // same rows as X2 > 1.0 with a different threshold
            Rule::new(vec![c(1, Comparator::Gt, 1.2)]).unwrap(),
            Rule::new(vec![c(0, Comparator::Eq, 1.0), c(0, Comparator::Eq, 0.0)]).unwrap(),
        ];
        let out = dedup_rules(rules, &x);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].rule.conditions(), &[c(0, Comparator::Eq, 1.0)]);
        assert_eq!(out[0].support, 0.5);
        assert_eq!(out[1].rule.conditions(), &[c(1, Comparator::Gt, 1.0)]);
        assert_eq!(out[1].support, 0.75);
    }
}

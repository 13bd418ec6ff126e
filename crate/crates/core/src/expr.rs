//! Polynomial covariate expressions such as `1.6*X1 - X1*X7 - 0.8*X8^2`.
//!
//! Variables are written `X<j>` with 1-based column numbers. Scenario effect
//! functions and the propensity logit are stored in this form so new
//! scenarios can be declared in configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    /// `(0-based column, power)` pairs; empty for a constant.
    pub factors: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn eval(&self, row: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|m| {
                m.factors
                    .iter()
                    .fold(m.coef, |acc, &(j, k)| acc * row[j].powi(k as i32))
            })
            .sum()
    }

    /// Largest column index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.terms
            .iter()
            .flat_map(|m| m.factors.iter().map(|&(j, _)| j))
            .max()
    }

    /// Sorted, deduplicated columns referenced.
    pub fn vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .terms
            .iter()
            .flat_map(|m| m.factors.iter().map(|&(j, _)| j))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Coefficient-wise linear term lookup, used by the censoring model.
    pub fn linear_coef(&self, var: usize) -> f64 {
        self.terms
            .iter()
            .filter(|m| m.factors == [(var, 1)])
            .map(|m| m.coef)
            .sum()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, m) in self.terms.iter().enumerate() {
            let mag = m.coef.abs();
            if k == 0 {
                if m.coef < 0.0 {
                    write!(f, "-")?;
                }
            } else if m.coef < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut parts: Vec<String> = Vec::new();
            if m.factors.is_empty() || mag != 1.0 {
                parts.push(mag.to_string());
            }
            for &(j, p) in &m.factors {
                if p == 1 {
                    parts.push(format!("X{}", j + 1));
                } else {
                    parts.push(format!("X{}^{}", j + 1, p));
                }
            }
            write!(f, "{}", parts.join("*"))?;
        }
        Ok(())
    }
}

impl FromStr for Polynomial {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Parser { src: s.as_bytes(), pos: 0 }.polynomial()
    }
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Expression(format!("{msg} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn polynomial(mut self) -> Result<Polynomial, Error> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        if self.peek() == Some(b'-') {
            sign = -1.0;
            self.pos += 1;
        } else if self.peek() == Some(b'+') {
            self.pos += 1;
        }
        loop {
            let mut m = self.monomial()?;
            m.coef *= sign;
            terms.push(m);
            match self.peek() {
                None => break,
                Some(b'+') => sign = 1.0,
                Some(b'-') => sign = -1.0,
                Some(_) => return Err(self.err("expected `+` or `-`")),
            }
            self.pos += 1;
        }
        if terms.len() == 1 && terms[0].coef == 0.0 && terms[0].factors.is_empty() {
            terms.clear();
        }
        Ok(Polynomial { terms })
    }

    fn monomial(&mut self) -> Result<Monomial, Error> {
        let mut coef = 1.0;
        let mut factors = Vec::new();
        loop {
            match self.peek() {
                Some(b'X') | Some(b'x') => {
                    self.pos += 1;
                    let j = self.integer()?;
                    if j == 0 {
                        return Err(self.err("variables are numbered from X1"));
                    }
                    let mut power = 1;
                    if self.peek() == Some(b'^') {
                        self.pos += 1;
                        power = self.integer()? as u32;
                    }
                    factors.push((j - 1, power));
                }
                Some(c) if c.is_ascii_digit() || c == b'.' => coef *= self.number()?,
                _ => return Err(self.err("expected a number or variable")),
            }
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                break;
            }
        }
        factors.sort_unstable();
        Ok(Monomial { coef, factors })
    }

    fn integer(&mut self) -> Result<usize, Error> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("expected an integer"))
    }

    fn number(&mut self) -> Result<f64, Error> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit()
                || self.src[self.pos] == b'.'
                || self.src[self.pos] == b'e'
                || self.src[self.pos] == b'E')
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("malformed number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_interactions_and_powers() {
        let p: Polynomial = "1.6*X1 - 1.4*X6 - 1.2*X7 - X1*X7 - 0.8*X8^2".parse().unwrap();
        assert_eq!(p.terms.len(), 5);
        assert_eq!(p.terms[3], Monomial { coef: -1.0, factors: vec![(0, 1), (6, 1)] });
        assert_eq!(p.terms[4], Monomial { coef: -0.8, factors: vec![(7, 2)] });
        let mut row = vec![0.0; 10];
        row[0] = 1.0;
        row[6] = 2.0;
        row[7] = 3.0;
        let v = p.eval(&row);
        assert!((v - (1.6 - 2.4 - 2.0 - 7.2)).abs() < 1e-12);
        assert_eq!(p.vars(), vec![0, 5, 6, 7]);
    }

    #[test]
    fn constant_and_display_roundtrip() {
        let p: Polynomial = "0.4 - 0.3*X1 - 0.2*X6".parse().unwrap();
        assert_eq!(p.eval(&[0.0; 6]), 0.4);
        let again: Polynomial = p.to_string().parse().unwrap();
        assert_eq!(p, again);
        let zero: Polynomial = "0".parse().unwrap();
        assert!(zero.terms.is_empty());
        assert_eq!(zero.eval(&[1.0]), 0.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!("2*Y3".parse::<Polynomial>().is_err());
        assert!("X0".parse::<Polynomial>().is_err());
        assert!("X1 X2".parse::<Polynomial>().is_err());
    }
}

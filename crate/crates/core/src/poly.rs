//! Sparse multivariate polynomials over `f64`.
//!
//! Variables are ordered `(x_1, .., x_n, y_1, .., y_m)`, matching the point
//! layout used everywhere else in the crate. Exponent vectors key a
//! `BTreeMap` so iteration order (and therefore every evaluation) is
//! deterministic.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate function `z_k`.
    pub fn var(nvars: usize, k: usize) -> Self {
        let mut powers = vec![0; nvars];
        powers[k] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(powers, 1.0);
        p
    }

    pub fn affine(constant: f64, slopes: &[f64]) -> Self {
        let nvars = slopes.len();
        let mut p = Self::constant(nvars, constant);
        for (k, &s) in slopes.iter().enumerate() {
            p = p + Self::var(nvars, k).scale(s);
        }
        p
    }

    pub fn from_monomials(nvars: usize, monomials: &[Monomial]) -> Result<Self> {
        let mut p = Self::zero(nvars);
        for mono in monomials {
            if mono.powers.len() != nvars {
                return contract(format!(
                    "monomial has {} exponents, expected {}",
                    mono.powers.len(),
                    nvars
                ));
            }
            p.add_term(mono.powers.clone(), mono.coeff);
        }
        Ok(p)
    }

    pub fn monomials(&self) -> Vec<Monomial> {
        self.terms
            .iter()
            .map(|(powers, &coeff)| Monomial {
                coeff,
                powers: powers.clone(),
            })
            .collect()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|p| p.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    fn add_term(&mut self, powers: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(powers.clone()).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&powers);
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.nvars);
        self.terms
            .iter()
            .map(|(powers, &c)| {
                powers
                    .iter()
                    .zip(z)
                    .fold(c, |acc, (&p, &zk)| acc * zk.powi(p as i32))
            })
            .sum()
    }

    pub fn derivative(&self, k: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (powers, &c) in &self.terms {
            if powers[k] == 0 {
                continue;
            }
            let mut p = powers.clone();
            p[k] -= 1;
            out.add_term(p, c * powers[k] as f64);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.nvars);
        for (p, &c) in &self.terms {
            out.add_term(p.clone(), c * s);
        }
        out
    }

    /// Multiply by `z_k`.
    pub fn mul_var(&self, k: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (p, &c) in &self.terms {
            let mut q = p.clone();
            q[k] += 1;
            out.add_term(q, c);
        }
        out
    }

    /// True when every monomial carries at least one factor of `z_k`.
    pub fn divisible_by_var(&self, k: usize) -> bool {
        self.terms.keys().all(|p| p[k] >= 1)
    }

    /// Exact division by `z_k`; fails unless [`Self::divisible_by_var`].
    pub fn div_var(&self, k: usize) -> Result<Self> {
        if !self.divisible_by_var(k) {
            return contract(format!("polynomial is not divisible by variable {k}"));
        }
        let mut out = Self::zero(self.nvars);
        for (p, &c) in &self.terms {
            let mut q = p.clone();
            q[k] -= 1;
            out.add_term(q, c);
        }
        Ok(out)
    }

    /// Restriction to the hyperplane `z_k = 0`.
    pub fn restrict_zero(&self, k: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (p, &c) in &self.terms {
            if p[k] == 0 {
                out.add_term(p.clone(), c);
            }
        }
        out
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(mut self, rhs: Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        for (p, c) in rhs.terms {
            self.add_term(p, c);
        }
        self
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        self + rhs.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Polynomial::zero(self.nvars);
        for (pa, &ca) in &self.terms {
            for (pb, &cb) in &rhs.terms {
                let p: Vec<u32> = pa.iter().zip(pb).map(|(a, b)| a + b).collect();
                out.add_term(p, ca * cb);
            }
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (powers, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (k, &p) in powers.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*z{k}")?,
                    _ => write!(f, "*z{k}^{p}")?,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_and_eval() {
        // p = 3 x^2 y + 2
        let p = Polynomial::from_monomials(
            2,
            &[
                Monomial {
                    coeff: 3.0,
                    powers: vec![2, 1],
                },
                Monomial {
                    coeff: 2.0,
                    powers: vec![0, 0],
                },
            ],
        )
        .unwrap();
        assert_eq!(p.eval(&[2.0, 0.5]), 8.0);
        assert_eq!(p.derivative(0).eval(&[2.0, 0.5]), 6.0);
        assert_eq!(p.derivative(1).eval(&[2.0, 0.5]), 12.0);
        assert_eq!(p.derivative(1).derivative(1), Polynomial::zero(2));
    }

    #[test]
    fn exact_division() {
        let x = Polynomial::var(2, 0);
        let y = Polynomial::var(2, 1);
        let p = &(x.clone() + y.clone()) * &x;
        let q = p.div_var(0).unwrap();
        assert_eq!(q, x.clone() + y.clone());
        assert!(p.div_var(1).is_err());
        assert_eq!(p.restrict_zero(0), Polynomial::zero(2));
    }

    #[test]
    fn cancellation_leaves_zero() {
        let x = Polynomial::var(1, 0);
        assert!((x.clone() - x).is_zero());
    }
}

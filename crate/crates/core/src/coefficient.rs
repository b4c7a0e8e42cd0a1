//! Coefficient fields of a Kimura operator.
//!
//! Polynomial coefficients (the constant/affine/polynomial families used by
//! configs) carry exact derivatives; closure-backed coefficients fall back to
//! central finite differences with step `h_fd`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::poly::{Monomial, Polynomial};

pub const DEFAULT_FD_STEP: f64 = 1e-4;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CoefficientField {
    Poly(Polynomial),
    Func {
        nvars: usize,
        f: ScalarFn,
        h_fd: f64,
    },
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Poly(p) => write!(f, "Poly({p})"),
            Self::Func { nvars, h_fd, .. } => write!(f, "Func(nvars={nvars}, h_fd={h_fd})"),
        }
    }
}

/// Text form of a coefficient: one of the built-in families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CoefficientSpec {
    Constant { value: f64 },
    Affine { constant: f64, slopes: Vec<f64> },
    Polynomial { terms: Vec<Monomial> },
}

impl CoefficientSpec {
    pub fn build(&self, nvars: usize) -> Result<CoefficientField> {
        let p = match self {
            Self::Constant { value } => Polynomial::constant(nvars, *value),
            Self::Affine { constant, slopes } => {
                if slopes.len() != nvars {
                    return Err(crate::KimuraError::Contract(format!(
                        "affine coefficient has {} slopes, expected {nvars}",
                        slopes.len()
                    )));
                }
                Polynomial::affine(*constant, slopes)
            }
            Self::Polynomial { terms } => Polynomial::from_monomials(nvars, terms)?,
        };
        Ok(CoefficientField::Poly(p))
    }
}

impl CoefficientField {
    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::Poly(Polynomial::constant(nvars, c))
    }

    pub fn zero(nvars: usize) -> Self {
        Self::Poly(Polynomial::zero(nvars))
    }

    pub fn from_fn(nvars: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Func {
            nvars,
            f: Arc::new(f),
            h_fd: DEFAULT_FD_STEP,
        }
    }

    pub fn with_fd_step(self, h: f64) -> Self {
        match self {
            Self::Func { nvars, f, .. } => Self::Func { nvars, f, h_fd: h },
            p => p,
        }
    }

    pub fn nvars(&self) -> usize {
        match self {
            Self::Poly(p) => p.nvars(),
            Self::Func { nvars, .. } => *nvars,
        }
    }

    pub fn as_poly(&self) -> Option<&Polynomial> {
        match self {
            Self::Poly(p) => Some(p),
            Self::Func { .. } => None,
        }
    }

    /// Serializable form, available for polynomial coefficients only.
    pub fn to_spec(&self) -> Option<CoefficientSpec> {
        self.as_poly().map(|p| CoefficientSpec::Polynomial {
            terms: p.monomials(),
        })
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(self, Self::Poly(p) if p.is_zero())
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            Self::Poly(p) => p.eval(z),
            Self::Func { f, .. } => f(z),
        }
    }

    pub fn grad(&self, z: &[f64], k: usize) -> f64 {
        match self {
            Self::Poly(p) => p.derivative(k).eval(z),
            Self::Func { f, h_fd, .. } => {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[k] += h_fd;
                zm[k] -= h_fd;
                (f(&zp) - f(&zm)) / (2.0 * h_fd)
            }
        }
    }

    pub fn hess(&self, z: &[f64], k: usize, l: usize) -> f64 {
        match self {
            Self::Poly(p) => p.derivative(k).derivative(l).eval(z),
            Self::Func { f, h_fd, .. } => {
                let h = *h_fd;
                if k == l {
                    let mut zp = z.to_vec();
                    let mut zm = z.to_vec();
                    zp[k] += h;
                    zm[k] -= h;
                    (f(&zp) - 2.0 * f(z) + f(&zm)) / (h * h)
                } else {
                    let shifted = |sk: f64, sl: f64| {
                        let mut w = z.to_vec();
                        w[k] += sk * h;
                        w[l] += sl * h;
                        f(&w)
                    };
                    (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0)
                        + shifted(-1.0, -1.0))
                        / (4.0 * h * h)
                }
            }
        }
    }

    fn closure(&self) -> ScalarFn {
        match self {
            Self::Poly(p) => {
                let p = p.clone();
                Arc::new(move |z| p.eval(z))
            }
            Self::Func { f, .. } => f.clone(),
        }
    }

    fn fd_step(&self, other: &Self) -> f64 {
        match (self, other) {
            (Self::Func { h_fd, .. }, _) | (_, Self::Func { h_fd, .. }) => *h_fd,
            _ => DEFAULT_FD_STEP,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        match (self, other) {
            (Self::Poly(a), Self::Poly(b)) => Self::Poly(a.clone() + b.clone()),
            _ => {
                let (fa, fb) = (self.closure(), other.closure());
                Self::Func {
                    nvars: self.nvars(),
                    f: Arc::new(move |z| fa(z) + fb(z)),
                    h_fd: self.fd_step(other),
                }
            }
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        match (self, other) {
            (Self::Poly(a), Self::Poly(b)) => Self::Poly(a * b),
            _ => {
                let (fa, fb) = (self.closure(), other.closure());
                Self::Func {
                    nvars: self.nvars(),
                    f: Arc::new(move |z| fa(z) * fb(z)),
                    h_fd: self.fd_step(other),
                }
            }
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.mul(&Self::constant(self.nvars(), s))
    }

    /// `z_k * self`.
    pub fn mul_var(&self, k: usize) -> Self {
        self.mul(&Self::Poly(Polynomial::var(self.nvars(), k)))
    }

    /// The quotient `(f(z) - f(z|_{z_k=0})) / z_k`.
    ///
    /// For polynomials this is exact division of the part not constant in
    /// `z_k`. For closures it is evaluated as written for `z_k` away from the
    /// face and replaced by the one-sided derivative at the face.
    pub fn quotient_by_var(&self, k: usize) -> Self {
        match self {
            Self::Poly(p) => {
                let moving = p.clone() - p.restrict_zero(k);
                Self::Poly(moving.div_var(k).expect("face-free part is divisible"))
            }
            Self::Func { nvars, f, h_fd } => {
                let f = f.clone();
                let h = *h_fd;
                Self::Func {
                    nvars: *nvars,
                    f: Arc::new(move |z| {
                        let mut face = z.to_vec();
                        face[k] = 0.0;
                        if z[k].abs() > h {
                            (f(z) - f(&face)) / z[k]
                        } else {
                            let mut w = face.clone();
                            w[k] = h;
                            let mut w2 = face.clone();
                            w2[k] = 2.0 * h;
                            (-3.0 * f(&face) + 4.0 * f(&w) - f(&w2)) / (2.0 * h)
                        }
                    }),
                    h_fd: h,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_derivatives_track_analytic() {
        let poly = CoefficientSpec::Polynomial {
            terms: vec![
                Monomial {
                    coeff: 1.5,
                    powers: vec![2, 1],
                },
                Monomial {
                    coeff: -0.5,
                    powers: vec![0, 3],
                },
            ],
        }
        .build(2)
        .unwrap();
        let p = poly.as_poly().unwrap().clone();
        let func = CoefficientField::from_fn(2, move |z| p.eval(z)).with_fd_step(1e-3);
        let z = [0.3, 0.7];
        for k in 0..2 {
            assert!((poly.grad(&z, k) - func.grad(&z, k)).abs() < 1e-5);
            for l in 0..2 {
                assert!((poly.hess(&z, k, l) - func.hess(&z, k, l)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn quotient_polynomial_and_closure_agree() {
        // b(x, y) = x (2 + y) + 3 y
        let b = CoefficientField::Poly(
            Polynomial::from_monomials(
                2,
                &[
                    Monomial {
                        coeff: 2.0,
                        powers: vec![1, 0],
                    },
                    Monomial {
                        coeff: 1.0,
                        powers: vec![1, 1],
                    },
                    Monomial {
                        coeff: 3.0,
                        powers: vec![0, 1],
                    },
                ],
            )
            .unwrap(),
        );
        let q = b.quotient_by_var(0);
        assert_eq!(q.value(&[0.4, 0.5]), 2.5);
        let bf = CoefficientField::from_fn(2, |z| z[0] * (2.0 + z[1]) + 3.0 * z[1]);
        let qf = bf.quotient_by_var(0);
        assert!((qf.value(&[0.4, 0.5]) - 2.5).abs() < 1e-12);
        assert!((qf.value(&[0.0, 0.5]) - 2.5).abs() < 1e-8);
    }
}

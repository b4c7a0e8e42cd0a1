//! Named operators and initial data used by configs and benchmarks.

use serde::{Deserialize, Serialize};

use crate::coefficient::CoefficientField;
use crate::error::{contract, Result};
use crate::geometry::CornerBox;
use crate::operator::{KimuraOperator, OperatorSpec};
use crate::oracles::{bessel_lambda, bessel_mode};
use crate::poly::Polynomial;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum OperatorFamily {
    /// `sum_i x_i d^2_{x_i} + b sum_{i >= n0} d_{x_i} + Laplacian_y` on a cube.
    Model {
        n: usize,
        #[serde(default)]
        m: usize,
        n0: usize,
        #[serde(default)]
        b: f64,
        #[serde(default = "one")]
        radius: f64,
    },
    /// `x (1 - x) d^2_x` on `[0, radius]`.
    ClassicalKimura {
        #[serde(default = "one")]
        radius: f64,
    },
    /// Model plus constant couplings of strength `coupling` in every block
    /// and `c0 = shift`.
    Coupled {
        n: usize,
        m: usize,
        n0: usize,
        b: f64,
        coupling: f64,
        #[serde(default)]
        shift: f64,
        #[serde(default = "one")]
        radius: f64,
    },
    Custom(OperatorSpec),
}

fn one() -> f64 {
    1.0
}

impl OperatorFamily {
    pub fn build(&self) -> Result<KimuraOperator> {
        match self {
            Self::Model {
                n,
                m,
                n0,
                b,
                radius,
            } => {
                let dim = n + m;
                let mut op = KimuraOperator::model(CornerBox::cube(*n, *m, *radius)?, *n0)?;
                if *n0 < *n {
                    if !(*b > 0.0) {
                        return contract("positive-weight axes need b > 0");
                    }
                    for i in *n0..*n {
                        op = op.with_b(i, CoefficientField::constant(dim, *b));
                    }
                    op = op.with_constants(*b, 1.0);
                }
                Ok(op)
            }
            Self::ClassicalKimura { radius } => {
                if !(*radius > 0.0 && *radius <= 1.0) {
                    return contract("classical Kimura radius must lie in (0, 1]");
                }
                let op = KimuraOperator::model(CornerBox::cube(1, 0, *radius)?, 1)?
                    .with_a(0, 0, CoefficientField::constant(1, -1.0))
                    .with_constants(1.0, 1.0 - radius);
                Ok(op)
            }
            Self::Coupled {
                n,
                m,
                n0,
                b,
                coupling,
                shift,
                radius,
            } => {
                let dim = n + m;
                let k = CoefficientField::constant(dim, *coupling);
                let mut op = Self::Model {
                    n: *n,
                    m: *m,
                    n0: *n0,
                    b: *b,
                    radius: *radius,
                }
                .build()?;
                for i in 0..*n {
                    for j in (i + 1)..*n {
                        op = op.with_a(i, j, k.clone());
                    }
                    for l in 0..*m {
                        op = op.with_c_mix(i, l, k.clone());
                    }
                }
                for l in 0..*m {
                    for q in (l + 1)..*m {
                        op = op.with_d(l, q, k.clone());
                    }
                    op = op.with_e(l, k.clone());
                }
                // transverse drift tilted linearly, keeping b_i(0) = b
                for i in *n0..*n {
                    let p =
                        Polynomial::constant(dim, *b) + Polynomial::var(dim, i).scale(*coupling);
                    op = op.with_b(i, CoefficientField::Poly(p));
                }
                op = op.with_c0(CoefficientField::constant(dim, *shift));
                let lambda = lower_ellipticity(&op);
                let beta0 = op.beta0;
                Ok(op.with_constants(beta0, lambda))
            }
            Self::Custom(spec) => spec.build(),
        }
    }
}

/// Smallest symbol eigenvalue over a lattice, rounded down; used as the
/// declared ellipticity constant of the coupled family.
fn lower_ellipticity(op: &KimuraOperator) -> f64 {
    let mut min = f64::INFINITY;
    let steps: usize = 9;
    let dim = op.dim();
    let total = steps.pow(dim as u32);
    for flat in 0..total {
        let mut rem = flat;
        let z: Vec<f64> = (0..dim)
            .map(|k| {
                let i = rem % steps;
                rem /= steps;
                let s = i as f64 / (steps - 1) as f64;
                op.domain.lower(k) + s * (op.domain.upper(k) - op.domain.lower(k))
            })
            .collect();
        let eig = nalgebra::SymmetricEigen::new(op.symbol_matrix(&z)).eigenvalues;
        min = min.min(eig.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    (min * 100.0).floor() / 100.0
}

/// Operators swept by family-wide probes.
pub fn builtin_family() -> Vec<(&'static str, OperatorFamily)> {
    vec![
        (
            "model-s10-zero",
            OperatorFamily::Model {
                n: 1,
                m: 0,
                n0: 1,
                b: 0.0,
                radius: 1.0,
            },
        ),
        (
            "model-s10-positive",
            OperatorFamily::Model {
                n: 1,
                m: 0,
                n0: 0,
                b: 0.5,
                radius: 1.0,
            },
        ),
        (
            "classical-kimura",
            OperatorFamily::ClassicalKimura { radius: 0.5 },
        ),
        (
            "model-s20-zero",
            OperatorFamily::Model {
                n: 2,
                m: 0,
                n0: 2,
                b: 0.0,
                radius: 1.0,
            },
        ),
        (
            "model-s11-zero",
            OperatorFamily::Model {
                n: 1,
                m: 1,
                n0: 1,
                b: 0.0,
                radius: 1.0,
            },
        ),
        (
            "coupled-s21",
            OperatorFamily::Coupled {
                n: 2,
                m: 1,
                n0: 1,
                b: 0.6,
                coupling: 0.2,
                shift: -0.2,
                radius: 1.0,
            },
        ),
        (
            "shifted-s11",
            OperatorFamily::Coupled {
                n: 1,
                m: 1,
                n0: 1,
                b: 0.0,
                coupling: 0.1,
                shift: 2.0,
                radius: 1.0,
            },
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialData {
    /// `x (1 - x)` on the first axis.
    Eigen,
    /// `x (1 - x) ((1 - 2x)^2 - 1/5)`, the next symmetric eigenmode of `x(1-x) d^2`.
    EigenSecond,
    /// `prod_i phi(x_i)` with the first Bessel mode of the box, times a
    /// cosine bump in `y`.
    BesselMode,
    /// `prod_i s_i (1 - s_i)(1 + tilt s_i) prod_l (1 - t_l^2)` in
    /// box-normalized coordinates.
    Profile {
        #[serde(default)]
        tilt: f64,
    },
}

impl InitialData {
    pub fn eval(&self, domain: &CornerBox, z: &[f64]) -> f64 {
        let n = domain.n();
        let y_part = |z: &[f64]| -> f64 {
            (0..domain.m())
                .map(|l| {
                    let t = (z[n + l] - domain.y_center[l]) / domain.y_radius[l];
                    1.0 - t * t
                })
                .product()
        };
        match self {
            Self::Eigen => z[0] * (1.0 - z[0]),
            Self::EigenSecond => {
                let s = 1.0 - 2.0 * z[0];
                z[0] * (1.0 - z[0]) * (s * s - 0.2)
            }
            Self::BesselMode => {
                let x: f64 = (0..n)
                    .map(|i| {
                        let r = domain.x_extent[i];
                        bessel_mode(bessel_lambda(r), z[i].min(r))
                    })
                    .product();
                let y: f64 = (0..domain.m())
                    .map(|l| {
                        let t = (z[n + l] - domain.y_center[l]) / domain.y_radius[l];
                        (0.5 * std::f64::consts::PI * t).cos()
                    })
                    .product();
                x * y
            }
            Self::Profile { tilt } => {
                let x: f64 = (0..n)
                    .map(|i| {
                        let s = z[i] / domain.x_extent[i];
                        s * (1.0 - s) * (1.0 + tilt * s)
                    })
                    .product();
                x * y_part(z)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_operators_validate() {
        for (name, fam) in builtin_family() {
            let op = fam.build().unwrap();
            let rep = op.validate(9).unwrap();
            assert!(rep.passed(), "{name}: {}", rep.summary());
        }
    }

    #[test]
    fn family_round_trips_through_toml() {
        for (_, fam) in builtin_family() {
            let text = toml::to_string(&fam).unwrap();
            let back: OperatorFamily = toml::from_str(&text).unwrap();
            assert_eq!(back, fam);
        }
    }

    #[test]
    fn second_eigenmode() {
        let op = OperatorFamily::ClassicalKimura { radius: 1.0 }
            .build()
            .unwrap();
        let d = CornerBox::cube(1, 0, 1.0).unwrap();
        for &x in &[0.1, 0.37, 0.8] {
            let h = 1e-4;
            let f = |x: f64| InitialData::EigenSecond.eval(&d, &[x]);
            let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
            assert!((x * (1.0 - x) * d2 + 12.0 * f(x)).abs() < 1e-6);
        }
        assert_eq!(op.n0, 1);
    }
}

//! One-dimensional Gauss rules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{contract, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (
        x.iter().map(|t| c + h * t).collect(),
        w.iter().map(|v| v * h).collect(),
    )
}

/// Gauss rule on `[0, 1]` for the weight `x^s`, `s > -1`, from the Jacobi
/// recurrence (Golub–Welsch).
pub fn gauss_jacobi_unit(n: usize, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(s > -1.0) {
        return contract(format!("Gauss–Jacobi exponent {s} must exceed -1"));
    }
    if n == 0 {
        return contract("Gauss–Jacobi needs at least one node");
    }
    // Jacobi weight (1 - t)^alpha (1 + t)^beta on [-1, 1], alpha = 0, beta = s.
    let (al, be) = (0.0f64, s);
    let ab = al + be;
    let mut j = DMatrix::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let diag = if k == 0 {
            (be - al) / (ab + 2.0)
        } else {
            (be * be - al * al) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        j[(k, k)] = diag;
        if k + 1 < n {
            let k1 = kf + 1.0;
            let num = 4.0 * k1 * (k1 + al) * (k1 + be) * (k1 + ab);
            let t = 2.0 * k1 + ab;
            let off = (num / (t * t * (t + 1.0) * (t - 1.0))).sqrt();
            j[(k, k + 1)] = off;
            j[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::new(j);
    // mu0 for x^s on [0, 1]
    let mu0 = 1.0 / (s + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let t = eig.eigenvalues[k];
            let v0 = eig.eigenvectors[(0, k)];
            (0.5 * (1.0 + t), mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        for n in [1, 2, 5, 16, 40] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg} {q} {exact}");
            }
        }
    }

    #[test]
    fn jacobi_integrates_weighted_polynomials() {
        for s in [-0.9, -0.5, 0.0, 0.5, 2.3] {
            let n = 8;
            let (x, w) = gauss_jacobi_unit(n, s).unwrap();
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 1.0 / (deg as f64 + s + 1.0);
                assert!(
                    (q - exact).abs() < 1e-12 * exact.max(1.0),
                    "s={s} deg={deg}"
                );
            }
        }
        assert!(gauss_jacobi_unit(4, -1.0).is_err());
    }
}

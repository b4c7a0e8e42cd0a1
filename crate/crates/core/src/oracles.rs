//! Independent ground truth: closed-form solutions and path samplers.
//!
//! The one-dimensional model `x u'' + b u'` generates `X_t = Z_{t/2}` where
//! `Z` is a squared Bessel process of dimension `2b`. Its time-`t` law is the
//! Poisson–Gamma mixture `X = t * Gamma(b + N, 1)`, `N ~ Poisson(x0 / t)`,
//! with an atom at 0 of mass `e^{-x0/t}` when `b = 0`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient::CoefficientField;
use crate::error::{contract, KimuraError, Result};
use crate::grid::{Field, TensorGrid};
use crate::operator::KimuraOperator;
use crate::solver::{solve_ivp, Scheme};
use crate::stats::mean_and_stderr;

/// Paths per RNG stream; fixes the ensemble independently of thread count.
pub const SHARD: usize = 4096;

/// First positive zero of `J_1`.
pub const J1_FIRST_ZERO: f64 = 3.831_705_970_207_512_3;

/// `e^{-2t} x (1 - x)`: solves `u_t = x(1-x) u_xx` with `u0 = x(1-x)`.
pub fn exact_eigen_solution(t: f64, x: f64) -> f64 {
    (-2.0 * t).exp() * x * (1.0 - x)
}

/// `sqrt(x / lambda) J_1(2 sqrt(lambda x))`, the eigenfunction of `x d^2/dx^2`
/// with eigenvalue `-lambda`, normalized to unit slope at 0.
pub fn bessel_mode(lambda: f64, x: f64) -> f64 {
    // sum_k (-lambda)^k x^{k+1} / (k! (k+1)!)
    let mut term = x;
    let mut acc = x;
    for k in 0..200 {
        let kf = k as f64;
        term *= -lambda * x / ((kf + 1.0) * (kf + 2.0));
        acc += term;
        if term.abs() <= 1e-17 * acc.abs().max(1e-300) {
            break;
        }
    }
    acc
}

pub fn bessel_mode_derivative(lambda: f64, x: f64) -> f64 {
    // sum_k (-lambda)^k x^k / (k!)^2
    let mut term = 1.0;
    let mut acc = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -lambda * x / (kf * kf);
        acc += term;
        if term.abs() <= 1e-17 * acc.abs() {
            break;
        }
    }
    acc
}

/// Eigenvalue whose mode vanishes at `x = r`.
pub fn bessel_lambda(r: f64) -> f64 {
    J1_FIRST_ZERO * J1_FIRST_ZERO / (4.0 * r)
}

/// Positive separable solution `e^{-lambda t} prod_i phi(x_i)` of
/// `u_t = sum_i x_i u_{x_i x_i}` on `[0, r]^n`, zero on every face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableMode {
    pub r: f64,
    pub n: usize,
}

impl SeparableMode {
    pub fn lambda(&self) -> f64 {
        self.n as f64 * bessel_lambda(self.r)
    }

    pub fn value(&self, t: f64, z: &[f64]) -> f64 {
        let l = bessel_lambda(self.r);
        (-self.lambda() * t).exp()
            * z[..self.n]
                .iter()
                .map(|&x| bessel_mode(l, x.min(self.r)))
                .product::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Exact,
    EulerMaruyama,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub sampler: Sampler,
    pub x0: f64,
    pub t: f64,
    /// Step size; `None` for exact sampling.
    pub dt: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Scale of the weak bias, `sqrt(dt)` for Euler–Maruyama.
    pub bias_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub meta: EnsembleMeta,
    pub terminal: Vec<f64>,
    pub absorbed: Vec<bool>,
    /// First hitting time of 0, `NaN` for surviving paths.
    pub absorption_time: Vec<f64>,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.terminal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminal.is_empty()
    }

    pub fn absorbed_fraction(&self) -> f64 {
        self.absorbed.iter().filter(|&&a| a).count() as f64 / self.len().max(1) as f64
    }

    /// Mean and standard error of `f(X_t)`.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> (f64, f64) {
        let v: Vec<f64> = self.terminal.iter().map(|&x| f(x)).collect();
        mean_and_stderr(&v)
    }

    fn check(&self) -> Result<()> {
        let n = self.meta.n_paths;
        if self.terminal.len() != n || self.absorbed.len() != n || self.absorption_time.len() != n {
            return Err(KimuraError::Format(
                "ensemble columns disagree with the path count".into(),
            ));
        }
        if self
            .terminal
            .iter()
            .zip(&self.absorbed)
            .any(|(&x, &a)| a && x != 0.0)
        {
            return Err(KimuraError::Format(
                "absorbed path with nonzero terminal value".into(),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
    }
}

struct PathOut {
    x: f64,
    absorbed: bool,
    tau: f64,
}

fn run_sharded(
    n_paths: usize,
    seed: u64,
    path: impl Fn(&mut ChaCha8Rng) -> PathOut + Sync,
) -> Vec<PathOut> {
    let shards = n_paths.div_ceil(SHARD);
    let chunks: Vec<Vec<PathOut>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let count = SHARD.min(n_paths - s * SHARD);
            (0..count).map(|_| path(&mut rng)).collect()
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

fn assemble(meta: EnsembleMeta, out: Vec<PathOut>) -> PathEnsemble {
    let mut e = PathEnsemble {
        meta,
        terminal: Vec::with_capacity(out.len()),
        absorbed: Vec::with_capacity(out.len()),
        absorption_time: Vec::with_capacity(out.len()),
    };
    for p in out {
        e.terminal.push(p.x);
        e.absorbed.push(p.absorbed);
        e.absorption_time.push(p.tau);
    }
    e
}

/// Exact time-`t` samples of the diffusion generated by `x u'' + b u'`.
pub fn sample_model_exact(
    b: f64,
    x0: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(KimuraError::Domain(format!(
            "drift weight {b} must be nonnegative"
        )));
    }
    if !(x0 >= 0.0) || !x0.is_finite() {
        return Err(KimuraError::Domain(format!(
            "start point {x0} must be nonnegative"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(KimuraError::Domain(format!("time {t} must be nonnegative")));
    }
    let meta = EnsembleMeta {
        sampler: Sampler::Exact,
        x0,
        t,
        dt: None,
        n_paths,
        seed,
        bias_scale: 0.0,
    };
    if t == 0.0 {
        let absorbed = x0 == 0.0 && b == 0.0;
        return Ok(assemble(
            meta,
            (0..n_paths)
                .map(|_| PathOut {
                    x: x0,
                    absorbed,
                    tau: if absorbed { 0.0 } else { f64::NAN },
                })
                .collect(),
        ));
    }
    let rate = x0 / t;
    let poisson = if rate > 0.0 {
        Some(Poisson::new(rate).map_err(|e| KimuraError::Domain(e.to_string()))?)
    } else {
        None
    };
    let out = run_sharded(n_paths, seed, |rng| {
        let k: f64 = poisson.as_ref().map_or(0.0, |p| p.sample(rng));
        let shape = b + k;
        if shape == 0.0 {
            // absorbed: T = x0 / E conditioned on T <= t, i.e. E = x0/t + Exp(1)
            let e: f64 = Exp1.sample(rng);
            let tau = if x0 == 0.0 { 0.0 } else { x0 / (rate + e) };
            return PathOut {
                x: 0.0,
                absorbed: true,
                tau,
            };
        }
        let g = Gamma::new(shape, 1.0).expect("positive shape");
        PathOut {
            x: t * g.sample(rng),
            absorbed: false,
            tau: f64::NAN,
        }
    });
    Ok(assemble(meta, out))
}

/// Coefficients of a one-dimensional Kimura generator
/// `(x abar(x) + x^2 a(x)) u'' + b(x) u'`, evaluated by Horner's rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Diffusion1d {
    /// Power-series coefficients of `x abar + x^2 a`.
    pub half_sigma2: Vec<f64>,
    pub drift: Vec<f64>,
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

fn univariate(f: &CoefficientField) -> Result<Vec<f64>> {
    let Some(p) = f.as_poly() else {
        return contract("path sampling needs polynomial coefficients");
    };
    let mut c = vec![0.0; p.degree() as usize + 1];
    for m in p.monomials() {
        c[m.powers[0] as usize] += m.coeff;
    }
    Ok(c)
}

impl Diffusion1d {
    pub fn model(b: f64) -> Self {
        Self {
            half_sigma2: vec![0.0, 1.0],
            drift: vec![b],
        }
    }

    pub fn from_operator(op: &KimuraOperator) -> Result<Self> {
        if op.n != 1 || op.m != 0 {
            return contract("path sampling needs a one-dimensional operator");
        }
        if !op.c0.is_identically_zero() {
            return contract("path sampling needs c0 = 0");
        }
        let abar = univariate(&op.abar[0])?;
        let a = univariate(&op.a[0][0])?;
        let mut s = vec![0.0; (abar.len() + 1).max(a.len() + 2)];
        for (k, v) in abar.iter().enumerate() {
            s[k + 1] += v;
        }
        for (k, v) in a.iter().enumerate() {
            s[k + 2] += v;
        }
        Ok(Self {
            half_sigma2: s,
            drift: univariate(&op.b[0])?,
        })
    }

    pub fn sigma2(&self, x: f64) -> f64 {
        2.0 * horner(&self.half_sigma2, x)
    }

    pub fn drift(&self, x: f64) -> f64 {
        horner(&self.drift, x)
    }
}

/// Euler–Maruyama paths. With `b(0) > 0` the state is reflected as
/// `max(X, 0)`; with `b(0) = 0` a path is absorbed at its first step with
/// `X <= 0`.
pub fn sample_em(
    sde: &Diffusion1d,
    x0: f64,
    t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if !(dt > 0.0) || !dt.is_finite() {
        return contract(format!("step size {dt} must be positive"));
    }
    if !(t >= 0.0) || !(x0 >= 0.0) {
        return contract("time and start point must be nonnegative");
    }
    let steps = (t / dt).round() as usize;
    let h = if steps > 0 { t / steps as f64 } else { dt };
    let sqrt_h = h.sqrt();
    let absorbing = sde.drift(0.0) == 0.0;
    let meta = EnsembleMeta {
        sampler: Sampler::EulerMaruyama,
        x0,
        t,
        dt: Some(h),
        n_paths,
        seed,
        bias_scale: h.sqrt(),
    };
    let out = run_sharded(n_paths, seed, |rng| {
        let mut x = x0;
        if absorbing && x <= 0.0 {
            return PathOut {
                x: 0.0,
                absorbed: true,
                tau: 0.0,
            };
        }
        for k in 0..steps {
            let z: f64 = StandardNormal.sample(rng);
            let s2 = sde.sigma2(x).max(0.0);
            x += sde.drift(x) * h + s2.sqrt() * sqrt_h * z;
            if x <= 0.0 {
                if absorbing {
                    return PathOut {
                        x: 0.0,
                        absorbed: true,
                        tau: (k + 1) as f64 * h,
                    };
                }
                x = 0.0;
            }
        }
        PathOut {
            x,
            absorbed: false,
            tau: f64::NAN,
        }
    });
    Ok(assemble(meta, out))
}

/// Number of functions in the pairing dictionary.
pub const TEST_FUNCTIONS: usize = 20;

/// The `k`-th smooth bounded test function on `[0, inf)`.
pub fn test_function(k: usize, x: f64) -> f64 {
    const CENTERS: [f64; 10] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.3, 1.6, 2.0, 2.5];
    const RATES: [f64; 5] = [1.0, 2.0, 3.0, 5.0, 8.0];
    match k {
        0..=9 => {
            let s = (x - CENTERS[k]) / 0.4;
            (-s * s).exp()
        }
        10..=14 => (-RATES[k - 10] * x).exp(),
        15 => x * (-x).exp(),
        16 => x * x * (-x).exp(),
        17 => (2.0 * x).sin() * (-x).exp(),
        18 => 1.0 / ((1.0 + x) * (1.0 + x)),
        19 => (3.0 * x).cos() * (-2.0 * x).exp(),
        _ => panic!("test function index {k} out of range"),
    }
}

/// `u_k(t, .) = E_.[phi_k(X_t)]` for every dictionary function, from PDE
/// solves of `u_t = Lu` on a one-dimensional grid. When the face is
/// absorbing the constant `phi_k(0)` is split off (constants are
/// annihilated) so that the solved part vanishes on the face.
pub fn pde_pairings(
    op: &KimuraOperator,
    grid: Arc<TensorGrid>,
    t: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<Vec<Field>> {
    if op.n != 1 || op.m != 0 {
        return contract("pairings need a one-dimensional operator");
    }
    (0..TEST_FUNCTIONS)
        .map(|k| {
            let shift = if op.n0 == 1 {
                test_function(k, 0.0)
            } else {
                0.0
            };
            let mut u0 = Field::from_fn(grid.clone(), |z| test_function(k, z[0]) - shift)?;
            if op.n0 == 1 {
                u0.values[0] = 0.0;
            }
            let traj = solve_ivp(op, grid.clone(), &u0, t, dt, scheme, usize::MAX)?;
            let last = traj.last();
            Ok(last.map(|v| v + shift).at_time(last.time.unwrap_or(t)))
        })
        .collect()
}

/// `P_x(X_t > 0)` for the absorbing model: the PDE solve with `u0 = 1` off the face.
pub fn pde_survival(
    op: &KimuraOperator,
    grid: Arc<TensorGrid>,
    x0: f64,
    t: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<f64> {
    if op.n != 1 || op.m != 0 || op.n0 != 1 {
        return contract("survival needs a one-dimensional operator with an absorbing face");
    }
    let u0 = Field::from_fn(grid.clone(), |z| if z[0] > 0.0 { 1.0 } else { 0.0 })?;
    let traj = solve_ivp(op, grid, &u0, t, dt, scheme, usize::MAX)?;
    Ok(traj.last().interpolate(&[x0]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingRow {
    pub index: usize,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub pde: f64,
    /// `|mc - pde| / stderr`.
    pub z_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityComparison {
    pub rows: Vec<PairingRow>,
    /// `max_k |mc_k - pde_k|`.
    pub max_abs_diff: f64,
    pub max_z_score: f64,
    /// Histogram masses of the terminal values on `bin_edges`.
    pub bin_edges: Vec<f64>,
    pub mc_bins: Vec<f64>,
    /// `sum |mc - reference|` when reference bin masses are supplied.
    pub binned_l1: Option<f64>,
}

/// Expectation pairing: `E[phi_k(X_t)]` from the ensemble against the PDE
/// value `u_k(t, x0)`, plus a histogram on `bins` equal cells of `[0, upper]`.
pub fn density_compare(
    fields: &[Field],
    ensemble: &PathEnsemble,
    bins: usize,
    upper: f64,
    reference_bins: Option<&[f64]>,
) -> Result<DensityComparison> {
    if fields.len() != TEST_FUNCTIONS {
        return contract(format!(
            "expected {TEST_FUNCTIONS} paired fields, got {}",
            fields.len()
        ));
    }
    for f in fields {
        match f.time {
            Some(s) if (s - ensemble.meta.t).abs() <= 1e-9 * ensemble.meta.t.max(1.0) => {}
            other => {
                return contract(format!(
                    "field time {other:?} does not match ensemble time {}",
                    ensemble.meta.t
                ));
            }
        }
    }
    if bins == 0 || !(upper > 0.0) {
        return contract("histogram needs at least one bin and a positive range");
    }
    let x0 = ensemble.meta.x0;
    let rows: Vec<PairingRow> = fields
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let (m, se) = ensemble.expectation(|x| test_function(k, x));
            let pde = f.interpolate(&[x0]);
            let diff = (m - pde).abs();
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            PairingRow {
                index: k,
                mc_mean: m,
                mc_stderr: se,
                pde,
                z_score: z,
            }
        })
        .collect();
    let bin_edges: Vec<f64> = (0..=bins).map(|i| upper * i as f64 / bins as f64).collect();
    let mut mc_bins = vec![0.0; bins];
    for &x in &ensemble.terminal {
        let i = ((x / upper) * bins as f64).floor() as usize;
        if i < bins {
            mc_bins[i] += 1.0;
        }
    }
    let n = ensemble.len().max(1) as f64;
    mc_bins.iter_mut().for_each(|v| *v /= n);
    let binned_l1 = match reference_bins {
        Some(r) if r.len() == bins => Some(mc_bins.iter().zip(r).map(|(a, b)| (a - b).abs()).sum()),
        Some(_) => return contract("reference histogram has the wrong number of bins"),
        None => None,
    };
    Ok(DensityComparison {
        max_abs_diff: rows
            .iter()
            .map(|r| (r.mc_mean - r.pde).abs())
            .fold(0.0, f64::max),
        max_z_score: rows.iter().map(|r| r.z_score).fold(0.0, f64::max),
        rows,
        bin_edges,
        mc_bins,
        binned_l1,
    })
}

/// `P(X_t <= x)` for the model `x u'' + b u'` started at `x0`.
pub fn model_cdf(b: f64, x0: f64, t: f64, x: f64) -> f64 {
    use statrs::function::gamma::gamma_lr;
    if x < 0.0 {
        return 0.0;
    }
    if t == 0.0 {
        return if x >= x0 { 1.0 } else { 0.0 };
    }
    let rate = x0 / t;
    // Poisson weights summed from the mode outward
    let kmax = (rate + 12.0 * rate.sqrt() + 30.0) as usize;
    let mut acc = 0.0;
    let mut logw = -rate;
    for k in 0..=kmax {
        if k > 0 {
            logw += rate.ln() - (k as f64).ln();
        }
        let shape = b + k as f64;
        let p = if shape == 0.0 {
            1.0
        } else if x == 0.0 {
            0.0
        } else {
            gamma_lr(shape, x / t)
        };
        acc += logw.exp() * p;
    }
    acc.min(1.0)
}

/// Exact bin masses of the model law on `edges`.
pub fn model_bins(b: f64, x0: f64, t: f64, edges: &[f64]) -> Vec<f64> {
    edges
        .windows(2)
        .map(|w| {
            let lo = if w[0] <= 0.0 {
                0.0
            } else {
                model_cdf(b, x0, t, w[0])
            };
            model_cdf(b, x0, t, w[1]) - lo
        })
        .collect()
}

/// Uniform `[0, 1)` draws, used by the property tests of seed determinism.
pub fn uniform_stream(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CornerBox;
    use crate::stats::ks_distance;

    #[test]
    fn eigen_solution_values() {
        assert_eq!(exact_eigen_solution(0.0, 0.3), 0.3 * 0.7);
        assert!((exact_eigen_solution(0.5, 0.5) - 0.091_969_860_292_860_6).abs() < 1e-12);
        assert_eq!(exact_eigen_solution(2.0, 0.0), 0.0);
        assert_eq!(exact_eigen_solution(2.0, 1.0), 0.0);
    }

    #[test]
    fn bessel_mode_is_an_eigenfunction() {
        let lam = bessel_lambda(1.0);
        assert!(bessel_mode(lam, 1.0).abs() < 1e-13);
        for &x in &[0.05, 0.3, 0.7] {
            let h = 1e-4;
            let d2 = (bessel_mode(lam, x + h) - 2.0 * bessel_mode(lam, x)
                + bessel_mode(lam, x - h))
                / (h * h);
            assert!((x * d2 + lam * bessel_mode(lam, x)).abs() < 1e-6);
            let d1 = (bessel_mode(lam, x + h) - bessel_mode(lam, x - h)) / (2.0 * h);
            assert!((d1 - bessel_mode_derivative(lam, x)).abs() < 1e-7);
        }
        assert!((0..100)
            .map(|i| i as f64 / 100.0)
            .all(|x| x == 0.0 || bessel_mode(lam, x) > 0.0));
    }

    #[test]
    fn absorbing_start() {
        let e = sample_model_exact(0.0, 0.0, 0.5, 1000, 1).unwrap();
        assert!(e.absorbed.iter().all(|&a| a));
        assert!(e.terminal.iter().all(|&x| x == 0.0));
        e.validate().unwrap();
        assert!(sample_model_exact(-0.1, 0.3, 0.5, 10, 1).is_err());
    }

    #[test]
    fn exact_moments() {
        for &(b, x0, t) in &[(0.5, 0.3, 0.5), (0.0, 0.4, 0.3), (2.0, 1.0, 1.0)] {
            let e = sample_model_exact(b, x0, t, 100_000, 11).unwrap();
            let (m, se) = e.expectation(|x| x);
            assert!(
                (m - (x0 + b * t)).abs() < 3.0 * se,
                "mean b={b}: {m} vs {}",
                x0 + b * t
            );
            // d/dt E[X^2] = 2(b + 1) E[X]  =>  E[X^2] = x0^2 + 2(b+1)(x0 t + b t^2 / 2)
            let m2_exact = x0 * x0 + 2.0 * (b + 1.0) * (x0 * t + 0.5 * b * t * t);
            let (m2, se2) = e.expectation(|x| x * x);
            assert!(
                (m2 - m2_exact).abs() < 3.0 * se2,
                "second moment b={b}: {m2} vs {m2_exact}"
            );
        }
    }

    #[test]
    fn absorption_probability_and_times() {
        let (x0, t) = (0.3, 0.5);
        let e = sample_model_exact(0.0, x0, t, 100_000, 5).unwrap();
        let p = (-x0 / t).exp();
        let se = (p * (1.0 - p) / 1e5).sqrt();
        assert!((e.absorbed_fraction() - p).abs() < 3.0 * se);
        assert!(e
            .absorption_time
            .iter()
            .zip(&e.absorbed)
            .all(|(&s, &a)| if a { s > 0.0 && s <= t } else { s.is_nan() }));
    }

    #[test]
    fn seeds_are_deterministic() {
        let a = sample_model_exact(0.5, 0.3, 0.5, 9000, 42).unwrap();
        let b = sample_model_exact(0.5, 0.3, 0.5, 9000, 42).unwrap();
        let c = sample_model_exact(0.5, 0.3, 0.5, 9000, 43).unwrap();
        assert_eq!((&a.terminal, &a.absorbed), (&b.terminal, &b.absorbed));
        let bits = |e: &PathEnsemble| {
            e.absorption_time
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a.terminal, c.terminal);
    }

    #[test]
    fn em_deterministic_drift() {
        let sde = Diffusion1d {
            half_sigma2: vec![0.0],
            drift: vec![0.7],
        };
        let e = sample_em(&sde, 0.2, 1.0, 0.01, 10, 3).unwrap();
        assert!(e.terminal.iter().all(|&x| (x - 0.9).abs() < 1e-12));
    }

    #[test]
    fn em_against_exact() {
        let exact = sample_model_exact(0.5, 0.3, 0.5, 20_000, 9).unwrap();
        let em = sample_em(&Diffusion1d::model(0.5), 0.3, 0.5, 1e-3, 20_000, 10).unwrap();
        let d = ks_distance(&mut exact.terminal.clone(), &mut em.terminal.clone());
        assert!(d < 0.03, "{d}");
    }

    #[test]
    fn cdf_matches_moments_and_atom() {
        assert!((model_cdf(0.0, 0.3, 0.5, 0.0) - (-0.6f64).exp()).abs() < 1e-14);
        let mean: f64 = {
            let n = 4000;
            let upper = 20.0;
            (0..n)
                .map(|i| {
                    (upper / n as f64)
                        * (1.0 - model_cdf(0.5, 0.3, 0.5, (i as f64 + 0.5) * upper / n as f64))
                })
                .sum()
        };
        assert!((mean - 0.55).abs() < 1e-4, "{mean}");
    }

    #[test]
    fn diffusion_from_operator() {
        let op = KimuraOperator::model(CornerBox::cube(1, 0, 1.0).unwrap(), 0)
            .unwrap()
            .with_b(0, CoefficientField::constant(1, 0.25));
        let s = Diffusion1d::from_operator(&op).unwrap();
        assert_eq!(s.sigma2(0.5), 1.0);
        assert_eq!(s.drift(0.9), 0.25);
    }

    #[test]
    fn density_compare_time_mismatch() {
        let grid =
            Arc::new(TensorGrid::uniform(CornerBox::cube(1, 0, 1.0).unwrap(), &[4]).unwrap());
        let fields = vec![Field::zeros(grid).at_time(0.2); TEST_FUNCTIONS];
        let e = sample_model_exact(0.5, 0.3, 0.5, 10, 1).unwrap();
        assert!(matches!(
            density_compare(&fields, &e, 4, 1.0, None),
            Err(KimuraError::Contract(_))
        ));
    }
}

//! Generalized Kimura operators in normal form.
//!
//! ```text
//! Lu = sum_i (x_i abar_ii u_{x_i x_i} + b_i u_{x_i}) + sum_{i,j} x_i x_j a_ij u_{x_i x_j}
//!    + sum_{l,k} d_lk u_{y_l y_k} + sum_{i,l} x_i c_il u_{x_i y_l} + sum_l e_l u_{y_l} + c0 u
//! ```
//!
//! The first `n0` degenerate directions carry zero weight on their faces
//! (tangent boundary, Dirichlet data); the remaining ones carry weights
//! bounded below by `beta0` (transverse boundary, no condition).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::coefficient::{CoefficientField, CoefficientSpec};
use crate::error::{contract, KimuraError, Result};
use crate::geometry::{weight_tangent, CornerBox};
use crate::poly::Polynomial;

pub const DEFAULT_LATTICE: usize = 33;
/// Face values of a zero weight below this magnitude count as zero.
pub const CLEANNESS_TOL: f64 = 1e-12;
const CHECK_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct KimuraOperator {
    pub n: usize,
    pub m: usize,
    pub n0: usize,
    pub beta0: f64,
    pub lambda: f64,
    pub domain: CornerBox,
    pub abar: Vec<CoefficientField>,
    pub a: Vec<Vec<CoefficientField>>,
    pub b: Vec<CoefficientField>,
    pub c_mix: Vec<Vec<CoefficientField>>,
    pub d: Vec<Vec<CoefficientField>>,
    pub e: Vec<CoefficientField>,
    pub c0: CoefficientField,
}

impl KimuraOperator {
    /// `sum_i x_i d^2_{x_i} + Laplacian_y` on `domain`, with every other
    /// coefficient zero. Use the `with_*` builders to add couplings.
    pub fn model(domain: CornerBox, n0: usize) -> Result<Self> {
        let (n, m) = (domain.n(), domain.m());
        if n0 > n {
            return contract(format!("n0 = {n0} exceeds n = {n}"));
        }
        let dim = n + m;
        let zero = CoefficientField::zero(dim);
        let one = CoefficientField::constant(dim, 1.0);
        Ok(Self {
            n,
            m,
            n0,
            beta0: 1.0,
            lambda: 1.0,
            domain,
            abar: vec![one.clone(); n],
            a: vec![vec![zero.clone(); n]; n],
            b: vec![zero.clone(); n],
            c_mix: vec![vec![zero.clone(); m]; n],
            d: (0..m)
                .map(|l| {
                    (0..m)
                        .map(|k| if l == k { one.clone() } else { zero.clone() })
                        .collect()
                })
                .collect(),
            e: vec![zero.clone(); m],
            c0: zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn with_b(mut self, i: usize, b: CoefficientField) -> Self {
        self.b[i] = b;
        self
    }

    /// Sets `a_ij` and `a_ji`.
    pub fn with_a(mut self, i: usize, j: usize, a: CoefficientField) -> Self {
        self.a[i][j] = a.clone();
        self.a[j][i] = a;
        self
    }

    pub fn with_c_mix(mut self, i: usize, l: usize, c: CoefficientField) -> Self {
        self.c_mix[i][l] = c;
        self
    }

    /// Sets `d_lk` and `d_kl`.
    pub fn with_d(mut self, l: usize, k: usize, d: CoefficientField) -> Self {
        self.d[l][k] = d.clone();
        self.d[k][l] = d;
        self
    }

    pub fn with_e(mut self, l: usize, e: CoefficientField) -> Self {
        self.e[l] = e;
        self
    }

    pub fn with_c0(mut self, c0: CoefficientField) -> Self {
        self.c0 = c0;
        self
    }

    pub fn with_constants(mut self, beta0: f64, lambda: f64) -> Self {
        self.beta0 = beta0;
        self.lambda = lambda;
        self
    }

    /// Symmetric matrix of the principal symbol after the rescaling
    /// `xi_i -> xi_i / sqrt(x_i)`; strict ellipticity means its smallest
    /// eigenvalue is at least `lambda`.
    pub fn symbol_matrix(&self, z: &[f64]) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut s = DMatrix::zeros(n + m, n + m);
        let sx: Vec<f64> = z[..n].iter().map(|x| x.max(0.0).sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                let aij = 0.5 * (self.a[i][j].value(z) + self.a[j][i].value(z));
                s[(i, j)] = sx[i] * sx[j] * aij;
            }
            s[(i, i)] += self.abar[i].value(z);
            for l in 0..m {
                let v = 0.5 * sx[i] * self.c_mix[i][l].value(z);
                s[(i, n + l)] = v;
                s[(n + l, i)] = v;
            }
        }
        for l in 0..m {
            for k in 0..m {
                s[(n + l, n + k)] = 0.5 * (self.d[l][k].value(z) + self.d[k][l].value(z));
            }
        }
        s
    }

    fn all_coefficients(&self) -> impl Iterator<Item = (String, &CoefficientField)> {
        let abar = self
            .abar
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("abar[{i}]"), c));
        let a = self.a.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(j, c)| (format!("a[{i}][{j}]"), c))
        });
        let b = self
            .b
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("b[{i}]"), c));
        let cm = self.c_mix.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(l, c)| (format!("c_mix[{i}][{l}]"), c))
        });
        let d = self.d.iter().enumerate().flat_map(|(l, row)| {
            row.iter()
                .enumerate()
                .map(move |(k, c)| (format!("d[{l}][{k}]"), c))
        });
        let e = self
            .e
            .iter()
            .enumerate()
            .map(|(l, c)| (format!("e[{l}]"), c));
        abar.chain(a)
            .chain(b)
            .chain(cm)
            .chain(d)
            .chain(e)
            .chain(std::iter::once(("c0".to_string(), &self.c0)))
    }

    fn check_shapes(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let ok = self.domain.n() == n
            && self.domain.m() == m
            && self.abar.len() == n
            && self.b.len() == n
            && self.a.len() == n
            && self.a.iter().all(|r| r.len() == n)
            && self.c_mix.len() == n
            && self.c_mix.iter().all(|r| r.len() == m)
            && self.d.len() == m
            && self.d.iter().all(|r| r.len() == m)
            && self.e.len() == m
            && self.n0 <= n;
        if !ok {
            return Err(KimuraError::MalformedOperator(
                "coefficient block shapes do not match (n, m)".into(),
            ));
        }
        if self.all_coefficients().any(|(_, c)| c.nvars() != n + m) {
            return Err(KimuraError::MalformedOperator(
                "coefficient variable count differs from n + m".into(),
            ));
        }
        Ok(())
    }

    /// Evaluate `Lu(z)` from the jet of `u` at `z`.
    pub fn apply_pointwise(&self, u: &Jet, z: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if z.len() != dim {
            return contract(format!("point has {} coordinates, expected {dim}", z.len()));
        }
        u.check_dim(dim)?;
        Ok(self.apply_unchecked(u, z))
    }

    fn apply_unchecked(&self, u: &Jet, z: &[f64]) -> f64 {
        let (n, m) = (self.n, self.m);
        let mut acc = self.c0.value(z) * u.value;
        for i in 0..n {
            let xi = z[i];
            acc += xi * self.abar[i].value(z) * u.d2(i, i) + self.b[i].value(z) * u.grad[i];
            for j in 0..n {
                acc += xi * z[j] * self.a[i][j].value(z) * u.d2(i, j);
            }
            for l in 0..m {
                acc += xi * self.c_mix[i][l].value(z) * u.d2(i, n + l);
            }
        }
        for l in 0..m {
            acc += self.e[l].value(z) * u.grad[n + l];
            for k in 0..m {
                acc += self.d[l][k].value(z) * u.d2(n + l, n + k);
            }
        }
        acc
    }

    /// Check normal form, cleanness, strict ellipticity and symmetry on a
    /// `lattice_resolution`-per-axis lattice of the closed domain.
    pub fn validate(&self, lattice_resolution: usize) -> Result<ValidationReport> {
        if lattice_resolution < 2 {
            return contract("lattice resolution must be at least 2");
        }
        self.check_shapes()?;
        let (n, m, dim) = (self.n, self.m, self.dim());
        let lattice = lattice_points(&self.domain, lattice_resolution);

        let mut normal = CheckOutcome::new("normal_form");
        let mut clean = CheckOutcome::new("cleanness");
        let mut ellip = CheckOutcome::new("ellipticity");
        let mut sym = CheckOutcome::new("symmetry");

        for z in &lattice {
            for (name, c) in self.all_coefficients() {
                let v = c.value(z);
                if !v.is_finite() {
                    return Err(KimuraError::MalformedOperator(format!(
                        "{name} is not finite at {z:?}"
                    )));
                }
            }
            for i in 0..n {
                normal.record((self.abar[i].value(z) - 1.0).abs(), CHECK_TOL, z);
                for j in 0..n {
                    sym.record(
                        (self.a[i][j].value(z) - self.a[j][i].value(z)).abs(),
                        CHECK_TOL,
                        z,
                    );
                }
                if z[i] == 0.0 {
                    let bi = self.b[i].value(z);
                    if i < self.n0 {
                        clean.record(bi.abs(), CLEANNESS_TOL, z);
                    } else {
                        clean.record(self.beta0 - bi, CHECK_TOL, z);
                    }
                }
            }
            for l in 0..m {
                for k in 0..m {
                    sym.record(
                        (self.d[l][k].value(z) - self.d[k][l].value(z)).abs(),
                        CHECK_TOL,
                        z,
                    );
                }
            }
            if dim > 0 {
                let eig = SymmetricEigen::new(self.symbol_matrix(z)).eigenvalues;
                let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
                ellip.record(self.lambda - min, CHECK_TOL, z);
            }
        }
        if !(self.lambda > 0.0) {
            ellip.fail(self.lambda.abs(), None);
        }
        if self.n0 < n && !(self.beta0 > 0.0) {
            clean.fail(self.beta0.abs(), None);
        }
        Ok(ValidationReport {
            lattice_resolution,
            checks: vec![normal, clean, ellip, sym],
        })
    }

    /// Doob-type conjugation by `w^T`: returns the operator `Lt` with
    /// `Lt (w^T u) = w^T L u`, whose weights on the formerly tangent faces
    /// equal 2. The result is validated on the default lattice.
    pub fn h_transform(&self) -> Result<KimuraOperator> {
        let out = self.h_transform_unchecked()?;
        if self.n0 == 0 {
            return Ok(out);
        }
        self.certify_quotients(DEFAULT_LATTICE)?;
        let report = out.validate(DEFAULT_LATTICE)?;
        if !report.passed() {
            return Err(KimuraError::MalformedOperator(format!(
                "conjugated operator failed validation: {}",
                report.summary()
            )));
        }
        Ok(out)
    }

    pub(crate) fn h_transform_unchecked(&self) -> Result<KimuraOperator> {
        self.check_shapes()?;
        let (n, m, n0) = (self.n, self.m, self.n0);
        if n0 == 0 {
            return Ok(self.clone());
        }
        let dim = self.dim();
        let mut out = self.clone();
        for i in 0..n {
            let mut row = CoefficientField::zero(dim);
            for j in 0..n0 {
                row = row.add(&self.a[i][j]);
            }
            let mut extra = row.mul_var(i).scale(2.0);
            if i < n0 {
                extra = extra.add(&self.abar[i].scale(2.0));
            }
            out.b[i] = self.b[i].add(&extra);
        }
        for l in 0..m {
            let mut acc = self.e[l].clone();
            for i in 0..n0 {
                acc = acc.add(&self.c_mix[i][l]);
            }
            out.e[l] = acc;
        }
        let mut zeroth = self.c0.clone();
        for i in 0..n0 {
            for j in 0..n0 {
                if i != j {
                    zeroth = zeroth.add(&self.a[i][j]);
                }
            }
            zeroth = zeroth.add(&self.b[i].quotient_by_var(i));
        }
        out.c0 = zeroth;
        out.n0 = 0;
        out.beta0 = if n0 < n { self.beta0.min(2.0) } else { 2.0 };
        Ok(out)
    }

    /// Certify that `b_i / x_i` (i <= n0) is bounded: the difference quotient
    /// `(b_i(z) - b_i(z|x_i=0)) / x_i` is finite at lattice points at least
    /// one cell away from the face and agrees with the quotient coefficient.
    fn certify_quotients(&self, res: usize) -> Result<()> {
        let lattice = lattice_points(&self.domain, res);
        for i in 0..self.n0 {
            let q = self.b[i].quotient_by_var(i);
            let cell = self.domain.x_extent[i] / (res - 1) as f64;
            for z in lattice.iter().filter(|z| z[i] >= cell * (1.0 - 1e-12)) {
                let mut face = z.clone();
                face[i] = 0.0;
                let fd = (self.b[i].value(z) - self.b[i].value(&face)) / z[i];
                let exact = q.value(z);
                if !fd.is_finite() || (fd - exact).abs() > 1e-8 * (1.0 + fd.abs()) {
                    return Err(KimuraError::MalformedOperator(format!(
                        "b[{i}]/x_{i} not certified bounded at {z:?} (difference quotient {fd}, quotient {exact})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `max |Lt(w^T u)(z) - w^T(z) (Lu)(z)|` over interior probe points, with
    /// `u` polynomial and divisible by `prod_{i <= n0} x_i`.
    pub fn conjugation_residual(&self, u: &Polynomial, probes: &[Vec<f64>]) -> Result<f64> {
        let mut ut = u.clone();
        for i in 0..self.n0 {
            if !ut.divisible_by_var(i) {
                return contract(format!("test function is not divisible by x_{}", i + 1));
            }
            ut = ut.div_var(i)?;
        }
        let lt = self.h_transform_unchecked()?;
        let mut worst: f64 = 0.0;
        for z in probes {
            if z.len() != self.dim() || z[..self.n].iter().any(|&x| !(x > 0.0)) {
                return contract(format!("probe {z:?} is not strictly interior"));
            }
            let lhs = lt.apply_unchecked(&Jet::from_poly(&ut, z), z);
            let rhs = weight_tangent(z, self.n0) * self.apply_unchecked(&Jet::from_poly(u, z), z);
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(worst)
    }

    /// `[L, phi] u` at `z`, so that `L(phi u) = phi Lu + [L, phi] u`.
    ///
    /// The `u L phi` part excludes the zeroth-order coefficient, which
    /// otherwise would be counted twice in the product rule.
    pub fn commutator_apply(&self, phi: &Jet, u: &Jet, z: &[f64]) -> Result<f64> {
        let dim = self.dim();
        phi.check_dim(dim)?;
        u.check_dim(dim)?;
        if z.len() != dim {
            return contract("point dimension mismatch");
        }
        let (n, m) = (self.n, self.m);
        let mut acc = u.value * (self.apply_unchecked(phi, z) - self.c0.value(z) * phi.value);
        for i in 0..n {
            let xi = z[i];
            acc += 2.0 * xi * self.abar[i].value(z) * u.grad[i] * phi.grad[i];
            for j in 0..n {
                acc += xi
                    * z[j]
                    * self.a[i][j].value(z)
                    * (u.grad[i] * phi.grad[j] + u.grad[j] * phi.grad[i]);
            }
            for l in 0..m {
                acc += xi
                    * self.c_mix[i][l].value(z)
                    * (u.grad[i] * phi.grad[n + l] + u.grad[n + l] * phi.grad[i]);
            }
        }
        for l in 0..m {
            for k in 0..m {
                acc += self.d[l][k].value(z)
                    * (u.grad[n + l] * phi.grad[n + k] + u.grad[n + k] * phi.grad[n + l]);
            }
        }
        Ok(acc)
    }
}

fn lattice_points(domain: &CornerBox, res: usize) -> Vec<Vec<f64>> {
    let dim = domain.dim();
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|k| {
            let (lo, hi) = (domain.lower(k), domain.upper(k));
            (0..res)
                .map(|s| lo + (hi - lo) * s as f64 / (res - 1) as f64)
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(dim)];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Value, gradient and Hessian of a function at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `dim x dim`.
    pub hess: Vec<f64>,
}

impl Jet {
    pub fn new(value: f64, grad: Vec<f64>, hess: Vec<f64>) -> Self {
        Self { value, grad, hess }
    }

    pub fn from_poly(p: &Polynomial, z: &[f64]) -> Self {
        let dim = p.nvars();
        let grads: Vec<Polynomial> = (0..dim).map(|k| p.derivative(k)).collect();
        let mut hess = vec![0.0; dim * dim];
        for k in 0..dim {
            for l in 0..dim {
                hess[k * dim + l] = grads[k].derivative(l).eval(z);
            }
        }
        Self {
            value: p.eval(z),
            grad: grads.iter().map(|g| g.eval(z)).collect(),
            hess,
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    fn d2(&self, k: usize, l: usize) -> f64 {
        self.hess[k * self.grad.len() + l]
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if self.grad.len() != dim || self.hess.len() != dim * dim {
            return contract(format!(
                "jet has {} first and {} second derivatives, expected {dim} and {}",
                self.grad.len(),
                self.hess.len(),
                dim * dim
            ));
        }
        Ok(())
    }

    pub fn lincomb(alpha: f64, u: &Jet, beta: f64, v: &Jet) -> Jet {
        Jet {
            value: alpha * u.value + beta * v.value,
            grad: u
                .grad
                .iter()
                .zip(&v.grad)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
            hess: u
                .hess
                .iter()
                .zip(&v.hess)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Largest amount by which the check's inequality is violated (<= 0 when it holds everywhere).
    pub worst_violation: f64,
    pub witness: Option<Vec<f64>>,
}

impl CheckOutcome {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            passed: true,
            worst_violation: f64::NEG_INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, violation: f64, tol: f64, z: &[f64]) {
        if violation > self.worst_violation {
            self.worst_violation = violation;
            if violation > tol {
                self.passed = false;
                self.witness = Some(z.to_vec());
            }
        }
    }

    fn fail(&mut self, violation: f64, z: Option<Vec<f64>>) {
        self.passed = false;
        self.worst_violation = self.worst_violation.max(violation);
        if z.is_some() {
            self.witness = z;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub lattice_resolution: usize,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("{}={}", c.name, if c.passed { "ok" } else { "FAIL" }))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Text description of an operator in normal form.
///
/// Missing blocks default to zero, except `abar` (identity, normal form) and
/// `d` (identity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    pub n0: usize,
    #[serde(default = "default_one")]
    pub beta0: f64,
    #[serde(default = "default_one")]
    pub lambda: f64,
    pub x_extent: Vec<f64>,
    #[serde(default)]
    pub y_center: Vec<f64>,
    #[serde(default)]
    pub y_radius: Vec<f64>,
    #[serde(default)]
    pub b: Vec<CoefficientSpec>,
    #[serde(default)]
    pub a: Vec<Vec<CoefficientSpec>>,
    #[serde(default)]
    pub c_mix: Vec<Vec<CoefficientSpec>>,
    #[serde(default)]
    pub d: Vec<Vec<CoefficientSpec>>,
    #[serde(default)]
    pub e: Vec<CoefficientSpec>,
    #[serde(default)]
    pub c0: Option<CoefficientSpec>,
}

fn default_one() -> f64 {
    1.0
}

impl OperatorSpec {
    pub fn build(&self) -> Result<KimuraOperator> {
        let domain = CornerBox::new(
            self.x_extent.clone(),
            self.y_center.clone(),
            self.y_radius.clone(),
        )?;
        if domain.n() != self.n || domain.m() != self.m {
            return Err(KimuraError::MalformedOperator(format!(
                "box has {} x-axes and {} y-axes, operator declares n = {}, m = {}",
                domain.n(),
                domain.m(),
                self.n,
                self.m
            )));
        }
        let dim = self.n + self.m;
        let mut op =
            KimuraOperator::model(domain, self.n0)?.with_constants(self.beta0, self.lambda);
        let shape_err = |what: &str| {
            Err(KimuraError::MalformedOperator(format!(
                "block `{what}` has the wrong shape"
            )))
        };
        if !self.b.is_empty() {
            if self.b.len() != self.n {
                return shape_err("b");
            }
            op.b = self.b.iter().map(|c| c.build(dim)).collect::<Result<_>>()?;
        }
        if !self.a.is_empty() {
            if self.a.len() != self.n || self.a.iter().any(|r| r.len() != self.n) {
                return shape_err("a");
            }
            op.a = build_matrix(&self.a, dim)?;
        }
        if !self.c_mix.is_empty() {
            if self.c_mix.len() != self.n || self.c_mix.iter().any(|r| r.len() != self.m) {
                return shape_err("c_mix");
            }
            op.c_mix = build_matrix(&self.c_mix, dim)?;
        }
        if !self.d.is_empty() {
            if self.d.len() != self.m || self.d.iter().any(|r| r.len() != self.m) {
                return shape_err("d");
            }
            op.d = build_matrix(&self.d, dim)?;
        }
        if !self.e.is_empty() {
            if self.e.len() != self.m {
                return shape_err("e");
            }
            op.e = self.e.iter().map(|c| c.build(dim)).collect::<Result<_>>()?;
        }
        if let Some(c0) = &self.c0 {
            op.c0 = c0.build(dim)?;
        }
        Ok(op)
    }
}

fn build_matrix(rows: &[Vec<CoefficientSpec>], dim: usize) -> Result<Vec<Vec<CoefficientField>>> {
    rows.iter()
        .map(|r| r.iter().map(|c| c.build(dim)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;
    use proptest::prelude::*;

    fn unit_1d(r: f64) -> CornerBox {
        CornerBox::new(vec![r], vec![], vec![]).unwrap()
    }

    fn classical_kimura(r: f64) -> KimuraOperator {
        KimuraOperator::model(unit_1d(r), 1)
            .unwrap()
            .with_a(0, 0, CoefficientField::constant(1, -1.0))
            .with_constants(1.0, 0.5)
    }

    #[test]
    fn model_validates() {
        let op = KimuraOperator::model(unit_1d(1.0), 1).unwrap();
        let rep = op.validate(DEFAULT_LATTICE).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn classical_kimura_ellipticity_on_half_box() {
        let rep = classical_kimura(0.5).validate(DEFAULT_LATTICE).unwrap();
        assert!(rep.passed(), "{rep:?}");
        // lambda slightly above 1/2 must fail, at x = 1/2
        let rep = classical_kimura(0.5)
            .with_constants(1.0, 0.51)
            .validate(DEFAULT_LATTICE)
            .unwrap();
        let ell = rep.check("ellipticity").unwrap();
        assert!(!ell.passed);
        assert_eq!(ell.witness.as_deref(), Some(&[0.5][..]));
    }

    #[test]
    fn split_face_weight_is_not_clean() {
        let domain = CornerBox::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        let b = CoefficientField::from_fn(2, |z| if z[1] < 0.0 { 0.0 } else { 0.5 });
        for n0 in [0, 1] {
            let op = KimuraOperator::model(domain.clone(), n0)
                .unwrap()
                .with_b(0, b.clone())
                .with_constants(0.5, 1.0);
            let rep = op.validate(9).unwrap();
            let c = rep.check("cleanness").unwrap();
            assert!(!c.passed);
            let w = c.witness.clone().unwrap();
            assert_eq!(w[0], 0.0);
        }
    }

    #[test]
    fn non_finite_coefficient_is_malformed() {
        let op = KimuraOperator::model(unit_1d(1.0), 1)
            .unwrap()
            .with_c0(CoefficientField::from_fn(1, |z| 1.0 / z[0]));
        assert!(matches!(
            op.validate(5),
            Err(KimuraError::MalformedOperator(_))
        ));
        assert!(op.validate(1).is_err());
    }

    #[test]
    fn apply_pointwise_examples() {
        let op = KimuraOperator::model(unit_1d(1.0), 1).unwrap();
        let x = Polynomial::var(1, 0);
        let x2 = &x * &x;
        assert_eq!(
            op.apply_pointwise(&Jet::from_poly(&x2, &[0.5]), &[0.5])
                .unwrap(),
            1.0
        );

        let op_b = KimuraOperator::model(unit_1d(1.0), 0)
            .unwrap()
            .with_b(0, CoefficientField::constant(1, 0.5));
        for z in [0.0, 0.3, 0.9] {
            assert_eq!(
                op_b.apply_pointwise(&Jet::from_poly(&x, &[z]), &[z])
                    .unwrap(),
                0.5
            );
        }

        let k = classical_kimura(1.0);
        let u = x.clone() - x2.clone();
        for z in [0.1, 0.25, 0.5, 0.8] {
            let lu = k.apply_pointwise(&Jet::from_poly(&u, &[z]), &[z]).unwrap();
            assert!((lu + 2.0 * z * (1.0 - z)).abs() < 1e-14);
        }
        let bad = Jet::new(0.0, vec![], vec![]);
        assert!(op.apply_pointwise(&bad, &[0.5]).is_err());
    }

    #[test]
    fn h_transform_model() {
        let op = KimuraOperator::model(unit_1d(1.0), 1).unwrap();
        let lt = op.h_transform().unwrap();
        assert_eq!(lt.n0, 0);
        assert_eq!(lt.b[0].value(&[0.3]), 2.0);
        assert_eq!(lt.c0.value(&[0.3]), 0.0);
        assert!(lt.beta0 >= 2.0 - 1e-12);
    }

    #[test]
    fn h_transform_identity_when_no_tangent_faces() {
        let op = KimuraOperator::model(unit_1d(1.0), 0)
            .unwrap()
            .with_b(0, CoefficientField::constant(1, 0.7))
            .with_constants(0.7, 1.0);
        let lt = op.h_transform().unwrap();
        assert_eq!(lt.b[0].value(&[0.2]), 0.7);
        assert_eq!(lt.n0, 0);
    }

    #[test]
    fn h_transform_partial_tangent() {
        let domain = CornerBox::new(vec![1.0, 1.0], vec![], vec![]).unwrap();
        let op = KimuraOperator::model(domain, 1)
            .unwrap()
            .with_b(1, CoefficientField::constant(2, 0.5))
            .with_constants(0.5, 1.0);
        let lt = op.h_transform().unwrap();
        let z = [0.3, 0.4];
        assert_eq!(lt.b[0].value(&z), 2.0);
        assert_eq!(lt.b[1].value(&z), 0.5);
        assert_eq!(lt.c0.value(&z), 0.0);
    }

    #[test]
    fn conjugation_examples() {
        let x = Polynomial::var(1, 0);
        let op = KimuraOperator::model(unit_1d(1.0), 1).unwrap();
        let probes = vec![vec![0.1], vec![0.5], vec![0.9]];
        assert_eq!(op.conjugation_residual(&(&x * &x), &probes).unwrap(), 0.0);
        assert!(op
            .conjugation_residual(&Polynomial::constant(1, 1.0), &probes)
            .is_err());
        assert!(op.conjugation_residual(&x, &[vec![0.0]]).is_err());

        let op_b = op.clone().with_b(0, CoefficientField::Poly(x.clone()));
        assert!(op_b.conjugation_residual(&(&x * &x), &probes).unwrap() < 1e-14);

        let free = KimuraOperator::model(unit_1d(1.0), 0)
            .unwrap()
            .with_b(0, CoefficientField::constant(1, 0.4));
        let u = Polynomial::constant(1, 3.0) + &x * &x;
        assert_eq!(free.conjugation_residual(&u, &probes).unwrap(), 0.0);
    }

    #[test]
    fn commutator_hand_example() {
        let op = KimuraOperator::model(unit_1d(1.0), 1).unwrap();
        let x = Polynomial::var(1, 0);
        let z = [0.3];
        let c = op
            .commutator_apply(&Jet::from_poly(&x, &z), &Jet::from_poly(&x, &z), &z)
            .unwrap();
        assert!((c - 0.6).abs() < 1e-15);
        let one = Polynomial::constant(1, 1.0);
        let c1 = op
            .commutator_apply(&Jet::from_poly(&one, &z), &Jet::from_poly(&x, &z), &z)
            .unwrap();
        assert_eq!(c1, 0.0);
    }

    #[test]
    fn spec_round_trip_builds() {
        let text = r#"
            n = 1
            m = 1
            n0 = 1
            lambda = 0.5
            x_extent = [1.0]
            y_center = [0.0]
            y_radius = [1.0]
            b = [{ family = "polynomial", terms = [{ coeff = 1.0, powers = [1, 0] }] }]
            c_mix = [[{ family = "constant", value = 0.2 }]]
            c0 = { family = "affine", constant = -1.0, slopes = [0.0, 0.5] }
        "#;
        let spec: OperatorSpec = toml::from_str(text).unwrap();
        let op = spec.build().unwrap();
        assert_eq!(op.b[0].value(&[0.25, 0.0]), 0.25);
        assert_eq!(op.c0.value(&[0.0, 1.0]), -0.5);
        assert!(op.validate(9).unwrap().passed());
        let again: OperatorSpec = toml::from_str(&toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
        let _ = Monomial {
            coeff: 0.0,
            powers: vec![],
        };
    }

    fn arb_jet(dim: usize) -> impl Strategy<Value = Jet> {
        (
            -5.0f64..5.0,
            proptest::collection::vec(-5.0f64..5.0, dim),
            proptest::collection::vec(-5.0f64..5.0, dim * dim),
        )
            .prop_map(|(v, g, h)| Jet::new(v, g, h))
    }

    proptest! {
        #[test]
        fn apply_is_linear(u in arb_jet(3), v in arb_jet(3), al in -3.0f64..3.0, be in -3.0f64..3.0,
                           x1 in 0.0f64..1.0, x2 in 0.0f64..1.0, y in -1.0f64..1.0) {
            let domain = CornerBox::new(vec![1.0, 1.0], vec![0.0], vec![1.0]).unwrap();
            let op = KimuraOperator::model(domain, 1).unwrap()
                .with_a(0, 1, CoefficientField::constant(3, 0.1))
                .with_c_mix(1, 0, CoefficientField::constant(3, 0.3))
                .with_b(1, CoefficientField::constant(3, 0.5))
                .with_e(0, CoefficientField::constant(3, -0.2))
                .with_c0(CoefficientField::constant(3, -1.0));
            let z = [x1, x2, y];
            let lhs = op.apply_pointwise(&Jet::lincomb(al, &u, be, &v), &z).unwrap();
            let rhs = al * op.apply_pointwise(&u, &z).unwrap() + be * op.apply_pointwise(&v, &z).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}

//! Finite-difference discretization of `L` on tensor grids and theta-scheme
//! time stepping for `u_t = Lu + g`.
//!
//! Tangent faces and the outer box faces carry homogeneous Dirichlet rows.
//! Transverse faces get no condition: the operator itself is discretized
//! there, where only the drift `b_i d_{x_i}` survives in the normal direction
//! and is closed by a second-order one-sided difference.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::grid::{derivative_weights, Field, TensorGrid};
use crate::measure::{integrate_field, QuadratureSpec, WeightedMeasure};
use crate::operator::KimuraOperator;
use crate::sparse::{bicgstab, CsrMatrix, Ilu0};
use crate::stats::least_squares;

pub const LINEAR_TOL: f64 = 1e-10;
const MAX_ITER: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

impl Scheme {
    pub fn theta(self) -> f64 {
        match self {
            Self::ImplicitEuler => 1.0,
            Self::CrankNicolson => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ImplicitEuler => "implicit-euler",
            Self::CrankNicolson => "crank-nicolson",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = crate::KimuraError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit-euler" | "ie" => Ok(Self::ImplicitEuler),
            "crank-nicolson" | "cn" => Ok(Self::CrankNicolson),
            other => contract(format!("unknown scheme `{other}`")),
        }
    }
}

fn check_dims(op: &KimuraOperator, grid: &TensorGrid) -> Result<()> {
    if grid.n() != op.n || grid.m() != op.m {
        return contract(format!(
            "grid has (n, m) = ({}, {}), operator has ({}, {})",
            grid.n(),
            grid.m(),
            op.n,
            op.m
        ));
    }
    Ok(())
}

/// Node carries a Dirichlet row: tangent face or outer box face.
pub fn is_dirichlet(grid: &TensorGrid, op: &KimuraOperator, idx: &[usize]) -> bool {
    grid.on_tangent_face(idx, op.n0) || grid.on_outer_face(idx)
}

/// Sparse matrix of `L` on the grid nodes.
pub fn discretize(op: &KimuraOperator, grid: &TensorGrid) -> Result<CsrMatrix> {
    check_dims(op, grid)?;
    let rows: Vec<Vec<(usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|p| operator_row(op, grid, p))
        .collect();
    Ok(CsrMatrix::from_rows(grid.len(), rows))
}

fn operator_row(op: &KimuraOperator, grid: &TensorGrid, p: usize) -> Vec<(usize, f64)> {
    let idx = grid.multi_index(p);
    if is_dirichlet(grid, op, &idx) {
        return vec![(p, 1.0)];
    }
    let z = grid.point(p);
    let (n, m, dim) = (op.n, op.m, grid.dim());
    let stencils: Vec<_> = (0..dim)
        .map(|k| derivative_weights(grid.axis(k), idx[k]))
        .collect();
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(1 + 3 * dim + 9 * dim * dim);
    let shift = |k: usize, node: usize| p - idx[k] * grid.stride(k) + node * grid.stride(k);
    let first = |k: usize, coef: f64, row: &mut Vec<(usize, f64)>| {
        if coef != 0.0 {
            for &(node, w) in &stencils[k].0 {
                row.push((shift(k, node), coef * w));
            }
        }
    };
    let second = |k: usize, coef: f64, row: &mut Vec<(usize, f64)>| {
        if coef != 0.0 {
            for &(node, w) in &stencils[k].1 {
                row.push((shift(k, node), coef * w));
            }
        }
    };
    let mixed = |k: usize, l: usize, coef: f64, row: &mut Vec<(usize, f64)>| {
        if coef != 0.0 {
            for &(nk, wk) in &stencils[k].0 {
                for &(nl, wl) in &stencils[l].0 {
                    let q = p - idx[k] * grid.stride(k) + nk * grid.stride(k)
                        - idx[l] * grid.stride(l)
                        + nl * grid.stride(l);
                    row.push((q, coef * wk * wl));
                }
            }
        }
    };
    row.push((p, op.c0.value(&z)));
    for i in 0..n {
        let xi = z[i];
        first(i, op.b[i].value(&z), &mut row);
        if xi == 0.0 {
            continue;
        }
        second(
            i,
            xi * (op.abar[i].value(&z) + xi * op.a[i][i].value(&z)),
            &mut row,
        );
        // both orderings of the x_i x_j a_ij u_ij sum at once
        for j in (i + 1)..n {
            let c = xi * z[j] * (op.a[i][j].value(&z) + op.a[j][i].value(&z));
            mixed(i, j, c, &mut row);
        }
        for l in 0..m {
            mixed(i, n + l, xi * op.c_mix[i][l].value(&z), &mut row);
        }
    }
    for l in 0..m {
        first(n + l, op.e[l].value(&z), &mut row);
        second(n + l, op.d[l][l].value(&z), &mut row);
        for k in (l + 1)..m {
            let c = op.d[l][k].value(&z) + op.d[k][l].value(&z);
            mixed(n + l, n + k, c, &mut row);
        }
    }
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeMeta {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub steps: usize,
    pub linear_tol: f64,
    pub rannacher: bool,
    pub max_linear_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Arc<TensorGrid>,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub meta: SchemeMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Snapshot whose time is nearest to `t`.
    pub fn nearest(&self, t: f64) -> &Field {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        &self.fields[k]
    }

    pub fn last(&self) -> &Field {
        self.fields
            .last()
            .expect("trajectory has at least the initial snapshot")
    }
}

#[derive(Clone, Debug)]
pub struct IvpOptions {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub save_every: usize,
    /// Replace the first Crank–Nicolson step by two implicit-Euler half steps.
    pub rannacher: bool,
    /// Time-independent source `g` in `u_t = Lu + g`.
    pub source: Option<Vec<f64>>,
    pub linear_tol: f64,
}

impl IvpOptions {
    pub fn new(t_end: f64, dt: f64, scheme: Scheme) -> Self {
        Self {
            t_end,
            dt,
            scheme,
            save_every: 1,
            rannacher: scheme == Scheme::CrankNicolson,
            source: None,
            linear_tol: LINEAR_TOL,
        }
    }
}

pub fn solve_ivp(
    op: &KimuraOperator,
    grid: Arc<TensorGrid>,
    u0: &Field,
    t_end: f64,
    dt: f64,
    scheme: Scheme,
    save_every: usize,
) -> Result<Trajectory> {
    let mut opts = IvpOptions::new(t_end, dt, scheme);
    opts.save_every = save_every;
    solve_ivp_with(op, grid, u0, &opts)
}

struct Stepper {
    lhs: CsrMatrix,
    ilu: Ilu0,
    explicit: CsrMatrix,
    dt: f64,
    theta: f64,
}

impl Stepper {
    fn new(a: &CsrMatrix, dirichlet: &[bool], dt: f64, theta: f64) -> Result<Self> {
        let mut lhs = a.shifted(1.0, -theta * dt);
        let explicit = a.shifted(1.0, (1.0 - theta) * dt);
        for (r, &d) in dirichlet.iter().enumerate() {
            if d {
                for p in lhs.indptr[r]..lhs.indptr[r + 1] {
                    lhs.values[p] = if lhs.indices[p] == r { 1.0 } else { 0.0 };
                }
            }
        }
        let ilu = Ilu0::new(&lhs)?;
        Ok(Self {
            lhs,
            ilu,
            explicit,
            dt,
            theta,
        })
    }

    fn step(
        &self,
        u: &mut Vec<f64>,
        dirichlet: &[bool],
        source: Option<&[f64]>,
        tol: f64,
    ) -> Result<()> {
        let mut rhs = if self.theta == 1.0 {
            u.clone()
        } else {
            self.explicit.matvec(u)
        };
        if let Some(g) = source {
            for (r, gv) in rhs.iter_mut().zip(g) {
                *r += self.dt * gv;
            }
        }
        for (r, &d) in rhs.iter_mut().zip(dirichlet) {
            if d {
                *r = 0.0;
            }
        }
        bicgstab(&self.lhs, &self.ilu, &rhs, u, tol, MAX_ITER)?;
        for (v, &d) in u.iter_mut().zip(dirichlet) {
            if d {
                *v = 0.0;
            }
        }
        Ok(())
    }
}

pub fn solve_ivp_with(
    op: &KimuraOperator,
    grid: Arc<TensorGrid>,
    u0: &Field,
    opts: &IvpOptions,
) -> Result<Trajectory> {
    check_dims(op, &grid)?;
    if !(opts.dt > 0.0) || !(opts.t_end >= 0.0) {
        return contract("dt must be positive and t_end nonnegative");
    }
    if u0.grid.shape() != grid.shape() {
        return contract("initial field lives on a different grid");
    }
    if opts.save_every == 0 {
        return contract("save_every must be at least 1");
    }
    let dirichlet: Vec<bool> = (0..grid.len())
        .map(|p| is_dirichlet(&grid, op, &grid.multi_index(p)))
        .collect();
    for p in 0..grid.len() {
        if grid.on_tangent_face(&grid.multi_index(p), op.n0) && u0.values[p] != 0.0 {
            return contract(format!(
                "initial data is nonzero on the tangent face at {:?}",
                grid.point(p)
            ));
        }
    }
    if let Some(g) = &opts.source {
        if g.len() != grid.len() {
            return contract("source has the wrong length");
        }
    }
    let steps = ((opts.t_end / opts.dt).round() as usize).max(if opts.t_end > 0.0 { 1 } else { 0 });
    let dt = if steps > 0 {
        opts.t_end / steps as f64
    } else {
        opts.dt
    };
    let a = discretize(op, &grid)?;
    let theta = opts.scheme.theta();
    let main = Stepper::new(&a, &dirichlet, dt, theta)?;
    let rannacher = opts.rannacher && opts.scheme == Scheme::CrankNicolson && steps > 0;
    let startup = if rannacher {
        Some(Stepper::new(&a, &dirichlet, 0.5 * dt, 1.0)?)
    } else {
        None
    };

    let mut u = u0.values.clone();
    let mut times = vec![0.0];
    let mut fields = vec![Field {
        grid: grid.clone(),
        values: u.clone(),
        time: Some(0.0),
    }];
    let source = opts.source.as_deref();
    for k in 1..=steps {
        match (&startup, k) {
            (Some(s), 1) => {
                s.step(&mut u, &dirichlet, source, opts.linear_tol)?;
                s.step(&mut u, &dirichlet, source, opts.linear_tol)?;
            }
            _ => main.step(&mut u, &dirichlet, source, opts.linear_tol)?,
        }
        if k % opts.save_every == 0 || k == steps {
            let t = k as f64 * dt;
            times.push(t);
            fields.push(Field {
                grid: grid.clone(),
                values: u.clone(),
                time: Some(t),
            });
        }
    }
    Ok(Trajectory {
        grid,
        times,
        fields,
        meta: SchemeMeta {
            scheme: opts.scheme,
            dt,
            t_end: opts.t_end,
            steps,
            linear_tol: opts.linear_tol,
            rannacher,
            max_linear_iterations: MAX_ITER,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DtRule {
    Fixed {
        dt: f64,
    },
    /// `dt = factor * h` with `h` the nominal spacing.
    Proportional {
        factor: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub h: f64,
    pub dt: f64,
    pub sup_error: f64,
    pub l2_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub order_sup: f64,
    pub order_l2: f64,
}

/// Errors against `exact(t, z)` at `t_end` on grids with `cells` base cells
/// per axis, and the least-squares orders in `h`.
pub fn convergence_study(
    op: &KimuraOperator,
    exact: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    cells: &[usize],
    layers: usize,
    t_end: f64,
    dt_rule: DtRule,
    scheme: Scheme,
) -> Result<ConvergenceReport> {
    let measure = WeightedMeasure::dmu(op);
    let spec = QuadratureSpec::default();
    let mut rows = Vec::with_capacity(cells.len());
    for &c in cells {
        let grid = Arc::new(TensorGrid::graded(
            op.domain.clone(),
            &vec![c; op.dim()],
            layers,
        )?);
        let u0 = Field::from_fn(grid.clone(), |z| exact(0.0, z))?;
        let h = grid.nominal_h();
        let dt = match dt_rule {
            DtRule::Fixed { dt } => dt,
            DtRule::Proportional { factor } => factor * h,
        };
        let traj = solve_ivp(op, grid.clone(), &u0, t_end, dt, scheme, usize::MAX)?;
        let err = Field::from_fn(grid.clone(), |z| exact(t_end, z))?
            .zip_with(traj.last(), |a, b| a - b)?;
        let sq = err.map(|e| e * e);
        let l2 = integrate_field(&sq, &measure, &op.domain, &spec)?
            .value()
            .map_or(f64::INFINITY, |v| v.max(0.0).sqrt());
        rows.push(ConvergenceRow {
            cells: c,
            h,
            dt: traj.meta.dt,
            sup_error: err.sup_abs(),
            l2_error: l2,
        });
    }
    let order = |f: fn(&ConvergenceRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| f(r) > 0.0 && f(r).is_finite())
            .map(|r| (r.h.ln(), f(r).ln()))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        least_squares(&xs, &ys).0
    };
    let order_sup = order(|r| r.sup_error);
    let order_l2 = order(|r| r.l2_error);
    Ok(ConvergenceReport {
        rows,
        order_sup,
        order_l2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub sup_l2: f64,
    /// `int_0^T ||u||^2_{H^1(dmu)} dt`.
    pub h1_time_integral: f64,
    pub f_norm: f64,
    pub g_norm: f64,
    /// Smallest `C` with `sup ||u|| + (int ||u||^2_{H^1})^{1/2} <= C (||f|| + ||g||)`.
    pub constant: f64,
    /// `sup ||u(t)|| / ||f||` alone.
    pub sup_constant: f64,
    pub dirichlet_violation: bool,
}

/// Energy quantities of a trajectory produced with initial data `f` and
/// time-independent source `g` (`||g||` is the `L^2((0,T); L^2(dmu))` norm).
pub fn energy_check(
    traj: &Trajectory,
    op: &KimuraOperator,
    f: &Field,
    g: Option<&Field>,
) -> Result<EnergyReport> {
    let measure = WeightedMeasure::dmu(op);
    let spec = QuadratureSpec::default();
    let l2 = |u: &Field| -> Result<Option<f64>> {
        Ok(
            integrate_field(&u.map(|v| v * v), &measure, &op.domain, &spec)?
                .value()
                .map(|v| v.max(0.0).sqrt()),
        )
    };
    let violation = || EnergyReport {
        sup_l2: f64::NAN,
        h1_time_integral: f64::NAN,
        f_norm: f64::INFINITY,
        g_norm: f64::NAN,
        constant: f64::NAN,
        sup_constant: f64::NAN,
        dirichlet_violation: true,
    };
    let Some(f_norm) = l2(f)? else {
        return Ok(violation());
    };
    let g_norm = match g {
        Some(g) => match l2(g)? {
            Some(v) => v * traj.meta.t_end.sqrt(),
            None => return Ok(violation()),
        },
        None => 0.0,
    };
    let mut sup_l2: f64 = 0.0;
    let mut h1_sq = Vec::with_capacity(traj.len());
    for u in &traj.fields {
        let Some(n) = l2(u)? else {
            return Ok(violation());
        };
        sup_l2 = sup_l2.max(n);
        match crate::forms::h1_norm(u, op)? {
            Some(h) => h1_sq.push(h * h),
            None => return Ok(violation()),
        }
    }
    let mut integral = 0.0;
    for k in 1..traj.times.len() {
        integral += 0.5 * (traj.times[k] - traj.times[k - 1]) * (h1_sq[k] + h1_sq[k - 1]);
    }
    let data = f_norm + g_norm;
    let (constant, sup_constant) = if data > 0.0 {
        (
            (sup_l2 + integral.sqrt()) / data,
            if f_norm > 0.0 {
                sup_l2 / f_norm
            } else {
                f64::NAN
            },
        )
    } else {
        (0.0, 0.0)
    };
    Ok(EnergyReport {
        sup_l2,
        h1_time_integral: integral,
        f_norm,
        g_norm,
        constant,
        sup_constant,
        dirichlet_violation: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::CoefficientField;
    use crate::geometry::CornerBox;

    fn model_1d(n0: usize) -> KimuraOperator {
        KimuraOperator::model(CornerBox::cube(1, 0, 1.0).unwrap(), n0).unwrap()
    }

    #[test]
    fn three_node_stencil() {
        let op = model_1d(1);
        let grid = TensorGrid::from_axes(op.domain.clone(), vec![vec![0.0, 0.5, 1.0]]).unwrap();
        let a = discretize(&op, &grid).unwrap();
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.get(0, 1), 0.0);
        // 0.5 * (u0 - 2 u1 + u2) / 0.25
        assert!((a.get(1, 0) - 2.0).abs() < 1e-14);
        assert!((a.get(1, 1) + 4.0).abs() < 1e-14);
        assert!((a.get(1, 2) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn transverse_face_row_is_one_sided_drift() {
        let op = model_1d(0)
            .with_b(0, CoefficientField::constant(1, 0.5))
            .with_constants(0.5, 1.0);
        let grid = TensorGrid::uniform(op.domain.clone(), &[4]).unwrap();
        let a = discretize(&op, &grid).unwrap();
        let h = 0.25;
        assert!((a.get(0, 0) - 0.5 * -1.5 / h).abs() < 1e-12);
        assert!((a.get(0, 1) - 0.5 * 2.0 / h).abs() < 1e-12);
        assert!((a.get(0, 2) - 0.5 * -0.5 / h).abs() < 1e-12);
    }

    #[test]
    fn constants_annihilated_in_interior() {
        let d = CornerBox::new(vec![1.0, 1.0], vec![0.0], vec![1.0]).unwrap();
        let op = KimuraOperator::model(d, 1)
            .unwrap()
            .with_b(1, CoefficientField::constant(3, 0.7))
            .with_a(0, 1, CoefficientField::constant(3, 0.2))
            .with_c_mix(0, 0, CoefficientField::constant(3, 0.1))
            .with_e(0, CoefficientField::constant(3, 0.3))
            .with_constants(0.7, 0.5);
        let grid = TensorGrid::graded(op.domain.clone(), &[6, 6, 6], 3).unwrap();
        let a = discretize(&op, &grid).unwrap();
        let y = a.matvec(&vec![1.0; grid.len()]);
        for p in 0..grid.len() {
            if !is_dirichlet(&grid, &op, &grid.multi_index(p)) {
                assert!(y[p].abs() < 1e-9, "{p} {}", y[p]);
            }
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let op = model_1d(1);
        let grid = Arc::new(TensorGrid::graded(op.domain.clone(), &[16], 4).unwrap());
        let u0 = Field::zeros(grid.clone());
        let traj = solve_ivp(&op, grid, &u0, 0.1, 0.01, Scheme::CrankNicolson, 1).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.fields.iter().all(|f| f.sup_abs() == 0.0));
    }

    #[test]
    fn nonzero_face_data_rejected() {
        let op = model_1d(1);
        let grid = Arc::new(TensorGrid::uniform(op.domain.clone(), &[8]).unwrap());
        let u0 = Field::from_fn(grid.clone(), |_| 1.0).unwrap();
        assert!(solve_ivp(&op, grid, &u0, 0.1, 0.01, Scheme::ImplicitEuler, 1).is_err());
    }
}

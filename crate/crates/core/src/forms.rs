//! Discrete weighted bilinear forms on tensor grids.
//!
//! Integrals are lumped on nodes: a nodal integrand `g` is integrated as its
//! multilinear interpolant against the measure, so each node carries the
//! weight `int hat_p x^beta dmu`. A factor `x_i` in front of a term is
//! absorbed into the weight (exponent `beta_i + 1`), which keeps every
//! weight finite except those of the zero-weight faces, where Dirichlet-class
//! fields vanish.
//!
//! Sign convention: `Q(u, v) = -(Lu, v)_{dmu}`, so the zeroth-order part of
//! `Q` is `-(c0 u, v)` and the first-order remainder is
//! `Q - Q_sym + (c0 u, v)`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::geometry::CornerBox;
use crate::grid::{derivative_weights, Field, TensorGrid};
use crate::measure::{integrate_field, QuadratureSpec, WeightedMeasure};
use crate::operator::{Jet, KimuraOperator};
use crate::solver::{discretize, is_dirichlet};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    Qsym,
    Full,
    Mass,
    H1,
    Zeroth,
}

#[derive(Clone, Debug)]
pub struct DiscreteForm {
    pub kind: FormKind,
    pub grid: Arc<TensorGrid>,
    /// `form(u, v) = v^T matrix u`.
    pub matrix: CsrMatrix,
}

impl DiscreteForm {
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        let mu = self.matrix.matvec(u);
        mu.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn eval_fields(&self, u: &Field, v: &Field) -> f64 {
        self.eval(&u.values, &v.values)
    }

    pub fn to_matrix_market(&self) -> String {
        self.matrix.to_matrix_market()
    }

    /// `max |M_pq - M_qp| / max |M_pq|`.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for r in 0..m.nrows {
            for (c, v) in m.row(r) {
                scale = scale.max(v.abs());
                worst = worst.max((v - m.get(c, r)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Per-node quadrature weights of `dmu` with an extra `x^shift` per axis.
struct NodalWeights {
    /// `axis[k][shift][node]`; `None` marks the divergent face weight.
    axis: Vec<[Vec<Option<f64>>; 3]>,
    residual: Vec<f64>,
}

impl NodalWeights {
    fn new(op: &KimuraOperator, grid: &TensorGrid) -> Result<Self> {
        let measure = WeightedMeasure::dmu(op);
        let frozen = measure.frozen_exponents(&grid.domain);
        for (i, &s) in frozen.iter().enumerate() {
            if i >= op.n0 && s <= -1.0 {
                return Err(crate::KimuraError::MalformedMeasure(format!(
                    "exponent {s} on axis {i}"
                )));
            }
        }
        let axis = (0..grid.dim())
            .map(|k| {
                let a = grid.axis(k);
                let mk = |shift: usize| -> Vec<Option<f64>> {
                    if k < op.n {
                        hat_moments(a, frozen[k] + shift as f64)
                    } else {
                        grid.dual_lengths(k).into_iter().map(Some).collect()
                    }
                };
                [mk(0), mk(1), mk(2)]
            })
            .collect();
        let residual = (0..grid.len())
            .into_par_iter()
            .map(|p| {
                let z = grid.point(p);
                let mut acc = 1.0;
                for i in op.n0..op.n {
                    let d = measure.exponent(i, &z) - frozen[i];
                    acc *= if z[i] == 0.0 {
                        0f64.powf(d.max(0.0))
                    } else {
                        z[i].powf(d)
                    };
                }
                acc
            })
            .collect();
        Ok(Self { axis, residual })
    }

    /// Weight of node `p` with `shift[k]` extra powers on axis `k`; zero-weight
    /// face nodes with a divergent weight return `None`.
    fn weight(&self, grid: &TensorGrid, p: usize, shifts: &[usize]) -> Option<f64> {
        let idx = grid.multi_index(p);
        let mut w = self.residual[p];
        for (k, &i) in idx.iter().enumerate() {
            let s = shifts.get(k).copied().unwrap_or(0);
            w *= self.axis[k][s][i]?;
        }
        Some(w)
    }
}

/// `int hat_p(x) x^s dx` over the axis for every node; `None` when divergent.
fn hat_moments(a: &[f64], s: f64) -> Vec<Option<f64>> {
    let (gx, gw) = crate::quadrature::gauss_legendre(6);
    let mut w: Vec<Option<f64>> = vec![Some(0.0); a.len()];
    for c in 0..a.len() - 1 {
        let (lo, hi) = (a[c], a[c + 1]);
        let h = hi - lo;
        let (m_left, m_right) = if lo == 0.0 {
            let m2 = h.powf(s + 1.0) / (s + 2.0);
            let left = if s > -1.0 {
                Some(h.powf(s + 1.0) / (s + 1.0) - m2)
            } else {
                None
            };
            (left, m2)
        } else {
            let (cc, hh) = (0.5 * (lo + hi), 0.5 * h);
            let (mut l, mut r) = (0.0, 0.0);
            for (t, wt) in gx.iter().zip(&gw) {
                let x = cc + hh * t;
                let phi = (x - lo) / h;
                l += wt * hh * x.powf(s) * (1.0 - phi);
                r += wt * hh * x.powf(s) * phi;
            }
            (Some(l), r)
        };
        w[c] = match (w[c], m_left) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        w[c + 1] = w[c + 1].map(|v| v + m_right);
    }
    w
}

fn check(op: &KimuraOperator, grid: &TensorGrid) -> Result<()> {
    if grid.n() != op.n || grid.m() != op.m {
        return contract("grid and operator dimensions differ");
    }
    Ok(())
}

/// Symmetric coefficient of `u_k v_l` in the `Q_sym` integrand at `z`,
/// with the number of explicit `x` factors per axis absorbed into the weight.
fn qsym_terms(op: &KimuraOperator, z: &[f64]) -> Vec<(usize, usize, f64, Vec<usize>)> {
    let (n, m, dim) = (op.n, op.m, op.dim());
    let mut terms = Vec::new();
    let unit = |ks: &[usize]| {
        let mut s = vec![0; dim];
        for &k in ks {
            s[k] += 1;
        }
        s
    };
    for i in 0..n {
        terms.push((i, i, op.abar[i].value(z), unit(&[i])));
        for j in 0..n {
            let a = 0.5 * (op.a[i][j].value(z) + op.a[j][i].value(z));
            if a != 0.0 {
                terms.push((i, j, a, unit(&[i, j])));
            }
        }
        for l in 0..m {
            let c = 0.5 * op.c_mix[i][l].value(z);
            if c != 0.0 {
                terms.push((i, n + l, c, unit(&[i])));
                terms.push((n + l, i, c, unit(&[i])));
            }
        }
    }
    for l in 0..m {
        for k in 0..m {
            let d = 0.5 * (op.d[l][k].value(z) + op.d[k][l].value(z));
            if d != 0.0 {
                terms.push((n + l, n + k, d, unit(&[])));
            }
        }
    }
    terms
}

fn gradient_form(
    grid: &TensorGrid,
    weights: &NodalWeights,
    terms_at: impl Fn(&[f64]) -> Vec<(usize, usize, f64, Vec<usize>)> + Sync,
) -> CsrMatrix {
    let len = grid.len();
    let contributions: Vec<Vec<(usize, usize, f64)>> = (0..len)
        .into_par_iter()
        .map(|p| {
            let idx = grid.multi_index(p);
            let z = grid.point(p);
            let mut out = Vec::new();
            for (k, l, coef, shifts) in terms_at(&z) {
                if coef == 0.0 {
                    continue;
                }
                let Some(w) = weights.weight(grid, p, &shifts) else {
                    continue;
                };
                if w == 0.0 {
                    continue;
                }
                let sk = derivative_weights(grid.axis(k), idx[k]).0;
                let sl = derivative_weights(grid.axis(l), idx[l]).0;
                for &(nk, wk) in &sk {
                    let q = p - idx[k] * grid.stride(k) + nk * grid.stride(k);
                    for &(nl, wl) in &sl {
                        let r = p - idx[l] * grid.stride(l) + nl * grid.stride(l);
                        // v_l u_k: row r (test), column q (trial)
                        out.push((r, q, w * coef * wk * wl));
                    }
                }
            }
            out
        })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); len];
    for c in contributions {
        for (r, q, v) in c {
            rows[r].push((q, v));
        }
    }
    CsrMatrix::from_rows(len, rows)
}

fn diagonal_form(
    grid: &TensorGrid,
    weights: &NodalWeights,
    coef: impl Fn(&[f64]) -> f64 + Sync,
) -> CsrMatrix {
    let rows = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let w = weights.weight(grid, p, &[]).unwrap_or(0.0);
            vec![(p, w * coef(&grid.point(p)))]
        })
        .collect();
    CsrMatrix::from_rows(grid.len(), rows)
}

pub fn assemble_qsym(op: &KimuraOperator, grid: Arc<TensorGrid>) -> Result<DiscreteForm> {
    check(op, &grid)?;
    let weights = NodalWeights::new(op, &grid)?;
    let matrix = gradient_form(&grid, &weights, |z| qsym_terms(op, z));
    Ok(DiscreteForm {
        kind: FormKind::Qsym,
        grid,
        matrix,
    })
}

pub fn assemble_mass(op: &KimuraOperator, grid: Arc<TensorGrid>) -> Result<DiscreteForm> {
    check(op, &grid)?;
    let weights = NodalWeights::new(op, &grid)?;
    let matrix = diagonal_form(&grid, &weights, |_| 1.0);
    Ok(DiscreteForm {
        kind: FormKind::Mass,
        grid,
        matrix,
    })
}

/// `(c0 u, v)_{dmu}`.
pub fn assemble_zeroth(op: &KimuraOperator, grid: Arc<TensorGrid>) -> Result<DiscreteForm> {
    check(op, &grid)?;
    let weights = NodalWeights::new(op, &grid)?;
    let matrix = diagonal_form(&grid, &weights, |z| op.c0.value(z));
    Ok(DiscreteForm {
        kind: FormKind::Zeroth,
        grid,
        matrix,
    })
}

/// `int [sum_i x_i u_i v_i + sum_l u_l v_l + u v] dmu`.
pub fn assemble_h1(op: &KimuraOperator, grid: Arc<TensorGrid>) -> Result<DiscreteForm> {
    check(op, &grid)?;
    let weights = NodalWeights::new(op, &grid)?;
    let (n, dim) = (op.n, op.dim());
    let grad = gradient_form(&grid, &weights, |_| {
        (0..dim)
            .map(|k| {
                let mut s = vec![0; dim];
                if k < n {
                    s[k] = 1;
                }
                (k, k, 1.0, s)
            })
            .collect()
    });
    let mass = diagonal_form(&grid, &weights, |_| 1.0);
    let mut rows: Vec<Vec<(usize, f64)>> = (0..grid.len()).map(|r| grad.row(r).collect()).collect();
    for (r, row) in rows.iter_mut().enumerate() {
        row.extend(mass.row(r));
    }
    Ok(DiscreteForm {
        kind: FormKind::H1,
        grid: grid.clone(),
        matrix: CsrMatrix::from_rows(grid.len(), rows),
    })
}

/// `Q(u, v) = -(Lu, v)_{dmu}` with `L` discretized by the solver stencils.
/// Dirichlet rows are dropped (their test values vanish for the field class).
pub fn assemble_q(op: &KimuraOperator, grid: Arc<TensorGrid>) -> Result<DiscreteForm> {
    check(op, &grid)?;
    let weights = NodalWeights::new(op, &grid)?;
    let a = discretize(op, &grid)?;
    let rows = (0..grid.len())
        .map(|p| {
            if is_dirichlet(&grid, op, &grid.multi_index(p)) {
                return Vec::new();
            }
            let w = weights.weight(&grid, p, &[]).unwrap_or(0.0);
            a.row(p).map(|(c, v)| (c, -w * v)).collect()
        })
        .collect();
    Ok(DiscreteForm {
        kind: FormKind::Full,
        grid: grid.clone(),
        matrix: CsrMatrix::from_rows(grid.len(), rows),
    })
}

/// The first-order remainder `Q(u, v) - Q_sym(u, v) + (c0 u, v)`.
pub fn v_term(
    q: &DiscreteForm,
    qsym: &DiscreteForm,
    zeroth: &DiscreteForm,
    u: &[f64],
    v: &[f64],
) -> f64 {
    q.eval(u, v) - qsym.eval(u, v) + zeroth.eval(u, v)
}

fn nodal_integrand(u: &Field, f: impl Fn(&Jet, &[f64]) -> f64 + Sync) -> Result<Field> {
    let grid = u.grid.clone();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let idx = grid.multi_index(p);
            f(&u.jet_at(&idx), &grid.point(p))
        })
        .collect();
    Field::new(grid, values)
}

/// `(int [sum_i x_i u_i^2 + sum_l u_l^2 + u^2] dmu)^{1/2}`; `None` when the
/// integral diverges (the field does not vanish on a zero-weight face).
pub fn h1_norm(u: &Field, op: &KimuraOperator) -> Result<Option<f64>> {
    let n = op.n;
    let g = nodal_integrand(u, |j, z| {
        let mut acc = j.value * j.value;
        for (k, d) in j.grad.iter().enumerate() {
            acc += if k < n { z[k] * d * d } else { d * d };
        }
        acc
    })?;
    let r = integrate_field(
        &g,
        &WeightedMeasure::dmu(op),
        &op.domain,
        &QuadratureSpec::default(),
    )?;
    Ok(r.value().map(|v| v.max(0.0).sqrt()))
}

pub fn l2_norm(u: &Field, op: &KimuraOperator) -> Result<Option<f64>> {
    let r = integrate_field(
        &u.map(|v| v * v),
        &WeightedMeasure::dmu(op),
        &op.domain,
        &QuadratureSpec::default(),
    )?;
    Ok(r.value().map(|v| v.max(0.0).sqrt()))
}

/// `[L, phi] u` at a grid node, from stencil jets of both fields.
pub fn commutator_apply_field(
    op: &KimuraOperator,
    phi: &Field,
    u: &Field,
    idx: &[usize],
) -> Result<f64> {
    let z: Vec<f64> = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| u.grid.axis(k)[i])
        .collect();
    op.commutator_apply(&phi.jet_at(idx), &u.jet_at(idx), &z)
}

/// Smooth cutoff `prod (1 - s_k^2)^2` in box-normalized coordinates; it
/// vanishes on the outer faces only.
pub fn outer_bump(domain: &CornerBox, z: &[f64]) -> f64 {
    let n = domain.n();
    (0..domain.dim())
        .map(|k| {
            let s = if k < n {
                z[k] / domain.x_extent[k]
            } else {
                (z[k] - domain.y_center[k - n]) / domain.y_radius[k - n]
            };
            let t = (1.0 - s * s).max(0.0);
            t * t
        })
        .product()
}

/// Random Dirichlet-class probe: a cubic polynomial in normalized
/// coordinates times `prod_{i<=n0} x_i` times [`outer_bump`].
pub fn random_probe(
    op: &KimuraOperator,
    grid: Arc<TensorGrid>,
    rng: &mut ChaCha8Rng,
) -> Result<Field> {
    let dim = op.dim();
    let monomials = monomial_exponents(dim, 3);
    let coeffs: Vec<f64> = monomials
        .iter()
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let domain = op.domain.clone();
    let n0 = op.n0;
    Field::from_fn(grid, move |z| {
        let s: Vec<f64> = (0..dim)
            .map(|k| {
                let lo = domain.lower(k);
                let hi = domain.upper(k);
                (z[k] - lo) / (hi - lo)
            })
            .collect();
        let poly: f64 = monomials
            .iter()
            .zip(&coeffs)
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(&s)
                    .map(|(&p, &v)| v.powi(p as i32))
                    .product::<f64>()
            })
            .sum();
        let tangent: f64 = z[..n0].iter().product();
        poly * tangent * outer_bump(&domain, z)
    })
}

fn monomial_exponents(dim: usize, deg: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|e: Vec<u32>| {
                let used: u32 = e.iter().sum();
                (0..=(deg - used)).map(move |p| {
                    let mut f = e.clone();
                    f.push(p);
                    f
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GardingReport {
    pub c2: f64,
    pub c3: f64,
    pub feasible: bool,
    /// Probe attaining the binding constraint.
    pub binding_probe: Option<usize>,
    pub trials: usize,
    pub c3_cap: Option<f64>,
}

/// Largest `c2 <= 1` with some admissible `c3 >= 0` such that
/// `Q(u, u) >= c2 ||u||^2_{H^1} - c3 ||u||^2_{L^2}` on `trials` random probes.
/// Without a cap `c2 = 1` and `c3` is the smallest admissible value; with a
/// cap `B` on `c3` the bound on `c2` comes from `c3 = B`.
pub fn garding_probe(
    op: &KimuraOperator,
    grid: Arc<TensorGrid>,
    trials: usize,
    seed: u64,
    c3_cap: Option<f64>,
) -> Result<GardingReport> {
    if trials == 0 {
        return contract("at least one probe is required");
    }
    let q = assemble_q(op, grid.clone())?;
    let h1 = assemble_h1(op, grid.clone())?;
    let mass = assemble_mass(op, grid.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let u = random_probe(op, grid.clone(), &mut rng)?;
        samples.push((
            q.eval(&u.values, &u.values),
            h1.eval(&u.values, &u.values),
            mass.eval(&u.values, &u.values),
        ));
    }
    Ok(garding_lp(&samples, c3_cap))
}

/// The two-variable LP behind [`garding_probe`], on `(Q_k, H_k, L_k)` triples.
pub fn garding_lp(samples: &[(f64, f64, f64)], c3_cap: Option<f64>) -> GardingReport {
    let mut c2: f64 = 1.0;
    let mut c3: f64 = 0.0;
    let mut binding = None;
    match c3_cap {
        None => {
            for (k, &(q, h, l)) in samples.iter().enumerate() {
                if h == 0.0 {
                    continue;
                }
                let need = if l > 0.0 {
                    (h - q) / l
                } else if q >= h {
                    0.0
                } else {
                    f64::INFINITY
                };
                if need > c3 {
                    c3 = need;
                    binding = Some(k);
                }
            }
        }
        Some(cap) => {
            c3 = cap;
            for (k, &(q, h, l)) in samples.iter().enumerate() {
                if h == 0.0 {
                    continue;
                }
                let bound = (q + cap * l) / h;
                if bound < c2 {
                    c2 = bound;
                    binding = Some(k);
                }
            }
        }
    }
    let feasible = c2 > 0.0 && c3.is_finite();
    GardingReport {
        c2,
        c3,
        feasible,
        binding_probe: binding,
        trials: samples.len(),
        c3_cap,
    }
}

/// `max |Q(u, v)| / (||u||_{H^1} ||v||_{H^1})` over random probe pairs.
pub fn continuity_probe(
    op: &KimuraOperator,
    grid: Arc<TensorGrid>,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let q = assemble_q(op, grid.clone())?;
    let h1 = assemble_h1(op, grid.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let u = random_probe(op, grid.clone(), &mut rng)?;
        let v = random_probe(op, grid.clone(), &mut rng)?;
        let nu = h1.eval(&u.values, &u.values).sqrt();
        let nv = h1.eval(&v.values, &v.values).sqrt();
        if nu > 0.0 && nv > 0.0 {
            best = best.max(q.eval(&u.values, &v.values).abs() / (nu * nv));
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyResult {
    /// `int u^2 phi^2 dmu`.
    pub lhs: f64,
    /// `int (sum_j x_j u_j^2 + sum_l u_l^2) phi^2 dmu_{e_i}`.
    pub gradient_term: f64,
    /// `int (phi^2 + |grad phi|^2) u^2 dmu_{e_i}`.
    pub zeroth_term: f64,
    /// Smallest `C >= 0` with `lhs <= gradient_term + C zeroth_term`.
    pub constant: f64,
}

pub fn hardy_check(op: &KimuraOperator, u: &Field, phi: &Field, i: usize) -> Result<HardyResult> {
    if i < op.n0 || i >= op.n {
        return contract(format!("axis {i} is not a positive-weight axis"));
    }
    if u.grid.shape() != phi.grid.shape() {
        return contract("u and phi live on different grids");
    }
    let spec = QuadratureSpec::default();
    let n = op.n;
    let grid = u.grid.clone();
    let mut alpha = vec![0u32; n];
    alpha[i] = 1;
    let shifted = WeightedMeasure::new(op, alpha)?;
    let jets: Vec<(Jet, Jet, Vec<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let idx = grid.multi_index(p);
            (u.jet_at(&idx), phi.jet_at(&idx), grid.point(p))
        })
        .collect();
    let field = |f: &dyn Fn(&Jet, &Jet, &[f64]) -> f64| {
        Field::new(
            grid.clone(),
            jets.iter().map(|(a, b, z)| f(a, b, z)).collect(),
        )
    };
    let lhs_f = field(&|u, p, _| u.value * u.value * p.value * p.value)?;
    let lhs = integrate_field(&lhs_f, &WeightedMeasure::dmu(op), &op.domain, &spec)?;
    let Some(lhs) = lhs.value() else {
        return contract("u does not vanish on the zero-weight faces: the left side diverges");
    };
    let grad_f = field(&|u, p, z| {
        let g: f64 = u
            .grad
            .iter()
            .enumerate()
            .map(|(k, d)| if k < n { z[k] * d * d } else { d * d })
            .sum();
        g * p.value * p.value
    })?;
    let zero_f = field(&|u, p, _| {
        let gp: f64 = p.grad.iter().map(|d| d * d).sum();
        (p.value * p.value + gp) * u.value * u.value
    })?;
    let gradient_term = integrate_field(&grad_f, &shifted, &op.domain, &spec)?.require_value()?;
    let zeroth_term = integrate_field(&zero_f, &shifted, &op.domain, &spec)?.require_value()?;
    let gap = lhs - gradient_term;
    let constant = if gap <= 0.0 {
        0.0
    } else if zeroth_term > 0.0 {
        gap / zeroth_term
    } else {
        f64::INFINITY
    };
    Ok(HardyResult {
        lhs,
        gradient_term,
        zeroth_term,
        constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::CoefficientField;

    fn model(n: usize, m: usize, n0: usize) -> KimuraOperator {
        KimuraOperator::model(CornerBox::cube(n, m, 1.0).unwrap(), n0).unwrap()
    }

    fn grid_for(op: &KimuraOperator, cells: usize) -> Arc<TensorGrid> {
        Arc::new(TensorGrid::graded(op.domain.clone(), &vec![cells; op.dim()], 6).unwrap())
    }

    #[test]
    fn qsym_of_linear_function() {
        let op = model(1, 0, 1);
        let g = grid_for(&op, 64);
        let qs = assemble_qsym(&op, g.clone()).unwrap();
        let u = Field::from_fn(g.clone(), |z| z[0]).unwrap();
        assert!((qs.eval_fields(&u, &u) - 1.0).abs() < 1e-4);
        let c = Field::from_fn(g, |_| 2.0).unwrap();
        assert!(qs.eval_fields(&c, &c).abs() < 1e-9);
        assert!(qs.asymmetry() < 1e-12);
    }

    #[test]
    fn qsym_bilinear_and_symmetric_with_couplings() {
        let op = model(2, 1, 1)
            .with_b(1, CoefficientField::constant(3, 0.6))
            .with_a(0, 1, CoefficientField::constant(3, 0.2))
            .with_c_mix(1, 0, CoefficientField::constant(3, 0.3))
            .with_constants(0.6, 0.5);
        let g = grid_for(&op, 6);
        let qs = assemble_qsym(&op, g.clone()).unwrap();
        assert!(qs.asymmetry() < 1e-12);
        let u = Field::from_fn(g.clone(), |z| z[0] * (1.0 + z[1] - z[2])).unwrap();
        let v = Field::from_fn(g, |z| z[0] * z[0] + z[2]).unwrap();
        let a = qs.eval(&u.map(|x| 2.0 * x).values, &v.map(|x| 3.0 * x).values);
        let b = 6.0 * qs.eval_fields(&u, &v);
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn h1_norm_examples() {
        let op = model(1, 0, 1);
        let g = grid_for(&op, 400);
        let u = Field::from_fn(g.clone(), |z| z[0]).unwrap();
        let h = h1_norm(&u, &op).unwrap().unwrap();
        assert!((h * h - 1.5).abs() < 1e-4, "{}", h * h);
        assert_eq!(h1_norm(&Field::zeros(g.clone()), &op).unwrap(), Some(0.0));
        assert_eq!(
            h1_norm(&Field::from_fn(g, |_| 1.0).unwrap(), &op).unwrap(),
            None
        );
    }

    #[test]
    fn harmonic_u_gives_zero_form() {
        let op = model(1, 0, 1);
        let g = grid_for(&op, 32);
        let q = assemble_q(&op, g.clone()).unwrap();
        let u = Field::from_fn(g.clone(), |z| z[0]).unwrap();
        let v = Field::from_fn(g, |z| z[0] * (1.0 - z[0])).unwrap();
        assert!(q.eval_fields(&u, &v).abs() < 1e-12);
    }

    #[test]
    fn v_term_vanishes_for_constant_weights() {
        let op = model(1, 1, 0)
            .with_b(0, CoefficientField::constant(2, 0.7))
            .with_c0(CoefficientField::constant(2, -0.4))
            .with_constants(0.7, 1.0);
        let errs: Vec<f64> = [16, 32]
            .iter()
            .map(|&c| {
                let g = grid_for(&op, c);
                let q = assemble_q(&op, g.clone()).unwrap();
                let qs = assemble_qsym(&op, g.clone()).unwrap();
                let z0 = assemble_zeroth(&op, g.clone()).unwrap();
                let d = op.domain.clone();
                let u =
                    Field::from_fn(g.clone(), |z| (1.0 + z[0] + z[1]) * outer_bump(&d, z)).unwrap();
                let v = Field::from_fn(g, |z| (2.0 - z[0] * z[1]) * outer_bump(&d, z)).unwrap();
                (v_term(&q, &qs, &z0, &u.values, &v.values) / qs.eval_fields(&u, &v)).abs()
            })
            .collect();
        assert!(errs[1] < 0.05 && errs[1] < errs[0], "{errs:?}");
    }

    #[test]
    fn garding_lp_examples() {
        let r = garding_lp(&[(1.0, 1.0, 0.5), (0.0, 0.0, 0.0)], None);
        assert_eq!((r.c2, r.c3), (1.0, 0.0));
        let r = garding_lp(&[(0.5, 1.0, 0.5)], None);
        assert_eq!(r.c3, 1.0);
        let r = garding_lp(&[(0.5, 1.0, 0.5)], Some(0.0));
        assert_eq!(r.c2, 0.5);
        let r = garding_lp(&[(-1.0, 1.0, 0.5)], Some(0.0));
        assert!(!r.feasible);
    }

    #[test]
    fn garding_model_and_shift() {
        let op = model(1, 1, 1);
        let g = grid_for(&op, 12);
        let r = garding_probe(&op, g.clone(), 20, 7, Some(1.0)).unwrap();
        assert!(r.c2 >= 0.9, "{r:?}");
        let k = 5.0;
        let shifted = op.clone().with_c0(CoefficientField::constant(2, k));
        let r = garding_probe(&shifted, g, 20, 7, None).unwrap();
        assert!(r.c3 >= k - 1.0, "{r:?}");
    }

    #[test]
    fn hardy_closed_form() {
        let op = model(1, 0, 0).with_b(0, CoefficientField::constant(1, 1.0));
        let g = grid_for(&op, 400);
        let u = Field::from_fn(g.clone(), |z| 1.0 - z[0]).unwrap();
        let phi = Field::from_fn(g.clone(), |_| 1.0).unwrap();
        let r = hardy_check(&op, &u, &phi, 0).unwrap();
        assert!((r.lhs - 1.0 / 3.0).abs() < 1e-4);
        assert!((r.gradient_term - 1.0 / 3.0).abs() < 1e-4);
        assert!(r.constant < 1e-3);
        let z = hardy_check(&op, &Field::zeros(g), &phi, 0).unwrap();
        assert_eq!((z.lhs, z.constant), (0.0, 0.0));
    }

    #[test]
    fn matrix_market_export() {
        let op = model(1, 0, 1);
        let m = assemble_mass(&op, grid_for(&op, 4)).unwrap();
        let text = m.to_matrix_market();
        assert!(text.lines().next().unwrap().contains("coordinate"));
        assert_eq!(CsrMatrix::from_matrix_market(&text).unwrap(), m.matrix);
    }
}

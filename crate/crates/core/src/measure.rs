//! Singular weighted measures `dmu_a`, weighted quadrature, and the
//! supremum-envelope factors.
//!
//! Along each degenerate axis the density behaves like `x^s` with
//! `s = b_i(z) + a_i - 1` (`s = a_i - 1` on the zero-weight block). The
//! quadrature freezes `s` at its smallest face value `beta` and integrates
//! `x^beta` exactly, carrying `x^(s(z) - beta)` as part of the integrand.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficient::CoefficientField;
use crate::error::{contract, KimuraError, Result};
use crate::geometry::CornerBox;
use crate::grid::Field;
use crate::operator::KimuraOperator;
use crate::quadrature::{gauss_jacobi_unit, gauss_legendre, gauss_legendre_on};

const FACE_SAMPLES: usize = 9;
pub const DEFAULT_ENVELOPE_P: f64 = 4.0;

#[derive(Clone, Debug)]
pub struct WeightedMeasure {
    op: KimuraOperator,
    alpha: Vec<u32>,
}

impl WeightedMeasure {
    pub fn new(op: &KimuraOperator, alpha: Vec<u32>) -> Result<Self> {
        if alpha.len() != op.n {
            return contract(format!(
                "multi-index has length {}, expected {}",
                alpha.len(),
                op.n
            ));
        }
        Ok(Self {
            op: op.clone(),
            alpha,
        })
    }

    /// The measure `dmu` of the operator.
    pub fn dmu(op: &KimuraOperator) -> Self {
        Self {
            op: op.clone(),
            alpha: vec![0; op.n],
        }
    }

    /// `(w^T)^{-1} w^pitch dz`, the measure adapted to the conjugated operator.
    pub fn tilde(op: &KimuraOperator) -> Self {
        let alpha = (0..op.n).map(|i| if i < op.n0 { 2 } else { 0 }).collect();
        Self {
            op: op.clone(),
            alpha,
        }
    }

    pub fn operator(&self) -> &KimuraOperator {
        &self.op
    }

    pub fn alpha(&self) -> &[u32] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Exponent of `x_i` in the density at `z`.
    pub fn exponent(&self, i: usize, z: &[f64]) -> f64 {
        let a = self.alpha[i] as f64;
        if i < self.op.n0 {
            a - 1.0
        } else {
            self.op.b[i].value(z) + a - 1.0
        }
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        (0..self.op.n)
            .map(|i| z[i].powf(self.exponent(i, z)))
            .product()
    }

    /// Frozen per-axis exponents over `region`: the smallest face value.
    pub fn frozen_exponents(&self, region: &CornerBox) -> Vec<f64> {
        (0..self.op.n)
            .map(|i| {
                if i < self.op.n0 {
                    self.alpha[i] as f64 - 1.0
                } else {
                    face_min(&self.op.b[i], i, region) + self.alpha[i] as f64 - 1.0
                }
            })
            .collect()
    }
}

/// Smallest value of `c` on the face `{z_i = 0}` of `region`, sampled on a
/// small lattice.
fn face_min(c: &CoefficientField, i: usize, region: &CornerBox) -> f64 {
    let dim = region.dim();
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|k| {
            if k == i {
                vec![0.0]
            } else {
                let (lo, hi) = (region.lower(k), region.upper(k));
                (0..FACE_SAMPLES)
                    .map(|s| lo + (hi - lo) * s as f64 / (FACE_SAMPLES - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; dim];
    loop {
        let z: Vec<f64> = idx.iter().enumerate().map(|(k, &j)| axes[k][j]).collect();
        best = best.min(c.value(&z));
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            return best;
        }
    }
}

/// `w^T(z) = prod_{i <= n0} 1 / x_i`; infinite on the tangent faces.
pub fn weight_tangent(op: &KimuraOperator, z: &[f64]) -> f64 {
    crate::geometry::weight_tangent(z, op.n0)
}

/// `w^pitch(z) = prod_{j > n0} x_j^(b_j(z) - 1)`; infinite when some `x_j = 0`
/// with `b_j < 1`.
pub fn weight_transverse(op: &KimuraOperator, z: &[f64]) -> f64 {
    (op.n0..op.n)
        .map(|j| z[j].powf(op.b[j].value(z) - 1.0))
        .product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes per geometric layer on degenerate axes.
    pub nodes_per_layer: usize,
    /// Number of geometric layers toward each face.
    pub layers: usize,
    pub ratio: f64,
    /// Gauss–Jacobi nodes on the innermost layer.
    pub jacobi_nodes: usize,
    /// Gauss–Legendre panels and nodes per panel on tangential axes.
    pub y_panels: usize,
    pub y_nodes: usize,
    /// Decades `[first, last]` of the cut-off sequence `eps = R 10^-k` used on
    /// axes with the critical exponent `-1`.
    pub eps_decades: (u32, u32),
    pub decade_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes_per_layer: 8,
            layers: 40,
            ratio: 0.5,
            jacobi_nodes: 8,
            y_panels: 4,
            y_nodes: 8,
            eps_decades: (2, 8),
            decade_nodes: 12,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.nodes_per_layer > 0
            && self.jacobi_nodes > 0
            && self.y_panels > 0
            && self.y_nodes > 0
            && self.decade_nodes > 0
            && self.ratio > 0.0
            && self.ratio < 1.0
            && self.eps_decades.0 >= 1
            && self.eps_decades.1 >= self.eps_decades.0 + 3;
        if ok {
            Ok(())
        } else {
            contract(format!("invalid quadrature spec {self:?}"))
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntegralOutcome {
    Convergent {
        value: f64,
    },
    Divergent {
        axes: Vec<usize>,
        /// Fitted `a` in `P(eps) ~ a ln(1/eps) + c`.
        slope: f64,
        /// `(eps, integral over the box cut at eps)`.
        partials: Vec<(f64, f64)>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationResult {
    pub outcome: IntegralOutcome,
    pub spec_hash: String,
}

impl IntegrationResult {
    pub fn value(&self) -> Option<f64> {
        match self.outcome {
            IntegralOutcome::Convergent { value } => Some(value),
            IntegralOutcome::Divergent { .. } => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self.outcome, IntegralOutcome::Divergent { .. })
    }

    /// The value, or a domain error naming the divergent axes.
    pub fn require_value(&self) -> Result<f64> {
        match &self.outcome {
            IntegralOutcome::Convergent { value } => Ok(*value),
            IntegralOutcome::Divergent { axes, .. } => Err(KimuraError::Domain(format!(
                "weighted integral diverges along axes {axes:?} (integrand does not vanish on the tangent face)"
            ))),
        }
    }
}

/// Integrand for [`integrate`].
pub enum Integrand<'a> {
    Eval(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    Field(&'a Field),
}

/// 1-D rule for `x^beta` on `[lo, hi]`: geometric layers toward `lo`
/// (Gauss–Jacobi on the innermost layer when `lo = 0`). Weights include
/// `x^beta`.
pub(crate) fn weighted_axis_rule(
    lo: f64,
    hi: f64,
    beta: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<(f64, f64)>> {
    if !(hi > lo) {
        return Ok(Vec::new());
    }
    let (gx, gw) = gauss_legendre(spec.nodes_per_layer);
    let mut rule = Vec::new();
    let mut upper = hi;
    let push_layer = |a: f64, b: f64, rule: &mut Vec<(f64, f64)>| {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for (t, w) in gx.iter().zip(&gw) {
            let x = c + h * t;
            rule.push((x, w * h * x.powf(beta)));
        }
    };
    for _ in 0..spec.layers {
        let lower = lo + (upper - lo) * spec.ratio;
        if lo > 0.0 && lower - lo < 1e-14 * lo {
            break;
        }
        push_layer(lower, upper, &mut rule);
        upper = lower;
    }
    if lo > 0.0 {
        push_layer(lo, upper, &mut rule);
    } else {
        let (jx, jw) = gauss_jacobi_unit(spec.jacobi_nodes, beta)?;
        let scale = upper.powf(beta + 1.0);
        for (t, w) in jx.iter().zip(&jw) {
            rule.push((t * upper, w * scale));
        }
    }
    Ok(rule)
}

/// Log-variable rule for `dx / x` on `[R 10^-k_last, R]`, tagged by decade:
/// tag `t` means the node lies in `[R 10^-t, R 10^-(t-1))`.
fn log_axis_rule(r: f64, spec: &QuadratureSpec) -> Vec<(f64, f64, usize)> {
    let last = spec.eps_decades.1 as usize;
    let ln10 = std::f64::consts::LN_10;
    let mut rule = Vec::new();
    for d in 1..=last {
        let (s_lo, s_hi) = (r.ln() - d as f64 * ln10, r.ln() - (d - 1) as f64 * ln10);
        let (sx, sw) = gauss_legendre_on(spec.decade_nodes, s_lo, s_hi);
        for (s, w) in sx.iter().zip(&sw) {
            rule.push((s.exp(), *w, d));
        }
    }
    rule
}

fn uniform_axis_rule(lo: f64, hi: f64, spec: &QuadratureSpec) -> Vec<(f64, f64)> {
    let mut rule = Vec::new();
    let h = (hi - lo) / spec.y_panels as f64;
    for p in 0..spec.y_panels {
        let (x, w) = gauss_legendre_on(spec.y_nodes, lo + h * p as f64, lo + h * (p + 1) as f64);
        rule.extend(x.into_iter().zip(w));
    }
    rule
}

fn check_region(measure: &WeightedMeasure, region: &CornerBox) -> Result<()> {
    if region.n() != measure.op.n || region.m() != measure.op.m {
        return contract("region dimensions differ from the measure's");
    }
    Ok(())
}

/// Check exponents and return, per degenerate axis, whether it is critical
/// (`-1`, allowed only on the zero-weight block with `a_i = 0`).
fn classify_axes(measure: &WeightedMeasure, frozen: &[f64]) -> Result<Vec<bool>> {
    frozen
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let critical = i < measure.op.n0 && measure.alpha[i] == 0;
            if !critical && s <= -1.0 {
                return Err(KimuraError::MalformedMeasure(format!(
                    "exponent {s} <= -1 on axis {i}, which is not a zero-weight axis"
                )));
            }
            Ok(critical)
        })
        .collect()
}

fn residual_factor(measure: &WeightedMeasure, frozen: &[f64], z: &[f64]) -> f64 {
    let mut acc = 1.0;
    for i in measure.op.n0..measure.op.n {
        let d = measure.exponent(i, z) - frozen[i];
        acc *= if z[i] == 0.0 {
            0f64.powf(d.max(0.0))
        } else {
            z[i].powf(d)
        };
    }
    acc
}

pub fn integrate(
    f: Integrand<'_>,
    measure: &WeightedMeasure,
    region: &CornerBox,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult> {
    match f {
        Integrand::Eval(g) => integrate_fn(g, measure, region, spec),
        Integrand::Field(field) => integrate_field(field, measure, region, spec),
    }
}

pub fn integrate_fn(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    measure: &WeightedMeasure,
    region: &CornerBox,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult> {
    spec.validate()?;
    check_region(measure, region)?;
    let n = measure.op.n;
    let dim = measure.dim();
    let frozen = measure.frozen_exponents(region);
    let critical = classify_axes(measure, &frozen)?;
    let mut rules: Vec<Vec<(f64, f64, usize)>> = Vec::with_capacity(dim);
    for k in 0..dim {
        let rule = if k < n && critical[k] {
            log_axis_rule(region.upper(k), spec)
        } else if k < n {
            weighted_axis_rule(0.0, region.upper(k), frozen[k], spec)?
                .into_iter()
                .map(|(x, w)| (x, w, 0))
                .collect()
        } else {
            uniform_axis_rule(region.lower(k), region.upper(k), spec)
                .into_iter()
                .map(|(x, w)| (x, w, 0))
                .collect()
        };
        rules.push(rule);
    }
    let ntags = spec.eps_decades.1 as usize + 1;
    let by_tag = tensor_sum(&rules, ntags, |z| {
        f(z) * residual_factor(measure, &frozen, z)
    });
    let hash = spec.hash();
    let crit_axes: Vec<usize> = (0..n).filter(|&i| critical[i]).collect();
    if crit_axes.is_empty() {
        return Ok(IntegrationResult {
            outcome: IntegralOutcome::Convergent {
                value: by_tag.iter().sum(),
            },
            spec_hash: hash,
        });
    }
    let r = crit_axes
        .iter()
        .map(|&i| region.upper(i))
        .fold(f64::INFINITY, f64::min);
    let outcome = classify_partials(&by_tag, spec, r, crit_axes)?;
    Ok(IntegrationResult {
        outcome,
        spec_hash: hash,
    })
}

/// Sum `g` over the tensor rule, bucketed by the largest decade tag.
fn tensor_sum(
    rules: &[Vec<(f64, f64, usize)>],
    ntags: usize,
    g: impl Fn(&[f64]) -> f64 + Sync,
) -> Vec<f64> {
    let dim = rules.len();
    if dim == 0 {
        let mut out = vec![0.0; ntags];
        out[0] = g(&[]);
        return out;
    }
    let first = &rules[0];
    let partial: Vec<Vec<f64>> = first
        .par_iter()
        .map(|&(x0, w0, t0)| {
            let mut acc = vec![0.0; ntags];
            let mut z = vec![0.0; dim];
            z[0] = x0;
            let mut idx = vec![0usize; dim];
            if rules[1..].iter().any(|r| r.is_empty()) {
                return acc;
            }
            loop {
                let mut w = w0;
                let mut tag = t0;
                for k in 1..dim {
                    let (x, wk, tk) = rules[k][idx[k]];
                    z[k] = x;
                    w *= wk;
                    tag = tag.max(tk);
                }
                acc[tag] += w * g(&z);
                let mut k = dim - 1;
                loop {
                    if k == 0 {
                        return acc;
                    }
                    idx[k] += 1;
                    if idx[k] < rules[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k -= 1;
                }
            }
        })
        .collect();
    let mut out = vec![0.0; ntags];
    for p in partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

fn classify_partials(
    by_tag: &[f64],
    spec: &QuadratureSpec,
    r: f64,
    axes: Vec<usize>,
) -> Result<IntegralOutcome> {
    let (first, last) = (spec.eps_decades.0 as usize, spec.eps_decades.1 as usize);
    let mut cum = 0.0;
    let mut partials = Vec::new();
    for (t, v) in by_tag.iter().enumerate() {
        cum += v;
        if t >= first && t <= last {
            partials.push((r * 10f64.powi(-(t as i32)), cum));
        }
    }
    let incs: Vec<f64> = partials.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let scale = partials.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    let p_last = partials.last().unwrap().1;
    if incs
        .iter()
        .all(|d| d.abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE))
    {
        return Ok(IntegralOutcome::Convergent { value: p_last });
    }
    let tail = &incs[incs.len() - 3..];
    let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    let steady = tail
        .iter()
        .all(|d| d.signum() == tail[0].signum() && *d != 0.0)
        && ratios.iter().all(|&q| q >= 0.98);
    if steady {
        let pts = &partials[partials.len() - 4..];
        let xs: Vec<f64> = pts.iter().map(|p| (1.0 / p.0).ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let slope = crate::stats::least_squares(&xs, &ys).0;
        return Ok(IntegralOutcome::Divergent {
            axes,
            slope,
            partials,
        });
    }
    let q = ratios[ratios.len() - 1];
    if ratios.iter().all(|q| q.abs() <= 0.5) {
        let d = tail[tail.len() - 1];
        return Ok(IntegralOutcome::Convergent {
            value: p_last + d * q / (1.0 - q),
        });
    }
    Err(KimuraError::Quadrature(format!(
        "partial integrals neither saturate nor grow logarithmically; last increments {tail:?}"
    )))
}

/// Node weights for `int hat_k(x) x^beta dx` over `[lo, hi]`.
fn hat_weights(axis: &[f64], lo: f64, hi: f64, beta: Option<f64>, critical: bool) -> Vec<f64> {
    let (gx, gw) = gauss_legendre(6);
    let mut w = vec![0.0; axis.len()];
    for c in 0..axis.len() - 1 {
        let (a, b) = (axis[c], axis[c + 1]);
        let (a2, b2) = (a.max(lo), b.min(hi));
        if !(b2 > a2) {
            continue;
        }
        let h = b - a;
        if a2 == 0.0 && beta.is_some() {
            let s = beta.unwrap();
            // hat_{c+1} = x / h, hat_c = 1 - x / h on [0, h]
            let m2 = b2.powf(s + 2.0) / ((s + 2.0) * h);
            w[c + 1] += m2;
            if !critical {
                w[c] += b2.powf(s + 1.0) / (s + 1.0) - m2;
            }
            continue;
        }
        let (cc, hh) = (0.5 * (a2 + b2), 0.5 * (b2 - a2));
        for (t, wt) in gx.iter().zip(&gw) {
            let x = cc + hh * t;
            let dens = beta.map_or(1.0, |s| x.powf(s));
            let phi1 = (x - a) / h;
            w[c] += wt * hh * dens * (1.0 - phi1);
            w[c + 1] += wt * hh * dens * phi1;
        }
    }
    w
}

/// Exact integral of the multilinear interpolant of `field` against the
/// frozen-exponent density, times the residual density factor at nodes.
pub fn integrate_field(
    field: &Field,
    measure: &WeightedMeasure,
    region: &CornerBox,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult> {
    check_region(measure, region)?;
    let grid = &field.grid;
    if grid.dim() != measure.dim() {
        return contract("field and measure dimensions differ");
    }
    let n = measure.op.n;
    let frozen = measure.frozen_exponents(region);
    let critical = classify_axes(measure, &frozen)?;
    let weights: Vec<Vec<f64>> = (0..grid.dim())
        .map(|k| {
            let beta = if k < n { Some(frozen[k]) } else { None };
            let crit = k < n && critical[k];
            hat_weights(grid.axis(k), region.lower(k), region.upper(k), beta, crit)
        })
        .collect();
    let (total, face) = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let idx = grid.multi_index(flat);
            let v = field.values[flat];
            if v == 0.0 {
                return (0.0, 0.0);
            }
            let on_crit_face = (0..n).any(|i| critical[i] && idx[i] == 0);
            let z = grid.point(flat);
            if on_crit_face {
                let w: f64 = (0..grid.dim())
                    .filter(|&k| !(k < n && critical[k] && idx[k] == 0))
                    .map(|k| weights[k][idx[k]])
                    .product();
                let inside =
                    (0..grid.dim()).all(|k| z[k] >= region.lower(k) && z[k] <= region.upper(k));
                return (0.0, if inside { v * w } else { 0.0 });
            }
            let w: f64 = idx
                .iter()
                .enumerate()
                .map(|(k, &i)| weights[k][i])
                .product();
            if w == 0.0 {
                return (0.0, 0.0);
            }
            (v * w * residual_factor(measure, &frozen, &z), 0.0)
        })
        .collect::<Vec<(f64, f64)>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let outcome = if face != 0.0 {
        IntegralOutcome::Divergent {
            axes: (0..n).filter(|&i| critical[i]).collect(),
            slope: face,
            partials: Vec::new(),
        }
    } else {
        IntegralOutcome::Convergent { value: total }
    };
    Ok(IntegrationResult {
        outcome,
        spec_hash: spec.hash(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeVariant {
    Base,
    /// Extra power `-q/p` on the degenerate axis with this (0-based) index.
    Transverse(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EnvelopeResult {
    Finite { value: f64 },
    Divergent { axis: usize },
}

impl EnvelopeResult {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Finite { value } => Some(*value),
            Self::Divergent { .. } => None,
        }
    }
}

/// The rectangle integral
/// `(int_{R_r0(z)} prod_{i<=n0} xi_i^(-q/p) prod_{j>n0} xi_j^(-(b_j + delta_jl) q/p) dxi drho)^(1/q)`
/// over `prod (x_i, r0) x prod (y_l, r0)`.
pub fn sup_envelope(
    op: &KimuraOperator,
    z: &[f64],
    r0: f64,
    p: f64,
    variant: EnvelopeVariant,
    spec: &QuadratureSpec,
) -> Result<EnvelopeResult> {
    if !(p > 2.0) {
        return contract(format!("envelope exponent p = {p} must exceed 2"));
    }
    if !(r0 > 0.0) {
        return contract("r0 must be positive");
    }
    if z.len() != op.dim() {
        return contract("point dimension mismatch");
    }
    if let EnvelopeVariant::Transverse(l) = variant {
        if l < op.n0 || l >= op.n {
            return contract(format!(
                "transverse index {l} is not a positive-weight axis"
            ));
        }
    }
    let (n, dim) = (op.n, op.dim());
    let q = p / (p - 1.0);
    let qp = q / p;
    let lo: Vec<f64> = z.to_vec();
    if lo.iter().any(|&v| v >= r0) {
        return Ok(EnvelopeResult::Finite { value: 0.0 });
    }
    let shift = |j: usize| match variant {
        EnvelopeVariant::Transverse(l) if l == j => 1.0,
        _ => 0.0,
    };
    // rectangle as a box for face sampling of b_j
    let rect_face = |j: usize| -> f64 {
        let mut best = f64::NEG_INFINITY;
        let samples = FACE_SAMPLES;
        let mut idx = vec![0usize; dim];
        loop {
            let pt: Vec<f64> = (0..dim)
                .map(|k| {
                    if k == j {
                        lo[k]
                    } else {
                        lo[k] + (r0 - lo[k]) * idx[k] as f64 / (samples - 1) as f64
                    }
                })
                .collect();
            best = best.max(op.b[j].value(&pt));
            let mut k = 0;
            while k < dim {
                if k == j {
                    k += 1;
                    continue;
                }
                idx[k] += 1;
                if idx[k] < samples {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k >= dim {
                return best;
            }
        }
    };
    let mut frozen = vec![0.0; n];
    let mut rules: Vec<Vec<(f64, f64, usize)>> = Vec::with_capacity(dim);
    for k in 0..dim {
        let rule = if k < n {
            let beta = if k < op.n0 {
                -qp
            } else {
                -(rect_face(k) + shift(k)) * qp
            };
            frozen[k] = beta;
            if lo[k] == 0.0 && beta <= -1.0 {
                return Ok(EnvelopeResult::Divergent { axis: k });
            }
            weighted_axis_rule(lo[k], r0, beta, spec)?
        } else {
            uniform_axis_rule(lo[k], r0, spec)
        };
        rules.push(rule.into_iter().map(|(x, w)| (x, w, 0)).collect());
    }
    let residual = |pt: &[f64]| -> f64 {
        let mut acc = 1.0;
        for j in op.n0..n {
            let e = -(op.b[j].value(pt) + shift(j)) * qp - frozen[j];
            acc *= pt[j].powf(e);
        }
        acc
    };
    let total: f64 = tensor_sum(&rules, 1, residual).iter().sum();
    Ok(EnvelopeResult::Finite {
        value: total.powf(1.0 / q),
    })
}

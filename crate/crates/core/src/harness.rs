//! Empirical constants for the boundary estimates, with refinement verdicts.
//!
//! Every functional here is single-grid; [`refinement_verdict`] turns a
//! series of grid values into PASS/FAIL. Quantities weighted by `w^T` use the
//! face limit on the tangent boundary: `w^T u` there is the mixed normal
//! derivative across the vanishing axes divided by the remaining `x_i`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Result};
use crate::geometry::{rho, CornerBox, ParabolicCylinder};
use crate::grid::{derivative_weights, Field, TensorGrid};
use crate::measure::{
    integrate_field, sup_envelope, EnvelopeVariant, QuadratureSpec, WeightedMeasure,
};
use crate::operator::KimuraOperator;
use crate::solver::Trajectory;
use crate::stats::{least_squares, relative_spread};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    VacuousPass,
    Insufficient,
}

impl Verdict {
    pub fn passed(self) -> bool {
        matches!(self, Self::Pass | Self::VacuousPass)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::VacuousPass => "PASS (vacuous)",
            Self::Insufficient => "FAIL (insufficient resolution)",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub grid: String,
    pub cells: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub tag: String,
    pub constants: BTreeMap<String, f64>,
    pub series: Vec<SeriesRow>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub config_hash: String,
    pub flags: Vec<String>,
    pub notes: Vec<String>,
}

impl EstimateReport {
    pub fn new(tag: impl Into<String>, tolerance: f64) -> Self {
        Self {
            tag: tag.into(),
            constants: BTreeMap::new(),
            series: Vec::new(),
            tolerance,
            verdict: Verdict::Fail,
            config_hash: String::new(),
            flags: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn constant(mut self, name: &str, v: f64) -> Self {
        self.constants.insert(name.to_string(), v);
        self
    }

    pub fn with_verdict(mut self, v: Verdict) -> Self {
        self.verdict = v;
        self
    }

    /// AND the verdict with another condition, recording `flag` on failure.
    pub fn require(&mut self, ok: bool, flag: &str) {
        if !ok {
            self.verdict = Verdict::Fail;
            self.flags.push(flag.to_string());
        }
    }
}

/// Short identity of a grid: node counts plus a digest of the node positions.
pub fn grid_signature(grid: &TensorGrid) -> String {
    let mut h = Sha256::new();
    for a in grid.axes() {
        for v in a {
            h.update(v.to_le_bytes());
        }
        h.update([0xff]);
    }
    let digest = h.finalize();
    let shape: Vec<String> = grid.shape().iter().map(|s| s.to_string()).collect();
    let hex: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
    format!("{}#{hex}", shape.join("x"))
}

/// PASS when every value is finite and the relative spread is within `tol`.
/// Fewer than two grids never passes.
pub fn refinement_verdict(values: &[f64], tol: f64) -> (Verdict, Vec<String>) {
    let mut flags = Vec::new();
    if values.len() < 2 {
        flags.push("refinement series has fewer than two grids".into());
        return (Verdict::Insufficient, flags);
    }
    if values.iter().any(|v| !v.is_finite()) {
        flags.push("non-finite value in refinement series".into());
        return (Verdict::Fail, flags);
    }
    if values.len() >= 3 && values.windows(2).all(|w| w[1] > w[0] * (1.0 + tol)) {
        flags.push("monotone growth across refinements".into());
        return (Verdict::Fail, flags);
    }
    let spread = relative_spread(values);
    if spread > tol {
        flags.push(format!("relative spread {spread:.3} exceeds {tol}"));
        return (Verdict::Fail, flags);
    }
    (Verdict::Pass, flags)
}

/// `D^orders u` at every node from the grid stencils (total order at most 2).
pub fn derivative_field(u: &Field, orders: &[u32]) -> Result<Field> {
    let grid = u.grid.clone();
    if orders.len() != grid.dim() {
        return contract("derivative multi-index has the wrong length");
    }
    if orders.iter().sum::<u32>() > 2 {
        return contract("derivatives of total order above 2 are not supported");
    }
    let active: Vec<(usize, u32)> = orders
        .iter()
        .enumerate()
        .filter(|(_, &o)| o > 0)
        .map(|(k, &o)| (k, o))
        .collect();
    if active.is_empty() {
        return Ok(u.clone());
    }
    let values = (0..grid.len())
        .map(|p| {
            let idx = grid.multi_index(p);
            let stencils: Vec<(usize, Vec<(usize, f64)>)> = active
                .iter()
                .map(|&(k, o)| {
                    let (w1, w2) = derivative_weights(grid.axis(k), idx[k]);
                    (k, if o == 1 { w1 } else { w2 })
                })
                .collect();
            apply_tensor_stencil(u, &idx, &stencils)
        })
        .collect();
    Field::new(grid, values)
}

fn apply_tensor_stencil(u: &Field, idx: &[usize], stencils: &[(usize, Vec<(usize, f64)>)]) -> f64 {
    fn rec(
        u: &Field,
        j: &mut Vec<usize>,
        stencils: &[(usize, Vec<(usize, f64)>)],
        acc: f64,
    ) -> f64 {
        match stencils.split_first() {
            None => acc * u.value_at(j),
            Some(((k, w), rest)) => {
                let keep = j[*k];
                let mut s = 0.0;
                for &(node, c) in w {
                    j[*k] = node;
                    s += rec(u, j, rest, acc * c);
                }
                j[*k] = keep;
                s
            }
        }
    }
    rec(u, &mut idx.to_vec(), stencils, 1.0)
}

/// `w^T u` at a node, with the face limit on vanishing tangent axes.
pub fn scaled_value(u: &Field, idx: &[usize], n0: usize) -> f64 {
    let grid = &u.grid;
    let mut stencils = Vec::new();
    let mut denom = 1.0;
    for i in 0..n0 {
        let x = grid.axis(i)[idx[i]];
        if x == 0.0 {
            stencils.push((i, derivative_weights(grid.axis(i), idx[i]).0));
        } else {
            denom *= x;
        }
    }
    apply_tensor_stencil(u, idx, &stencils) / denom
}

/// `w^T(z) u(z)` at an off-grid point with positive tangent coordinates.
fn scaled_interp(u: &Field, z: &[f64], n0: usize) -> f64 {
    u.interpolate(z) / z[..n0].iter().product::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanishingFit {
    pub slope: f64,
    pub points: usize,
    pub degenerate: bool,
}

/// Least-squares slope of `ln |u|` against `ln s` along the line where every
/// coordinate in `axes` equals `s` (others fixed at `base`), for the nodes
/// of `axes[0]` inside `window`.
pub fn vanishing_exponent(
    u: &Field,
    axes: &[usize],
    base: &[f64],
    window: (f64, f64),
) -> Result<VanishingFit> {
    let grid = &u.grid;
    if axes.is_empty() || axes.iter().any(|&a| a >= grid.n()) {
        return contract("vanishing exponent needs tangent x-axes");
    }
    if base.len() != grid.dim() {
        return contract("base point has the wrong dimension");
    }
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return contract("fit window must satisfy 0 < lo < hi");
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &s in grid.axis(axes[0]) {
        if s < lo || s > hi {
            continue;
        }
        let mut z = base.to_vec();
        for &a in axes {
            z[a] = s;
        }
        let v = u.interpolate(&z).abs();
        if v > 0.0 {
            xs.push(s.ln());
            ys.push(v.ln());
        }
    }
    if xs.len() < 2 {
        return Ok(VanishingFit {
            slope: f64::NAN,
            points: xs.len(),
            degenerate: true,
        });
    }
    Ok(VanishingFit {
        slope: least_squares(&xs, &ys).0,
        points: xs.len(),
        degenerate: false,
    })
}

/// `sup |D^{e_k} u| / W` over nodes of `region` with `W > 0`, where
/// `W = prod_{i < n0, i != k} x_i` (tangent `k`) or `prod_{i < n0} x_i`.
pub fn derivative_bound(u: &Field, n0: usize, k: usize, region: &CornerBox) -> Result<f64> {
    let grid = u.grid.clone();
    if k >= grid.dim() {
        return contract(format!("derivative index {k} out of range"));
    }
    let mut orders = vec![0; grid.dim()];
    orders[k] = 1;
    let d = derivative_field(u, &orders)?;
    let mut sup: f64 = 0.0;
    for p in 0..grid.len() {
        let z = grid.point(p);
        if !region.contains_closed(&z) {
            continue;
        }
        let w: f64 = (0..n0).filter(|&i| i != k).map(|i| z[i]).product();
        if w > 0.0 {
            sup = sup.max(d.values[p].abs() / w);
        }
    }
    Ok(sup)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioFlag {
    Ok,
    /// `0 / 0`: the inequality holds trivially.
    Vacuous,
    /// Zero anchor under a nonzero numerator.
    MaximumPrincipleViolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderRatio {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub flag: RatioFlag,
}

fn ratio(numerator: f64, denominator: f64) -> CylinderRatio {
    let (value, flag) = if numerator == 0.0 && denominator == 0.0 {
        (0.0, RatioFlag::Vacuous)
    } else if denominator == 0.0 {
        (f64::INFINITY, RatioFlag::MaximumPrincipleViolation)
    } else {
        (numerator / denominator, RatioFlag::Ok)
    };
    CylinderRatio {
        value,
        numerator,
        denominator,
        flag,
    }
}

/// `(snapshot, node)` pairs of `\bar Q_r`.
fn cylinder_nodes<'a>(
    traj: &'a Trajectory,
    cyl: &ParabolicCylinder,
) -> Vec<(&'a Field, Vec<usize>)> {
    let grid = &traj.grid;
    let nodes: Vec<Vec<usize>> = (0..grid.len())
        .filter(|&p| cyl.contains_space(&grid.point(p)))
        .map(|p| grid.multi_index(p))
        .collect();
    traj.times
        .iter()
        .zip(&traj.fields)
        .filter(|(s, _)| cyl.contains_time_closed(**s))
        .flat_map(|(_, f)| nodes.iter().map(move |i| (f, i.clone())))
        .collect()
}

fn check_cylinder(traj: &Trajectory, cyl: &ParabolicCylinder) -> Result<()> {
    let r2 = cyl.r * cyl.r;
    if !(cyl.t > 4.0 * r2) {
        return contract(format!(
            "cylinder needs t > 4r^2 (t = {}, r = {})",
            cyl.t, cyl.r
        ));
    }
    let t_max = traj.times.last().copied().unwrap_or(0.0);
    if cyl.t + r2 > t_max + 1e-12 {
        return contract(format!(
            "anchor time {} lies past the trajectory end {t_max}",
            cyl.t + r2
        ));
    }
    if !traj.times.iter().any(|&s| cyl.contains_time_closed(s)) {
        return contract("no snapshot inside the cylinder time interval");
    }
    Ok(())
}

/// `sup_{Q_r} w^T u / (w^T(A_r) u(t + r^2, A_r))`.
pub fn carleson_constant(
    traj: &Trajectory,
    cyl: &ParabolicCylinder,
    n0: usize,
) -> Result<CylinderRatio> {
    check_cylinder(traj, cyl)?;
    let sup = cylinder_nodes(traj, cyl)
        .iter()
        .map(|(f, i)| scaled_value(f, i, n0))
        .fold(0.0, f64::max);
    let a = cyl.anchor()?;
    let anchor = scaled_interp(traj.nearest(cyl.t + cyl.r * cyl.r), &a, n0);
    Ok(ratio(sup, anchor))
}

/// `inf_{Q_r} w^T u / (w^T(A_r) u(t - 2r^2, A_r))`.
pub fn hopf_oleinik_constant(
    traj: &Trajectory,
    cyl: &ParabolicCylinder,
    n0: usize,
) -> Result<CylinderRatio> {
    check_cylinder(traj, cyl)?;
    let inf = cylinder_nodes(traj, cyl)
        .iter()
        .map(|(f, i)| scaled_value(f, i, n0))
        .fold(f64::INFINITY, f64::min);
    let a = cyl.anchor()?;
    let anchor = scaled_interp(traj.nearest(cyl.t - 2.0 * cyl.r * cyl.r), &a, n0);
    Ok(ratio(if inf.is_finite() { inf } else { 0.0 }, anchor))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotientBounds {
    /// `sup_{Q_r}(u1/u2)` over `u1(t + r^2, A) / u2(t - 2r^2, A)`.
    pub sup_form: f64,
    /// `inf_{Q_r}(u1/u2)` over `u1(t - 2r^2, A) / u2(t + r^2, A)`.
    pub inf_form: f64,
    /// `sup_{Q_r}(u1/u2) / inf_{Q_r}(u1/u2)`.
    pub global_ratio: f64,
    pub sup_ratio: f64,
    pub inf_ratio: f64,
    pub consistent: bool,
}

fn ratio_samples(
    traj1: &Trajectory,
    traj2: &Trajectory,
    cyl: &ParabolicCylinder,
    n0: usize,
) -> Result<Vec<(f64, Vec<f64>, f64)>> {
    if traj1.grid.shape() != traj2.grid.shape() || traj1.times != traj2.times {
        return contract("quotient trajectories must share grid and snapshot times");
    }
    let grid = &traj1.grid;
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&p| cyl.contains_space(&grid.point(p)))
        .collect();
    let mut out = Vec::new();
    for (k, &s) in traj1.times.iter().enumerate() {
        if !cyl.contains_time_closed(s) {
            continue;
        }
        for &p in &nodes {
            let idx = grid.multi_index(p);
            let v2 = scaled_value(&traj2.fields[k], &idx, n0);
            if !(v2 > 0.0) {
                return contract(format!(
                    "denominator solution is not positive at {:?}, t = {s}",
                    grid.point(p)
                ));
            }
            out.push((
                s,
                grid.point(p),
                scaled_value(&traj1.fields[k], &idx, n0) / v2,
            ));
        }
    }
    Ok(out)
}

pub fn quotient_bounds(
    traj1: &Trajectory,
    traj2: &Trajectory,
    cyl: &ParabolicCylinder,
    n0: usize,
) -> Result<QuotientBounds> {
    check_cylinder(traj1, cyl)?;
    let samples = ratio_samples(traj1, traj2, cyl, n0)?;
    let sup = samples
        .iter()
        .map(|s| s.2)
        .fold(f64::NEG_INFINITY, f64::max);
    let inf = samples.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let a = cyl.anchor()?;
    let r2 = cyl.r * cyl.r;
    let at = |traj: &Trajectory, s: f64| traj.nearest(s).interpolate(&a);
    let sup_anchor = at(traj1, cyl.t + r2) / at(traj2, cyl.t - 2.0 * r2);
    let inf_anchor = at(traj1, cyl.t - 2.0 * r2) / at(traj2, cyl.t + r2);
    let sup_form = sup / sup_anchor;
    let inf_form = inf / inf_anchor;
    Ok(QuotientBounds {
        sup_form,
        inf_form,
        global_ratio: sup / inf,
        sup_ratio: sup,
        inf_ratio: inf,
        consistent: sup_form >= 1.0 && inf_form <= sup_form,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub lo: f64,
    pub hi: f64,
    pub oscillation: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderScan {
    /// Largest passing `alpha` of the scan, `None` when none passes.
    pub alpha: Option<f64>,
    pub shells: Vec<Shell>,
    pub decay_slope: f64,
    pub insufficient: bool,
}

/// Scan grid `0.05, 0.10, ..., 0.95`.
pub fn alpha_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Shell tolerance: consecutive oscillations must satisfy
/// `osc_{k+1} <= 1.25 * 2^{-alpha} osc_k`.
pub const SHELL_SLACK: f64 = 1.25;

/// Oscillation of `v` over dyadic shells `(r 2^{-k-1}, r 2^{-k}]` of the
/// parabolic distance `sqrt|s1 - s2| + rho(z1, z2)`. An `alpha` passes when
/// every consecutive shell ratio is at most `1.25 * 2^{-alpha}` and the
/// fitted decay rate `-d log2(osc) / dk` is at least `0.75 alpha`.
pub fn holder_alpha(
    samples: &[(f64, Vec<f64>, f64)],
    r: f64,
    n: usize,
    max_points: usize,
) -> Result<HolderScan> {
    if !(r > 0.0) {
        return contract("shell radius must be positive");
    }
    let step = samples.len().div_ceil(max_points.max(2)).max(1);
    let pts: Vec<&(f64, Vec<f64>, f64)> = samples.iter().step_by(step).collect();
    let max_shells = 40;
    let mut osc = vec![0.0f64; max_shells];
    let mut count = vec![0usize; max_shells];
    for a in 0..pts.len() {
        for b in (a + 1)..pts.len() {
            let (s1, z1, v1) = pts[a];
            let (s2, z2, v2) = pts[b];
            let d = (s1 - s2).abs().sqrt() + rho(z1, z2, n)?;
            if d <= 0.0 || d > r {
                continue;
            }
            let k = ((r / d).log2().floor() as usize).min(max_shells - 1);
            osc[k] = osc[k].max((v1 - v2).abs());
            count[k] += 1;
        }
    }
    let shells: Vec<Shell> = (0..max_shells)
        .take_while(|&k| count[k] > 0)
        .map(|k| Shell {
            lo: r * 0.5f64.powi(k as i32 + 1),
            hi: r * 0.5f64.powi(k as i32),
            oscillation: osc[k],
            pairs: count[k],
        })
        .collect();
    if shells.len() < 4 {
        return Ok(HolderScan {
            alpha: None,
            shells,
            decay_slope: f64::NAN,
            insufficient: true,
        });
    }
    let scale = shells.iter().map(|s| s.oscillation).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(HolderScan {
            alpha: alpha_grid().last().copied(),
            shells,
            decay_slope: f64::INFINITY,
            insufficient: false,
        });
    }
    let pts: Vec<(f64, f64)> = shells
        .iter()
        .enumerate()
        .filter(|(_, s)| s.oscillation > 1e-14 * scale)
        .map(|(k, s)| (k as f64, s.oscillation.log2()))
        .collect();
    let decay_slope = if pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        -least_squares(&xs, &ys).0
    } else {
        f64::INFINITY
    };
    let alpha = alpha_grid().into_iter().rev().find(|&al| {
        let bound = SHELL_SLACK * 2f64.powf(-al);
        let ratios_ok = shells
            .windows(2)
            .all(|w| w[1].oscillation <= bound * w[0].oscillation + 1e-14 * scale);
        ratios_ok && decay_slope >= 0.75 * al
    });
    Ok(HolderScan {
        alpha,
        shells,
        decay_slope,
        insufficient: false,
    })
}

/// The scan applied to `v = u1 / u2` on `\bar Q_r`.
pub fn holder_quotient_alpha(
    traj1: &Trajectory,
    traj2: &Trajectory,
    cyl: &ParabolicCylinder,
    n0: usize,
    max_points: usize,
) -> Result<HolderScan> {
    check_cylinder(traj1, cyl)?;
    let samples = ratio_samples(traj1, traj2, cyl, n0)?;
    holder_alpha(&samples, cyl.r, cyl.n, max_points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackRatio {
    pub ratio: f64,
    pub sup: f64,
    pub inf: f64,
    pub flag: RatioFlag,
}

/// `sup / inf` of `w^T u` over `(t - r^2, t] x region`, snapshots and nodes only.
pub fn elliptic_harnack(
    traj: &Trajectory,
    n0: usize,
    t: f64,
    r: f64,
    region: &CornerBox,
) -> Result<HarnackRatio> {
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    if !(4.0 * r * r < t && t < t_end - 4.0 * r * r + 1e-12) {
        return contract(format!(
            "need 4r^2 < t < T - 4r^2 (t = {t}, r = {r}, T = {t_end})"
        ));
    }
    let grid = &traj.grid;
    let nodes: Vec<Vec<usize>> = (0..grid.len())
        .filter(|&p| region.contains_closed(&grid.point(p)))
        .map(|p| grid.multi_index(p))
        .collect();
    let (mut sup, mut inf) = (0.0f64, f64::INFINITY);
    let mut any = false;
    for (s, f) in traj.times.iter().zip(&traj.fields) {
        if *s > t - r * r && *s <= t {
            for i in &nodes {
                let v = scaled_value(f, i, n0);
                sup = sup.max(v);
                inf = inf.min(v);
                any = true;
            }
        }
    }
    if !any {
        return contract("no snapshot inside (t - r^2, t]");
    }
    let c = ratio(sup, inf.max(0.0));
    Ok(HarnackRatio {
        ratio: c.value,
        sup,
        inf,
        flag: c.flag,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    /// The left side diverged: a discrete regularity violation.
    pub divergent: bool,
}

/// The sub-box of `domain` with x-extent `r` and y-radius `r`.
pub fn inner_box(domain: &CornerBox, r: f64) -> Result<CornerBox> {
    CornerBox::new(
        domain.x_extent.iter().map(|&e| r.min(e)).collect(),
        domain.y_center.clone(),
        domain.y_radius.iter().map(|&e| r.min(e)).collect(),
    )
}

/// `lhs = sup_{s in [t, T]} ||D^a_x D^b_y u(s)||^2_{L^2(B_r; dmu_a)}`,
/// `rhs = ||f||^2_{L^2(dmu)} + int_0^T ||u||^2_{L^2(dmu)} + int_0^T ||g||^2`.
pub fn sobolev_sup(
    traj: &Trajectory,
    op: &KimuraOperator,
    a: &[u32],
    b: &[u32],
    t: f64,
    r: f64,
    f: &Field,
    g: Option<&Field>,
) -> Result<SobolevCheck> {
    if a.len() != op.n || b.len() != op.m {
        return contract("multi-index lengths do not match the operator");
    }
    if a.iter().chain(b).sum::<u32>() > 2 {
        return contract("total derivative order above 2");
    }
    let spec = QuadratureSpec::default();
    let orders: Vec<u32> = a.iter().chain(b).copied().collect();
    let measure_a = WeightedMeasure::new(op, a.to_vec())?;
    let dmu = WeightedMeasure::dmu(op);
    let region = inner_box(&op.domain, r)?;
    let mut lhs: f64 = 0.0;
    for (s, u) in traj.times.iter().zip(&traj.fields) {
        if *s < t - 1e-12 {
            continue;
        }
        let d = derivative_field(u, &orders)?.map(|v| v * v);
        match integrate_field(&d, &measure_a, &region, &spec)?.value() {
            Some(v) => lhs = lhs.max(v),
            None => {
                return Ok(SobolevCheck {
                    lhs: f64::INFINITY,
                    rhs: f64::NAN,
                    constant: f64::INFINITY,
                    divergent: true,
                })
            }
        }
    }
    let sq = |u: &Field| -> Result<f64> {
        integrate_field(&u.map(|v| v * v), &dmu, &op.domain, &spec)?.require_value()
    };
    let mut rhs = sq(f)?;
    let norms: Vec<f64> = traj.fields.iter().map(sq).collect::<Result<_>>()?;
    for k in 1..traj.times.len() {
        rhs += 0.5 * (traj.times[k] - traj.times[k - 1]) * (norms[k] + norms[k - 1]);
    }
    if let Some(g) = g {
        rhs += sq(g)? * traj.meta.t_end;
    }
    let constant = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SobolevCheck {
        lhs,
        rhs,
        constant,
        divergent: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub p: f64,
    /// `sup |u(s,z)| / (N W_r0(pi(z)) prod_{i<=n0} x_i)` over `s >= t`, `z` in `B_r`.
    pub constant: f64,
    /// `N = ||f||_{L^2(dmu)} + ||u||_{L^2((0,T); L^2(dmu))}`.
    pub norm: f64,
    /// Some envelope integral diverged, so the bound is vacuous at this `p`.
    pub divergent: bool,
}

/// Pointwise envelope bound for the solution itself, one `p` at a time.
/// Nodes on the tangent faces are skipped (both sides vanish there).
pub fn envelope_bound(
    traj: &Trajectory,
    op: &KimuraOperator,
    f: &Field,
    t: f64,
    r: f64,
    r0: f64,
    p: f64,
) -> Result<EnvelopeCheck> {
    if !(r > 0.0 && r < r0) {
        return contract("need 0 < r < r0");
    }
    let spec = QuadratureSpec::default();
    let dmu = WeightedMeasure::dmu(op);
    let sq = |u: &Field| -> Result<f64> {
        integrate_field(&u.map(|v| v * v), &dmu, &op.domain, &spec)?.require_value()
    };
    let norms: Vec<f64> = traj.fields.iter().map(sq).collect::<Result<_>>()?;
    let mut l2l2 = 0.0;
    for k in 1..traj.times.len() {
        l2l2 += 0.5 * (traj.times[k] - traj.times[k - 1]) * (norms[k] + norms[k - 1]);
    }
    let norm = sq(f)?.sqrt() + l2l2.sqrt();
    let region = inner_box(&op.domain, r)?;
    let grid = &traj.grid;
    let mut envelopes: BTreeMap<Vec<u64>, Option<f64>> = BTreeMap::new();
    let mut constant: f64 = 0.0;
    let mut divergent = false;
    for flat in 0..grid.len() {
        let z = grid.point(flat);
        let face: f64 = z[..op.n0].iter().product();
        if !(face > 0.0) || !region.contains_closed(&z) {
            continue;
        }
        let proj: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(k, &v)| if k < op.n0 { 0.0 } else { v })
            .collect();
        let key: Vec<u64> = proj.iter().map(|v| v.to_bits()).collect();
        let w = match envelopes.get(&key) {
            Some(w) => *w,
            None => {
                let w = sup_envelope(op, &proj, r0, p, EnvelopeVariant::Base, &spec)?.value();
                envelopes.insert(key, w);
                w
            }
        };
        let Some(w) = w else {
            divergent = true;
            continue;
        };
        if !(w > 0.0) {
            continue;
        }
        let scale = norm * w * face;
        for (s, u) in traj.times.iter().zip(&traj.fields) {
            if *s >= t - 1e-12 && scale > 0.0 {
                constant = constant.max(u.values[flat].abs() / scale);
            }
        }
    }
    Ok(EnvelopeCheck {
        p,
        constant,
        norm,
        divergent,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximumPrinciple {
    /// `max(0, sup_t sup u(t) - max(sup u0, 0))`.
    pub overshoot: f64,
    /// `max(0, min(inf u0, 0) - inf_t inf u(t))`.
    pub undershoot: f64,
    /// `sup |u|` over the tangent face.
    pub face_max: f64,
}

impl MaximumPrinciple {
    pub fn holds(&self, tol: f64) -> bool {
        self.overshoot <= tol && self.undershoot <= tol && self.face_max <= tol
    }
}

/// Maximum-principle and tangent-face bookkeeping for a source-free
/// trajectory of an operator with `c0 <= 0`.
pub fn maximum_principle(traj: &Trajectory, n0: usize) -> MaximumPrinciple {
    let u0 = &traj.fields[0];
    let hi0 = u0.values.iter().cloned().fold(0.0, f64::max);
    let lo0 = u0.values.iter().cloned().fold(0.0, f64::min);
    let grid = &traj.grid;
    let face: Vec<usize> = (0..grid.len())
        .filter(|&p| grid.on_tangent_face(&grid.multi_index(p), n0))
        .collect();
    let mut mp = MaximumPrinciple {
        overshoot: 0.0,
        undershoot: 0.0,
        face_max: 0.0,
    };
    for f in &traj.fields {
        for &v in &f.values {
            mp.overshoot = mp.overshoot.max(v - hi0);
            mp.undershoot = mp.undershoot.max(lo0 - v);
        }
        for &p in &face {
            mp.face_max = mp.face_max.max(f.values[p].abs());
        }
    }
    mp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve_ivp, Scheme};
    use std::sync::Arc;

    fn grid1(cells: usize) -> Arc<TensorGrid> {
        Arc::new(TensorGrid::graded(CornerBox::cube(1, 0, 1.0).unwrap(), &[cells], 10).unwrap())
    }

    #[test]
    fn linear_function_has_slope_one() {
        let g = grid1(32);
        let u = Field::from_fn(g, |z| z[0]).unwrap();
        let fit = vanishing_exponent(&u, &[0], &[0.0], (1e-3, 1e-2)).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!(
            vanishing_exponent(&u.map(|_| 0.0), &[0], &[0.0], (1e-3, 1e-2))
                .unwrap()
                .degenerate
        );
    }

    #[test]
    fn scaled_derivative_of_x() {
        let g = grid1(16);
        let u = Field::from_fn(g, |z| z[0]).unwrap();
        let b = derivative_bound(&u, 1, 0, &CornerBox::cube(1, 0, 0.5).unwrap()).unwrap();
        assert!((b - 1.0).abs() < 1e-9);
        assert!((scaled_value(&u, &[0], 1) - 1.0).abs() < 1e-9);
        assert!((scaled_value(&u, &[5], 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verdicts() {
        assert_eq!(refinement_verdict(&[1.0, 1.1], 0.2).0, Verdict::Pass);
        assert_eq!(refinement_verdict(&[1.0, 2.0], 0.2).0, Verdict::Fail);
        assert_eq!(refinement_verdict(&[1.0], 0.2).0, Verdict::Insufficient);
        assert_eq!(
            refinement_verdict(&[1.0, f64::INFINITY], 0.2).0,
            Verdict::Fail
        );
    }

    fn lattice(v: impl Fn(f64) -> f64) -> Vec<(f64, Vec<f64>, f64)> {
        (0..=400)
            .map(|i| {
                let x = 0.25 * i as f64 / 400.0;
                (0.0, vec![x], v(x))
            })
            .collect()
    }

    #[test]
    fn holder_scan_controls() {
        let c = holder_alpha(&lattice(|_| 3.0), 0.5, 1, 1000).unwrap();
        assert_eq!(c.alpha, Some(0.95));
        let smooth = holder_alpha(&lattice(|x| 1.0 + x), 0.5, 1, 1000).unwrap();
        assert!(smooth.alpha.unwrap() >= 0.5, "{smooth:?}");
        let jump =
            holder_alpha(&lattice(|x| if x < 0.1 { 0.0 } else { 1.0 }), 0.5, 1, 1000).unwrap();
        assert_eq!(jump.alpha, None, "{jump:?}");
        let few = holder_alpha(&lattice(|x| x)[..3], 0.5, 1, 1000).unwrap();
        assert!(few.insufficient);
    }

    #[test]
    fn carleson_scaling_and_zero() {
        let op = KimuraOperator::model(CornerBox::cube(1, 0, 1.0).unwrap(), 1).unwrap();
        let g = grid1(32);
        let u0 = Field::from_fn(g.clone(), |z| z[0] * (1.0 - z[0])).unwrap();
        let traj = solve_ivp(&op, g.clone(), &u0, 0.6, 0.01, Scheme::CrankNicolson, 1).unwrap();
        let cyl = ParabolicCylinder::centered(0.3, vec![0.0], 0.2, 1).unwrap();
        let h = carleson_constant(&traj, &cyl, 1).unwrap();
        assert!(h.value.is_finite() && h.value > 0.0);
        let mut scaled = traj.clone();
        scaled
            .fields
            .iter_mut()
            .for_each(|f| f.values.iter_mut().for_each(|v| *v *= 5.0));
        let h5 = carleson_constant(&scaled, &cyl, 1).unwrap();
        assert!((h5.value - h.value).abs() <= 1e-12 * h.value);
        let mut zero = traj.clone();
        zero.fields
            .iter_mut()
            .for_each(|f| f.values.iter_mut().for_each(|v| *v = 0.0));
        assert_eq!(
            carleson_constant(&zero, &cyl, 1).unwrap().flag,
            RatioFlag::Vacuous
        );
        let q = quotient_bounds(&traj, &traj, &cyl, 1).unwrap();
        assert!((q.global_ratio - 1.0).abs() < 1e-12);
        let ho = hopf_oleinik_constant(&traj, &cyl, 1).unwrap();
        assert!(ho.value > 0.0 && ho.value <= h.value);
        let eh = elliptic_harnack(&traj, 1, 0.3, 0.2, &op.domain.shrink(0.5)).unwrap();
        assert!(eh.ratio >= 1.0);
    }

    #[test]
    fn maximum_principle_on_heat_like_flow() {
        let op = KimuraOperator::model(CornerBox::cube(1, 0, 1.0).unwrap(), 1).unwrap();
        let g = grid1(32);
        let u0 = Field::from_fn(g.clone(), |z| z[0] * (1.0 - z[0])).unwrap();
        let traj = solve_ivp(&op, g, &u0, 0.2, 0.01, Scheme::ImplicitEuler, 1).unwrap();
        assert!(maximum_principle(&traj, 1).holds(1e-9));
    }
}

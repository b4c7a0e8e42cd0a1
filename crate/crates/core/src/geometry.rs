//! Corner boxes, the intrinsic distance, parabolic cylinders and the
//! boundary-anchored interior points used by the Harnack-type estimates.
//!
//! Points are flat slices `(x_1, .., x_n, y_1, .., y_m)`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, KimuraError, Result};

/// A coordinate box `[0, R_i)` on the degenerate axes times
/// `(c_l - R_l, c_l + R_l)` on the tangential axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerBox {
    pub x_extent: Vec<f64>,
    pub y_center: Vec<f64>,
    pub y_radius: Vec<f64>,
}

impl CornerBox {
    pub fn new(x_extent: Vec<f64>, y_center: Vec<f64>, y_radius: Vec<f64>) -> Result<Self> {
        if y_center.len() != y_radius.len() {
            return contract("y_center and y_radius lengths differ");
        }
        if x_extent
            .iter()
            .chain(&y_radius)
            .any(|&r| !(r > 0.0) || !r.is_finite())
        {
            return Err(KimuraError::Domain(
                "box side lengths must be positive and finite".into(),
            ));
        }
        Ok(Self {
            x_extent,
            y_center,
            y_radius,
        })
    }

    /// `[0, R)^n x (-R, R)^m`, centred at the origin.
    pub fn cube(n: usize, m: usize, r: f64) -> Result<Self> {
        Self::new(vec![r; n], vec![0.0; m], vec![r; m])
    }

    pub fn n(&self) -> usize {
        self.x_extent.len()
    }

    pub fn m(&self) -> usize {
        self.y_center.len()
    }

    pub fn dim(&self) -> usize {
        self.n() + self.m()
    }

    pub fn lower(&self, k: usize) -> f64 {
        let n = self.n();
        if k < n {
            0.0
        } else {
            self.y_center[k - n] - self.y_radius[k - n]
        }
    }

    pub fn upper(&self, k: usize) -> f64 {
        let n = self.n();
        if k < n {
            self.x_extent[k]
        } else {
            self.y_center[k - n] + self.y_radius[k - n]
        }
    }

    /// Membership in the half-open box.
    pub fn contains(&self, z: &[f64]) -> bool {
        let n = self.n();
        z.len() == self.dim()
            && (0..self.dim()).all(|k| {
                if k < n {
                    z[k] >= 0.0 && z[k] < self.x_extent[k]
                } else {
                    z[k] > self.lower(k) && z[k] < self.upper(k)
                }
            })
    }

    /// Membership in the closure.
    pub fn contains_closed(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && (0..self.dim()).all(|k| z[k] >= self.lower(k) && z[k] <= self.upper(k))
    }

    /// The box with every extent multiplied by `fraction`, keeping the
    /// corner (for `x`) and the centres (for `y`) fixed.
    pub fn shrink(&self, fraction: f64) -> Self {
        Self {
            x_extent: self.x_extent.iter().map(|r| r * fraction).collect(),
            y_center: self.y_center.clone(),
            y_radius: self.y_radius.iter().map(|r| r * fraction).collect(),
        }
    }
}

fn check_point(z: &[f64], n: usize) -> Result<()> {
    if z.len() < n {
        return contract(format!(
            "point has {} coordinates, need at least {n}",
            z.len()
        ));
    }
    if let Some(k) = (0..n).find(|&k| z[k] < 0.0 || !z[k].is_finite()) {
        return Err(KimuraError::Domain(format!(
            "x-coordinate {k} is {} (must be nonnegative)",
            z[k]
        )));
    }
    Ok(())
}

/// Intrinsic distance: Euclidean distance after `x_i -> sqrt(x_i)`.
pub fn rho(z: &[f64], z2: &[f64], n: usize) -> Result<f64> {
    if z.len() != z2.len() {
        return contract("points have different dimensions");
    }
    check_point(z, n)?;
    check_point(z2, n)?;
    let sum: f64 = (0..z.len())
        .map(|k| {
            let d = if k < n {
                z[k].sqrt() - z2[k].sqrt()
            } else {
                z[k] - z2[k]
            };
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

/// The interior point `A_r(z)` lying in the intrinsic ball `B_r(z)`.
///
/// Offsets are `r^2 / (4n)` on each `x`-axis and `r / (2 sqrt(m))` on each
/// `y`-axis; an empty block contributes nothing.
pub fn a_r_point(z: &[f64], r: f64, n: usize) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(KimuraError::Domain(format!(
            "radius must be positive, got {r}"
        )));
    }
    check_point(z, n)?;
    let m = z.len() - n;
    let mut out = z.to_vec();
    for x in out.iter_mut().take(n) {
        *x += r * r / (4.0 * n as f64);
    }
    for y in out.iter_mut().skip(n) {
        *y += r / (2.0 * (m as f64).sqrt());
    }
    debug_assert!(rho(z, &out, n)? < r);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CylinderVariant {
    Centered,
    Plus,
    Minus,
}

/// `Q_r(t, z)`, `Q_r^+(t, z)` or `Q_r^-(t, z)`: a time interval times the
/// intrinsic ball `B_r(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicCylinder {
    pub t: f64,
    pub z: Vec<f64>,
    pub r: f64,
    pub n: usize,
    pub variant: CylinderVariant,
}

impl ParabolicCylinder {
    pub fn new(t: f64, z: Vec<f64>, r: f64, n: usize, variant: CylinderVariant) -> Result<Self> {
        if !(r > 0.0) {
            return Err(KimuraError::Domain(format!(
                "cylinder radius must be positive, got {r}"
            )));
        }
        check_point(&z, n)?;
        Ok(Self {
            t,
            z,
            r,
            n,
            variant,
        })
    }

    pub fn centered(t: f64, z: Vec<f64>, r: f64, n: usize) -> Result<Self> {
        Self::new(t, z, r, n, CylinderVariant::Centered)
    }

    pub fn with_variant(&self, variant: CylinderVariant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Open time interval of the cylinder.
    pub fn time_interval(&self) -> (f64, f64) {
        let r2 = self.r * self.r;
        match self.variant {
            CylinderVariant::Centered => (self.t - r2, self.t),
            CylinderVariant::Plus => (self.t + r2, self.t + 2.0 * r2),
            CylinderVariant::Minus => (self.t - 3.0 * r2, self.t - 2.0 * r2),
        }
    }

    pub fn contains_space(&self, z: &[f64]) -> bool {
        rho(&self.z, z, self.n).map(|d| d < self.r).unwrap_or(false)
    }

    pub fn contains_time(&self, s: f64) -> bool {
        let (a, b) = self.time_interval();
        s > a && s < b
    }

    /// Closed-in-time membership, used when sampling `\bar Q_r`.
    pub fn contains_time_closed(&self, s: f64) -> bool {
        let (a, b) = self.time_interval();
        s >= a && s <= b
    }

    pub fn contains(&self, s: f64, z: &[f64]) -> bool {
        self.contains_time(s) && self.contains_space(z)
    }

    pub fn anchor(&self) -> Result<Vec<f64>> {
        a_r_point(&self.z, self.r, self.n)
    }
}

/// `w^T(z) = prod_{i <= n0} 1/x_i`; `+inf` on the tangent boundary.
pub fn weight_tangent(z: &[f64], n0: usize) -> f64 {
    let p: f64 = z[..n0].iter().product();
    if p == 0.0 {
        f64::INFINITY
    } else {
        1.0 / p
    }
}

/// Replace the first `n0` x-coordinates with `block`.
pub fn project_tangent(z: &[f64], n0: usize, block: &[f64]) -> Result<Vec<f64>> {
    if block.len() != n0 || z.len() < n0 {
        return contract(format!(
            "projection block has length {}, expected {n0}",
            block.len()
        ));
    }
    let mut out = z.to_vec();
    out[..n0].copy_from_slice(block);
    Ok(out)
}

/// Replace every tangent x-coordinate except the `k`-th (1-based) with `block`.
pub fn project_tangent_k(z: &[f64], n0: usize, k: usize, block: &[f64]) -> Result<Vec<f64>> {
    if k == 0 || k > n0 {
        return contract(format!("index k = {k} outside 1..={n0}"));
    }
    if block.len() + 1 != n0 || z.len() < n0 {
        return contract(format!(
            "projection block has length {}, expected {}",
            block.len(),
            n0 - 1
        ));
    }
    let mut out = z.to_vec();
    let mut it = block.iter();
    for (i, slot) in out.iter_mut().enumerate().take(n0) {
        if i + 1 != k {
            *slot = *it.next().unwrap();
        }
    }
    Ok(out)
}

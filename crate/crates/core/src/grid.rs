//! Tensor-product grids on corner boxes and scalar fields sampled on them.
//!
//! Node ordering is row-major with the last axis fastest.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, KimuraError, Result};
use crate::geometry::CornerBox;
use crate::operator::Jet;

pub const DEFAULT_LAYERS: usize = 10;
pub const GRADING_RATIO: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    Degenerate,
    Tangential,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid {
    pub domain: CornerBox,
    axes: Vec<Vec<f64>>,
    strides: Vec<usize>,
}

impl TensorGrid {
    /// Explicit node sequences. x-axes must start at exactly 0.
    pub fn from_axes(domain: CornerBox, axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.len() != domain.dim() {
            return contract(format!(
                "{} axes given for a {}-dimensional box",
                axes.len(),
                domain.dim()
            ));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return contract(format!("axis {k} needs at least two nodes"));
            }
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return contract(format!("axis {k} nodes are not strictly increasing"));
            }
            if k < domain.n() && axis[0] != 0.0 {
                return contract(format!("x-axis {k} does not start at 0"));
            }
        }
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].len();
        }
        Ok(Self {
            domain,
            axes,
            strides,
        })
    }

    /// Uniform grids with `cells[k]` cells per axis; the first cell of each
    /// x-axis is further split by `layers` geometric nodes (ratio 1/2)
    /// accumulating at the face.
    pub fn graded(domain: CornerBox, cells: &[usize], layers: usize) -> Result<Self> {
        if cells.len() != domain.dim() {
            return contract("one cell count per axis is required");
        }
        if cells.iter().any(|&c| c < 2) {
            return contract("each axis needs at least two cells");
        }
        let n = domain.n();
        let axes = (0..domain.dim())
            .map(|k| {
                let (lo, hi) = (domain.lower(k), domain.upper(k));
                let h = (hi - lo) / cells[k] as f64;
                let mut axis = Vec::with_capacity(cells[k] + layers + 1);
                if k < n {
                    axis.push(0.0);
                    for l in (1..=layers).rev() {
                        axis.push(h * GRADING_RATIO.powi(l as i32));
                    }
                }
                let start = if k < n { 1 } else { 0 };
                for s in start..=cells[k] {
                    axis.push(if s == cells[k] { hi } else { lo + h * s as f64 });
                }
                axis
            })
            .collect();
        Self::from_axes(domain, axes)
    }

    pub fn uniform(domain: CornerBox, cells: &[usize]) -> Result<Self> {
        Self::graded(domain, cells, 0)
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }

    pub fn m(&self) -> usize {
        self.domain.m()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis_kind(&self, k: usize) -> AxisKind {
        if k < self.n() {
            AxisKind::Degenerate
        } else {
            AxisKind::Tangential
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, k: usize) -> usize {
        self.strides[k]
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(&s, a)| (flat / s) % a.len())
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a[i])
            .collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|f| self.point(f))
    }

    /// Smallest spacing of the uniform part of each axis (the nominal `h`).
    pub fn nominal_h(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Dual-cell length of each node along axis `k` (half the adjacent spacings).
    pub fn dual_lengths(&self, k: usize) -> Vec<f64> {
        let a = &self.axes[k];
        (0..a.len())
            .map(|i| {
                let left = if i > 0 { a[i] - a[i - 1] } else { 0.0 };
                let right = if i + 1 < a.len() {
                    a[i + 1] - a[i]
                } else {
                    0.0
                };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Volume of the dual cell of every node.
    pub fn cell_volumes(&self) -> Vec<f64> {
        let duals: Vec<Vec<f64>> = (0..self.dim()).map(|k| self.dual_lengths(k)).collect();
        (0..self.len())
            .map(|f| {
                self.multi_index(f)
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| duals[k][i])
                    .product()
            })
            .collect()
    }

    /// Node lies on `{x_i = 0}` for some `i < n0`.
    pub fn on_tangent_face(&self, idx: &[usize], n0: usize) -> bool {
        idx[..n0].iter().any(|&i| i == 0)
    }

    /// Node lies on an outer (non-degenerate) face of the box.
    pub fn on_outer_face(&self, idx: &[usize]) -> bool {
        let n = self.n();
        idx.iter().enumerate().any(|(k, &i)| {
            let last = self.axes[k].len() - 1;
            i == last || (k >= n && i == 0)
        })
    }

    /// Index of the cell `[a_i, a_{i+1})` containing `v` along axis `k`, clamped.
    pub fn locate(&self, k: usize, v: f64) -> usize {
        let a = &self.axes[k];
        let pos = a.partition_point(|&t| t <= v);
        pos.saturating_sub(1).min(a.len() - 2)
    }

    /// Index of the node nearest to `v` along axis `k`.
    pub fn nearest(&self, k: usize, v: f64) -> usize {
        let c = self.locate(k, v);
        let a = &self.axes[k];
        if (v - a[c]).abs() <= (a[c + 1] - v).abs() {
            c
        } else {
            c + 1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: Arc<TensorGrid>,
    pub values: Vec<f64>,
    pub time: Option<f64>,
}

impl Field {
    pub fn new(grid: Arc<TensorGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return contract(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KimuraError::Domain("field values must be finite".into()));
        }
        Ok(Self {
            grid,
            values,
            time: None,
        })
    }

    pub fn zeros(grid: Arc<TensorGrid>) -> Self {
        let len = grid.len();
        Self {
            grid,
            values: vec![0.0; len],
            time: None,
        }
    }

    pub fn from_fn(grid: Arc<TensorGrid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.points().map(|z| f(&z)).collect();
        Self::new(grid, values)
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.flat_index(idx)]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            time: self.time,
        }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.grid.shape() != other.grid.shape() {
            return contract("fields live on different grids");
        }
        Ok(Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            time: self.time,
        })
    }

    /// Multilinear interpolation; `z` is clamped to the grid.
    pub fn interpolate(&self, z: &[f64]) -> f64 {
        let g = &self.grid;
        let dim = g.dim();
        let mut cells = Vec::with_capacity(dim);
        let mut fracs = Vec::with_capacity(dim);
        for (k, &zk) in z.iter().enumerate().take(dim) {
            let a = g.axis(k);
            let c = g.locate(k, zk);
            let t = ((zk - a[c]) / (a[c + 1] - a[c])).clamp(0.0, 1.0);
            cells.push(c);
            fracs.push(t);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..dim {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { fracs[k] } else { 1.0 - fracs[k] };
                flat += (cells[k] + bit) * g.stride(k);
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }

    /// Jet at a node from finite differences: central three-point formulas on
    /// nonuniform spacing in the interior, second-order one-sided at the ends
    /// of an axis.
    pub fn jet_at(&self, idx: &[usize]) -> Jet {
        let dim = self.grid.dim();
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for k in 0..dim {
            let (w1, w2) = derivative_weights(self.grid.axis(k), idx[k]);
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for (off, c1, c2) in w1.iter().zip(&w2).map(|(a, b)| (a.0, a.1, b.1)) {
                let mut j = idx.to_vec();
                j[k] = off;
                let v = self.value_at(&j);
                d1 += c1 * v;
                d2 += c2 * v;
            }
            grad[k] = d1;
            hess[k * dim + k] = d2;
        }
        for k in 0..dim {
            for l in (k + 1)..dim {
                let (wk, _) = derivative_weights(self.grid.axis(k), idx[k]);
                let (wl, _) = derivative_weights(self.grid.axis(l), idx[l]);
                let mut acc = 0.0;
                for &(ik, ck) in &wk {
                    for &(il, cl) in &wl {
                        let mut j = idx.to_vec();
                        j[k] = ik;
                        j[l] = il;
                        acc += ck * cl * self.value_at(&j);
                    }
                }
                hess[k * dim + l] = acc;
                hess[l * dim + k] = acc;
            }
        }
        Jet::new(self.value_at(idx), grad, hess)
    }
}

/// First- and second-derivative weights `(node, coefficient)` at node `i`.
pub(crate) fn derivative_weights(a: &[f64], i: usize) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let last = a.len() - 1;
    let (j0, j1, j2) = if i == 0 {
        (0, 1, 2.min(last))
    } else if i == last {
        (last.saturating_sub(2), last - 1, last)
    } else {
        (i - 1, i, i + 1)
    };
    if j0 == j2 || j1 == j2 {
        // two-node axis: linear only
        let h = a[1] - a[0];
        return (vec![(0, -1.0 / h), (1, 1.0 / h)], vec![(0, 0.0), (1, 0.0)]);
    }
    let nodes = [j0, j1, j2];
    let xs = [a[j0], a[j1], a[j2]];
    let x = a[i];
    let mut w1 = Vec::with_capacity(3);
    let mut w2 = Vec::with_capacity(3);
    for p in 0..3 {
        let (q, r) = ((p + 1) % 3, (p + 2) % 3);
        let denom = (xs[p] - xs[q]) * (xs[p] - xs[r]);
        w1.push((nodes[p], ((x - xs[q]) + (x - xs[r])) / denom));
        w2.push((nodes[p], 2.0 / denom));
    }
    (w1, w2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box2() -> CornerBox {
        CornerBox::new(vec![1.0], vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn graded_axis_shape() {
        let g = TensorGrid::graded(CornerBox::cube(1, 0, 1.0).unwrap(), &[4], 3).unwrap();
        assert_eq!(
            g.axis(0),
            &[0.0, 0.03125, 0.0625, 0.125, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(g.axis_kind(0), AxisKind::Degenerate);
    }

    #[test]
    fn indexing_round_trips() {
        let g = TensorGrid::graded(box2(), &[4, 6], 2).unwrap();
        for f in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(f)), f);
        }
        assert_eq!(g.axis(1)[0], -1.0);
        assert_eq!(*g.axis(1).last().unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_axes() {
        let d = CornerBox::cube(1, 0, 1.0).unwrap();
        assert!(TensorGrid::from_axes(d.clone(), vec![vec![0.1, 0.5, 1.0]]).is_err());
        assert!(TensorGrid::from_axes(d, vec![vec![0.0, 0.5, 0.5]]).is_err());
    }

    #[test]
    fn jets_exact_on_quadratics() {
        let g = Arc::new(TensorGrid::graded(box2(), &[8, 8], 3).unwrap());
        let f = Field::from_fn(g.clone(), |z| {
            1.0 + 2.0 * z[0] - z[1] + z[0] * z[0] + 3.0 * z[0] * z[1] - z[1] * z[1]
        })
        .unwrap();
        for idx in [vec![0, 0], vec![2, 5], vec![11, 8], vec![5, 3]] {
            let j = f.jet_at(&idx);
            let z: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| g.axis(k)[i]).collect();
            assert!((j.grad[0] - (2.0 + 2.0 * z[0] + 3.0 * z[1])).abs() < 1e-10);
            assert!((j.grad[1] - (-1.0 + 3.0 * z[0] - 2.0 * z[1])).abs() < 1e-10);
            assert!((j.hess[0] - 2.0).abs() < 1e-8);
            assert!((j.hess[1] - 3.0).abs() < 1e-8);
            assert!((j.hess[3] + 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = Arc::new(TensorGrid::graded(box2(), &[4, 4], 2).unwrap());
        let f = Field::from_fn(g, |z| 1.0 + z[0] - 2.0 * z[1] + 0.5 * z[0] * z[1]).unwrap();
        let z = [0.3, -0.2];
        assert!((f.interpolate(&z) - (1.0 + 0.3 + 0.4 - 0.03)).abs() < 1e-14);
    }

    #[test]
    fn dual_volumes_sum_to_box() {
        let g = TensorGrid::graded(box2(), &[5, 7], 4).unwrap();
        let total: f64 = g.cell_volumes().iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }
}

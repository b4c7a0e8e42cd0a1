//! Compressed sparse row matrices, ILU(0) and preconditioned BiCGSTAB.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{contract, KimuraError, Result};

const PAR_THRESHOLD: usize = 20_000;
const TRACE_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed and
    /// columns sorted within each row.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return contract(format!(
                    "triplet ({r}, {c}) outside a {nrows}x{ncols} matrix"
                ));
            }
            rows[r].push((c, v));
        }
        Ok(Self::from_rows(ncols, rows))
    }

    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[s..e]
            .iter()
            .copied()
            .zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|e| e.0 == c).map_or(0.0, |e| e.1)
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[s..e]
            .iter()
            .zip(&self.values[s..e])
            .map(|(&c, &v)| v * x[c])
            .sum()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        if self.nrows >= PAR_THRESHOLD {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(r, yr)| *yr = self.row_dot(r, x));
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                *yr = self.row_dot(r, x);
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `alpha * I + beta * self` (square matrices).
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        let rows = (0..self.nrows)
            .map(|r| {
                let mut row: Vec<(usize, f64)> = self.row(r).map(|(c, v)| (c, beta * v)).collect();
                row.push((r, alpha));
                row
            })
            .collect();
        Self::from_rows(self.ncols, rows)
    }

    /// Coordinate-format text in the Matrix Market exchange layout (1-based).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                let _ = writeln!(s, "{} {} {:e}", r + 1, c + 1, v);
            }
        }
        s
    }

    pub fn from_matrix_market(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .filter(|l| !l.starts_with('%') && !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| KimuraError::Format("empty matrix file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| KimuraError::Format(format!("bad size line `{header}`")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(KimuraError::Format(format!("bad size line `{header}`")));
        }
        let mut triplets = Vec::with_capacity(dims[2]);
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || KimuraError::Format(format!("bad entry line `{line}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let r: usize = parts[0].parse().map_err(|_| bad())?;
            let c: usize = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            if r == 0 || c == 0 {
                return Err(bad());
            }
            triplets.push((r - 1, c - 1, v));
        }
        if triplets.len() != dims[2] {
            return Err(KimuraError::Format(format!(
                "header announces {} entries, found {}",
                dims[2],
                triplets.len()
            )));
        }
        Self::from_triplets(dims[0], dims[1], &triplets)
    }
}

/// Incomplete LU factorization with the sparsity of the input.
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.nrows;
        let mut diag = vec![usize::MAX; n];
        for r in 0..n {
            for p in lu.indptr[r]..lu.indptr[r + 1] {
                if lu.indices[p] == r {
                    diag[r] = p;
                }
            }
            if diag[r] == usize::MAX {
                return contract(format!("ILU(0): row {r} has no diagonal entry"));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for r in 0..n {
            let (s, e) = (lu.indptr[r], lu.indptr[r + 1]);
            for p in s..e {
                pos[lu.indices[p]] = p;
            }
            for p in s..e {
                let k = lu.indices[p];
                if k >= r {
                    break;
                }
                let pivot = lu.values[diag[k]];
                let factor = lu.values[p] / pivot;
                lu.values[p] = factor;
                for q in (diag[k] + 1)..lu.indptr[k + 1] {
                    let c = lu.indices[q];
                    if pos[c] != usize::MAX {
                        lu.values[pos[c]] -= factor * lu.values[q];
                    }
                }
            }
            for p in s..e {
                pos[lu.indices[p]] = usize::MAX;
            }
            if lu.values[diag[r]] == 0.0 {
                return Err(KimuraError::LinearSolve {
                    iterations: 0,
                    residual: f64::NAN,
                    trace: vec![],
                });
            }
        }
        Ok(Self { lu, diag })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let lu = &self.lu;
        for r in 0..lu.nrows {
            let mut acc = x[r];
            for p in lu.indptr[r]..self.diag[r] {
                acc -= lu.values[p] * x[lu.indices[p]];
            }
            x[r] = acc;
        }
        for r in (0..lu.nrows).rev() {
            let mut acc = x[r];
            for p in (self.diag[r] + 1)..lu.indptr[r + 1] {
                acc -= lu.values[p] * x[lu.indices[p]];
            }
            x[r] = acc / lu.values[self.diag[r]];
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

const DOT_CHUNK: usize = 4096;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() >= PAR_THRESHOLD {
        // fixed chunks keep the summation order independent of the pool
        let partial: Vec<f64> = a
            .par_chunks(DOT_CHUNK)
            .zip(b.par_chunks(DOT_CHUNK))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        partial.iter().sum()
    } else {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB. `x` holds the initial guess on entry.
pub fn bicgstab(
    a: &CsrMatrix,
    precond: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = a.nrows;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = a.matvec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut trace = Vec::new();
    let mut rel = norm(&r) / bnorm;
    trace.push(rel);
    if rel <= tol {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: rel,
        });
    }
    let fail = |it: usize, rel: f64, trace: &[f64]| KimuraError::LinearSolve {
        iterations: it,
        residual: rel,
        trace: trace[trace.len().saturating_sub(TRACE_LEN)..].to_vec(),
    };
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(fail(it, rel, &trace));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        phat.copy_from_slice(&p);
        precond.solve_in_place(&mut phat);
        a.matvec_into(&phat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            return Err(fail(it, rel, &trace));
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = norm(&s) / bnorm;
        if snorm <= tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            trace.push(snorm);
            return Ok(SolveStats {
                iterations: it,
                relative_residual: snorm,
            });
        }
        shat.copy_from_slice(&s);
        precond.solve_in_place(&mut shat);
        a.matvec_into(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            return Err(fail(it, rel, &trace));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / bnorm;
        trace.push(rel);
        if rel <= tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: rel,
            });
        }
        if omega == 0.0 {
            return Err(fail(it, rel, &trace));
        }
    }
    Err(fail(max_iter, rel, &trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.2));
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn ilu_exact_on_tridiagonal() {
        let a = laplacian_1d(30);
        let ilu = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        ilu.solve_in_place(&mut x);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let n = 200;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.5));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
            if i + 7 < n {
                t.push((i, i + 7, -0.3));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).cos()).collect();
        let b = a.matvec(&xs);
        let mut x = vec![0.0; n];
        let stats = bicgstab(&a, &Ilu0::new(&a).unwrap(), &b, &mut x, 1e-12, 500).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn stagnation_reports_trace() {
        let a = laplacian_1d(50);
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let ident = Ilu0::new(&CsrMatrix::identity(50)).unwrap();
        match bicgstab(&a, &ident, &b, &mut x, 1e-14, 2) {
            Err(KimuraError::LinearSolve {
                iterations, trace, ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(!trace.is_empty());
            }
            other => panic!("expected stagnation, got {other:?}"),
        }
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = laplacian_1d(6);
        let text = a.to_matrix_market();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general"));
        assert_eq!(CsrMatrix::from_matrix_market(&text).unwrap(), a);
    }
}

//! Minimal dense linear algebra: a row-major matrix and a Cholesky solve.
//!
//! Problem sizes here are tiny (a few thousand rows, at most a few dozen
//! columns), so a flat `Vec<f64>` matrix is all that is needed.

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from row slices. All rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols: ncols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Left product `v' * self` for a row vector `v` of length `rows`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "vector/matrix dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += vi * m;
            }
        }
        out
    }

    /// Right product `self * v` for a column vector `v` of length `cols`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matrix/vector dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Cholesky factor (lower triangular, stored dense) of a symmetric matrix.
///
/// Returns `None` when a pivot drops below `rel_tol` times the largest
/// diagonal entry, i.e. the matrix is not numerically positive definite.
pub fn cholesky(a: &Mat, rel_tol: f64) -> Option<Mat> {
    assert_eq!(a.rows, a.cols, "cholesky needs a square matrix");
    let n = a.rows;
    let scale = (0..n).fold(0.0f64, |acc, i| acc.max(a.get(i, i).abs())).max(1.0);
    let threshold = rel_tol * scale;

    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > threshold) {
            return None;
        }
        let dj = d.sqrt();
        l.set(j, j, dj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / dj);
        }
    }
    Some(l)
}

/// Solves `A x = b` given the Cholesky factor `L` of `A` (forward then back
/// substitution).
pub fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = y[i] - l.get(i, k) * y[k];
        }
        y[i] /= l.get(i, i);
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] = y[i] - l.get(k, i) * y[k];
        }
        y[i] /= l.get(i, i);
    }
    y
}

/// Solves the symmetric positive-definite system `A x = b` after Jacobi
/// (diagonal) scaling, retrying once with `jitter` added to the scaled
/// diagonal when the plain factorization fails. The scaling keeps the solve
/// usable even when penalty terms push the raw condition number past what a
/// bare Cholesky tolerates.
///
/// Returns the solution and the jitter actually applied (zero when the first
/// factorization succeeded), or `None` when the matrix is singular even
/// after jitter. Pass `jitter = 0.0` to disable the retry.
pub fn spd_solve(a: &Mat, b: &[f64], jitter: f64) -> Option<(Vec<f64>, f64)> {
    const REL_TOL: f64 = 1e-12;
    let n = a.rows;
    assert_eq!(b.len(), n);

    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d > 0.0 { d.sqrt() } else { 1.0 }
        })
        .collect();
    let mut scaled = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            scaled.set(i, j, a.get(i, j) / (scale[i] * scale[j]));
        }
    }
    let rhs: Vec<f64> = b.iter().zip(&scale).map(|(bi, si)| bi / si).collect();

    let unscale = |z: Vec<f64>| -> Vec<f64> { z.iter().zip(&scale).map(|(zi, si)| zi / si).collect() };

    if let Some(l) = cholesky(&scaled, REL_TOL) {
        return Some((unscale(cholesky_solve(&l, &rhs)), 0.0));
    }
    if jitter <= 0.0 {
        return None;
    }
    for i in 0..n {
        scaled.set(i, i, scaled.get(i, i) + jitter);
    }
    cholesky(&scaled, 0.0).map(|l| (unscale(cholesky_solve(&l, &rhs)), jitter))
}

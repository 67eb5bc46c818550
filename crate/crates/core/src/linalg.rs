//! Small dense linear algebra used by the solvers.
//!
//! Matrices are stored column-major because every hot loop here (coordinate
//! descent, Householder QR) walks whole columns.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Dimension(format!(
                    "column {j} has {} entries, expected {rows}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(n, p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::Dimension(format!("row {i} has {} entries, expected {p}", r.len())));
            }
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for j in 0..self.cols {
            let src = self.col(j);
            let dst = out.col_mut(j);
            for (d, &i) in dst.iter_mut().zip(idx) {
                *d = src[i];
            }
        }
        out
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn push_col(&mut self, column: &[f64]) -> Result<()> {
        if column.len() != self.rows {
            return Err(Error::Dimension(format!(
                "column has {} entries, expected {}",
                column.len(),
                self.rows
            )));
        }
        self.data.extend_from_slice(column);
        self.cols += 1;
        Ok(())
    }

    /// `self * v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &b) in v.iter().enumerate() {
            if b != 0.0 {
                axpy(b, self.col(j), &mut out);
            }
        }
        out
    }

    /// `selfᵀ * v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.cols).map(|j| dot(self.col(j), v)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Quadratic form `vᵀ A v` for a square matrix.
pub fn quad_form(a: &Matrix, v: &[f64]) -> f64 {
    dot(v, &a.mul_vec(v))
}

/// Result of a least-squares solve that tolerates aliased columns.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// Coefficients in input column order; aliased columns get 0.
    pub coef: Vec<f64>,
    pub rank: usize,
    pub aliased: Vec<bool>,
}

/// Relative column-norm tolerance below which a column is treated as a
/// linear combination of the columns before it.
pub const ALIAS_TOL: f64 = 1e-7;

/// Least squares by Householder QR with limited pivoting: columns are taken
/// in input order and a column whose norm, after removing the span of the
/// columns already accepted, drops below `ALIAS_TOL` times its original
/// norm is marked aliased and receives a zero coefficient.
pub fn lstsq(x: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    let m = x.rows();
    let p = x.cols();
    if y.len() != m {
        return Err(Error::Dimension(format!("response has {} entries, design has {m} rows", y.len())));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input"));
    }
    let mut a = x.clone();
    let mut qty = y.to_vec();
    let orig_norms: Vec<f64> = (0..p).map(|j| norm2(x.col(j))).collect();
    let mut pivots: Vec<usize> = Vec::with_capacity(p.min(m));
    let mut aliased = vec![true; p];
    let mut v = vec![0.0; m];

    for j in 0..p {
        let k = pivots.len();
        if k == m {
            break;
        }
        let tail_norm = norm2(&a.col(j)[k..]);
        if orig_norms[j] == 0.0 || tail_norm <= ALIAS_TOL * orig_norms[j] {
            continue;
        }
        // Householder vector for a[k.., j].
        let col = a.col(j);
        let alpha = if col[k] > 0.0 { -tail_norm } else { tail_norm };
        v[..k].iter_mut().for_each(|e| *e = 0.0);
        v[k..].copy_from_slice(&col[k..]);
        v[k] -= alpha;
        let vnorm2 = dot(&v[k..], &v[k..]);
        if vnorm2 > 0.0 {
            for jj in j..p {
                let c = a.col_mut(jj);
                let s = 2.0 * dot(&v[k..], &c[k..]) / vnorm2;
                for (ci, vi) in c[k..].iter_mut().zip(&v[k..]) {
                    *ci -= s * vi;
                }
            }
            let s = 2.0 * dot(&v[k..], &qty[k..]) / vnorm2;
            for (ci, vi) in qty[k..].iter_mut().zip(&v[k..]) {
                *ci -= s * vi;
            }
        }
        aliased[j] = false;
        pivots.push(j);
    }

    let r = pivots.len();
    let mut sol = vec![0.0; r];
    for row in (0..r).rev() {
        let mut acc = qty[row];
        for c in row + 1..r {
            acc -= a.get(row, pivots[c]) * sol[c];
        }
        sol[row] = acc / a.get(row, pivots[row]);
    }
    let mut coef = vec![0.0; p];
    for (c, &j) in pivots.iter().enumerate() {
        coef[j] = sol[c];
    }
    Ok(LeastSquares { coef, rank: r, aliased })
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_recovers_coefficients() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 2.0],
            vec![1.0, 3.0],
        ])
        .unwrap();
        let y = [1.0, 3.0, 5.0, 7.0];
        let ls = lstsq(&x, &y).unwrap();
        assert_eq!(ls.rank, 2);
        assert!((ls.coef[0] - 1.0).abs() < 1e-12);
        assert!((ls.coef[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_aliased_and_zeroed() {
        let x = Matrix::from_rows(&[
            vec![1.0, 2.0, 2.0],
            vec![1.0, 5.0, 5.0],
            vec![1.0, -1.0, -1.0],
            vec![1.0, 0.5, 0.5],
        ])
        .unwrap();
        let y = [3.0, 9.0, -3.0, 0.0];
        let ls = lstsq(&x, &y).unwrap();
        assert_eq!(ls.rank, 2);
        assert_eq!(ls.aliased, vec![false, false, true]);
        assert_eq!(ls.coef[2], 0.0);
    }

    #[test]
    fn constant_column_aliases_with_intercept() {
        let x = Matrix::from_rows(&[vec![1.0, 3.0], vec![1.0, 3.0], vec![1.0, 3.0]]).unwrap();
        let ls = lstsq(&x, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ls.rank, 1);
        assert!((ls.coef[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wide_system_keeps_leading_columns() {
        let x = Matrix::from_rows(&[vec![1.0, 0.3, 0.7, 2.0], vec![1.0, -0.4, 0.1, 1.0]]).unwrap();
        let ls = lstsq(&x, &[1.0, 2.0]).unwrap();
        assert_eq!(ls.rank, 2);
        assert_eq!(ls.aliased, vec![false, false, true, true]);
        let fitted = x.mul_vec(&ls.coef);
        assert!((fitted[0] - 1.0).abs() < 1e-12 && (fitted[1] - 2.0).abs() < 1e-12);
    }
}

//! Dense row-major matrices and a Cholesky factorization.
//!
//! Only what the ridge objective needs: Gram products, matrix products with
//! a thin right-hand side and repeated SPD solves.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Contiguous block of rows `[start, end)`.
    pub fn row_block(&self, start: usize, end: usize) -> &[f64] {
        &self.data[start * self.cols..end * self.cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Matrix) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                what: "matrix product",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (j, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    axpy(dst, a, other.row(j));
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn tmatmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                what: "transposed product",
                expected: self.rows,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        tmatmul_acc(
            &self.data,
            self.cols,
            &other.data,
            other.cols,
            self.rows,
            1.0,
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · self`, exploiting symmetry.
    pub fn gram(&self) -> Matrix {
        let d = self.cols;
        let mut g = Matrix::zeros(d, d);
        for r in 0..self.rows {
            let x = self.row(r);
            for i in 0..d {
                let xi = x[i];
                if xi == 0.0 {
                    continue;
                }
                let dst = &mut g.data[i * d + i..(i + 1) * d];
                axpy(dst, xi, &x[i..]);
            }
        }
        for i in 0..d {
            for j in 0..i {
                g.data[i * d + j] = g.data[j * d + i];
            }
        }
        g
    }

    /// Divides each row by its Euclidean norm; zero rows are left alone.
    pub fn normalize_rows(&mut self) {
        for r in 0..self.rows {
            let row = self.row_mut(r);
            let n = libm::sqrt(dot(row, row));
            if n > 0.0 {
                for v in row {
                    *v /= n;
                }
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dst += s * src`
#[inline]
pub fn axpy(dst: &mut [f64], s: f64, src: &[f64]) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

/// `out += s · Aᵀ B` where `A` is `n × a_cols` and `B` is `n × b_cols`,
/// both row-major slices.
pub fn tmatmul_acc(a: &[f64], a_cols: usize, b: &[f64], b_cols: usize, n: usize, s: f64, out: &mut [f64]) {
    for r in 0..n {
        let ar = &a[r * a_cols..(r + 1) * a_cols];
        let br = &b[r * b_cols..(r + 1) * b_cols];
        if br.iter().all(|v| *v == 0.0) {
            continue;
        }
        for (i, &x) in ar.iter().enumerate() {
            if x != 0.0 {
                axpy(&mut out[i * b_cols..(i + 1) * b_cols], s * x, br);
            }
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimensionMismatch {
                what: "cholesky input",
                expected: a.rows,
                got: a.cols,
            });
        }
        let n = a.rows;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s = a.data[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    l[i * n + i] = libm::sqrt(s);
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        let mut u = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                u[j * n + i] = l[i * n + j];
            }
        }
        Ok(Cholesky { n, lower: l, upper: u })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> Matrix {
        Matrix {
            rows: self.n,
            cols: self.n,
            data: self.lower.clone(),
        }
    }

    /// Solves `A x = b` in place for a single right-hand side.
    pub fn solve_vec(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let s = b[i] - dot(&self.lower[i * n..i * n + i], &b[..i]);
            b[i] = s / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let s = b[i] - dot(&self.upper[i * n + i + 1..(i + 1) * n], &b[i + 1..]);
            b[i] = s / self.upper[i * n + i];
        }
    }

    /// Solves `A X = B` in place, `B` being `n × k` row-major.
    pub fn solve_mat(&self, b: &mut Matrix) -> Result<()> {
        if b.rows != self.n {
            return Err(Error::DimensionMismatch {
                what: "cholesky solve",
                expected: self.n,
                got: b.rows,
            });
        }
        let (n, k) = (self.n, b.cols);
        let data = &mut b.data;
        for i in 0..n {
            for j in 0..i {
                let l = self.lower[i * n + j];
                if l != 0.0 {
                    let (head, tail) = data.split_at_mut(i * k);
                    axpy(&mut tail[..k], -l, &head[j * k..(j + 1) * k]);
                }
            }
            let d = self.lower[i * n + i];
            for v in &mut data[i * k..(i + 1) * k] {
                *v /= d;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.upper[i * n + j];
                if u != 0.0 {
                    let (head, tail) = data.split_at_mut(j * k);
                    axpy(&mut head[i * k..(i + 1) * k], -u, &tail[..k]);
                }
            }
            let d = self.upper[i * n + i];
            for v in &mut data[i * k..(i + 1) * k] {
                *v /= d;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd() -> Matrix {
        Matrix::from_rows(&[&[4.0, 2.0, 0.4], &[2.0, 5.0, 1.0], &[0.4, 1.0, 3.0]]).unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd();
        let c = Cholesky::factor(&a).unwrap();
        let l = c.lower();
        let back = l.matmul(&l.transpose()).unwrap();
        for (x, y) in back.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn solves_agree() {
        let a = spd();
        let c = Cholesky::factor(&a).unwrap();
        let rhs = Matrix::from_rows(&[&[1.0, 0.0], &[2.0, -1.0], &[3.0, 0.5]]).unwrap();
        let mut x = rhs.clone();
        c.solve_mat(&mut x).unwrap();
        let ax = a.matmul(&x).unwrap();
        for (p, q) in ax.as_slice().iter().zip(rhs.as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
        let mut col = [1.0, 2.0, 3.0];
        c.solve_vec(&mut col);
        for i in 0..3 {
            assert!((col[i] - x.get(i, 0)).abs() < 1e-14);
        }
    }

    #[test]
    fn indefinite_rejected() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert_eq!(Cholesky::factor(&a).unwrap_err(), Error::NotPositiveDefinite);
    }

    #[test]
    fn gram_matches_tmatmul() {
        let x = Matrix::from_rows(&[&[1.0, 2.0, 0.0], &[0.5, -1.0, 3.0]]).unwrap();
        assert_eq!(x.gram(), x.tmatmul(&x).unwrap());
    }
}

//! Small dense linear algebra: general square matrices, symmetric matrices,
//! a cyclic Jacobi eigensolver, Cholesky factors and induced norms.
//!
//! Everything here is sized for state dimensions of a handful of entries;
//! there is no blocking, no sparse path and no BLAS.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest dimension accepted by the eigensolver.
pub const MAX_EIG_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,
    #[error("matrix is not positive definite (smallest eigenvalue {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },
    #[error("triangular factor has a zero pivot at row {index}")]
    SingularFactor { index: usize },
    #[error("matrix is singular")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} exceeds the eigensolver limit")]
    TooLarge(usize),
}

/// Dense row-major real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `AᵀA`, symmetric by construction.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::from_upper(&self.transpose().matmul(self))
    }

    /// Inverse by LU decomposition with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix, MatrixError> {
        if !self.is_square() {
            return Err(MatrixError::DimensionMismatch {
                expected: self.rows,
                found: self.cols,
            });
        }
        if !self.is_finite() {
            return Err(MatrixError::InvalidMatrix);
        }
        let n = self.rows;
        let mut lu = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| lu[(a, col)].abs().total_cmp(&lu[(b, col)].abs()))
                .unwrap_or(col);
            if lu[(pivot, col)].abs() <= 1e-14 * scale {
                return Err(MatrixError::Singular);
            }
            if pivot != col {
                for j in 0..n {
                    lu.data.swap(pivot * n + j, col * n + j);
                }
                perm.swap(pivot, col);
            }
            for i in col + 1..n {
                let factor = lu[(i, col)] / lu[(col, col)];
                lu[(i, col)] = factor;
                for j in col + 1..n {
                    lu[(i, j)] -= factor * lu[(col, j)];
                }
            }
        }
        let mut inv = Matrix::zeros(n, n);
        for c in 0..n {
            // Solve L y = P e_c, then U x = y.
            let mut y: Vec<f64> = perm.iter().map(|&p| if p == c { 1.0 } else { 0.0 }).collect();
            for i in 0..n {
                for j in 0..i {
                    y[i] -= lu[(i, j)] * y[j];
                }
            }
            for i in (0..n).rev() {
                for j in i + 1..n {
                    y[i] -= lu[(i, j)] * y[j];
                }
                y[i] /= lu[(i, i)];
            }
            for (r, v) in y.into_iter().enumerate() {
                inv[(r, c)] = v;
            }
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

/// Symmetric matrix. The upper triangle is authoritative and mirrored into
/// the lower triangle on construction, so `S[i][j] == S[j][i]` bitwise.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Mirrors the upper triangle of `m`. Panics if `m` is not square.
    pub fn from_upper(m: &Matrix) -> Self {
        assert!(
            m.is_square() && m.rows() >= 1,
            "symmetric matrix must be square and non-empty"
        );
        let n = m.rows();
        let mut s = m.clone();
        for i in 0..n {
            for j in 0..i {
                s[(i, j)] = s[(j, i)];
            }
        }
        SymMatrix(s)
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(m: &Matrix) -> Self {
        Self::from_upper(&m.add(&m.transpose()).scale(0.5))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        Self::from_upper(&Matrix::from_rows(rows))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(self.0.add(&other.0))
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(self.0.sub(&other.0))
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(self.0.scale(s))
    }

    pub fn shift(&self, delta: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..self.n() {
            m[(i, i)] += delta;
        }
        SymMatrix(m)
    }

    /// `Aᵀ S A` for square `A`.
    pub fn congruence(&self, a: &Matrix) -> SymMatrix {
        SymMatrix::from_upper(&a.transpose().matmul(&self.0).matmul(a))
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        v.iter().zip(self.0.mul_vec(v)).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.frobenius()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(s: SymMatrix) -> Self {
        s.0.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err("symmetric matrix must be square and non-empty".into());
        }
        Ok(SymMatrix::from_rows(&rows))
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomp {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        (0..self.vectors.rows()).map(|r| self.vectors[(r, i)]).collect()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    /// `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let d = Matrix::from_diag(&self.values);
        SymMatrix::symmetrize(&self.vectors.matmul(&d).matmul(&self.vectors.transpose()))
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenDecomp, MatrixError> {
    let n = s.n();
    if n > MAX_EIG_DIM {
        return Err(MatrixError::TooLarge(n));
    }
    if !s.0.is_finite() {
        return Err(MatrixError::InvalidMatrix);
    }
    let mut a = s.0.clone();
    let mut v = Matrix::identity(n);
    let norm = a.frobenius();
    if norm == 0.0 {
        return Ok(EigenDecomp {
            values: vec![0.0; n],
            vectors: v,
        });
    }

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-17 * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenDecomp { values, vectors })
}

/// Smallest eigenvalue of `s`.
pub fn psd_margin(s: &SymMatrix) -> Result<f64, MatrixError> {
    Ok(sym_eig(s)?.min())
}

pub fn lambda_max(s: &SymMatrix) -> Result<f64, MatrixError> {
    Ok(sym_eig(s)?.max())
}

/// Tolerance under which a symmetric matrix is accepted as positive
/// semidefinite: `λmin ≥ −1e-9·max(1, ‖S‖_F)`.
pub fn psd_tolerance(s: &SymMatrix) -> f64 {
    1e-9 * s.frobenius().max(1.0)
}

pub fn is_psd(s: &SymMatrix) -> Result<bool, MatrixError> {
    Ok(psd_margin(s)? >= -psd_tolerance(s))
}

/// Upper-triangular `Θ` with positive diagonal such that `ΘᵀΘ = Q`.
pub fn cholesky(q: &SymMatrix) -> Result<Matrix, MatrixError> {
    let lambda_min = psd_margin(q)?;
    if lambda_min <= 1e-12 * q.frobenius() || lambda_min <= 0.0 {
        return Err(MatrixError::NotPositiveDefinite { lambda_min });
    }
    let n = q.n();
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        let d = q.get(i, i) - (0..i).map(|k| r[(k, i)] * r[(k, i)]).sum::<f64>();
        if d <= 0.0 {
            return Err(MatrixError::NotPositiveDefinite { lambda_min });
        }
        let rii = d.sqrt();
        r[(i, i)] = rii;
        for j in i + 1..n {
            let s = q.get(i, j) - (0..i).map(|k| r[(k, i)] * r[(k, j)]).sum::<f64>();
            r[(i, j)] = s / rii;
        }
    }
    Ok(r)
}

/// Spectral norm `sqrt(λmax(AᵀA))`.
pub fn induced_norm(a: &Matrix) -> Result<f64, MatrixError> {
    if !a.is_finite() {
        return Err(MatrixError::InvalidMatrix);
    }
    Ok(lambda_max(&a.gram())?.max(0.0).sqrt())
}

/// Back substitution for an upper-triangular system `Θx = b`.
pub fn solve_triangular(theta: &Matrix, b: &[f64]) -> Result<Vec<f64>, MatrixError> {
    let n = theta.rows();
    if b.len() != n {
        return Err(MatrixError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let d = theta[(i, i)];
        if d.abs() <= 1e-14 {
            return Err(MatrixError::SingularFactor { index: i });
        }
        let s: f64 = (i + 1..n).map(|j| theta[(i, j)] * x[j]).sum();
        x[i] = (x[i] - s) / d;
    }
    Ok(x)
}

/// Inverse of an upper-triangular factor, column by column.
pub fn triangular_inverse(theta: &Matrix) -> Result<Matrix, MatrixError> {
    let n = theta.rows();
    let mut inv = Matrix::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        for (r, v) in solve_triangular(theta, &e)?.into_iter().enumerate() {
            inv[(r, c)] = v;
        }
    }
    Ok(inv)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eig_small_cases() {
        let id = sym_eig(&SymMatrix::identity(2)).unwrap();
        assert_eq!(id.values, vec![1.0, 1.0]);

        let e = sym_eig(&SymMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]])).unwrap();
        assert!(close(e.values[0], 1.0, 1e-14));
        assert!(close(e.values[1], 3.0, 1e-14));

        let z = sym_eig(&SymMatrix::from_rows(&[[0.0, 0.0], [0.0, 0.0]])).unwrap();
        assert_eq!(z.values, vec![0.0, 0.0]);
    }

    #[test]
    fn eig_rejects_nan() {
        let s = SymMatrix::from_rows(&[[f64::NAN, 0.0], [0.0, 1.0]]);
        assert_eq!(sym_eig(&s).unwrap_err(), MatrixError::InvalidMatrix);
    }

    #[test]
    fn cholesky_cases() {
        assert_eq!(cholesky(&SymMatrix::identity(3)).unwrap(), Matrix::identity(3));
        let r = cholesky(&SymMatrix::from_rows(&[[4.0, 2.0], [2.0, 5.0]])).unwrap();
        assert_eq!(r, Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]));
        match cholesky(&SymMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]])) {
            Err(MatrixError::NotPositiveDefinite { lambda_min }) => {
                assert!(close(lambda_min, -1.0, 1e-12))
            }
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn margins() {
        assert!(close(psd_margin(&SymMatrix::identity(2)).unwrap(), 1.0, 1e-15));
        let a = SymMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!(close(psd_margin(&a).unwrap(), 1.0, 1e-14));
        let b = SymMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(close(psd_margin(&b).unwrap(), -1.0, 1e-14));
        assert!(!is_psd(&b).unwrap());
        assert!(is_psd(&SymMatrix::from_rows(&[[1e-12, 0.0], [0.0, -1e-12]])).unwrap());
    }

    #[test]
    fn induced_norms() {
        assert!(close(induced_norm(&Matrix::identity(2)).unwrap(), 1.0, 1e-15));
        let a = Matrix::from_rows(&[[0.0, 2.0], [0.0, 0.0]]);
        assert!(close(induced_norm(&a).unwrap(), 2.0, 1e-14));
        let d = Matrix::from_diag(&[3.0, -5.0]);
        assert!(close(induced_norm(&d).unwrap(), 5.0, 1e-14));
    }

    #[test]
    fn triangular_solves() {
        let b = [3.0, -1.0];
        assert_eq!(solve_triangular(&Matrix::identity(2), &b).unwrap(), b.to_vec());
        let t = Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]);
        assert_eq!(solve_triangular(&t, &[4.0, 2.0]).unwrap(), vec![1.5, 1.0]);
        let s = Matrix::from_rows(&[[2.0, 1.0], [0.0, 0.0]]);
        assert_eq!(
            solve_triangular(&s, &[1.0, 1.0]).unwrap_err(),
            MatrixError::SingularFactor { index: 1 }
        );
    }

    #[test]
    fn lu_inverse() {
        let a = Matrix::from_rows(&[[0.0, 2.0], [1.0, 1.0]]);
        let inv = a.inverse().unwrap();
        let prod = a.matmul(&inv);
        assert!(prod.sub(&Matrix::identity(2)).max_abs() < 1e-15);
        assert_eq!(
            Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).inverse().unwrap_err(),
            MatrixError::Singular
        );
    }

    #[test]
    fn serde_mirrors_upper() {
        let s: SymMatrix = serde_json::from_str("[[1.0, 2.0],[2.0, 3.0]]").unwrap();
        assert_eq!(s.get(1, 0), 2.0);
        assert_eq!(serde_json::to_string(&s).unwrap(), "[[1.0,2.0],[2.0,3.0]]");
    }
}

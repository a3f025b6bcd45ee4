//! Dense, deterministic linear algebra for the discrepancy layer.
//!
//! Everything here works on small-to-medium square matrices (a few hundred
//! rows at most) held in row-major order. All reductions run left to right in
//! index order so repeated calls produce bit-identical output.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Default relative eigenvalue floor used when taking square roots, inverses
/// or logarithms of batch covariances.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-8;

/// Dense row-major matrix of finite reals.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major values, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec", rows * cols, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Single column matrix.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
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

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                other.rows,
            ));
        }
        Ok(self.mul(other))
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`, computed as row dot products.
    pub(crate) fn mul_transposed(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.cols);
        Matrix::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    /// `selfᵀ · other`.
    pub(crate) fn transposed_mul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dim("mul_vec", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                context,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(A + Aᵀ) / 2`. Panics on non-square input.
    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square(), "symmetrized on non-square matrix");
        let n = self.rows;
        Matrix::from_fn(n, n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim("hcat", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copies out the column range `[start, end)`.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols: end - start,
            data,
        }
    }

    /// Gathers rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

/// Eigenvalues (descending) and orthonormal eigenvectors (as columns) of a
/// symmetric matrix.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let weights: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        self.with_weights(&weights)
    }

    pub fn with_weights(&self, weights: &[f64]) -> Matrix {
        let v = &self.eigenvectors;
        let scaled = Matrix::from_fn(v.rows(), v.cols(), |i, j| v[(i, j)] * weights[j]);
        let out = scaled.mul_transposed(v);
        symmetrize_in_place(out)
    }

    pub fn reconstruct(&self) -> Matrix {
        self.with_weights(&self.eigenvalues)
    }

    /// Absolute floor `clamp_eps · max(λ_max, 1)` for this spectrum.
    pub fn floor(&self, clamp_eps: f64) -> f64 {
        clamp_floor(self.max_eigenvalue(), clamp_eps)
    }

    /// Fréchet derivative of a spectral function contracted with a cotangent:
    /// returns `V (Γ ∘ Vᵀ C V) Vᵀ`, where `Γ[i][j]` is the divided difference
    /// of the scalar function at `(λ_i, λ_j)` (its derivative when `i == j`).
    pub fn spectral_pullback(
        &self,
        cotangent: &Matrix,
        divided_difference: impl Fn(f64, f64) -> f64,
    ) -> Matrix {
        let v = &self.eigenvectors;
        let inner = v.transposed_mul(&cotangent.mul(v));
        let n = self.dim();
        let lam = &self.eigenvalues;
        let weighted = Matrix::from_fn(n, n, |i, j| {
            inner[(i, j)] * divided_difference(lam[i], lam[j])
        });
        let out = v.mul(&weighted).mul_transposed(v);
        symmetrize_in_place(out)
    }
}

fn symmetrize_in_place(mut m: Matrix) -> Matrix {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Absolute eigenvalue floor for a spectrum whose largest eigenvalue is
/// `max_eigenvalue`.
pub fn clamp_floor(max_eigenvalue: f64, clamp_eps: f64) -> f64 {
    clamp_eps * max_eigenvalue.max(1.0)
}

/// Symmetric eigendecomposition via Householder tridiagonalisation followed
/// by implicit QL iterations. The input is symmetrized first.
pub fn sym_eig(a: &Matrix) -> Result<SpectralDecomposition> {
    if !a.is_square() {
        return Err(Error::dim(
            "sym_eig",
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: Vec::new(),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    // Column-major working copy: column `j` of V lives at v[j*n..(j+1)*n].
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            v[j * n + i] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    tridiagonal_ql(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[y].total_cmp(&d[x]).then(x.cmp(&y)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| v[order[j] * n + i]);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only (descending); skips eigenvector accumulation.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::dim(
            "sym_eigenvalues",
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            v[j * n + i] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    tridiagonal_ql_values(n, &mut d, &mut e)?;
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

// Householder reduction to tridiagonal form (EISPACK tred2 ordering).
// `v` is column-major; on exit it holds the accumulated transformation.
fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |r: usize, c: usize| c * n + r;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                let col = &v[j * n..(j + 1) * n];
                for k in (j + 1)..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = &mut v[j * n..(j + 1) * n];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = col[i - 1];
                col[i] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let (left, right) = v.split_at_mut((i + 1) * n);
                let next = &right[..n];
                let col = &mut left[j * n..(j + 1) * n];
                let mut g = 0.0;
                for k in 0..=i {
                    g += next[k] * col[k];
                }
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

const QL_MAX_ITER: usize = 60;

// Implicit QL on the tridiagonal (d, e), rotating the columns of `v`.
fn tridiagonal_ql(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    ql_iterations(n, d, e, |i, c, s| {
        let (left, right) = v.split_at_mut((i + 1) * n);
        let ci = &mut left[i * n..(i + 1) * n];
        let cn = &mut right[..n];
        for (a, b) in ci.iter_mut().zip(cn.iter_mut()) {
            let h = *b;
            *b = s * *a + c * h;
            *a = c * *a - s * h;
        }
    })
}

fn tridiagonal_ql_values(n: usize, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    ql_iterations(n, d, e, |_, _, _| {})
}

fn ql_iterations(
    n: usize,
    d: &mut [f64],
    e: &mut [f64],
    mut rotate: impl FnMut(usize, f64, f64),
) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(Error::Numerical(format!(
                        "symmetric eigensolver did not converge for eigenvalue {l} after {QL_MAX_ITER} iterations"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    rotate(i, c, s);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix with eigenvalues floored
/// at `clamp_eps · max(λ_max, 1)`.
pub fn psd_sqrt(a: &Matrix, clamp_eps: f64) -> Result<Matrix> {
    Ok(psd_sqrt_decomposed(&sym_eig(a)?, clamp_eps))
}

pub(crate) fn psd_sqrt_decomposed(eig: &SpectralDecomposition, clamp_eps: f64) -> Matrix {
    let floor = eig.floor(clamp_eps);
    eig.map(|l| l.max(floor).sqrt())
}

/// Row mean and maximum-likelihood covariance (divisor `B`) of a `B×L`
/// sample matrix.
pub fn mean_and_cov(samples: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let b = samples.rows();
    if b < 2 {
        return Err(Error::InsufficientSamples {
            context: "mean_and_cov",
            required: 2,
            found: b,
        });
    }
    let mean = column_means(samples);
    let centered = center_rows(samples, &mean);
    let cov = centered.transposed_mul(&centered).scaled(1.0 / b as f64);
    Ok((mean, symmetrize_in_place(cov)))
}

pub fn column_means(samples: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; samples.cols()];
    for r in 0..samples.rows() {
        for (m, &x) in mean.iter_mut().zip(samples.row(r)) {
            *m += x;
        }
    }
    let inv = 1.0 / samples.rows() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

pub fn center_rows(samples: &Matrix, mean: &[f64]) -> Matrix {
    Matrix::from_fn(samples.rows(), samples.cols(), |r, c| samples[(r, c)] - mean[c])
}

/// Lower-triangular Cholesky factor `L` with `A = L·Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim(
            "cholesky",
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Singular("cholesky"));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L·y = b` for lower-triangular `L`.
pub(crate) fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// `vᵀ Σ⁻¹ v` via a Cholesky solve.
pub fn mahalanobis_sq(v: &[f64], sigma: &Matrix) -> Result<f64> {
    if !sigma.is_square() || sigma.rows() != v.len() {
        return Err(Error::dim(
            "mahalanobis_sq",
            format!("{0}x{0} covariance", v.len()),
            format!("{}x{}", sigma.rows(), sigma.cols()),
        ));
    }
    let l = cholesky(sigma)?;
    let y = forward_substitute(&l, v);
    Ok(norm_sq(&y))
}

/// Householder QR with column pivoting, used to project vectors onto the
/// orthogonal complement of a (possibly rank-deficient) column space.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    // Householder vectors stored below the diagonal (row-major, m×n), with
    // the leading entry of each reflector kept separately.
    qr: Matrix,
    heads: Vec<f64>,
    betas: Vec<f64>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = a.shape();
        let mut qr = a.clone();
        let kmax = m.min(n);
        let mut heads = Vec::with_capacity(kmax);
        let mut betas = Vec::with_capacity(kmax);
        let mut col_norms: Vec<f64> = (0..n)
            .map(|c| (0..m).map(|r| qr[(r, c)] * qr[(r, c)]).sum())
            .collect();
        let max_norm0 = col_norms.iter().fold(0.0f64, |x, &y| x.max(y)).sqrt();
        let tol = (m.max(n) as f64) * f64::EPSILON * max_norm0.max(f64::MIN_POSITIVE);
        let mut rank = 0;

        for k in 0..kmax {
            // pivot: largest remaining column norm, lowest index on ties
            let mut p = k;
            for c in (k + 1)..n {
                if col_norms[c] > col_norms[p] {
                    p = c;
                }
            }
            if p != k {
                for r in 0..m {
                    let row = qr.row_mut(r);
                    row.swap(k, p);
                }
                col_norms.swap(k, p);
            }
            let norm: f64 = (k..m).map(|r| qr[(r, k)] * qr[(r, k)]).sum::<f64>().sqrt();
            if norm <= tol {
                break;
            }
            let x0 = qr[(k, k)];
            let alpha = if x0 > 0.0 { -norm } else { norm };
            let head = x0 - alpha;
            // v = [head, x_{k+1..}], beta = 2 / vᵀv
            let vtv = head * head + (k + 1..m).map(|r| qr[(r, k)] * qr[(r, k)]).sum::<f64>();
            let beta = 2.0 / vtv;
            for c in (k + 1)..n {
                let mut s = head * qr[(k, c)];
                for r in (k + 1)..m {
                    s += qr[(r, k)] * qr[(r, c)];
                }
                let s = s * beta;
                qr[(k, c)] -= s * head;
                for r in (k + 1)..m {
                    let vr = qr[(r, k)];
                    qr[(r, c)] -= s * vr;
                }
                col_norms[c] = (k + 1..m).map(|r| qr[(r, c)] * qr[(r, c)]).sum();
            }
            qr[(k, k)] = alpha;
            heads.push(head);
            betas.push(beta);
            rank += 1;
        }
        PivotedQr {
            qr,
            heads,
            betas,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn reflect(&self, k: usize, y: &mut [f64]) {
        let m = self.qr.rows();
        let head = self.heads[k];
        let mut s = head * y[k];
        for r in (k + 1)..m {
            s += self.qr[(r, k)] * y[r];
        }
        let s = s * self.betas[k];
        y[k] -= s * head;
        for r in (k + 1)..m {
            y[r] -= s * self.qr[(r, k)];
        }
    }

    /// Component of `y` orthogonal to the column space: `(I − Q_r Q_rᵀ) y`.
    pub fn residual(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.qr.rows() {
            return Err(Error::dim("PivotedQr::residual", self.qr.rows(), y.len()));
        }
        let mut z = y.to_vec();
        for k in 0..self.rank {
            self.reflect(k, &mut z);
        }
        for zk in z.iter_mut().take(self.rank) {
            *zk = 0.0;
        }
        for k in (0..self.rank).rev() {
            self.reflect(k, &mut z);
        }
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        random_matrix(rng, n, n).symmetrized()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let m = random_matrix(rng, n, n);
        m.transposed_mul(&m)
    }

    fn orthonormality_error(v: &Matrix) -> f64 {
        v.transposed_mul(v)
            .sub(&Matrix::identity(v.cols()))
            .unwrap()
            .frobenius_norm()
    }

    #[test]
    fn eig_identity() {
        let eig = sym_eig(&Matrix::identity(3)).unwrap();
        for l in &eig.eigenvalues {
            assert!((l - 1.0).abs() < 1e-15);
        }
        assert!(orthonormality_error(&eig.eigenvectors) < 1e-12);
    }

    #[test]
    fn eig_diagonal_is_axis_aligned() {
        let eig = sym_eig(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(eig.eigenvalues, vec![4.0, 1.0]);
        let v = &eig.eigenvectors;
        assert!((v[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((v[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 17, 64] {
            let a = random_symmetric(&mut rng, n);
            let eig = sym_eig(&a).unwrap();
            let err = eig.reconstruct().sub(&a).unwrap().frobenius_norm();
            assert!(err <= 1e-8 * (1.0 + a.frobenius_norm()), "n={n} err={err}");
            assert!(orthonormality_error(&eig.eigenvectors) <= 1e-8);
            assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let values = sym_eigenvalues(&a).unwrap();
            for (x, y) in values.iter().zip(&eig.eigenvalues) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eig_matches_closed_form_2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, b, c) = (
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let m = Matrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap();
            let eig = sym_eig(&m).unwrap();
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            assert!((eig.eigenvalues[0] - (mid + rad)).abs() < 1e-12);
            assert!((eig.eigenvalues[1] - (mid - rad)).abs() < 1e-12);
        }
    }

    #[test]
    fn eig_rejects_non_square() {
        assert!(matches!(
            sym_eig(&Matrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sqrt_of_diagonal_and_zero() {
        let s = psd_sqrt(&Matrix::from_diag(&[4.0, 9.0]), DEFAULT_CLAMP_EPS).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((s[(1, 1)] - 3.0).abs() < 1e-15);
        assert_eq!(s[(0, 1)], 0.0);
        let z = psd_sqrt(&Matrix::zeros(3, 3), 0.0).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3, 8, 32, 64] {
            let a = random_psd(&mut rng, n);
            let s = psd_sqrt(&a, 0.0).unwrap();
            let err = s.mul(&s).sub(&a).unwrap().frobenius_norm();
            assert!(err <= 1e-7 * a.frobenius_norm().max(1.0), "n={n} err={err}");
        }
    }

    #[test]
    fn cov_of_identical_rows_is_zero() {
        let z = Matrix::from_rows(&[vec![1.5, -2.0], vec![1.5, -2.0]]).unwrap();
        let (mean, cov) = mean_and_cov(&z).unwrap();
        assert_eq!(mean, vec![1.5, -2.0]);
        assert_eq!(cov.max_abs(), 0.0);
    }

    #[test]
    fn cov_uses_ml_divisor() {
        let z = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let (mean, cov) = mean_and_cov(&z).unwrap();
        assert_eq!(mean, vec![1.0, 1.0]);
        assert_eq!(cov.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn cov_needs_two_rows() {
        let z = Matrix::zeros(1, 3);
        assert!(matches!(
            mean_and_cov(&z),
            Err(Error::InsufficientSamples { found: 1, .. })
        ));
    }

    #[test]
    fn cov_matches_gaussian_truth() {
        // z = x·Mᵀ with x ~ N(0, I) has covariance M·Mᵀ.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.5, 1.0, 0.0, 0.0],
            vec![0.0, -0.3, 0.8, 0.0],
            vec![0.2, 0.0, 0.1, 0.6],
        ])
        .unwrap();
        let truth = m.mul_transposed(&m);
        let n = 4096;
        let x = Matrix::from_fn(n, 4, |_, _| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        });
        let z = x.mul_transposed(&m);
        let (_, cov) = mean_and_cov(&z).unwrap();
        // entries have standard error about sqrt(2/n) ~ 0.022
        let err = cov.sub(&truth).unwrap().max_abs();
        assert!(err < 0.12, "max entry error {err}");
        let eigs = sym_eigenvalues(&cov).unwrap();
        assert!(*eigs.last().unwrap() >= -1e-10);
    }

    #[test]
    fn mahalanobis_examples() {
        assert_eq!(mahalanobis_sq(&[1.0, 2.0], &Matrix::identity(2)).unwrap(), 5.0);
        let d = Matrix::from_diag(&[4.0, 1.0]);
        assert!((mahalanobis_sq(&[2.0, 0.0], &d).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            mahalanobis_sq(&[1.0, 1.0], &Matrix::zeros(2, 2)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn mahalanobis_matches_explicit_inverse_2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let a = random_psd(&mut rng, 2)
                .add(&Matrix::identity(2).scaled(0.1))
                .unwrap();
            let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let inv = [
                [a[(1, 1)] / det, -a[(0, 1)] / det],
                [-a[(1, 0)] / det, a[(0, 0)] / det],
            ];
            let explicit = v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1])
                + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1]);
            let got = mahalanobis_sq(&v, &a).unwrap();
            assert!((got - explicit).abs() <= 1e-10 * explicit.abs().max(1.0));
        }
    }

    #[test]
    fn qr_residual_is_orthogonal_even_when_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let base = random_matrix(&mut rng, 40, 3);
        // fourth column duplicates the first
        let a = Matrix::from_fn(40, 4, |r, c| if c == 3 { base[(r, 0)] } else { base[(r, c)] });
        let qr = PivotedQr::new(&a);
        assert_eq!(qr.rank(), 3);
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = qr.residual(&y).unwrap();
        for c in 0..4 {
            assert!(dot(&a.col(c), &r).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_pullback_matches_finite_difference_of_trace_sqrt() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_psd(&mut rng, 4).add(&Matrix::identity(4)).unwrap();
        let c = random_symmetric(&mut rng, 4);
        let f = |m: &Matrix| {
            let s = psd_sqrt(m, 0.0).unwrap();
            s.mul(&c).trace()
        };
        let eig = sym_eig(&a).unwrap();
        let grad = eig.spectral_pullback(&c, |x, y| {
            if (x - y).abs() < 1e-14 {
                0.5 / x.sqrt()
            } else {
                1.0 / (x.sqrt() + y.sqrt())
            }
        });
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut up = a.clone();
                up[(i, j)] += h;
                let mut dn = a.clone();
                dn[(i, j)] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - grad[(i, j)]).abs() < 1e-6, "({i},{j}) {fd} vs {}", grad[(i, j)]);
            }
        }
    }
}

//! Dense matrices and the factorizations behind TT-cross: Householder QR,
//! one-sided Jacobi SVD, pivoted LU, and the greedy maxvol row selector.

use crate::scalar::Scalar;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix is numerically rank deficient (pivot {pivot:.3e} at step {step})")]
    RankDeficient { step: usize, pivot: f64 },
    #[error("maxvol requires rows >= cols, got {rows} x {cols}")]
    MaxvolShape { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        T::gemm(
            self.rows,
            self.cols,
            other.cols,
            T::one(),
            &self.data,
            &other.data,
            T::zero(),
            &mut out.data,
        );
        out
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "matmul_tn dimension mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        T::gemm_tn(
            self.cols,
            self.rows,
            other.cols,
            T::one(),
            &self.data,
            &other.data,
            T::zero(),
            &mut out.data,
        );
        out
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn check_finite(&self) -> Result<(), LinalgError> {
        for (idx, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(LinalgError::NonFinite {
                    row: idx / self.cols,
                    col: idx % self.cols,
                });
            }
        }
        Ok(())
    }

    /// Rows of `self` selected by `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len(), self.cols);
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    fn to_col_major(&self) -> Vec<T> {
        let mut w = vec![T::zero(); self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                w[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        w
    }

    fn from_col_major(rows: usize, cols: usize, w: &[T]) -> Self {
        let mut out = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                out.data[i * cols + j] = w[j * rows + i];
            }
        }
        out
    }
}

const PAR_MIN_WORK: usize = 1 << 15;

/// Thin Householder QR: `a = Q R` with `Q` of shape `m x min(m, n)`
/// (orthonormal columns) and `R` upper trapezoidal `min(m, n) x n`.
pub fn thin_qr<T: Scalar>(a: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let (m, n) = (a.rows(), a.cols());
    let kmax = m.min(n);
    let mut w = a.to_col_major();
    let mut reflectors: Vec<(Vec<T>, T)> = Vec::with_capacity(kmax);

    for k in 0..kmax {
        let col = &mut w[k * m..(k + 1) * m];
        // Scale-invariant reflector: columns of a density unfolding span
        // hundreds of orders of magnitude, and raw sums of squares would
        // under- or overflow.
        let amax = col[k..]
            .iter()
            .fold(T::zero(), |acc, &x| acc.max(x.abs()));
        let mut v = vec![T::zero(); m];
        let beta;
        if amax == T::zero() {
            beta = T::zero();
        } else {
            let mut norm_sq = T::zero();
            for &x in &col[k..] {
                let y = x / amax;
                norm_sq += y * y;
            }
            let norm_scaled = norm_sq.sqrt(); // in [1, sqrt(m - k)]
            let alpha = if col[k] >= T::zero() {
                -norm_scaled * amax
            } else {
                norm_scaled * amax
            };
            // v holds (x - alpha e_k) / amax; the reflector direction is
            // scaling-invariant once beta uses the same units.
            v[k] = (col[k] - alpha) / amax;
            for i in (k + 1)..m {
                v[i] = col[i] / amax;
            }
            let vtv: T = v[k..].iter().map(|&x| x * x).sum();
            beta = T::cast_usize(2) / vtv;
            col[k] = alpha;
            for x in col[(k + 1)..m].iter_mut() {
                *x = T::zero();
            }
        }
        let apply = |cj: &mut [T]| {
            if beta == T::zero() {
                return;
            }
            let mut dot = T::zero();
            for i in k..m {
                dot += v[i] * cj[i];
            }
            let scale = beta * dot;
            for i in k..m {
                cj[i] -= scale * v[i];
            }
        };
        let trailing = &mut w[(k + 1) * m..];
        if (n - k - 1) * (m - k) >= PAR_MIN_WORK {
            trailing.par_chunks_exact_mut(m).for_each(apply);
        } else {
            trailing.chunks_exact_mut(m).for_each(apply);
        }
        reflectors.push((v, beta));
    }

    let mut r = Matrix::zeros(kmax, n);
    for j in 0..n {
        for i in 0..=j.min(kmax - 1) {
            r.set(i, j, w[j * m + i]);
        }
    }

    // Accumulate Q by applying the reflectors to identity columns.
    let mut q = vec![T::zero(); m * kmax];
    for j in 0..kmax {
        q[j * m + j] = T::one();
    }
    for k in (0..kmax).rev() {
        let (v, beta) = &reflectors[k];
        let beta = *beta;
        if beta == T::zero() {
            continue;
        }
        let apply = |cj: &mut [T]| {
            let mut dot = T::zero();
            for i in k..m {
                dot += v[i] * cj[i];
            }
            let scale = beta * dot;
            for i in k..m {
                cj[i] -= scale * v[i];
            }
        };
        if kmax * (m - k) >= PAR_MIN_WORK {
            q.par_chunks_exact_mut(m).for_each(apply);
        } else {
            q.chunks_exact_mut(m).for_each(apply);
        }
    }
    (Matrix::from_col_major(m, kmax, &q), r)
}

/// One-sided Jacobi SVD.
///
/// Returns `(U, sigma, V)` with singular values sorted in descending order
/// and `a = U * diag(sigma) * V^T`; `U` is `m x min(m, n)`, `V` is
/// `n x min(m, n)`. Columns of `U` belonging to zero singular values are
/// zero.
pub fn jacobi_svd<T: Scalar>(a: &Matrix<T>) -> (Matrix<T>, Vec<T>, Matrix<T>) {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        let (v, s, u) = jacobi_svd(&a.transpose());
        return (u, s, v);
    }
    let mut w = a.to_col_major();
    let mut v = vec![T::zero(); n * n];
    for j in 0..n {
        v[j * n + j] = T::one();
    }
    let eps = T::epsilon() * T::cast_usize(8);
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (T::zero(), T::zero(), T::zero());
                for i in 0..m {
                    let (x, y) = (w[p * m + i], w[q * m + i]);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                // sqrt before the product: app * aqq itself can underflow
                // for columns hundreds of orders of magnitude apart.
                if apq.abs() <= eps * app.sqrt() * aqq.sqrt() || apq == T::zero() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (apq + apq);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (wp_base, wq_base) = (p * m, q * m);
                for i in 0..m {
                    let x = w[wp_base + i];
                    let y = w[wq_base + i];
                    w[wp_base + i] = c * x - s * y;
                    w[wq_base + i] = s * x + c * y;
                }
                let (vp_base, vq_base) = (p * n, q * n);
                for i in 0..n {
                    let x = v[vp_base + i];
                    let y = v[vq_base + i];
                    v[vp_base + i] = c * x - s * y;
                    v[vq_base + i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<T> = (0..n)
        .map(|j| {
            let col = &w[j * m..(j + 1) * m];
            col.iter().map(|&x| x * x).sum::<T>().sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        sigma[j]
            .partial_cmp(&sigma[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut u_sorted = vec![T::zero(); m * n];
    let mut v_sorted = vec![T::zero(); n * n];
    let mut s_sorted = vec![T::zero(); n];
    for (new_j, &old_j) in order.iter().enumerate() {
        let s = sigma[old_j];
        s_sorted[new_j] = s;
        if s > T::zero() {
            for i in 0..m {
                u_sorted[new_j * m + i] = w[old_j * m + i] / s;
            }
        }
        for i in 0..n {
            v_sorted[new_j * n + i] = v[old_j * n + i];
        }
    }
    sigma = s_sorted;
    (
        Matrix::from_col_major(m, n, &u_sorted),
        sigma,
        Matrix::from_col_major(n, n, &v_sorted),
    )
}

/// LU factorization with partial pivoting of a square matrix.
pub struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    piv: Vec<usize>,
    min_pivot: T,
    det_sign: T,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &Matrix<T>) -> Self {
        assert_eq!(a.rows(), a.cols(), "LU needs a square matrix");
        let n = a.rows();
        let mut lu = a.as_slice().to_vec();
        let mut piv = Vec::with_capacity(n);
        let mut min_pivot = T::infinity();
        let mut det_sign = T::one();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                det_sign = -det_sign;
            }
            piv.push(p);
            let pivot = lu[k * n + k];
            min_pivot = min_pivot.min(pivot.abs());
            if pivot == T::zero() {
                continue;
            }
            for i in (k + 1)..n {
                let l = lu[i * n + k] / pivot;
                lu[i * n + k] = l;
                if l == T::zero() {
                    continue;
                }
                for j in (k + 1)..n {
                    let s = lu[k * n + j];
                    lu[i * n + j] = lu[i * n + j] - l * s;
                }
            }
        }
        Self {
            n,
            lu,
            piv,
            min_pivot,
            det_sign,
        }
    }

    pub fn min_pivot(&self) -> T {
        self.min_pivot
    }

    pub fn det(&self) -> T {
        let mut d = self.det_sign;
        for k in 0..self.n {
            d *= self.lu[k * self.n + k];
        }
        d
    }

    pub fn is_singular(&self, scale: T) -> bool {
        let tol = T::epsilon() * scale * T::cast_usize(self.n.max(1));
        self.min_pivot <= tol
    }

    pub fn solve_vec(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for k in 0..n {
            for i in (k + 1)..n {
                let l = self.lu[i * n + k];
                b[i] = b[i] - l * b[k];
            }
        }
        for k in (0..n).rev() {
            b[k] = b[k] / self.lu[k * n + k];
            for i in 0..k {
                let u = self.lu[i * n + k];
                b[i] = b[i] - u * b[k];
            }
        }
    }

    /// Inverse of the factored matrix.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.n;
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = T::zero());
            col[j] = T::one();
            self.solve_vec(&mut col);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix, or `None`
/// when a pivot is not positive.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    assert_eq!(a.rows(), a.cols());
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l.set(i, i, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` for lower-triangular `L` in place.
pub fn forward_substitute<T: Scalar>(l: &Matrix<T>, b: &mut [T]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

/// Pivot rows of a tall `m x n` matrix from partially pivoted elimination.
fn tall_lu_pivots<T: Scalar>(a: &Matrix<T>) -> Result<Vec<usize>, LinalgError> {
    let (m, n) = (a.rows(), a.cols());
    let mut w = a.to_col_major();
    let mut rows: Vec<usize> = (0..m).collect();
    let scale = a.max_abs();
    let tol = T::epsilon() * scale * T::cast_usize(m.max(1));
    let mut piv = Vec::with_capacity(n);
    for k in 0..n {
        let colk = &w[k * m..(k + 1) * m];
        let mut p = k;
        let mut best = colk[k].abs();
        for i in (k + 1)..m {
            let v = colk[i].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= tol {
            return Err(LinalgError::RankDeficient {
                step: k,
                pivot: best.to_f64_lossy(),
            });
        }
        if p != k {
            rows.swap(k, p);
            for j in 0..n {
                w.swap(j * m + k, j * m + p);
            }
        }
        piv.push(rows[k]);
        let pivot = w[k * m + k];
        let mut mult = vec![T::zero(); m - k - 1];
        for i in (k + 1)..m {
            mult[i - k - 1] = w[k * m + i] / pivot;
        }
        let trailing = &mut w[(k + 1) * m..];
        let update = |cj: &mut [T]| {
            let head = cj[k];
            if head == T::zero() {
                return;
            }
            for i in (k + 1)..m {
                cj[i] = cj[i] - mult[i - k - 1] * head;
            }
        };
        if (n - k - 1) * (m - k) >= PAR_MIN_WORK {
            trailing.par_chunks_exact_mut(m).for_each(update);
        } else {
            trailing.chunks_exact_mut(m).for_each(update);
        }
    }
    Ok(piv)
}

/// Greedy maxvol: rows of `a` whose square submatrix has quasi-maximal
/// `|det|`, so that every entry of `a * a[I,:]^{-1}` is at most `1 + tol`
/// in magnitude.
pub fn maxvol<T: Scalar>(
    a: &Matrix<T>,
    tol: T,
    max_swaps: usize,
) -> Result<Vec<usize>, LinalgError> {
    maxvol_with_basis(a, tol, max_swaps).map(|(idx, _)| idx)
}

/// As [`maxvol`], additionally returning `B = a * a[I,:]^{-1}`.
pub fn maxvol_with_basis<T: Scalar>(
    a: &Matrix<T>,
    tol: T,
    max_swaps: usize,
) -> Result<(Vec<usize>, Matrix<T>), LinalgError> {
    let (m, r) = (a.rows(), a.cols());
    if m < r {
        return Err(LinalgError::MaxvolShape { rows: m, cols: r });
    }
    a.check_finite()?;
    let mut idx = tall_lu_pivots(a)?;
    if m == r {
        idx = (0..r).collect();
        let lu = Lu::factor(a);
        if lu.is_singular(a.max_abs()) {
            return Err(LinalgError::RankDeficient {
                step: r,
                pivot: lu.min_pivot().to_f64_lossy(),
            });
        }
        return Ok((idx, Matrix::identity(r)));
    }
    let sub = a.select_rows(&idx);
    let lu = Lu::factor(&sub);
    if lu.is_singular(a.max_abs()) {
        return Err(LinalgError::RankDeficient {
            step: r,
            pivot: lu.min_pivot().to_f64_lossy(),
        });
    }
    let inv = lu.inverse();
    let mut b = a.matmul(&inv);

    let one_tol = T::one() + tol;
    for _ in 0..max_swaps {
        let mut bi = 0;
        let mut bj = 0;
        let mut best = T::zero();
        for (pos, &v) in b.as_slice().iter().enumerate() {
            let av = v.abs();
            if av > best {
                best = av;
                bi = pos / r;
                bj = pos % r;
            }
        }
        if best <= one_tol {
            break;
        }
        let pivot = b.get(bi, bj);
        idx[bj] = bi;
        // Sherman-Morrison rank-1 update keeping B = a * a[I,:]^{-1} for the
        // new index set.
        let u: Vec<T> = (0..m).map(|i| b.get(i, bj)).collect();
        let mut v: Vec<T> = b.row(bi).to_vec();
        v[bj] -= T::one();
        let inv_p = T::one() / pivot;
        for i in 0..m {
            let ui = u[i] * inv_p;
            if ui == T::zero() {
                continue;
            }
            let row = b.row_mut(i);
            for (rv, &vv) in row.iter_mut().zip(&v) {
                *rv -= ui * vv;
            }
        }
    }
    Ok((idx, b))
}

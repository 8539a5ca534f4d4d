//! Interpolated tensor-train representation of a multivariate function.
//!
//! A [`TtTensor`] stores `d` three-way cores over a per-dimension [`Grid`];
//! nodal values are chain products of core slices and off-grid values come
//! from multilinear interpolation. Integration, inner products, norms and
//! SVD-based rounding all run without materializing the full tensor.

use crate::linalg::{jacobi_svd, thin_qr, Matrix};
use crate::scalar::Scalar;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TtError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid TT shape: {0}")]
    InvalidShape(String),
    #[error("index {index} out of range for dimension {dim} of size {size}")]
    IndexOutOfRange {
        dim: usize,
        index: usize,
        size: usize,
    },
    #[error("coordinate {value} outside box [{lo}, {hi}] in dimension {dim}")]
    PointOutsideBox {
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("grids do not match")]
    GridMismatch,
    #[error("tensor too large to materialize ({0} entries)")]
    TooLarge(usize),
}

/// Per-dimension interpolation nodes spanning a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    nodes: Vec<Vec<T>>,
}

impl<T: Scalar> Grid<T> {
    pub fn from_nodes(nodes: Vec<Vec<T>>) -> Result<Self, TtError> {
        if nodes.is_empty() {
            return Err(TtError::InvalidGrid("no dimensions".into()));
        }
        for (k, xs) in nodes.iter().enumerate() {
            if xs.len() < 2 {
                return Err(TtError::InvalidGrid(format!(
                    "dimension {k} has {} nodes; at least 2 required",
                    xs.len()
                )));
            }
            for w in xs.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(TtError::InvalidGrid(format!(
                        "nodes not strictly increasing in dimension {k}"
                    )));
                }
            }
            if xs.iter().any(|v| !v.is_finite()) {
                return Err(TtError::InvalidGrid(format!(
                    "non-finite node in dimension {k}"
                )));
            }
        }
        Ok(Self { nodes })
    }

    /// Uniform grid with `n[k]` nodes on `[bounds[k].0, bounds[k].1]`.
    pub fn uniform(bounds: &[(T, T)], n: &[usize]) -> Result<Self, TtError> {
        if bounds.len() != n.len() {
            return Err(TtError::InvalidGrid(
                "bounds and node counts differ in length".into(),
            ));
        }
        let nodes = bounds
            .iter()
            .zip(n)
            .map(|(&(a, b), &nk)| {
                (0..nk)
                    .map(|i| {
                        if nk == 1 {
                            a
                        } else {
                            let t = T::cast_usize(i) / T::cast_usize(nk - 1);
                            a + (b - a) * t
                        }
                    })
                    .collect()
            })
            .collect();
        Self::from_nodes(nodes)
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn size(&self, k: usize) -> usize {
        self.nodes[k].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.nodes.iter().map(Vec::len).collect()
    }

    pub fn nodes(&self, k: usize) -> &[T] {
        &self.nodes[k]
    }

    pub fn bounds(&self, k: usize) -> (T, T) {
        let xs = &self.nodes[k];
        (xs[0], xs[xs.len() - 1])
    }

    /// Trapezoidal quadrature weights on the nodes of dimension `k`; exact
    /// for the piecewise-linear interpolant.
    pub fn trapezoid_weights(&self, k: usize) -> Vec<T> {
        let xs = &self.nodes[k];
        let n = xs.len();
        let half = T::from_f64_lossy(0.5);
        let mut w = vec![T::zero(); n];
        for i in 0..n - 1 {
            let h = (xs[i + 1] - xs[i]) * half;
            w[i] += h;
            w[i + 1] += h;
        }
        w
    }

    /// Cell index and local coordinate of `x` in dimension `k`.
    pub fn locate(&self, k: usize, x: T) -> Result<(usize, T), TtError> {
        let xs = &self.nodes[k];
        let (lo, hi) = self.bounds(k);
        if !(x >= lo && x <= hi) {
            return Err(TtError::PointOutsideBox {
                dim: k,
                value: x.to_f64_lossy(),
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
        // Binary search for the cell [x_i, x_{i+1}] containing x.
        let mut lo_i = 0usize;
        let mut hi_i = xs.len() - 1;
        while hi_i - lo_i > 1 {
            let mid = (lo_i + hi_i) / 2;
            if x >= xs[mid] {
                lo_i = mid;
            } else {
                hi_i = mid;
            }
        }
        let h = xs[lo_i + 1] - xs[lo_i];
        Ok((lo_i, (x - xs[lo_i]) / h))
    }
}

/// One TT core of shape `left x n x right`, stored row-major in `(a, i, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core<T> {
    pub left: usize,
    pub n: usize,
    pub right: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Core<T> {
    pub fn zeros(left: usize, n: usize, right: usize) -> Self {
        Self {
            left,
            n,
            right,
            data: vec![T::zero(); left * n * right],
        }
    }

    pub fn from_data(left: usize, n: usize, right: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), left * n * right);
        Self {
            left,
            n,
            right,
            data,
        }
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> T {
        self.data[(a * self.n + i) * self.right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: T) {
        self.data[(a * self.n + i) * self.right + b] = v;
    }

    /// `(left * n) x right` unfolding; shares the storage layout.
    pub fn left_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.left * self.n, self.right, self.data.clone())
    }

    /// `left x (n * right)` unfolding; shares the storage layout.
    pub fn right_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.left, self.n * self.right, self.data.clone())
    }

    pub fn from_left_matrix(m: &Matrix<T>, left: usize, n: usize) -> Self {
        assert_eq!(m.rows(), left * n);
        Self::from_data(left, n, m.cols(), m.as_slice().to_vec())
    }

    pub fn from_right_matrix(m: &Matrix<T>, n: usize, right: usize) -> Self {
        assert_eq!(m.cols(), n * right);
        Self::from_data(m.rows(), n, right, m.as_slice().to_vec())
    }

    /// The `left x right` slice at node `i` contracted as `out = phi * slice`.
    pub fn apply_left(&self, i: usize, phi: &[T], out: &mut [T]) {
        debug_assert_eq!(phi.len(), self.left);
        debug_assert_eq!(out.len(), self.right);
        out.iter_mut().for_each(|v| *v = T::zero());
        for (a, &p) in phi.iter().enumerate() {
            if p == T::zero() {
                continue;
            }
            let base = (a * self.n + i) * self.right;
            let row = &self.data[base..base + self.right];
            for (o, &r) in out.iter_mut().zip(row) {
                *o += p * r;
            }
        }
    }

    /// As [`Self::apply_left`] with the slice interpolated between nodes
    /// `i` and `i + 1` at local coordinate `t`.
    pub fn apply_left_interp(&self, i: usize, t: T, phi: &[T], out: &mut [T]) {
        debug_assert!(i + 1 < self.n);
        out.iter_mut().for_each(|v| *v = T::zero());
        let s = T::one() - t;
        for (a, &p) in phi.iter().enumerate() {
            if p == T::zero() {
                continue;
            }
            let base0 = (a * self.n + i) * self.right;
            let base1 = base0 + self.right;
            let row0 = &self.data[base0..base0 + self.right];
            let row1 = &self.data[base1..base1 + self.right];
            for b in 0..self.right {
                out[b] += p * (s * row0[b] + t * row1[b]);
            }
        }
    }
}

/// Interpolated TT decomposition over a [`Grid`].
#[derive(Debug, Clone)]
pub struct TtTensor<T> {
    grid: Grid<T>,
    cores: Vec<Core<T>>,
}

impl<T: Scalar> TtTensor<T> {
    /// Builds a TT tensor, validating the rank chain against the grid.
    pub fn new(grid: Grid<T>, cores: Vec<Core<T>>) -> Result<Self, TtError> {
        if cores.len() != grid.dim() {
            return Err(TtError::InvalidShape(format!(
                "{} cores for {} grid dimensions",
                cores.len(),
                grid.dim()
            )));
        }
        if cores[0].left != 1 {
            return Err(TtError::InvalidShape("first rank must be 1".into()));
        }
        if cores[cores.len() - 1].right != 1 {
            return Err(TtError::InvalidShape("last rank must be 1".into()));
        }
        for (k, c) in cores.iter().enumerate() {
            if c.n != grid.size(k) {
                return Err(TtError::InvalidShape(format!(
                    "core {k} has {} nodes, grid has {}",
                    c.n,
                    grid.size(k)
                )));
            }
            if k + 1 < cores.len() && c.right != cores[k + 1].left {
                return Err(TtError::InvalidShape(format!(
                    "rank mismatch between cores {k} and {}",
                    k + 1
                )));
            }
        }
        Ok(Self { grid, cores })
    }

    /// Random TT tensor with i.i.d. standard-normal core entries.
    pub fn random(grid: Grid<T>, ranks: &[usize], rng: &mut impl Rng) -> Result<Self, TtError> {
        let d = grid.dim();
        if ranks.len() != d + 1 || ranks[0] != 1 || ranks[d] != 1 {
            return Err(TtError::InvalidShape(
                "ranks must have length d+1 with r_0 = r_d = 1".into(),
            ));
        }
        let cores = (0..d)
            .map(|k| {
                let (l, n, r) = (ranks[k], grid.size(k), ranks[k + 1]);
                let data = (0..l * n * r)
                    .map(|_| {
                        // Box-Muller keeps this independent of rand_distr.
                        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        T::from_f64_lossy(
                            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos(),
                        )
                    })
                    .collect();
                Core::from_data(l, n, r, data)
            })
            .collect();
        Self::new(grid, cores)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn core(&self, k: usize) -> &Core<T> {
        &self.cores[k]
    }

    pub fn cores(&self) -> &[Core<T>] {
        &self.cores
    }

    /// TT ranks `r_0 .. r_d`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(1);
        for c in &self.cores {
            r.push(c.right);
        }
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    /// Number of stored reals, `sum_k r_{k-1} n_k r_k`.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// Value at a grid multi-index (0-based).
    pub fn eval_index(&self, idx: &[usize]) -> Result<T, TtError> {
        if idx.len() != self.dim() {
            return Err(TtError::InvalidShape(format!(
                "index length {} for dimension {}",
                idx.len(),
                self.dim()
            )));
        }
        for (k, &i) in idx.iter().enumerate() {
            if i >= self.grid.size(k) {
                return Err(TtError::IndexOutOfRange {
                    dim: k,
                    index: i,
                    size: self.grid.size(k),
                });
            }
        }
        let mut phi = vec![T::one()];
        let mut next = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            let c = &self.cores[k];
            next.resize(c.right, T::zero());
            c.apply_left(i, &phi, &mut next);
            std::mem::swap(&mut phi, &mut next);
        }
        Ok(phi[0])
    }

    /// Multilinear interpolation at a point inside the box.
    pub fn eval_point(&self, x: &[T]) -> Result<T, TtError> {
        if x.len() != self.dim() {
            return Err(TtError::InvalidShape(format!(
                "point length {} for dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let mut phi = vec![T::one()];
        let mut next = Vec::new();
        for (k, &xk) in x.iter().enumerate() {
            let (i, t) = self.grid.locate(k, xk)?;
            let c = &self.cores[k];
            next.resize(c.right, T::zero());
            c.apply_left_interp(i, t, &phi, &mut next);
            std::mem::swap(&mut phi, &mut next);
        }
        Ok(phi[0])
    }

    /// Integral over the box of the piecewise-multilinear interpolant.
    pub fn integrate(&self) -> T {
        self.partial_integrals()[0][0]
    }

    /// Right-to-left partial integrals `P`, with `P[d] = [1]` and
    /// `P[k] = (integral of core k over x_k) * P[k+1]` of length `r_k`.
    ///
    /// `P[k+1]` is the vector multiplying core `k` in marginal evaluations;
    /// `P[0]` is the total integral.
    pub fn partial_integrals(&self) -> Vec<Vec<T>> {
        let d = self.dim();
        let mut pvecs = vec![Vec::new(); d + 1];
        pvecs[d] = vec![T::one()];
        for k in (0..d).rev() {
            let c = &self.cores[k];
            let w = self.grid.trapezoid_weights(k);
            let pnext = &pvecs[k + 1];
            let mut out = vec![T::zero(); c.left];
            for a in 0..c.left {
                let mut acc = T::zero();
                for (i, &wi) in w.iter().enumerate() {
                    let base = (a * c.n + i) * c.right;
                    let row = &c.data[base..base + c.right];
                    let mut s = T::zero();
                    for (r, &p) in row.iter().zip(pnext) {
                        s += *r * p;
                    }
                    acc += wi * s;
                }
                out[a] = acc;
            }
            pvecs[k] = out;
        }
        pvecs
    }

    /// Discrete inner product over all nodal values.
    pub fn dot(&self, other: &Self) -> Result<T, TtError> {
        if self.grid != other.grid {
            return Err(TtError::GridMismatch);
        }
        // Carry M of shape r_a x r_b through the chain with two GEMMs per core.
        let mut m = Matrix::from_vec(1, 1, vec![T::one()]);
        for k in 0..self.dim() {
            let a = &self.cores[k];
            let b = &self.cores[k];
            debug_assert_eq!(a.n, b.n);
            let b = &other.cores[k];
            // z = m * b_right: (r_a x r_b) * (r_b x (n r_b')) -> r_a x (n r_b')
            let z = m.matmul(&b.right_matrix());
            // m' = a_left^T * z with z reinterpreted as (r_a n) x r_b'.
            let z = Matrix::from_vec(a.left * a.n, b.right, z.as_slice().to_vec());
            m = a.left_matrix().matmul_tn(&z);
        }
        Ok(m.get(0, 0))
    }

    /// Frobenius norm over nodal values.
    pub fn norm(&self) -> T {
        self.dot(self).expect("same grid").max(T::zero()).sqrt()
    }

    /// `||a - b||_F` over nodal values, computed via TT inner products.
    pub fn frobenius_distance(&self, other: &Self) -> Result<T, TtError> {
        let aa = self.dot(self)?;
        let ab = self.dot(other)?;
        let bb = other.dot(other)?;
        Ok((aa - ab - ab + bb).max(T::zero()).sqrt())
    }

    /// Elementwise sum through block concatenation of the cores.
    pub fn add(&self, other: &Self) -> Result<Self, TtError> {
        if self.grid != other.grid {
            return Err(TtError::GridMismatch);
        }
        let d = self.dim();
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let (a, b) = (&self.cores[k], &other.cores[k]);
            let left = if k == 0 { 1 } else { a.left + b.left };
            let right = if k == d - 1 { 1 } else { a.right + b.right };
            let mut c = Core::zeros(left, a.n, right);
            for i in 0..a.n {
                for ra in 0..a.left {
                    for ca in 0..a.right {
                        c.set(ra, i, ca, a.get(ra, i, ca));
                    }
                }
                let (ro, co) = (
                    if k == 0 { 0 } else { a.left },
                    if k == d - 1 { 0 } else { a.right },
                );
                for rb in 0..b.left {
                    for cb in 0..b.right {
                        let prev = c.get(ro + rb, i, co + cb);
                        c.set(ro + rb, i, co + cb, prev + b.get(rb, i, cb));
                    }
                }
            }
            cores.push(c);
        }
        Self::new(self.grid.clone(), cores)
    }

    /// Multiplies the tensor by a scalar.
    pub fn scale(&self, alpha: T) -> Self {
        let mut out = self.clone();
        for v in out.cores[0].data.iter_mut() {
            *v *= alpha;
        }
        out
    }

    /// SVD-based rounding: returns a tensor with `||out - self||_F <=
    /// delta * ||self||_F` and ranks no larger than the input ranks.
    pub fn round(&self, delta: T) -> Self {
        assert!(delta >= T::zero(), "rounding tolerance must be >= 0");
        let d = self.dim();
        if d == 1 {
            return self.clone();
        }
        // Right-to-left orthogonalization; afterwards the whole norm sits in
        // core 0.
        let mut cores = self.cores.clone();
        for k in (1..d).rev() {
            let m = cores[k].right_matrix(); // r_k x (n r_{k+1})
            let (q, r) = thin_qr(&m.transpose());
            // m = r^T q^T; q^T rows become the orthogonal core.
            let rank = q.cols();
            cores[k] = Core::from_right_matrix(&q.transpose(), cores[k].n, cores[k].right);
            // Absorb r^T into core k-1: contract over its right index.
            let prev = cores[k - 1].left_matrix(); // (l n) x r_k
            let merged = prev.matmul(&r.transpose()); // (l n) x rank
            cores[k - 1] = Core::from_left_matrix(&merged, cores[k - 1].left, cores[k - 1].n);
            debug_assert_eq!(cores[k].left, rank);
        }
        let norm = cores[0]
            .data
            .iter()
            .map(|&v| v * v)
            .sum::<T>()
            .max(T::zero())
            .sqrt();
        if norm == T::zero() {
            // Zero tensor: collapse to rank 1.
            let cores = (0..d)
                .map(|k| Core::zeros(1, self.grid.size(k), 1))
                .collect();
            return Self::new(self.grid.clone(), cores).expect("valid shape");
        }
        let thresh = if d > 1 {
            delta * norm / T::cast_usize(d - 1).sqrt()
        } else {
            delta * norm
        };
        // Left-to-right truncation sweep.
        for k in 0..d - 1 {
            let m = cores[k].left_matrix(); // (l n) x r
            let (q, r) = thin_qr(&m);
            let (u, s, v) = jacobi_svd(&r);
            let mut rank = s.iter().take_while(|&&sv| sv > thresh).count();
            rank = rank.max(1).min(s.len());
            // Core k <- Q * U_rank.
            let u_r = Matrix::from_fn(u.rows(), rank, |i, j| u.get(i, j));
            let new_core = q.matmul(&u_r);
            cores[k] = Core::from_left_matrix(&new_core, cores[k].left, cores[k].n);
            // Carry diag(s) V^T into core k+1.
            let mut sv = Matrix::zeros(rank, v.rows());
            for i in 0..rank {
                for j in 0..v.rows() {
                    sv.set(i, j, s[i] * v.get(j, i));
                }
            }
            let merged = sv.matmul(&cores[k + 1].right_matrix());
            cores[k + 1] = Core::from_right_matrix(&merged, cores[k + 1].n, cores[k + 1].right);
        }
        Self::new(self.grid.clone(), cores).expect("valid shape")
    }

    /// All nodal values in row-major order; guarded against blow-up.
    pub fn materialize(&self) -> Result<Vec<T>, TtError> {
        let total: usize = self.grid.sizes().iter().product();
        if total > 20_000_000 {
            return Err(TtError::TooLarge(total));
        }
        // Left-to-right expansion: values of partial products.
        let mut acc: Vec<T> = vec![T::one()]; // shape: (prod n) x r
        let mut acc_rank = 1usize;
        for c in &self.cores {
            let rows = acc.len() / acc_rank;
            let mut next = vec![T::zero(); rows * c.n * c.right];
            for row in 0..rows {
                let phi = &acc[row * acc_rank..(row + 1) * acc_rank];
                for i in 0..c.n {
                    let out =
                        &mut next[(row * c.n + i) * c.right..(row * c.n + i + 1) * c.right];
                    for (a, &p) in phi.iter().enumerate() {
                        if p == T::zero() {
                            continue;
                        }
                        let base = (a * c.n + i) * c.right;
                        for (o, &v) in out.iter_mut().zip(&c.data[base..base + c.right]) {
                            *o += p * v;
                        }
                    }
                }
            }
            acc = next;
            acc_rank = c.right;
        }
        Ok(acc)
    }
}

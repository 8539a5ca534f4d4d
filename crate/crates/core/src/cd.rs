//! Conditional-distribution sampling from a TT surrogate.
//!
//! [`CdSampler::prepare`] precomputes the right partial integrals of the TT
//! density once; [`CdSampler::transform`] then maps unit-cube seeds to
//! samples by sequentially inverting the univariate conditional CDFs. The
//! map is deterministic and exact for the (absolute value of the)
//! interpolated surrogate, and returns the surrogate density of every
//! sample.

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tt::{Grid, TtError, TtTensor};
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CdError {
    #[error("surrogate integrates to zero; density is identically negligible")]
    ZeroIntegral,
    #[error("marginal density vanishes at every node of dimension {dim}")]
    ZeroMarginal { dim: usize },
    #[error("seed {value} outside [0, 1) at row {row}, dimension {dim}")]
    SeedOutOfRange { row: usize, dim: usize, value: f64 },
    #[error("seed matrix has {got} columns, sampler dimension is {want}")]
    SeedShape { got: usize, want: usize },
    #[error(transparent)]
    Tt(#[from] TtError),
}

/// Provenance of the unit-cube seeds in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedKind {
    /// Independent uniform draws.
    Iid,
    /// Points of a (randomized) QMC lattice.
    Lattice,
}

/// Seeds, mapped points and density values of one sampling run.
///
/// `log_pistar` holds the log of the normalized surrogate density actually
/// used to generate each point. `log_pi` optionally holds the unnormalized
/// target log-density (any fixed constant shift is allowed; estimators only
/// use ratios of normalized weights).
#[derive(Debug, Clone)]
pub struct SampleBatch<T> {
    pub seeds: Matrix<T>,
    pub points: Matrix<T>,
    pub log_pistar: Vec<T>,
    pub log_pi: Option<Vec<T>>,
    pub seed_kind: SeedKind,
}

impl<T: Scalar> SampleBatch<T> {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Importance weights `pi / pistar` (unnormalized; carries the constant
    /// shift of `log_pi`).
    pub fn weights(&self) -> Option<Vec<T>> {
        self.log_pi.as_ref().map(|lp| {
            lp.iter()
                .zip(&self.log_pistar)
                .map(|(&a, &b)| (a - b).exp())
                .collect()
        })
    }

    /// CSV export with header `q_1..q_d,x_1..x_d,pistar[,pi,w]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header = String::new();
        for k in 1..=d {
            header.push_str(&format!("q_{k},"));
        }
        for k in 1..=d {
            header.push_str(&format!("x_{k},"));
        }
        header.push_str("pistar");
        if self.log_pi.is_some() {
            header.push_str(",pi,w");
        }
        writeln!(w, "{header}")?;
        for l in 0..self.len() {
            let mut line = String::new();
            for &q in self.seeds.row(l) {
                line.push_str(&format!("{q},"));
            }
            for &x in self.points.row(l) {
                line.push_str(&format!("{x},"));
            }
            line.push_str(&format!("{}", self.log_pistar[l].exp()));
            if let Some(lp) = &self.log_pi {
                let pi = lp[l].exp();
                let wgt = (lp[l] - self.log_pistar[l]).exp();
                line.push_str(&format!(",{pi},{wgt}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Inverts the CDF of the piecewise-linear density with nodal values `p` on
/// `nodes` at cumulative fraction `q in [0, 1)`.
///
/// The CDF is the exact piecewise-quadratic antiderivative of the linear
/// interpolant, normalized by its total mass, so the round trip
/// `C(invert_cdf(p, q)) = q` holds to machine precision.
pub fn invert_cdf<T: Scalar>(p: &[T], nodes: &[T], q: T) -> Result<T, CdError> {
    invert_cdf_detailed(p, nodes, q).map(|(x, _)| x)
}

/// As [`invert_cdf`], additionally returning the normalized density value at
/// the sampled coordinate.
pub fn invert_cdf_detailed<T: Scalar>(p: &[T], nodes: &[T], q: T) -> Result<(T, T), CdError> {
    assert_eq!(p.len(), nodes.len());
    let n = p.len();
    if !(q >= T::zero() && q < T::one()) {
        return Err(CdError::SeedOutOfRange {
            row: 0,
            dim: 0,
            value: q.to_f64_lossy(),
        });
    }
    let half = T::from_f64_lossy(0.5);
    let mut cum = Vec::with_capacity(n);
    cum.push(T::zero());
    let mut total = T::zero();
    for i in 0..n - 1 {
        let h = nodes[i + 1] - nodes[i];
        total += (p[i] + p[i + 1]) * half * h;
        cum.push(total);
    }
    if !(total > T::zero()) {
        return Err(CdError::ZeroMarginal { dim: 0 });
    }
    let target = q * total;
    // Leftmost cell with cum[i+1] > target; exists because target < total.
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cum[mid] <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    let h = nodes[i + 1] - nodes[i];
    let c = (target - cum[i]).max(T::zero());
    let a = (p[i + 1] - p[i]) / (h + h);
    let b = p[i];
    let t = if c == T::zero() {
        T::zero()
    } else if a == T::zero() {
        c / b
    } else {
        let disc = (b * b + T::cast_usize(4) * a * c).max(T::zero());
        let denom = b + disc.sqrt();
        if denom > T::zero() {
            (c + c) / denom
        } else {
            T::zero()
        }
    };
    let t = t.max(T::zero()).min(h);
    let x = nodes[i] + t;
    let dens = (b + (p[i + 1] - p[i]) * t / h).max(T::zero()) / total;
    Ok((x, dens))
}

/// CDF of the piecewise-linear density at `x`, normalized to `[0, 1]`.
/// Test-side inverse of [`invert_cdf`].
pub fn cdf_of<T: Scalar>(p: &[T], nodes: &[T], x: T) -> T {
    let n = p.len();
    let half = T::from_f64_lossy(0.5);
    let mut total = T::zero();
    let mut below = T::zero();
    for i in 0..n - 1 {
        let h = nodes[i + 1] - nodes[i];
        let mass = (p[i] + p[i + 1]) * half * h;
        if x >= nodes[i + 1] {
            below += mass;
        } else if x > nodes[i] {
            let t = x - nodes[i];
            let slope = (p[i + 1] - p[i]) / h;
            below += p[i] * t + slope * t * t * half;
        }
        total += mass;
    }
    below / total
}

/// Precomputed conditional-distribution sampler for a TT surrogate.
pub struct CdSampler<T> {
    tt: TtTensor<T>,
    /// Right partial integrals; `pvecs[k+1]` multiplies core `k`.
    pvecs: Vec<Vec<T>>,
    /// `psi[k][a * n_k + i] = sum_b core_k(a, i, b) * pvecs[k+1][b]`.
    psi: Vec<Vec<T>>,
}

impl<T: Scalar> CdSampler<T> {
    /// Computes the partial integrals and the deterministic marginal parts.
    pub fn prepare(tt: TtTensor<T>) -> Result<Self, CdError> {
        let pvecs = tt.partial_integrals();
        let total = pvecs[0][0];
        if !(total.abs() > T::zero()) || !total.is_finite() {
            return Err(CdError::ZeroIntegral);
        }
        let d = tt.dim();
        let mut psi = Vec::with_capacity(d);
        for k in 0..d {
            let c = tt.core(k);
            let pnext = &pvecs[k + 1];
            let mut table = vec![T::zero(); c.left * c.n];
            for a in 0..c.left {
                for i in 0..c.n {
                    let base = (a * c.n + i) * c.right;
                    let row = &c.data[base..base + c.right];
                    let mut s = T::zero();
                    for (v, &pb) in row.iter().zip(pnext) {
                        s += *v * pb;
                    }
                    table[a * c.n + i] = s;
                }
            }
            psi.push(table);
        }
        Ok(Self { tt, pvecs, psi })
    }

    pub fn tt(&self) -> &TtTensor<T> {
        &self.tt
    }

    pub fn grid(&self) -> &Grid<T> {
        self.tt.grid()
    }

    pub fn dim(&self) -> usize {
        self.tt.dim()
    }

    /// Right partial integrals, `partials()[d] = [1]`.
    pub fn partials(&self) -> &[Vec<T>] {
        &self.pvecs
    }

    /// Nodal marginal density `|phi * Psi_k|` for dimension `k` given the
    /// left-product row vector `phi` of length `r_k`.
    pub fn marginal_pdf(&self, k: usize, phi: &[T]) -> Result<Vec<T>, CdError> {
        let c = self.tt.core(k);
        assert_eq!(phi.len(), c.left, "phi length must match the left rank");
        let n = c.n;
        let mut p = vec![T::zero(); n];
        for (a, &f) in phi.iter().enumerate() {
            if f == T::zero() {
                continue;
            }
            let row = &self.psi[k][a * n..(a + 1) * n];
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi += f * v;
            }
        }
        for v in p.iter_mut() {
            *v = v.abs();
        }
        if p.iter().all(|&v| v == T::zero()) {
            return Err(CdError::ZeroMarginal { dim: k });
        }
        Ok(p)
    }

    fn transform_row(&self, seed: &[T], x_out: &mut [T]) -> Result<T, CdError> {
        let d = self.dim();
        let mut phi = vec![T::one()];
        let mut next: Vec<T> = Vec::new();
        let mut log_pistar = T::zero();
        for k in 0..d {
            let q = seed[k];
            // Seeds exactly at 1 are clamped to keep x inside the closed box.
            let q = if q >= T::one() && q <= T::one() + T::epsilon() {
                T::one() - T::epsilon()
            } else {
                q
            };
            if !(q >= T::zero() && q < T::one()) {
                return Err(CdError::SeedOutOfRange {
                    row: 0,
                    dim: k,
                    value: q.to_f64_lossy(),
                });
            }
            let p = self.marginal_pdf(k, &phi).map_err(|e| match e {
                CdError::ZeroMarginal { .. } => CdError::ZeroMarginal { dim: k },
                other => other,
            })?;
            let nodes = self.grid().nodes(k);
            let (x, dens) = invert_cdf_detailed(&p, nodes, q).map_err(|e| match e {
                CdError::ZeroMarginal { .. } => CdError::ZeroMarginal { dim: k },
                other => other,
            })?;
            x_out[k] = x;
            // The sampled density is the product of normalized marginals;
            // accumulate in log space to avoid underflow in high dimensions.
            let dens = dens.max(T::min_positive_value());
            log_pistar += dens.ln();
            // phi <- phi * core_k(x) with the core slice interpolated at x.
            let c = self.tt.core(k);
            let (cell, t) = self.grid().locate(k, x)?;
            next.resize(c.right, T::zero());
            c.apply_left_interp(cell, t, &phi, &mut next);
            std::mem::swap(&mut phi, &mut next);
            // Rescale to keep the running product in range; the scale cancels
            // in every normalized marginal.
            let m = phi.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
            if m > T::zero() {
                for v in phi.iter_mut() {
                    *v /= m;
                }
            }
        }
        Ok(log_pistar)
    }

    /// Maps unit-cube seeds (rows of an `N x d` matrix) to samples of the
    /// surrogate density. Deterministic in the seeds; rows are independent
    /// and processed in parallel with output in seed order.
    pub fn transform(&self, seeds: &Matrix<T>, kind: SeedKind) -> Result<SampleBatch<T>, CdError> {
        let d = self.dim();
        if seeds.cols() != d {
            return Err(CdError::SeedShape {
                got: seeds.cols(),
                want: d,
            });
        }
        let n = seeds.rows();
        let results: Vec<Result<(Vec<T>, T), CdError>> = (0..n)
            .into_par_iter()
            .map(|l| {
                let mut x = vec![T::zero(); d];
                let lp = self.transform_row(seeds.row(l), &mut x).map_err(|e| match e {
                    CdError::SeedOutOfRange { dim, value, .. } => CdError::SeedOutOfRange {
                        row: l,
                        dim,
                        value,
                    },
                    other => other,
                })?;
                Ok((x, lp))
            })
            .collect();
        let mut points = Matrix::zeros(n, d);
        let mut log_pistar = Vec::with_capacity(n);
        for (l, res) in results.into_iter().enumerate() {
            let (x, lp) = res?;
            points.row_mut(l).copy_from_slice(&x);
            log_pistar.push(lp);
        }
        Ok(SampleBatch {
            seeds: seeds.clone(),
            points,
            log_pistar,
            log_pi: None,
            seed_kind: kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt::Core;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn triangle_tt(d: usize) -> TtTensor<f64> {
        // Normalized triangle density p(x) = 2x on [0,1] per factor.
        let grid = Grid::uniform(&vec![(0.0, 1.0); d], &vec![2; d]).unwrap();
        let cores = (0..d)
            .map(|_| Core::from_data(1, 2, 1, vec![0.0, 2.0]))
            .collect();
        TtTensor::new(grid, cores).unwrap()
    }

    #[test]
    fn prepare_normalized_factors_gives_unit_partials() {
        let s = CdSampler::prepare(triangle_tt(3)).unwrap();
        for p in s.partials() {
            assert_eq!(p.len(), 1);
            assert!((p[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn prepare_is_deterministic_bitwise() {
        let grid = Grid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let tt = TtTensor::random(grid, &[1, 3, 1], &mut rng).unwrap();
        let a = CdSampler::prepare(tt.clone()).unwrap();
        let b = CdSampler::prepare(tt).unwrap();
        assert_eq!(a.pvecs, b.pvecs);
        assert_eq!(a.psi, b.psi);
    }

    #[test]
    fn prepare_small_rank2_case_matches_hand_computation() {
        let grid = Grid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2]).unwrap();
        let core0 = Core::from_data(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let core1 = Core::from_data(2, 2, 1, vec![5.0, 6.0, 7.0, 8.0]);
        let tt = TtTensor::new(grid, vec![core0, core1]).unwrap();
        let s = CdSampler::prepare(tt).unwrap();
        assert_eq!(s.partials()[1], vec![5.5, 7.5]);
    }

    #[test]
    fn prepare_rejects_zero_density() {
        let grid = Grid::uniform(&[(0.0, 1.0)], &[3]).unwrap();
        let tt = TtTensor::new(grid, vec![Core::zeros(1, 3, 1)]).unwrap();
        assert!(matches!(
            CdSampler::prepare(tt),
            Err(CdError::ZeroIntegral)
        ));
    }

    #[test]
    fn marginal_of_separable_density_is_first_factor() {
        let s = CdSampler::prepare(triangle_tt(2)).unwrap();
        let p = s.marginal_pdf(0, &[1.0]).unwrap();
        assert_eq!(p, vec![0.0, 2.0]);
    }

    #[test]
    fn marginal_takes_absolute_value() {
        let grid = Grid::uniform(&[(0.0, 1.0)], &[3]).unwrap();
        let tt =
            TtTensor::new(grid, vec![Core::from_data(1, 3, 1, vec![1.0, -0.5, 2.0])]).unwrap();
        let s = CdSampler::prepare(tt).unwrap();
        let p = s.marginal_pdf(0, &[1.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.5, 2.0]);
    }

    #[test]
    fn conditional_matches_full_tensor_brute_force() {
        // d=2 rank-2: p(x2 | x1 fixed at node) against direct marginalization.
        let grid = Grid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[4, 4]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        // Positive random tensor to keep signs trivial.
        let mut core0 = Core::zeros(1, 4, 2);
        let mut core1 = Core::zeros(2, 4, 1);
        for i in 0..4 {
            for b in 0..2 {
                core0.set(0, i, b, rng.gen_range(0.1..1.0));
                core1.set(b, i, 0, rng.gen_range(0.1..1.0));
            }
        }
        let tt = TtTensor::new(grid, vec![core0.clone(), core1.clone()]).unwrap();
        let s = CdSampler::prepare(tt.clone()).unwrap();
        let i1 = 2usize;
        let phi: Vec<f64> = (0..2).map(|b| core0.get(0, i1, b)).collect();
        let p = s.marginal_pdf(1, &phi).unwrap();
        for i2 in 0..4 {
            let direct = tt.eval_index(&[i1, i2]).unwrap();
            assert!((p[i2] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn invert_cdf_triangle_analytic() {
        // p(0) = 0, p(1) = 2 on [0,1]: CDF is x^2, so q = 0.25 -> x = 0.5.
        let x = invert_cdf(&[0.0f64, 2.0], &[0.0, 1.0], 0.25).unwrap();
        assert!((x - 0.5).abs() < 1e-14);
    }

    #[test]
    fn invert_cdf_uniform_is_affine() {
        let nodes: Vec<f64> = (0..5).map(|i| 2.0 + i as f64).collect(); // [2, 6]
        let p = vec![1.0; 5];
        let x = invert_cdf(&p, &nodes, 0.3).unwrap();
        assert!((x - (2.0 + 0.3 * 4.0)).abs() < 1e-13);
    }

    #[test]
    fn invert_cdf_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let nodes: Vec<f64> = (0..17).map(|i| (i as f64 / 16.0).powf(1.3)).collect();
        let p: Vec<f64> = (0..17).map(|_| rng.gen_range(0.0..2.0)).collect();
        for _ in 0..200 {
            let q: f64 = rng.gen_range(0.0..1.0);
            let x = invert_cdf(&p, &nodes, q).unwrap();
            assert!((cdf_of(&p, &nodes, x) - q).abs() < 1e-12);
        }
    }

    #[test]
    fn invert_cdf_rejects_bad_seed() {
        assert!(invert_cdf(&[1.0, 1.0], &[0.0, 1.0], 1.0).is_err());
        assert!(invert_cdf(&[1.0, 1.0], &[0.0, 1.0], -0.1).is_err());
    }

    #[test]
    fn transform_separable_equals_per_dimension_inversion() {
        let s = CdSampler::prepare(triangle_tt(3)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let seeds = Matrix::from_fn(32, 3, |_, _| rng.gen_range(0.0..1.0));
        let batch = s.transform(&seeds, SeedKind::Iid).unwrap();
        for l in 0..32 {
            for k in 0..3 {
                let expected = invert_cdf(&[0.0, 2.0], &[0.0, 1.0], seeds.get(l, k)).unwrap();
                assert!((batch.points.get(l, k) - expected).abs() < 1e-13);
            }
            // pistar = prod over dims of the normalized triangle density 2x.
            let expected_lp: f64 = (0..3)
                .map(|k| (2.0 * batch.points.get(l, k)).ln())
                .sum();
            assert!((batch.log_pistar[l] - expected_lp).abs() < 1e-10);
        }
    }

    #[test]
    fn transform_is_pure() {
        let grid = Grid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[8, 8]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut c0 = Core::zeros(1, 8, 2);
        let mut c1 = Core::zeros(2, 8, 1);
        for i in 0..8 {
            for b in 0..2 {
                c0.set(0, i, b, rng.gen_range(0.05..1.0));
                c1.set(b, i, 0, rng.gen_range(0.05..1.0));
            }
        }
        let tt = TtTensor::new(grid, vec![c0, c1]).unwrap();
        let s = CdSampler::prepare(tt).unwrap();
        let seeds = Matrix::from_fn(64, 2, |_, _| rng.gen_range(0.0..1.0));
        let a = s.transform(&seeds, SeedKind::Iid).unwrap();
        let b = s.transform(&seeds, SeedKind::Iid).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.log_pistar, b.log_pistar);
    }

    #[test]
    fn transform_monotone_in_each_seed_coordinate() {
        let s = CdSampler::prepare(triangle_tt(2)).unwrap();
        let mut prev = -1.0f64;
        for j in 0..50 {
            let q = j as f64 / 50.0;
            let seeds = Matrix::from_vec(1, 2, vec![0.37, q]);
            let b = s.transform(&seeds, SeedKind::Iid).unwrap();
            let x = b.points.get(0, 1);
            assert!(x >= prev);
            prev = x;
        }
    }

    #[test]
    fn transform_positive_pistar_even_with_negative_nodal_values() {
        let grid = Grid::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[6, 6]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut c0 = Core::zeros(1, 6, 2);
        let mut c1 = Core::zeros(2, 6, 1);
        for i in 0..6 {
            for b in 0..2 {
                c0.set(0, i, b, rng.gen_range(-0.2..1.0));
                c1.set(b, i, 0, rng.gen_range(-0.2..1.0));
            }
        }
        let tt = TtTensor::<f64>::new(grid, vec![c0, c1]).unwrap();
        if let Ok(s) = CdSampler::prepare(tt) {
            let seeds = Matrix::from_fn(64, 2, |_, _| rng.gen_range(0.0..1.0));
            let batch = s.transform(&seeds, SeedKind::Iid).unwrap();
            for &lp in &batch.log_pistar {
                assert!(lp.is_finite());
            }
        }
    }

    #[test]
    fn csv_export_has_documented_header() {
        let s = CdSampler::prepare(triangle_tt(2)).unwrap();
        let seeds = Matrix::from_vec(2, 2, vec![0.25, 0.5, 0.75, 0.1]);
        let mut batch = s.transform(&seeds, SeedKind::Iid).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("q_1,q_2,x_1,x_2,pistar\n"));
        batch.log_pi = Some(vec![0.0, 0.0]);
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("q_1,q_2,x_1,x_2,pistar,pi,w\n"));
        assert_eq!(text.lines().count(), 3);
    }
}

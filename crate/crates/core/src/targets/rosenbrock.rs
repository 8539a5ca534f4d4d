//! Rosenbrock density, a banana-shaped benchmark with long tails.

use super::{TargetDensity, TargetError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// `pi(theta) = exp(-r(theta)/2)` with
/// `r = sum_k [theta_k^2 + (theta_{k+1} + 5 (theta_k^2 + 1))^2]` on the box
/// `[-a_k, a_k]`, `a_d = 200`, `a_{d-1} = 7`, `a_k = 2` otherwise.
pub struct RosenbrockDensity {
    dim: usize,
}

impl RosenbrockDensity {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "the Rosenbrock density needs at least 2 variables");
        Self { dim }
    }

    /// Grid sizes used in the benchmark studies: 128 nodes for
    /// `theta_1..theta_{d-2}`, 512 for `theta_{d-1}`, 4096 for `theta_d`.
    pub fn reference_grid_sizes(&self) -> Vec<usize> {
        let d = self.dim;
        let mut n = vec![128; d];
        n[d - 2] = 512;
        n[d - 1] = 4096;
        n
    }

    pub fn exponent<T: Scalar>(&self, theta: &[T]) -> T {
        let five = T::from_f64_lossy(5.0);
        let mut r = T::zero();
        for k in 0..self.dim - 1 {
            let a = theta[k];
            let b = theta[k + 1] + five * (a * a + T::one());
            r += a * a + b * b;
        }
        r
    }
}

impl<T: Scalar> TargetDensity<T> for RosenbrockDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn domain(&self) -> Vec<(T, T)> {
        let d = self.dim;
        (0..d)
            .map(|k| {
                let a = if k == d - 1 {
                    200.0
                } else if k == d - 2 {
                    7.0
                } else {
                    2.0
                };
                (T::from_f64_lossy(-a), T::from_f64_lossy(a))
            })
            .collect()
    }

    fn log_density_batch(&self, points: &Matrix<T>) -> Result<Vec<T>, TargetError> {
        if points.cols() != self.dim {
            return Err(TargetError::DimMismatch {
                got: points.cols(),
                want: self.dim,
            });
        }
        let half = T::from_f64_lossy(0.5);
        Ok((0..points.rows())
            .map(|l| -half * self.exponent(points.row(l)))
            .collect())
    }

    fn qoi_names(&self) -> Vec<String> {
        vec!["theta_1".into()]
    }

    fn qoi_batch(&self, points: &Matrix<T>) -> Result<Option<Matrix<T>>, TargetError> {
        let mut q = Matrix::zeros(points.rows(), 1);
        for l in 0..points.rows() {
            q.set(l, 0, points.get(l, 0));
        }
        Ok(Some(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_value_d2() {
        // r(0, 0) = 0 + (0 + 5)^2 = 25, log pi = -12.5.
        let t = RosenbrockDensity::new(2);
        let pts = Matrix::from_vec(1, 2, vec![0.0f64, 0.0]);
        let lp = t.log_density_batch(&pts).unwrap();
        assert!((lp[0] + 12.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_point_d2() {
        let t = RosenbrockDensity::new(2);
        let pts = Matrix::from_vec(1, 2, vec![0.0f64, -5.0]);
        let lp = t.log_density_batch(&pts).unwrap();
        assert_eq!(lp[0], 0.0);
    }

    #[test]
    fn d4_matches_term_by_term_oracle() {
        let t = RosenbrockDensity::new(4);
        let theta = [0.3f64, -0.7, 1.2, -20.0];
        let mut r = 0.0;
        for k in 0..3 {
            r += theta[k].powi(2) + (theta[k + 1] + 5.0 * (theta[k].powi(2) + 1.0)).powi(2);
        }
        let pts = Matrix::from_vec(1, 4, theta.to_vec());
        let lp = t.log_density_batch(&pts).unwrap();
        assert!((lp[0] + 0.5 * r).abs() < 1e-12 * r.max(1.0));
    }

    #[test]
    fn box_and_grids_follow_the_benchmark_layout() {
        let t = RosenbrockDensity::new(5);
        let dom: Vec<(f64, f64)> = t.domain();
        assert_eq!(dom[4], (-200.0, 200.0));
        assert_eq!(dom[3], (-7.0, 7.0));
        assert_eq!(dom[0], (-2.0, 2.0));
        assert_eq!(t.reference_grid_sizes(), vec![128, 128, 128, 512, 4096]);
        let t2 = RosenbrockDensity::new(2);
        let dom2: Vec<(f64, f64)> = t2.domain();
        assert_eq!(dom2, vec![(-7.0, 7.0), (-200.0, 200.0)]);
    }
}

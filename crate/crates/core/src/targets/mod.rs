//! Benchmark target densities and the glue between a density and the
//! grid-indexed interface of TT-cross.

use crate::cd::SampleBatch;
use crate::cross::GridTarget;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tt::{Grid, TtError};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

pub mod diffusion;
pub mod fem;
pub mod rosenbrock;
pub mod shock;

pub use diffusion::DiffusionModel;
pub use rosenbrock::RosenbrockDensity;
pub use shock::ShockAbsorberModel;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("point has {got} coordinates, target dimension is {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),
    #[error("quantile solve failed: {0}")]
    QuantileSolve(String),
    #[error(transparent)]
    Tt(#[from] TtError),
}

/// An unnormalized density on a box, evaluated in batches.
///
/// Evaluation is stateless after construction and must be reentrant; batch
/// evaluation equals pointwise evaluation.
pub trait TargetDensity<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// Box bounds per dimension.
    fn domain(&self) -> Vec<(T, T)>;

    /// Log of the unnormalized density for each row of `points` (`N x d`).
    /// Points outside the support return `-inf`.
    fn log_density_batch(&self, points: &Matrix<T>) -> Result<Vec<T>, TargetError>;

    /// Interpolation grid with `n[k]` nodes per dimension; targets override
    /// this when a grid node must avoid a singular coordinate.
    fn grid(&self, n: &[usize]) -> Result<Grid<T>, TargetError> {
        Ok(Grid::uniform(&self.domain(), n)?)
    }

    /// Names of the per-sample quantities of interest, if any.
    fn qoi_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Per-sample QoI values (`N x q`), aligned with [`Self::qoi_names`].
    fn qoi_batch(&self, _points: &Matrix<T>) -> Result<Option<Matrix<T>>, TargetError> {
        Ok(None)
    }

    /// Density and QoIs together; overridden by targets where both share the
    /// same forward solve.
    fn log_density_and_qoi_batch(
        &self,
        points: &Matrix<T>,
    ) -> Result<(Vec<T>, Option<Matrix<T>>), TargetError> {
        Ok((self.log_density_batch(points)?, self.qoi_batch(points)?))
    }
}

const EVAL_CHUNK: usize = 2048;

/// Batched log-density evaluation with rows dispatched to parallel workers;
/// output order is independent of the worker count.
pub fn log_density_parallel<T: Scalar>(
    target: &dyn TargetDensity<T>,
    points: &Matrix<T>,
) -> Result<Vec<T>, TargetError> {
    let d = points.cols();
    let n = points.rows();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(EVAL_CHUNK)
        .map(|s| (s, (s + EVAL_CHUNK).min(n)))
        .collect();
    let parts: Vec<Result<Vec<T>, TargetError>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let sub = Matrix::from_vec(
                hi - lo,
                d,
                points.as_slice()[lo * d..hi * d].to_vec(),
            );
            target.log_density_batch(&sub)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Fixed, reproducible log-scale shift for a target: the maximum pilot
/// log-density over the box center and a seeded uniform cloud. Subtracting
/// it keeps `exp` of shifted values in range; being constant, it only
/// rescales the unnormalized density.
pub fn pilot_log_shift<T: Scalar>(
    target: &dyn TargetDensity<T>,
    pilot_points: usize,
) -> Result<T, TargetError> {
    use rand::Rng;
    use rand::SeedableRng;
    let d = target.dim();
    let domain = target.domain();
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0117);
    let n = pilot_points.max(1) + 1;
    let mut pts = Matrix::zeros(n, d);
    for k in 0..d {
        let (a, b) = domain[k];
        let mid = (a + b) * T::from_f64_lossy(0.5);
        pts.set(0, k, mid);
    }
    for row in 1..n {
        for k in 0..d {
            let (a, b) = domain[k];
            let u = T::from_f64_lossy(rng.gen_range(0.0..1.0));
            pts.set(row, k, a + (b - a) * u);
        }
    }
    let lp = log_density_parallel(target, &pts)?;
    let mut best = T::neg_infinity();
    for v in lp {
        if v.is_finite() {
            best = best.max(v);
        }
    }
    if !best.is_finite() {
        best = T::zero();
    }
    Ok(best)
}

/// Grid-indexed view of a target density for TT-cross: node indices map to
/// coordinates and values are `exp(log pi - log_shift)`.
pub struct DensityGridTarget<'a, T> {
    target: &'a dyn TargetDensity<T>,
    grid: Grid<T>,
    log_shift: T,
}

impl<'a, T: Scalar> DensityGridTarget<'a, T> {
    pub fn new(
        target: &'a dyn TargetDensity<T>,
        grid: Grid<T>,
        log_shift: T,
    ) -> Result<Self, TargetError> {
        if grid.dim() != target.dim() {
            return Err(TargetError::DimMismatch {
                got: grid.dim(),
                want: target.dim(),
            });
        }
        Ok(Self {
            target,
            grid,
            log_shift,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn log_shift(&self) -> T {
        self.log_shift
    }
}

impl<T: Scalar> GridTarget<T> for DensityGridTarget<'_, T> {
    fn eval_indices(&self, d: usize, indices: &[u32]) -> Vec<T> {
        let count = indices.len() / d;
        let mut pts = Matrix::zeros(count, d);
        for (row, chunk) in indices.chunks(d).enumerate() {
            for (k, &i) in chunk.iter().enumerate() {
                pts.set(row, k, self.grid.nodes(k)[i as usize]);
            }
        }
        let lp = log_density_parallel(self.target, &pts)
            .expect("target evaluation failed inside cross");
        lp.into_iter()
            .map(|v| {
                if v.is_finite() {
                    (v - self.log_shift).exp()
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

/// Evaluates the target at the batch points and stores shifted
/// log-densities, making the batch ready for estimators.
pub fn attach_target<T: Scalar>(
    batch: &mut SampleBatch<T>,
    target: &dyn TargetDensity<T>,
    log_shift: T,
) -> Result<(), TargetError> {
    let lp = log_density_parallel(target, &batch.points)?;
    batch.log_pi = Some(lp.into_iter().map(|v| v - log_shift).collect());
    Ok(())
}

//! Shock-absorber reliability posterior: accelerated failure time Weibull
//! regression with right-censored data and an s-Normal-Gamma prior.

use super::{TargetDensity, TargetError};
use crate::linalg::Matrix;
use crate::tt::Grid;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Distance to failure (km) for 38 vehicle shock absorbers; `true` marks a
/// right-censored record.
pub const FAILURE_DATA: [(f64, bool); 38] = [
    (6700.0, false),
    (6950.0, true),
    (7820.0, true),
    (8790.0, true),
    (9120.0, false),
    (9660.0, true),
    (9820.0, true),
    (11310.0, true),
    (11690.0, true),
    (11850.0, true),
    (11880.0, true),
    (12140.0, true),
    (12200.0, false),
    (12870.0, true),
    (13150.0, false),
    (13330.0, true),
    (13470.0, true),
    (14040.0, true),
    (14300.0, false),
    (17520.0, false),
    (17540.0, true),
    (17890.0, true),
    (18420.0, true),
    (18960.0, true),
    (18980.0, true),
    (19410.0, true),
    (20100.0, false),
    (20100.0, true),
    (20150.0, true),
    (20320.0, true),
    (20900.0, false),
    (22700.0, false),
    (23490.0, true),
    (26510.0, false),
    (27410.0, true),
    (27490.0, false),
    (27890.0, true),
    (28100.0, true),
];

pub const PRIOR_GAMMA: f64 = 2.2932;
pub const PRIOR_ALPHA: f64 = 6.8757;
pub const PRIOR_SIGMA0_SQ: f64 = 0.1563;
pub const THETA2_MAX: f64 = 13.0;

/// `m_0 = ln(30796)`.
pub fn prior_m0() -> f64 {
    30796.0f64.ln()
}

/// Weibull log-pdf `ln f(t | theta1, theta2)`.
pub fn weibull_log_pdf(t: f64, theta1: f64, theta2: f64) -> f64 {
    let z = t / theta1;
    theta2.ln() - theta1.ln() + (theta2 - 1.0) * z.ln() - z.powf(theta2)
}

/// Log of the censored contribution, `ln P(T >= t) = -(t/theta1)^theta2`.
pub fn weibull_log_survival(t: f64, theta1: f64, theta2: f64) -> f64 {
    -(t / theta1).powf(theta2)
}

/// Posterior over `(beta_0..beta_D, theta_2)` for the failure-time data
/// with `D` synthetic standard-normal covariate values drawn from
/// `covariate_seed`. The dataset records no covariates, so one standardized
/// value per covariate is synthesized and shared by all records; the
/// regression is deliberately stylized.
pub struct ShockAbsorberModel {
    covariates: Vec<f64>, // D values
    log_t: Vec<f64>,
    censored: Vec<bool>,
    d_cov: usize,
}

impl ShockAbsorberModel {
    pub fn new(covariate_count: usize, covariate_seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(covariate_seed);
        let covariates = (0..covariate_count)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        Self {
            covariates,
            log_t: FAILURE_DATA.iter().map(|&(t, _)| t.ln()).collect(),
            censored: FAILURE_DATA.iter().map(|&(_, c)| c).collect(),
            d_cov: covariate_count,
        }
    }

    /// The synthesized covariate values.
    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn covariate_count(&self) -> usize {
        self.d_cov
    }

    /// Unnormalized log-posterior at one point `(beta_0..beta_D, theta_2)`.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let d_cov = self.d_cov;
        debug_assert_eq!(theta.len(), d_cov + 2);
        let theta2 = theta[d_cov + 1];
        if theta2 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let beta = &theta[..d_cov + 1];
        // s-Normal-Gamma prior; the theta2 factor scales every beta precision.
        let m0 = prior_m0();
        let mut lp = (PRIOR_ALPHA - 0.5) * theta2.ln() - PRIOR_GAMMA * theta2;
        lp -= theta2 * (beta[0] - m0).powi(2) / (2.0 * PRIOR_SIGMA0_SQ);
        for k in 1..=d_cov {
            lp -= theta2 * beta[k] * beta[k] / 2.0;
        }
        let log_theta2 = theta2.ln();
        // The scale is shared by all records: theta_1 = exp(beta_0 + sum_k
        // beta_k x_k).
        let mut log_theta1 = beta[0];
        for (k, &x) in self.covariates.iter().enumerate() {
            log_theta1 += beta[k + 1] * x;
        }
        for i in 0..self.log_t.len() {
            let zlog = self.log_t[i] - log_theta1;
            let pow = (theta2 * zlog).exp(); // (t/theta1)^theta2
            lp -= pow;
            if !self.censored[i] {
                lp += log_theta2 - log_theta1 + (theta2 - 1.0) * zlog;
            }
        }
        lp
    }
}

impl TargetDensity<f64> for ShockAbsorberModel {
    fn dim(&self) -> usize {
        self.d_cov + 2
    }

    fn domain(&self) -> Vec<(f64, f64)> {
        let m0 = prior_m0();
        let s0 = PRIOR_SIGMA0_SQ.sqrt();
        let mut b = vec![(m0 - 3.0 * s0, m0 + 3.0 * s0)];
        b.extend(std::iter::repeat((-3.0, 3.0)).take(self.d_cov));
        b.push((0.0, THETA2_MAX));
        b
    }

    /// Uniform grid, with the first `theta_2` node offset to `13/(2n)`
    /// because the density is undefined at `theta_2 = 0`.
    fn grid(&self, n: &[usize]) -> Result<Grid<f64>, TargetError> {
        let domain = self.domain();
        assert_eq!(n.len(), domain.len());
        let mut nodes = Vec::with_capacity(domain.len());
        for (k, (&nk, &(a, b))) in n.iter().zip(&domain).enumerate() {
            let a = if k == domain.len() - 1 {
                THETA2_MAX / (2.0 * nk as f64)
            } else {
                a
            };
            nodes.push(
                (0..nk)
                    .map(|i| a + (b - a) * i as f64 / (nk - 1) as f64)
                    .collect(),
            );
        }
        Ok(Grid::from_nodes(nodes)?)
    }

    fn log_density_batch(&self, points: &Matrix<f64>) -> Result<Vec<f64>, TargetError> {
        if points.cols() != self.dim() {
            return Err(TargetError::DimMismatch {
                got: points.cols(),
                want: self.dim(),
            });
        }
        Ok((0..points.rows())
            .map(|l| self.log_density(points.row(l)))
            .collect())
    }

    fn qoi_names(&self) -> Vec<String> {
        vec!["mean_quantile_95".into()]
    }

    /// Per-sample integrand of the mean 95% quantile,
    /// `theta_1 ln^{1/theta_2}(1/0.05)` with `theta_1 = exp(beta_0)` at the
    /// baseline covariate value.
    fn qoi_batch(&self, points: &Matrix<f64>) -> Result<Option<Matrix<f64>>, TargetError> {
        let n = points.rows();
        let mut q = Matrix::zeros(n, 1);
        let log20 = (1.0f64 / 0.05).ln();
        for l in 0..n {
            let row = points.row(l);
            let theta1 = row[0].exp();
            let theta2 = row[self.d_cov + 1];
            q.set(l, 0, theta1 * log20.powf(1.0 / theta2));
        }
        Ok(Some(q))
    }
}

/// Extracts `(theta_1, theta_2)` pairs from posterior samples, with
/// `theta_1 = exp(beta_0)` evaluated at the baseline covariates.
pub fn theta_pairs(points: &Matrix<f64>, covariate_count: usize) -> (Vec<f64>, Vec<f64>) {
    let n = points.rows();
    let mut t1 = Vec::with_capacity(n);
    let mut t2 = Vec::with_capacity(n);
    for l in 0..n {
        t1.push(points.get(l, 0).exp());
        t2.push(points.get(l, covariate_count + 1));
    }
    (t1, t2)
}

/// Weibull CDF `F(t | theta1, theta2)`.
fn weibull_cdf(t: f64, theta1: f64, theta2: f64) -> f64 {
    1.0 - (-(t / theta1).powf(theta2)).exp()
}

/// The two reliability quantities of interest over a sample set: the mean
/// 95% quantile and the 95% quantile of the mean failure distribution.
/// Optional weights give the self-normalized weighted versions.
pub fn shock_qois(
    theta1: &[f64],
    theta2: &[f64],
    weights: Option<&[f64]>,
) -> Result<(f64, f64), TargetError> {
    assert_eq!(theta1.len(), theta2.len());
    let n = theta1.len();
    assert!(n > 0);
    let wsum: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => n as f64,
    };
    if !(wsum > 0.0) {
        return Err(TargetError::QuantileSolve("zero weight mass".into()));
    }
    let wval = |i: usize| weights.map_or(1.0, |w| w[i]);
    let log20 = (1.0f64 / 0.05).ln();
    let mut q1 = 0.0;
    for i in 0..n {
        q1 += wval(i) * theta1[i] * log20.powf(1.0 / theta2[i]);
    }
    q1 /= wsum;

    // Second QoI: t with weighted-mean CDF equal to 0.95, by Newton with a
    // bisection fallback.
    let mean_cdf = |t: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            s += wval(i) * weibull_cdf(t, theta1[i], theta2[i]);
        }
        s / wsum - 0.95
    };
    let mean_pdf = |t: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            s += wval(i) * weibull_log_pdf(t, theta1[i], theta2[i]).exp();
        }
        s / wsum
    };
    let mut t = q1.max(1e-12);
    let mut converged = false;
    for _ in 0..100 {
        let f = mean_cdf(t);
        if f.abs() < 1e-13 {
            converged = true;
            break;
        }
        let df = mean_pdf(t);
        if df <= 0.0 {
            break;
        }
        let step = f / df;
        let tn = t - step;
        if !(tn > 0.0) {
            break;
        }
        if (tn - t).abs() <= 1e-14 * t.abs() {
            t = tn;
            converged = true;
            break;
        }
        t = tn;
    }
    if !converged || mean_cdf(t).abs() > 1e-10 {
        // Bisection fallback on a bracket grown from below.
        let mut lo = 0.0;
        let mut hi = theta1.iter().cloned().fold(1.0f64, f64::max);
        let mut grow = 0;
        while mean_cdf(hi) < 0.0 {
            hi *= 2.0;
            grow += 1;
            if grow > 200 {
                return Err(TargetError::QuantileSolve(
                    "failed to bracket the 95% quantile".into(),
                ));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_cdf(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        t = 0.5 * (lo + hi);
    }
    Ok((q1, t))
}

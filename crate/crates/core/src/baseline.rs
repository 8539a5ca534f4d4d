//! Adaptive random-walk Metropolis with one delayed-rejection stage, the
//! benchmark chain for the TT-based samplers.

use crate::estimators::{iact, ChainResult, TauEstimate};
use crate::linalg::{cholesky, forward_substitute, Matrix};
use crate::targets::{TargetDensity, TargetError};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Estimator(#[from] crate::estimators::EstimatorError),
}

/// Adaptive Metropolis settings.
#[derive(Debug, Clone)]
pub struct AmConfig {
    /// Proposal scale multiplier; 0 selects the standard `2.38^2 / d`.
    pub scale: f64,
    /// Steps before covariance adaptation starts.
    pub warmup: usize,
    /// Steps between Cholesky refreshes of the adapted covariance.
    pub adapt_interval: usize,
    /// Enable covariance adaptation.
    pub adapt: bool,
    /// Covariance shrink factor of the delayed-rejection stage.
    pub dr_shrink: f64,
    /// Enable the delayed-rejection stage.
    pub delayed_rejection: bool,
    /// Fraction of the chain discarded as burn-in.
    pub burn_in_fraction: f64,
    /// Ridge added to the adapted covariance.
    pub epsilon: f64,
    /// Chain start; the box center when empty.
    pub initial_point: Vec<f64>,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            scale: 0.0,
            warmup: 100,
            adapt_interval: 1,
            adapt: true,
            dr_shrink: 0.2,
            delayed_rejection: true,
            burn_in_fraction: 0.25,
            epsilon: 1e-8,
            initial_point: Vec::new(),
        }
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `||L^{-1} v||^2`, the proposal quadratic form.
fn mahalanobis_sq(l: &Matrix<f64>, v: &[f64]) -> f64 {
    let mut w = v.to_vec();
    forward_substitute(l, &mut w);
    w.iter().map(|x| x * x).sum()
}

/// Runs the adaptive random-walk Metropolis chain of length `n` and reports
/// the post-burn-in chain with per-coordinate IACT estimates. Proposals
/// falling outside the target box are rejected through their zero density.
pub fn am_run(
    target: &dyn TargetDensity<f64>,
    cfg: &AmConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Result<ChainResult<f64>, BaselineError> {
    if !(cfg.dr_shrink > 0.0 && cfg.dr_shrink < 1.0) {
        return Err(BaselineError::InvalidConfig(
            "dr_shrink must lie in (0, 1)".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.burn_in_fraction) {
        return Err(BaselineError::InvalidConfig(
            "burn_in_fraction must lie in [0, 1)".into(),
        ));
    }
    if n < 8 {
        return Err(BaselineError::InvalidConfig("chain too short".into()));
    }
    let d = target.dim();
    let domain = target.domain();
    let scale = if cfg.scale > 0.0 {
        cfg.scale
    } else {
        2.38 * 2.38 / d as f64
    };

    let log_pi = |x: &[f64]| -> Result<f64, TargetError> {
        for (k, &v) in x.iter().enumerate() {
            let (a, b) = domain[k];
            if v < a || v > b {
                return Ok(f64::NEG_INFINITY);
            }
        }
        let pts = Matrix::from_vec(1, d, x.to_vec());
        Ok(target.log_density_batch(&pts)?[0])
    };

    let mut x: Vec<f64> = if cfg.initial_point.is_empty() {
        domain.iter().map(|&(a, b)| 0.5 * (a + b)).collect()
    } else {
        if cfg.initial_point.len() != d {
            return Err(BaselineError::InvalidConfig(
                "initial point dimension mismatch".into(),
            ));
        }
        cfg.initial_point.clone()
    };
    let mut lp_x = log_pi(&x)?;

    // Running mean and scatter for the Haario adaptation.
    let mut mean = x.clone();
    let mut m2 = Matrix::zeros(d, d);
    let mut count = 1usize;
    fn update_moments(
        x: &[f64],
        mean: &mut [f64],
        m2: &mut Matrix<f64>,
        count: &mut usize,
    ) {
        let d = x.len();
        *count += 1;
        let mut delta = vec![0.0; d];
        for k in 0..d {
            delta[k] = x[k] - mean[k];
            mean[k] += delta[k] / *count as f64;
        }
        for i in 0..d {
            let di = delta[i];
            for j in 0..d {
                let v = m2.get(i, j) + di * (x[j] - mean[j]);
                m2.set(i, j, v);
            }
        }
    }

    let identity_chol = {
        let mut l = Matrix::zeros(d, d);
        for k in 0..d {
            l.set(k, k, scale.sqrt());
        }
        l
    };
    let mut chol = identity_chol.clone();
    let mut states = Matrix::zeros(n, d);
    let mut accepted = vec![false; n];
    let mut rejects = 0usize;

    for step in 0..n {
        if cfg.adapt && step >= cfg.warmup && step % cfg.adapt_interval == 0 && count > d {
            let mut cov = Matrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    let v = scale * m2.get(i, j) / (count as f64 - 1.0);
                    cov.set(i, j, v + if i == j { cfg.epsilon } else { 0.0 });
                }
            }
            if let Some(l) = cholesky(&cov) {
                chol = l;
            }
            // A failed factorization keeps the previous proposal covariance.
        }

        // Stage one: full-scale Gaussian step.
        let xi: Vec<f64> = (0..d).map(|_| gauss(rng)).collect();
        let mut y1 = x.clone();
        for i in 0..d {
            for j in 0..=i {
                y1[i] += chol.get(i, j) * xi[j];
            }
        }
        let lp_y1 = log_pi(&y1)?;
        let log_a1 = lp_y1 - lp_x;
        let mut moved = false;
        if log_a1 >= 0.0 || (rng.gen_range(0.0f64..1.0)).ln() < log_a1 {
            x = y1;
            lp_x = lp_y1;
            moved = true;
        } else if cfg.delayed_rejection {
            // Stage two: shrunk proposal with the DR acceptance ratio.
            let xi2: Vec<f64> = (0..d).map(|_| gauss(rng)).collect();
            let mut y2 = x.clone();
            for i in 0..d {
                for j in 0..=i {
                    y2[i] += cfg.dr_shrink * chol.get(i, j) * xi2[j];
                }
            }
            let lp_y2 = log_pi(&y2)?;
            if lp_y2 > f64::NEG_INFINITY {
                let a1_rev = (lp_y1 - lp_y2).min(0.0).exp(); // alpha_1(y2, y1)
                let a1_fwd = log_a1.min(0.0).exp(); // alpha_1(x, y1)
                let dv1: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
                let dv0: Vec<f64> = y1.iter().zip(&x).map(|(a, b)| a - b).collect();
                let log_q_ratio =
                    -0.5 * (mahalanobis_sq(&chol, &dv1) - mahalanobis_sq(&chol, &dv0));
                let log_a2 = lp_y2 - lp_x + log_q_ratio
                    + (1.0 - a1_rev).max(f64::MIN_POSITIVE).ln()
                    - (1.0 - a1_fwd).max(f64::MIN_POSITIVE).ln();
                if log_a2 >= 0.0 || (rng.gen_range(0.0f64..1.0)).ln() < log_a2 {
                    x = y2;
                    lp_x = lp_y2;
                    moved = true;
                }
            }
        }
        if !moved {
            rejects += 1;
        }
        accepted[step] = moved;
        states.row_mut(step).copy_from_slice(&x);
        if cfg.adapt {
            update_moments(&x, &mut mean, &mut m2, &mut count);
        }
    }

    // Report the post-burn-in chain.
    let burn = ((n as f64) * cfg.burn_in_fraction) as usize;
    let kept = n - burn;
    let mut out_states = Matrix::zeros(kept, d);
    let mut out_accept = Vec::with_capacity(kept);
    let mut out_rejects = 0usize;
    for l in 0..kept {
        out_states.row_mut(l).copy_from_slice(states.row(burn + l));
        let a = accepted[burn + l];
        out_accept.push(a);
        if !a {
            out_rejects += 1;
        }
    }
    let _ = rejects;
    let mut tau: Vec<TauEstimate> = Vec::with_capacity(d);
    let mut qoi_estimates = Vec::with_capacity(d);
    let mut qoi_std_errors = Vec::with_capacity(d);
    for k in 0..d {
        let series: Vec<f64> = (0..kept).map(|l| out_states.get(l, k)).collect();
        let t = iact(&series)?;
        let mean = series.iter().sum::<f64>() / kept as f64;
        let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (kept as f64 - 1.0);
        qoi_std_errors.push((var * t.tau.max(0.0) / kept as f64).sqrt());
        qoi_estimates.push(mean);
        tau.push(t);
    }
    Ok(ChainResult {
        states: out_states,
        state_index: (0..kept).collect(),
        accepted: out_accept,
        rejection_rate: out_rejects as f64 / kept as f64,
        tau,
        qoi_estimates,
        qoi_std_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    struct StdNormal {
        dim: usize,
    }

    impl TargetDensity<f64> for StdNormal {
        fn dim(&self) -> usize {
            self.dim
        }
        fn domain(&self) -> Vec<(f64, f64)> {
            vec![(-8.0, 8.0); self.dim]
        }
        fn log_density_batch(
            &self,
            points: &Matrix<f64>,
        ) -> Result<Vec<f64>, TargetError> {
            Ok((0..points.rows())
                .map(|l| -0.5 * points.row(l).iter().map(|v| v * v).sum::<f64>())
                .collect())
        }
    }

    #[test]
    fn standard_normal_mean_within_three_standard_errors() {
        let target = StdNormal { dim: 2 };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let chain = am_run(&target, &AmConfig::default(), 40_000, &mut rng).unwrap();
        for k in 0..2 {
            let m = chain.qoi_estimates[k];
            let se = chain.qoi_std_errors[k].max(1e-6);
            assert!(m.abs() <= 3.0 * se, "coordinate {k}: mean {m}, se {se}");
        }
    }

    #[test]
    fn tiny_steps_without_adaptation_accept_almost_always() {
        let target = StdNormal { dim: 2 };
        let cfg = AmConfig {
            adapt: false,
            scale: 1e-8,
            delayed_rejection: false,
            burn_in_fraction: 0.0,
            ..AmConfig::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let chain = am_run(&target, &cfg, 4000, &mut rng).unwrap();
        assert!(chain.rejection_rate < 0.01, "rate {}", chain.rejection_rate);
    }

    #[test]
    fn stationary_on_discrete_toy_target() {
        // Two-humped 1-D target; chain frequencies left/right of zero must
        // match the exact mass split.
        struct TwoHump;
        impl TargetDensity<f64> for TwoHump {
            fn dim(&self) -> usize {
                1
            }
            fn domain(&self) -> Vec<(f64, f64)> {
                vec![(-6.0, 6.0)]
            }
            fn log_density_batch(
                &self,
                points: &Matrix<f64>,
            ) -> Result<Vec<f64>, TargetError> {
                Ok((0..points.rows())
                    .map(|l| {
                        let x = points.get(l, 0);
                        let a = (-0.5 * (x - 1.5).powi(2)).exp();
                        let b = 0.5 * (-0.5 * (x + 1.5).powi(2)).exp();
                        (a + b).ln()
                    })
                    .collect())
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let chain = am_run(&TwoHump, &AmConfig::default(), 200_000, &mut rng).unwrap();
        let n = chain.states.rows();
        let right = (0..n).filter(|&l| chain.states.get(l, 0) > 0.0).count() as f64 / n as f64;
        // Exact mass right of zero for the mixture (2/3 weight on +1.5 hump).
        let phi = |t: f64| 0.5 * (1.0 + libm_erf(t / 2f64.sqrt()));
        let mass_right = (2.0 / 3.0) * (1.0 - phi(-1.5)) + (1.0 / 3.0) * (1.0 - phi(1.5));
        let tau = chain.tau[0].tau.max(1.0);
        let se = (mass_right * (1.0 - mass_right) * tau / n as f64).sqrt();
        assert!(
            (right - mass_right).abs() <= 4.0 * se,
            "right mass {right} vs exact {mass_right} (se {se})"
        );
    }

    // erf via Abramowitz-Stegun 7.1.26; 1e-7 absolute accuracy is enough
    // for the test tolerance above.
    fn libm_erf(x: f64) -> f64 {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }

    #[test]
    fn adapted_covariance_stays_usable_on_degenerate_target() {
        // A ridge target squeezing one coordinate to (numerically) zero
        // variance; the epsilon ridge must keep the chain moving.
        struct Ridge;
        impl TargetDensity<f64> for Ridge {
            fn dim(&self) -> usize {
                2
            }
            fn domain(&self) -> Vec<(f64, f64)> {
                vec![(-5.0, 5.0), (-5.0, 5.0)]
            }
            fn log_density_batch(
                &self,
                points: &Matrix<f64>,
            ) -> Result<Vec<f64>, TargetError> {
                Ok((0..points.rows())
                    .map(|l| {
                        let (x, y) = (points.get(l, 0), points.get(l, 1));
                        -0.5 * (x * x + 1e12 * y * y)
                    })
                    .collect())
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let chain = am_run(&Ridge, &AmConfig::default(), 20_000, &mut rng).unwrap();
        assert!(chain.rejection_rate < 1.0);
        assert!(chain.tau[0].tau.is_finite());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let target = StdNormal { dim: 1 };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let bad = AmConfig {
            dr_shrink: 1.5,
            ..AmConfig::default()
        };
        assert!(am_run(&target, &bad, 1000, &mut rng).is_err());
        let bad = AmConfig {
            burn_in_fraction: 1.0,
            ..AmConfig::default()
        };
        assert!(am_run(&target, &bad, 1000, &mut rng).is_err());
    }

    #[test]
    fn f32_scalar_support_is_not_required_here() {
        // The baseline is an f64 benchmark; this pins the Scalar cast used
        // in reports.
        let v: f64 = <f64 as Scalar>::cast_usize(7);
        assert_eq!(v, 7.0);
    }
}

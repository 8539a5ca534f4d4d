//! Estimators over surrogate sample batches: independence
//! Metropolis-Hastings correction, self-normalized importance weighting
//! (i.i.d. or lattice seeds), two-level control-variate estimators, the
//! integrated autocorrelation time, and the empirical diagnostics behind the
//! rejection-rate and IACT bounds.

use crate::cd::{SampleBatch, SeedKind};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("lattice-seeded batches cannot drive Metropolis-Hastings; use i.i.d. seeds")]
    LatticeSeedsInMh,
    #[error("batch carries no target density values")]
    MissingTarget,
    #[error("all importance weights are zero")]
    AllWeightsZero,
    #[error("series of length {len} too short; need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("size mismatch: {0}")]
    Mismatch(String),
}

/// Integrated autocorrelation time estimate.
#[derive(Debug, Clone, Copy)]
pub struct TauEstimate {
    pub tau: f64,
    /// Number of lag pairs summed by the initial-positive-sequence rule.
    pub pairs_used: usize,
    /// Rough standard error of the estimate.
    pub std_error: f64,
    /// Set when the series was constant and tau was defined as 1.
    pub constant_series: bool,
}

/// Geyer-style IACT: windowed autocorrelation sum with the initial positive
/// sequence cutoff. A constant series reports `tau = 1` with a warning flag.
pub fn iact<T: Scalar>(series: &[T]) -> Result<TauEstimate, EstimatorError> {
    let n = series.len();
    if n < 100 {
        return Err(EstimatorError::SeriesTooShort { len: n, min: 100 });
    }
    let xs: Vec<f64> = series.iter().map(|v| v.to_f64_lossy()).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let gamma = |t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - t {
            s += (xs[i] - mean) * (xs[i + t] - mean);
        }
        s / n as f64
    };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return Ok(TauEstimate {
            tau: 1.0,
            pairs_used: 0,
            std_error: 0.0,
            constant_series: true,
        });
    }
    let mut sum_pairs = 0.0;
    let mut pairs = 0usize;
    let max_pairs = (n - 1) / 2;
    while pairs < max_pairs {
        let t = 2 * pairs;
        let pair = gamma(t) + gamma(t + 1);
        if pairs > 0 && pair <= 0.0 {
            break;
        }
        sum_pairs += pair.max(0.0);
        pairs += 1;
        // Window guard for pathological long plateaus.
        if pairs > 2000 {
            break;
        }
    }
    let tau = 2.0 * sum_pairs / g0 - 1.0;
    let std_error = tau.abs() * ((4.0 * pairs as f64 + 4.0) / n as f64).sqrt();
    Ok(TauEstimate {
        tau,
        pairs_used: pairs,
        std_error,
        constant_series: false,
    })
}

/// Realized Markov chain of the independence sampler.
#[derive(Debug, Clone)]
pub struct ChainResult<T> {
    /// Chain states in order (repeats on rejection).
    pub states: Matrix<T>,
    /// Index of the proposal each chain state came from.
    pub state_index: Vec<usize>,
    /// Per-step acceptance indicators; step 0 is always accepted.
    pub accepted: Vec<bool>,
    /// Rejected steps over chain length.
    pub rejection_rate: f64,
    /// IACT per tracked statistic.
    pub tau: Vec<TauEstimate>,
    /// Chain mean per tracked statistic.
    pub qoi_estimates: Vec<T>,
    /// Standard error `sd * sqrt(tau / N)` per tracked statistic.
    pub qoi_std_errors: Vec<f64>,
}

/// Independence-proposal Metropolis-Hastings over the batch in seed order.
///
/// The acceptance ratio is `pi(x') pistar(x) / (pi(x) pistar(x'))`,
/// evaluated in log space; the first proposal initializes the chain and is
/// always accepted. `stats` are per-proposal statistic values; their
/// realized chain series drive the IACT and mean estimates.
pub fn mh_correct<T: Scalar>(
    batch: &SampleBatch<T>,
    stats: &[Vec<T>],
    rng: &mut impl Rng,
) -> Result<ChainResult<T>, EstimatorError> {
    if batch.seed_kind == SeedKind::Lattice {
        return Err(EstimatorError::LatticeSeedsInMh);
    }
    let log_pi = batch.log_pi.as_ref().ok_or(EstimatorError::MissingTarget)?;
    let n = batch.len();
    if n == 0 {
        return Err(EstimatorError::Mismatch("empty batch".into()));
    }
    for (s, g) in stats.iter().enumerate() {
        if g.len() != n {
            return Err(EstimatorError::Mismatch(format!(
                "statistic {s} has {} values for {n} proposals",
                g.len()
            )));
        }
    }
    let d = batch.dim();
    let mut state_index = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut rejects = 0usize;
    let mut current = 0usize;
    let mut current_logw = log_pi[0] - batch.log_pistar[0];
    state_index.push(0);
    accepted.push(true);
    for l in 1..n {
        let logw = log_pi[l] - batch.log_pistar[l];
        let log_h = logw - current_logw;
        let accept = if log_h >= T::zero() {
            true
        } else {
            let u: f64 = rng.gen_range(0.0..1.0);
            T::from_f64_lossy(u.ln()) < log_h
        };
        if accept {
            current = l;
            current_logw = logw;
        } else {
            rejects += 1;
        }
        state_index.push(current);
        accepted.push(accept);
    }
    let mut states = Matrix::zeros(n, d);
    for (l, &idx) in state_index.iter().enumerate() {
        states.row_mut(l).copy_from_slice(batch.points.row(idx));
    }
    let mut tau = Vec::with_capacity(stats.len());
    let mut qoi_estimates = Vec::with_capacity(stats.len());
    let mut qoi_std_errors = Vec::with_capacity(stats.len());
    for g in stats {
        let series: Vec<T> = state_index.iter().map(|&idx| g[idx]).collect();
        let t = iact(&series)?;
        let mean = series.iter().copied().sum::<T>() / T::cast_usize(n);
        let var = series
            .iter()
            .map(|&v| {
                let dv = (v - mean).to_f64_lossy();
                dv * dv
            })
            .sum::<f64>()
            / (n as f64 - 1.0);
        tau.push(t);
        qoi_estimates.push(mean);
        qoi_std_errors.push((var * t.tau.max(0.0) / n as f64).sqrt());
    }
    Ok(ChainResult {
        states,
        state_index,
        accepted,
        rejection_rate: rejects as f64 / n as f64,
        tau,
        qoi_estimates,
        qoi_std_errors,
    })
}

/// Self-normalized importance estimate of `E_pi g`.
#[derive(Debug, Clone)]
pub struct WeightedEstimate<T> {
    pub estimate: T,
    /// Normalizing estimate, the mean raw weight.
    pub z_tilde: T,
    /// Largest normalized weight observed.
    pub max_weight: f64,
    /// `mean |w/z_tilde - 1|`, the empirical L1 distance between target and
    /// surrogate.
    pub e_l1: f64,
    /// Delta-method standard error of the ratio estimate.
    pub std_error: f64,
    pub n: usize,
}

/// Ratio estimator `(mean g w) / (mean w)`; works for i.i.d. (TT-rIW) and
/// lattice (TT-qIW) seeds alike.
pub fn importance_estimate<T: Scalar>(
    batch: &SampleBatch<T>,
    g: &[T],
) -> Result<WeightedEstimate<T>, EstimatorError> {
    let w = batch.weights().ok_or(EstimatorError::MissingTarget)?;
    let n = batch.len();
    if g.len() != n {
        return Err(EstimatorError::Mismatch(format!(
            "{} statistic values for {n} samples",
            g.len()
        )));
    }
    if n == 0 {
        return Err(EstimatorError::Mismatch("empty batch".into()));
    }
    let z_tilde = w.iter().copied().sum::<T>() / T::cast_usize(n);
    if !(z_tilde > T::zero()) {
        return Err(EstimatorError::AllWeightsZero);
    }
    let gw_mean = g
        .iter()
        .zip(&w)
        .map(|(&gi, &wi)| gi * wi)
        .sum::<T>()
        / T::cast_usize(n);
    let estimate = gw_mean / z_tilde;
    let mut max_weight = 0.0f64;
    let mut e_l1 = 0.0f64;
    let mut var_acc = 0.0f64;
    for (&gi, &wi) in g.iter().zip(&w) {
        let wn = (wi / z_tilde).to_f64_lossy();
        max_weight = max_weight.max(wn);
        e_l1 += (wn - 1.0).abs();
        let resid = wn * (gi - estimate).to_f64_lossy();
        var_acc += resid * resid;
    }
    e_l1 /= n as f64;
    let std_error = (var_acc / (n as f64 - 1.0).max(1.0) / n as f64).sqrt();
    Ok(WeightedEstimate {
        estimate,
        z_tilde,
        max_weight,
        e_l1,
        std_error,
        n,
    })
}

/// Two-level estimate: coarse surrogate expectation plus a corrected
/// difference term.
#[derive(Debug, Clone)]
pub struct TwoLevelEstimate<T> {
    pub estimate: T,
    pub coarse_term: T,
    pub correction_term: T,
    /// Sample variance of the per-sample correction differences.
    pub correction_variance: f64,
    /// Standard error combining both levels.
    pub std_error: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Rejection rate of the fine-level chain (MH variant only).
    pub rejection_rate: Option<f64>,
}

fn mean_and_var<T: Scalar>(xs: &[T]) -> (T, f64) {
    let n = xs.len();
    let mean = xs.iter().copied().sum::<T>() / T::cast_usize(n.max(1));
    let var = if n > 1 {
        xs.iter()
            .map(|&v| {
                let d = (v - mean).to_f64_lossy();
                d * d
            })
            .sum::<f64>()
            / (n as f64 - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Coarse mean of `coarse_gtilde` under the surrogate plus the MH-corrected
/// difference `mean(g(x_MH) - gtilde(x))` over the fine batch.
pub fn two_level_mh<T: Scalar>(
    coarse_gtilde: &[T],
    fine: &SampleBatch<T>,
    fine_g: &[T],
    fine_gtilde: &[T],
    rng: &mut impl Rng,
) -> Result<TwoLevelEstimate<T>, EstimatorError> {
    if coarse_gtilde.is_empty() {
        return Err(EstimatorError::Mismatch("empty coarse level".into()));
    }
    if fine_g.len() != fine.len() || fine_gtilde.len() != fine.len() {
        return Err(EstimatorError::Mismatch(
            "fine statistic lengths differ from the batch".into(),
        ));
    }
    let chain = mh_correct(fine, &[], rng)?;
    let diffs: Vec<T> = chain
        .state_index
        .iter()
        .zip(fine_gtilde)
        .map(|(&idx, &gt)| fine_g[idx] - gt)
        .collect();
    let (coarse, coarse_var) = mean_and_var(coarse_gtilde);
    let (corr, corr_var) = mean_and_var(&diffs);
    let std_error = (coarse_var / coarse_gtilde.len() as f64
        + corr_var / fine.len() as f64)
        .sqrt();
    Ok(TwoLevelEstimate {
        estimate: coarse + corr,
        coarse_term: coarse,
        correction_term: corr,
        correction_variance: corr_var,
        std_error,
        n_coarse: coarse_gtilde.len(),
        n_fine: fine.len(),
        rejection_rate: Some(chain.rejection_rate),
    })
}

/// Coarse mean plus the importance-corrected difference
/// `mean(g w / z_tilde - gtilde)`; QMC seeds are allowed on both levels.
pub fn two_level_iw<T: Scalar>(
    coarse_gtilde: &[T],
    fine: &SampleBatch<T>,
    fine_g: &[T],
    fine_gtilde: &[T],
) -> Result<TwoLevelEstimate<T>, EstimatorError> {
    if coarse_gtilde.is_empty() {
        return Err(EstimatorError::Mismatch("empty coarse level".into()));
    }
    if fine_g.len() != fine.len() || fine_gtilde.len() != fine.len() {
        return Err(EstimatorError::Mismatch(
            "fine statistic lengths differ from the batch".into(),
        ));
    }
    let w = fine.weights().ok_or(EstimatorError::MissingTarget)?;
    let n = fine.len();
    let z_tilde = w.iter().copied().sum::<T>() / T::cast_usize(n);
    if !(z_tilde > T::zero()) {
        return Err(EstimatorError::AllWeightsZero);
    }
    let diffs: Vec<T> = fine_g
        .iter()
        .zip(&w)
        .zip(fine_gtilde)
        .map(|((&gi, &wi), &gt)| gi * wi / z_tilde - gt)
        .collect();
    let (coarse, coarse_var) = mean_and_var(coarse_gtilde);
    let (corr, corr_var) = mean_and_var(&diffs);
    let std_error = (coarse_var / coarse_gtilde.len() as f64 + corr_var / n as f64).sqrt();
    Ok(TwoLevelEstimate {
        estimate: coarse + corr,
        coarse_term: coarse,
        correction_term: corr,
        correction_variance: corr_var,
        std_error,
        n_coarse: coarse_gtilde.len(),
        n_fine: n,
        rejection_rate: None,
    })
}

/// Empirical quantities behind the rejection-rate and IACT bounds.
#[derive(Debug, Clone, Copy)]
pub struct LemmaDiagnostics {
    /// `mean |w/z_tilde - 1|`, estimating the L1 error of the surrogate.
    pub e_l1: f64,
    /// Largest normalized weight observed (an underestimate of `w*`).
    pub max_weight: f64,
    pub rejection_rate: f64,
    /// `(1 + a) / (1 - a)` with `a = 1 - 1/max_weight`.
    pub tau_bound: f64,
    /// Monte Carlo standard error of the rejection rate.
    pub rejection_std_error: f64,
}

/// Runs the independence chain on the batch and reports the weight
/// diagnostics next to the measured rejection rate.
pub fn lemma_diagnostics<T: Scalar>(
    batch: &SampleBatch<T>,
    rng: &mut impl Rng,
) -> Result<LemmaDiagnostics, EstimatorError> {
    let w = batch.weights().ok_or(EstimatorError::MissingTarget)?;
    let n = batch.len();
    let z_tilde = w.iter().copied().sum::<T>() / T::cast_usize(n.max(1));
    if !(z_tilde > T::zero()) {
        return Err(EstimatorError::AllWeightsZero);
    }
    let mut e_l1 = 0.0;
    let mut max_weight = 0.0f64;
    for &wi in &w {
        let wn = (wi / z_tilde).to_f64_lossy();
        e_l1 += (wn - 1.0).abs();
        max_weight = max_weight.max(wn);
    }
    e_l1 /= n as f64;
    let chain = mh_correct(batch, &[], rng)?;
    let a = 1.0 - 1.0 / max_weight;
    let tau_bound = if a < 1.0 { (1.0 + a) / (1.0 - a) } else { f64::INFINITY };
    let p = chain.rejection_rate;
    Ok(LemmaDiagnostics {
        e_l1,
        max_weight,
        rejection_rate: p,
        tau_bound,
        rejection_std_error: (p * (1.0 - p) / n as f64).sqrt(),
    })
}

/// JSON-serializable estimate record shared by all methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Method tag: TT-MH | TT-rIW | TT-qIW | TT-MH-2L | TT-qIW-2L | DRAM.
    pub method: String,
    pub n: usize,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_l1: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn batch_from(
        points: Vec<f64>,
        d: usize,
        log_pistar: Vec<f64>,
        log_pi: Vec<f64>,
        kind: SeedKind,
    ) -> SampleBatch<f64> {
        let n = log_pistar.len();
        SampleBatch {
            seeds: Matrix::zeros(n, d),
            points: Matrix::from_vec(n, d, points),
            log_pistar,
            log_pi: Some(log_pi),
            seed_kind: kind,
        }
    }

    #[test]
    fn exact_proposal_never_rejects() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let n = 500;
        let lp: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        // pi = pistar up to a constant shift; h is identically 1.
        let shifted: Vec<f64> = lp.iter().map(|v| v + 3.7).collect();
        let batch = batch_from(
            (0..n).map(|i| i as f64).collect(),
            1,
            lp,
            shifted,
            SeedKind::Iid,
        );
        let chain = mh_correct(&batch, &[], &mut rng).unwrap();
        assert_eq!(chain.rejection_rate, 0.0);
        assert!(chain.accepted.iter().all(|&a| a));
    }

    #[test]
    fn ratio_two_to_one_always_accepts() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let batch = batch_from(
            vec![0.0, 1.0],
            1,
            vec![0.0, 0.0],
            vec![0.0, (2.0f64).ln()],
            SeedKind::Iid,
        );
        let chain = mh_correct(&batch, &[], &mut rng).unwrap();
        assert!(chain.accepted[1]);
        assert_eq!(chain.state_index, vec![0, 1]);
    }

    #[test]
    fn lattice_seeds_are_rejected_by_mh() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let batch = batch_from(
            vec![0.0, 1.0],
            1,
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            SeedKind::Lattice,
        );
        assert!(matches!(
            mh_correct(&batch, &[], &mut rng),
            Err(EstimatorError::LatticeSeedsInMh)
        ));
    }

    #[test]
    fn two_state_chain_matches_exact_stationary_distribution() {
        // Discrete analogue: proposals drawn from pstar on {0, 1}, target pi.
        let pstar = [0.7f64, 0.3];
        let pi = [0.3f64, 0.7];
        let n = 200_000;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut states = Vec::with_capacity(n);
        let mut lps = Vec::with_capacity(n);
        let mut lp = Vec::with_capacity(n);
        for _ in 0..n {
            let s = if rng.gen_range(0.0..1.0) < pstar[0] { 0 } else { 1 };
            states.push(s as f64);
            lps.push(pstar[s].ln());
            lp.push(pi[s].ln());
        }
        let batch = batch_from(states, 1, lps, lp, SeedKind::Iid);
        let chain = mh_correct(&batch, &[], &mut rng).unwrap();
        // Exact stationary distribution of the 2x2 independence kernel:
        // K(i, j) = pstar_j min(1, w_j / w_i), solved directly.
        let w = [pi[0] / pstar[0], pi[1] / pstar[1]];
        let k01 = pstar[1] * (w[1] / w[0]).min(1.0);
        let k10 = pstar[0] * (w[0] / w[1]).min(1.0);
        let exact0 = k10 / (k01 + k10);
        assert!((exact0 - pi[0]).abs() < 1e-12, "kernel solve sanity");
        let mut count0 = 0usize;
        for l in 0..n {
            if chain.states.get(l, 0) == 0.0 {
                count0 += 1;
            }
        }
        let freq0 = count0 as f64 / n as f64;
        // Allow for chain correlation in the binomial error bar.
        let tau = iact(&chain.state_index.iter().map(|&i| batch.points.get(i, 0)).collect::<Vec<_>>())
            .unwrap()
            .tau
            .max(1.0);
        let se = (exact0 * (1.0 - exact0) * tau / n as f64).sqrt();
        assert!(
            (freq0 - exact0).abs() <= 3.0 * se,
            "freq {freq0} vs exact {exact0} (se {se})"
        );
    }

    #[test]
    fn importance_unit_weights_is_plain_average() {
        let g: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let batch = batch_from(
            g.clone(),
            1,
            vec![0.5; 50],
            vec![0.5; 50],
            SeedKind::Iid,
        );
        let est = importance_estimate(&batch, &g).unwrap();
        let mean = g.iter().sum::<f64>() / 50.0;
        assert!((est.estimate - mean).abs() < 1e-12);
        assert!((est.z_tilde - 1.0).abs() < 1e-12);
        assert!(est.e_l1 < 1e-12);
    }

    #[test]
    fn importance_constant_statistic_cancels_weights() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n = 100;
        let lps: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lp: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch = batch_from(vec![0.0; n], 1, lps, lp, SeedKind::Iid);
        let g = vec![2.5; n];
        let est = importance_estimate(&batch, &g).unwrap();
        assert!((est.estimate - 2.5).abs() < 1e-12);
    }

    #[test]
    fn importance_recovers_triangle_mean() {
        // pistar uniform on [0,1], pi = 2x, g = x: E_pi g = 2/3.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 100_000;
        let mut pts = Vec::with_capacity(n);
        let mut lps = Vec::with_capacity(n);
        let mut lp = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.gen_range(0.0..1.0);
            pts.push(x);
            lps.push(0.0);
            lp.push((2.0 * x).max(1e-300).ln());
        }
        let g = pts.clone();
        let batch = batch_from(pts, 1, lps, lp, SeedKind::Iid);
        let est = importance_estimate(&batch, &g).unwrap();
        assert!(
            (est.estimate - 2.0 / 3.0).abs() <= 3.0 * est.std_error,
            "estimate {} se {}",
            est.estimate,
            est.std_error
        );
    }

    #[test]
    fn two_level_mh_zero_correction_when_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let n = 300;
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let lps: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).cos()).collect();
        let batch = batch_from(pts.clone(), 1, lps.clone(), lps.clone(), SeedKind::Iid);
        let g = pts.clone();
        let res = two_level_mh(&g, &batch, &g, &g, &mut rng).unwrap();
        assert_eq!(res.correction_term, 0.0);
        assert_eq!(res.correction_variance, 0.0);
        assert_eq!(res.rejection_rate, Some(0.0));
    }

    #[test]
    fn two_level_mh_reduces_to_plain_mh_when_gtilde_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 500;
        let mut pts = Vec::with_capacity(n);
        let mut lp = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.gen_range(0.0..1.0);
            pts.push(x);
            lp.push((0.5 + x).ln());
        }
        let lps = vec![0.0; n];
        let batch = batch_from(pts.clone(), 1, lps, lp, SeedKind::Iid);
        let zeros = vec![0.0; n];
        let mut rng_a = ChaCha12Rng::seed_from_u64(8);
        let mut rng_b = ChaCha12Rng::seed_from_u64(8);
        let res = two_level_mh(&zeros, &batch, &pts, &zeros, &mut rng_a).unwrap();
        let chain = mh_correct(&batch, &[pts.clone()], &mut rng_b).unwrap();
        assert!((res.estimate - chain.qoi_estimates[0]).abs() < 1e-14);
    }

    #[test]
    fn two_level_iw_identities() {
        let n = 200;
        let pts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let lps = vec![0.0; n];
        let batch = batch_from(pts.clone(), 1, lps.clone(), lps.clone(), SeedKind::Lattice);
        // w = 1 and gtilde = g: correction is exactly zero.
        let res = two_level_iw(&pts, &batch, &pts, &pts).unwrap();
        assert_eq!(res.correction_term, 0.0);
        // N1 = N0 and gtilde = 0 reduces to the importance estimate.
        let zeros = vec![0.0; n];
        let res = two_level_iw(&zeros, &batch, &pts, &zeros).unwrap();
        let imp = importance_estimate(&batch, &pts).unwrap();
        assert!((res.estimate - imp.estimate).abs() < 1e-14);
    }

    #[test]
    fn two_level_variance_reduction_on_correlated_pair() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 20_000;
        let mut pts = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        let mut gt = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let noise: f64 = rng.gen_range(-0.05..0.05);
            pts.push(x);
            g.push(x * x + noise);
            gt.push(x * x); // corr(g, gtilde) > 0.9 by construction
        }
        let lps = vec![0.0; n];
        let batch = batch_from(pts, 1, lps.clone(), lps.clone(), SeedKind::Iid);
        let res = two_level_mh(&gt, &batch, &g, &gt, &mut rng).unwrap();
        let (_, var_g) = mean_and_var(&g);
        assert!(
            res.correction_variance < var_g,
            "correction variance {} should beat raw variance {var_g}",
            res.correction_variance
        );
    }

    #[test]
    fn iact_iid_near_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let t = iact(&xs).unwrap();
        assert!((t.tau - 1.0).abs() <= 0.1, "tau {}", t.tau);
    }

    #[test]
    fn iact_ar1_matches_analytic() {
        // AR(1) with rho = 0.5: tau = (1 + rho) / (1 - rho) = 3.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let rho = 0.5;
        let n = 1_000_000;
        let mut xs = Vec::with_capacity(n);
        let mut x = 0.0f64;
        let sigma = (1.0 - rho * rho_f64(rho)).sqrt();
        for _ in 0..n {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            x = rho * x + sigma * z;
            xs.push(x);
        }
        let t = iact(&xs).unwrap();
        assert!((t.tau - 3.0).abs() <= 0.3, "tau {}", t.tau);
    }

    fn rho_f64(r: f64) -> f64 {
        r
    }

    #[test]
    fn iact_alternating_is_antithetic() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let t = iact(&xs).unwrap();
        assert!(t.tau < 1.0);
    }

    #[test]
    fn iact_constant_series_reports_warning() {
        let xs = vec![2.0f64; 500];
        let t = iact(&xs).unwrap();
        assert_eq!(t.tau, 1.0);
        assert!(t.constant_series);
    }

    #[test]
    fn iact_short_series_errors() {
        let xs = vec![1.0f64; 50];
        assert!(matches!(
            iact(&xs),
            Err(EstimatorError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn lemma_diagnostics_exact_surrogate() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let n = 5000;
        let lps: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let batch = batch_from(
            (0..n).map(|i| i as f64).collect(),
            1,
            lps.clone(),
            lps.clone(),
            SeedKind::Iid,
        );
        let d = lemma_diagnostics(&batch, &mut rng).unwrap();
        assert!(d.e_l1 < 1e-12);
        assert_eq!(d.rejection_rate, 0.0);
        assert!((d.max_weight - 1.0).abs() < 1e-12);
        assert!((d.tau_bound - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lemma_bound_and_monotonicity_under_perturbation() {
        // pistar uniform; pi = 1 + amp * sin(2 pi x). L1 distance = 2 amp / pi.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut results = Vec::new();
        for &amp in &[0.05f64, 0.1] {
            let lp: Vec<f64> = xs
                .iter()
                .map(|&x| (1.0 + amp * (2.0 * std::f64::consts::PI * x).sin()).ln())
                .collect();
            let batch = batch_from(xs.clone(), 1, vec![0.0; n], lp, SeedKind::Iid);
            let diag = lemma_diagnostics(&batch, &mut rng).unwrap();
            // Quadrature oracle for the L1 error of this perturbation.
            let l1_exact = 2.0 * amp / std::f64::consts::PI;
            assert!((diag.e_l1 - l1_exact).abs() < 0.1 * l1_exact + 3e-3);
            assert!(
                diag.rejection_rate <= 2.0 * diag.e_l1 + 3.0 * diag.rejection_std_error,
                "rate {} bound {}",
                diag.rejection_rate,
                2.0 * diag.e_l1
            );
            results.push(diag);
        }
        assert!(results[1].e_l1 > results[0].e_l1);
        assert!(results[1].rejection_rate > results[0].rejection_rate);
    }

    #[test]
    fn report_serializes_with_method_tag() {
        let r = EstimateReport {
            method: "TT-qIW".into(),
            n: 1024,
            estimate: 0.5,
            std_error: Some(0.01),
            tau: None,
            rejection_rate: None,
            e_l1: Some(0.002),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"method\":\"TT-qIW\""));
        assert!(!s.contains("tau"));
    }
}

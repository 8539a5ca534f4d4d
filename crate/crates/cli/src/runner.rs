//! Experiment driver: builds one TT surrogate per repetition, runs the
//! configured estimators, and writes machine-readable records.
//!
//! Outputs in the experiment directory:
//! - `runs.jsonl`: one JSON record per (repetition, method); deterministic
//!   for a fixed config and seed.
//! - `study.csv`: aggregated rows per (method, QoI); deterministic.
//! - `timings.jsonl`: per-repetition wall-clock phase breakdown (cross
//!   build | CD sampling | target evaluation | estimation); inherently
//!   machine-dependent, kept out of the deterministic files.

use crate::config::ExperimentConfig;
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;
use ttpdf::cd::{CdSampler, SampleBatch, SeedKind};
use ttpdf::cross::{cross_approximate, CrossConfig, CrossResult};
use ttpdf::estimators::{importance_estimate, mh_correct, two_level_iw, two_level_mh};
use ttpdf::linalg::Matrix;
use ttpdf::qmc::{load_or_build, LatticeRule};
use ttpdf::targets::diffusion::{DiffusionConfig, DiffusionModel};
use ttpdf::targets::shock::{shock_qois, theta_pairs};
use ttpdf::targets::{
    pilot_log_shift, DensityGridTarget, RosenbrockDensity, ShockAbsorberModel, TargetDensity,
    TargetError,
};
use ttpdf::tt::{Grid, TtTensor};

/// Target instances the CLI can drive.
pub enum TargetKind {
    Shock(ShockAbsorberModel),
    Rosenbrock(RosenbrockDensity),
    Diffusion(DiffusionModel),
}

impl TargetKind {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let p = &cfg.target_params;
        Ok(match cfg.experiment.target.as_str() {
            "shock" => TargetKind::Shock(ShockAbsorberModel::new(
                p.covariates,
                p.covariate_seed,
            )),
            "rosenbrock" => TargetKind::Rosenbrock(RosenbrockDensity::new(p.dim)),
            "diffusion" => TargetKind::Diffusion(
                DiffusionModel::new(DiffusionConfig {
                    mesh_exp: p.mesh_exp,
                    dim: p.dim,
                    nu: p.nu,
                    sigma_n_sq: p.sigma_n2,
                    theta0: p.theta0,
                    m_obs: p.m_obs,
                    noise_seed: p.noise_seed,
                    zero_noise: false,
                })
                .map_err(|e| anyhow!("building diffusion model: {e}"))?,
            ),
            other => bail!("experiment.target: unsupported target {other}"),
        })
    }

    pub fn as_dyn(&self) -> &dyn TargetDensity<f64> {
        match self {
            TargetKind::Shock(m) => m,
            TargetKind::Rosenbrock(m) => m,
            TargetKind::Diffusion(m) => m,
        }
    }
}

/// Counts unnormalized-density evaluations flowing into a wrapped target.
struct CountingTarget<'a> {
    inner: &'a dyn TargetDensity<f64>,
    count: AtomicU64,
}

impl<'a> CountingTarget<'a> {
    fn new(inner: &'a dyn TargetDensity<f64>) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    fn taken(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl TargetDensity<f64> for CountingTarget<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        self.inner.domain()
    }
    fn grid(&self, n: &[usize]) -> Result<Grid<f64>, TargetError> {
        self.inner.grid(n)
    }
    fn log_density_batch(&self, points: &Matrix<f64>) -> Result<Vec<f64>, TargetError> {
        self.count.fetch_add(points.rows() as u64, Ordering::Relaxed);
        self.inner.log_density_batch(points)
    }
    fn qoi_names(&self) -> Vec<String> {
        self.inner.qoi_names()
    }
    fn qoi_batch(&self, points: &Matrix<f64>) -> Result<Option<Matrix<f64>>, TargetError> {
        self.inner.qoi_batch(points)
    }
}

/// One record per (repetition, method).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub rep: usize,
    pub method: String,
    pub n_samples: usize,
    pub estimates: BTreeMap<String, f64>,
    pub std_errors: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_l1: Option<f64>,
    pub cross_evaluations: u64,
    pub cross_max_rank: usize,
    pub cross_converged: bool,
    pub target_evaluations: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepTimings {
    pub rep: usize,
    pub cross_build_s: f64,
    pub cd_sampling_s: f64,
    pub target_evaluation_s: f64,
    pub estimation_s: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub method: String,
    pub qoi: String,
    pub n_samples: usize,
    pub repetitions: usize,
    pub mean_estimate: f64,
    /// Average relative spread of the estimate across repetitions; `None`
    /// with a single repetition.
    pub e_q: Option<f64>,
    pub mean_std_error: f64,
    pub mean_tau: Option<f64>,
    pub mean_rejection_rate: Option<f64>,
    pub mean_e_l1: Option<f64>,
    /// Relative empirical standard deviation of the TT iterates.
    pub e_tt: Option<f64>,
}

pub struct StudyOutcome {
    pub records: Vec<RunRecord>,
    pub timings: Vec<RepTimings>,
    pub aggregates: Vec<AggregateRow>,
}

fn derived_seed(base: u64, rep: usize, stream: u64) -> u64 {
    base.wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add((rep as u64) << 8)
        .wrapping_add(stream)
}

struct MethodOutcome {
    estimates: BTreeMap<String, f64>,
    std_errors: BTreeMap<String, f64>,
    tau: Option<f64>,
    rejection_rate: Option<f64>,
    e_l1: Option<f64>,
}

fn weights_e_l1(batch: &SampleBatch<f64>) -> Option<f64> {
    let w = batch.weights()?;
    let z: f64 = w.iter().sum::<f64>() / w.len() as f64;
    if !(z > 0.0) {
        return None;
    }
    Some(w.iter().map(|v| (v / z - 1.0).abs()).sum::<f64>() / w.len() as f64)
}

/// Per-sample QoI table plus names for a target.
fn qoi_table(
    target: &dyn TargetDensity<f64>,
    points: &Matrix<f64>,
) -> Result<(Vec<String>, Matrix<f64>)> {
    let names = target.qoi_names();
    let table = target
        .qoi_batch(points)
        .map_err(|e| anyhow!("QoI evaluation: {e}"))?
        .ok_or_else(|| anyhow!("target reports no quantities of interest"))?;
    Ok((names, table))
}

fn attach(
    batch: &mut SampleBatch<f64>,
    target: &dyn TargetDensity<f64>,
    shift: f64,
) -> Result<()> {
    ttpdf::targets::attach_target(batch, target, shift).map_err(|e| anyhow!("{e}"))
}

/// Shock-absorber extras: the 95% quantile of the mean failure distribution
/// over the given states (optionally weighted).
fn shock_extra(
    cfg: &ExperimentConfig,
    points: &Matrix<f64>,
    weights: Option<&[f64]>,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    if cfg.experiment.target != "shock" {
        return Ok(());
    }
    let (t1, t2) = theta_pairs(points, cfg.target_params.covariates);
    let (_, q2) = shock_qois(&t1, &t2, weights).map_err(|e| anyhow!("{e}"))?;
    out.insert("quantile_95_of_mean".into(), q2);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    method: &str,
    cfg: &ExperimentConfig,
    target: &dyn TargetDensity<f64>,
    sampler: &CdSampler<f64>,
    shift: f64,
    rep: usize,
    lattice_dir: &Path,
    time_sampling: &mut f64,
    time_target: &mut f64,
    time_estimation: &mut f64,
) -> Result<MethodOutcome> {
    let d = sampler.dim();
    let n = cfg.experiment.n_samples;
    let base = cfg.experiment.seed;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(derived_seed(base, rep, 11));
    use rand::Rng;
    use rand::SeedableRng;

    let iid_seeds = |rng: &mut rand_chacha::ChaCha12Rng, count: usize| {
        Matrix::from_fn(count, d, |_, _| rng.gen_range(0.0..1.0))
    };
    let lattice_seeds = |count: usize, shift_seed: u64| -> Result<Matrix<f64>> {
        let path = lattice_dir.join(format!("lattice_d{d}_n{count}.txt"));
        let gv = load_or_build(&path, d, count as u64).map_err(|e| anyhow!("{e}"))?;
        let rule = LatticeRule::new(gv.z, gv.n, shift_seed).map_err(|e| anyhow!("{e}"))?;
        Ok(rule.points())
    };

    let transform_timed =
        |seeds: &Matrix<f64>, kind: SeedKind, time_sampling: &mut f64| -> Result<SampleBatch<f64>> {
            let t = Instant::now();
            let batch = sampler.transform(seeds, kind).map_err(|e| anyhow!("{e}"))?;
            *time_sampling += t.elapsed().as_secs_f64();
            Ok(batch)
        };

    match method {
        "tt-mh" | "tt-riw" => {
            let seeds = iid_seeds(&mut rng, n);
            let mut batch = transform_timed(&seeds, SeedKind::Iid, time_sampling)?;
            let t = Instant::now();
            attach(&mut batch, target, shift)?;
            let (names, qois) = qoi_table(target, &batch.points)?;
            *time_target += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let outcome = if method == "tt-mh" {
                let stats: Vec<Vec<f64>> = (0..qois.cols())
                    .map(|c| (0..n).map(|l| qois.get(l, c)).collect())
                    .collect();
                let chain = mh_correct(&batch, &stats, &mut rng).map_err(|e| anyhow!("{e}"))?;
                let mut estimates = BTreeMap::new();
                let mut std_errors = BTreeMap::new();
                for (i, name) in names.iter().enumerate() {
                    estimates.insert(name.clone(), chain.qoi_estimates[i]);
                    std_errors.insert(name.clone(), chain.qoi_std_errors[i]);
                }
                shock_extra(cfg, &chain.states, None, &mut estimates)?;
                let tau = chain.tau.iter().map(|t| t.tau).fold(f64::NAN, f64::max);
                MethodOutcome {
                    estimates,
                    std_errors,
                    tau: if tau.is_nan() { None } else { Some(tau) },
                    rejection_rate: Some(chain.rejection_rate),
                    e_l1: weights_e_l1(&batch),
                }
            } else {
                let mut estimates = BTreeMap::new();
                let mut std_errors = BTreeMap::new();
                let mut e_l1 = None;
                for (i, name) in names.iter().enumerate() {
                    let g: Vec<f64> = (0..n).map(|l| qois.get(l, i)).collect();
                    let est = importance_estimate(&batch, &g).map_err(|e| anyhow!("{e}"))?;
                    estimates.insert(name.clone(), est.estimate);
                    std_errors.insert(name.clone(), est.std_error);
                    e_l1 = Some(est.e_l1);
                }
                let w = batch.weights().unwrap_or_default();
                shock_extra(cfg, &batch.points, Some(&w), &mut estimates)?;
                MethodOutcome {
                    estimates,
                    std_errors,
                    tau: None,
                    rejection_rate: None,
                    e_l1,
                }
            };
            *time_estimation += t.elapsed().as_secs_f64();
            Ok(outcome)
        }
        "tt-qiw" => {
            let seeds = lattice_seeds(n, derived_seed(base, rep, 13))?;
            let mut batch = transform_timed(&seeds, SeedKind::Lattice, time_sampling)?;
            let t = Instant::now();
            attach(&mut batch, target, shift)?;
            let (names, qois) = qoi_table(target, &batch.points)?;
            *time_target += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let mut estimates = BTreeMap::new();
            let mut std_errors = BTreeMap::new();
            let mut e_l1 = None;
            for (i, name) in names.iter().enumerate() {
                let g: Vec<f64> = (0..n).map(|l| qois.get(l, i)).collect();
                let est = importance_estimate(&batch, &g).map_err(|e| anyhow!("{e}"))?;
                estimates.insert(name.clone(), est.estimate);
                std_errors.insert(name.clone(), est.std_error);
                e_l1 = Some(est.e_l1);
            }
            let w = batch.weights().unwrap_or_default();
            shock_extra(cfg, &batch.points, Some(&w), &mut estimates)?;
            *time_estimation += t.elapsed().as_secs_f64();
            Ok(MethodOutcome {
                estimates,
                std_errors,
                tau: None,
                rejection_rate: None,
                e_l1,
            })
        }
        "tt-mh-2l" | "tt-qiw-2l" => {
            let (n0, n1) = cfg.two_level_sizes();
            let qmc = method == "tt-qiw-2l";
            // Coarse level: surrogate expectation of g; QMC seeds are fine
            // on this level for either variant.
            let coarse_seeds = if qmc {
                lattice_seeds(n0, derived_seed(base, rep, 17))?
            } else {
                iid_seeds(&mut rng, n0)
            };
            let coarse = transform_timed(
                &coarse_seeds,
                if qmc { SeedKind::Lattice } else { SeedKind::Iid },
                time_sampling,
            )?;
            let t = Instant::now();
            let (names, coarse_qois) = qoi_table(target, &coarse.points)?;
            *time_target += t.elapsed().as_secs_f64();

            let fine_seeds = if qmc {
                lattice_seeds(n1, derived_seed(base, rep, 19))?
            } else {
                iid_seeds(&mut rng, n1)
            };
            let mut fine = transform_timed(
                &fine_seeds,
                if qmc { SeedKind::Lattice } else { SeedKind::Iid },
                time_sampling,
            )?;
            let t = Instant::now();
            attach(&mut fine, target, shift)?;
            let (_, fine_qois) = qoi_table(target, &fine.points)?;
            *time_target += t.elapsed().as_secs_f64();

            let t = Instant::now();
            let mut estimates = BTreeMap::new();
            let mut std_errors = BTreeMap::new();
            let mut rejection = None;
            for (i, name) in names.iter().enumerate() {
                let coarse_g: Vec<f64> = (0..n0).map(|l| coarse_qois.get(l, i)).collect();
                let fine_g: Vec<f64> = (0..n1).map(|l| fine_qois.get(l, i)).collect();
                let est = if qmc {
                    two_level_iw(&coarse_g, &fine, &fine_g, &fine_g)
                        .map_err(|e| anyhow!("{e}"))?
                } else {
                    two_level_mh(&coarse_g, &fine, &fine_g, &fine_g, &mut rng)
                        .map_err(|e| anyhow!("{e}"))?
                };
                rejection = est.rejection_rate.or(rejection);
                estimates.insert(name.clone(), est.estimate);
                std_errors.insert(name.clone(), est.std_error);
            }
            *time_estimation += t.elapsed().as_secs_f64();
            Ok(MethodOutcome {
                estimates,
                std_errors,
                tau: None,
                rejection_rate: rejection,
                e_l1: weights_e_l1(&fine),
            })
        }
        "dram" => {
            let t = Instant::now();
            let am_cfg = ttpdf::baseline::AmConfig::default();
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(derived_seed(base, rep, 23));
            let chain =
                ttpdf::baseline::am_run(target, &am_cfg, n, &mut rng).map_err(|e| anyhow!("{e}"))?;
            *time_target += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let (names, qois) = qoi_table(target, &chain.states)?;
            let kept = chain.states.rows();
            let mut estimates = BTreeMap::new();
            let mut std_errors = BTreeMap::new();
            let mut tau_max = f64::NAN;
            for (i, name) in names.iter().enumerate() {
                let series: Vec<f64> = (0..kept).map(|l| qois.get(l, i)).collect();
                let mean = series.iter().sum::<f64>() / kept as f64;
                let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (kept as f64 - 1.0);
                let tau = ttpdf::estimators::iact(&series)
                    .map(|t| t.tau)
                    .unwrap_or(f64::NAN);
                tau_max = tau_max.max(tau);
                estimates.insert(name.clone(), mean);
                std_errors.insert(
                    name.clone(),
                    (var * tau.max(1.0) / kept as f64).sqrt(),
                );
            }
            shock_extra(cfg, &chain.states, None, &mut estimates)?;
            for t_coord in &chain.tau {
                tau_max = tau_max.max(t_coord.tau);
            }
            *time_estimation += t.elapsed().as_secs_f64();
            Ok(MethodOutcome {
                estimates,
                std_errors,
                tau: if tau_max.is_nan() { None } else { Some(tau_max) },
                rejection_rate: Some(chain.rejection_rate),
                e_l1: None,
            })
        }
        other => bail!("experiment.methods: unsupported method {other}"),
    }
}

fn grid_for(cfg: &ExperimentConfig, target: &TargetKind) -> Result<Grid<f64>> {
    let d = cfg.dim();
    let sizes: Vec<usize> = if cfg.tt.grid_n.is_empty() {
        match target {
            TargetKind::Rosenbrock(m) => m.reference_grid_sizes(),
            _ => vec![32; d],
        }
    } else if cfg.tt.grid_n.len() == 1 {
        vec![cfg.tt.grid_n[0]; d]
    } else if cfg.tt.grid_n.len() == d {
        cfg.tt.grid_n.clone()
    } else {
        bail!(
            "tt.grid_n: expected 1 or {d} entries, got {}",
            cfg.tt.grid_n.len()
        );
    };
    target
        .as_dyn()
        .grid(&sizes)
        .map_err(|e| anyhow!("building grid: {e}"))
}

/// Runs the experiment and writes `runs.jsonl`, `study.csv` and
/// `timings.jsonl` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    cfg.validate()?;
    let out_dir = Path::new(&cfg.experiment.output_dir);
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let target = TargetKind::from_config(cfg)?;
    let grid = grid_for(cfg, &target)?;
    let shift = pilot_log_shift(target.as_dyn(), 512).map_err(|e| anyhow!("{e}"))?;
    let reps = cfg.experiment.repetitions;

    let rep_results: Vec<Result<(Vec<RunRecord>, RepTimings, Option<TtTensor<f64>>)>> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<_> {
            let wall = Instant::now();
            let counting = CountingTarget::new(target.as_dyn());
            let mut time_cross = 0.0;
            let mut time_sampling = 0.0;
            let mut time_target = 0.0;
            let mut time_estimation = 0.0;

            let t = Instant::now();
            let grid_target = DensityGridTarget::new(&counting, grid.clone(), shift)
                .map_err(|e| anyhow!("{e}"))?;
            let ccfg = CrossConfig {
                init_rank: cfg.tt.init_rank,
                enrichment: cfg.tt.enrichment,
                tol: cfg.tt.delta,
                max_iters: cfg.tt.max_iters,
                max_rank: cfg.tt.max_rank,
                eval_budget: cfg.tt.eval_budget,
                seed: derived_seed(cfg.experiment.seed, rep, 3),
                ..CrossConfig::default()
            };
            let CrossResult {
                tt, diagnostics, ..
            } = cross_approximate(&grid_target, &grid, &ccfg).map_err(|e| anyhow!("{e}"))?;
            time_cross += t.elapsed().as_secs_f64();
            let cross_evals = counting.taken();

            let sampler = CdSampler::prepare(tt.clone()).map_err(|e| anyhow!("{e}"))?;
            let mut records = Vec::new();
            for method in &cfg.experiment.methods {
                let before = counting.taken();
                let outcome = run_method(
                    method,
                    cfg,
                    &counting,
                    &sampler,
                    shift,
                    rep,
                    out_dir,
                    &mut time_sampling,
                    &mut time_target,
                    &mut time_estimation,
                )?;
                let evals = counting.taken() - before;
                records.push(RunRecord {
                    rep,
                    method: canonical_method_tag(method),
                    n_samples: cfg.experiment.n_samples,
                    estimates: outcome.estimates,
                    std_errors: outcome.std_errors,
                    tau: outcome.tau,
                    rejection_rate: outcome.rejection_rate,
                    e_l1: outcome.e_l1,
                    cross_evaluations: diagnostics.evaluations.min(cross_evals),
                    cross_max_rank: diagnostics.final_max_rank,
                    cross_converged: diagnostics.converged,
                    target_evaluations: evals,
                });
            }
            let timings = RepTimings {
                rep,
                cross_build_s: time_cross,
                cd_sampling_s: time_sampling,
                target_evaluation_s: time_target,
                estimation_s: time_estimation,
                wall_s: wall.elapsed().as_secs_f64(),
            };
            let tt_keep = if cfg.experiment.track_tt_error {
                Some(tt)
            } else {
                None
            };
            Ok((records, timings, tt_keep))
        })
        .collect();

    let mut records = Vec::new();
    let mut timings = Vec::new();
    let mut tensors = Vec::new();
    for r in rep_results {
        let (rec, t, tt) = r?;
        records.extend(rec);
        timings.push(t);
        if let Some(tt) = tt {
            tensors.push(tt);
        }
    }

    let e_tt = if tensors.len() >= 2 {
        Some(tt_spread(&tensors)?)
    } else {
        None
    };
    let aggregates = aggregate(cfg, &records, e_tt);

    write_outputs(out_dir, &records, &timings, &aggregates)?;
    Ok(StudyOutcome {
        records,
        timings,
        aggregates,
    })
}

fn canonical_method_tag(method: &str) -> String {
    match method {
        "tt-mh" => "TT-MH",
        "tt-riw" => "TT-rIW",
        "tt-qiw" => "TT-qIW",
        "tt-mh-2l" => "TT-MH-2L",
        "tt-qiw-2l" => "TT-qIW-2L",
        "dram" => "DRAM",
        other => other,
    }
    .to_string()
}

/// Relative empirical standard deviation of the TT iterates, computed from
/// the pairwise Gram matrix without materializing anything.
fn tt_spread(tensors: &[TtTensor<f64>]) -> Result<f64> {
    let r = tensors.len();
    let mut gram = vec![vec![0.0f64; r]; r];
    for i in 0..r {
        for j in i..r {
            let g = tensors[i]
                .dot(&tensors[j])
                .map_err(|e| anyhow!("TT spread: {e}"))?;
            gram[i][j] = g;
            gram[j][i] = g;
        }
    }
    let total: f64 = gram.iter().flatten().sum();
    let mean_norm_sq = total / (r as f64 * r as f64);
    if !(mean_norm_sq > 0.0) {
        bail!("TT spread: mean iterate has zero norm");
    }
    let mut acc = 0.0;
    for i in 0..r {
        let row_sum: f64 = gram[i].iter().sum();
        let dist_sq = gram[i][i] - 2.0 / r as f64 * row_sum + mean_norm_sq;
        acc += dist_sq.max(0.0);
    }
    Ok((acc / (r as f64 - 1.0) / mean_norm_sq).sqrt())
}

fn aggregate(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    e_tt: Option<f64>,
) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for method in &cfg.experiment.methods {
        let tag = canonical_method_tag(method);
        let recs: Vec<&RunRecord> = records.iter().filter(|r| r.method == tag).collect();
        if recs.is_empty() {
            continue;
        }
        let qoi_names: Vec<String> = recs[0].estimates.keys().cloned().collect();
        for qoi in &qoi_names {
            let vals: Vec<f64> = recs
                .iter()
                .filter_map(|r| r.estimates.get(qoi).copied())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let e_q = if vals.len() >= 2 && mean.abs() > 0.0 {
                Some(
                    vals.iter().map(|v| (v - mean).abs()).sum::<f64>()
                        / vals.len() as f64
                        / mean.abs(),
                )
            } else {
                None
            };
            let mean_of = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<f64> {
                let xs: Vec<f64> = recs.iter().filter_map(|r| f(r)).collect();
                if xs.is_empty() {
                    None
                } else {
                    Some(xs.iter().sum::<f64>() / xs.len() as f64)
                }
            };
            rows.push(AggregateRow {
                method: tag.clone(),
                qoi: qoi.clone(),
                n_samples: cfg.experiment.n_samples,
                repetitions: recs.len(),
                mean_estimate: mean,
                e_q,
                mean_std_error: mean_of(&|r| r.std_errors.get(qoi).copied()).unwrap_or(0.0),
                mean_tau: mean_of(&|r| r.tau),
                mean_rejection_rate: mean_of(&|r| r.rejection_rate),
                mean_e_l1: mean_of(&|r| r.e_l1),
                e_tt,
            });
        }
    }
    rows
}

fn write_outputs(
    out_dir: &Path,
    records: &[RunRecord],
    timings: &[RepTimings],
    aggregates: &[AggregateRow],
) -> Result<()> {
    let mut runs = std::fs::File::create(out_dir.join("runs.jsonl"))?;
    for r in records {
        writeln!(runs, "{}", serde_json::to_string(r)?)?;
    }
    let mut tfile = std::fs::File::create(out_dir.join("timings.jsonl"))?;
    for t in timings {
        writeln!(tfile, "{}", serde_json::to_string(t)?)?;
    }
    let mut csv = std::fs::File::create(out_dir.join("study.csv"))?;
    writeln!(
        csv,
        "method,qoi,n_samples,repetitions,mean_estimate,e_q,mean_std_error,mean_tau,mean_rejection_rate,mean_e_l1,e_tt"
    )?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for a in aggregates {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.method,
            a.qoi,
            a.n_samples,
            a.repetitions,
            a.mean_estimate,
            opt(a.e_q),
            a.mean_std_error,
            opt(a.mean_tau),
            opt(a.mean_rejection_rate),
            opt(a.mean_e_l1),
            opt(a.e_tt),
        )?;
    }
    Ok(())
}

//! Alternating TT-cross interpolation of a grid-indexed target.
//!
//! Builds a [`TtTensor`] from pointwise evaluations only: forward sweeps
//! select left pivot sets via maxvol on QR-orthogonalized unfoldings,
//! backward sweeps refine the right sets, optional random enrichment grows
//! the ranks, and the iteration stops when the relative Frobenius change
//! between successive iterates drops below the tolerance.

use crate::cd::CdSampler;
use crate::linalg::{jacobi_svd, maxvol_with_basis, thin_qr, LinalgError, Matrix};
use crate::scalar::Scalar;
use crate::tt::{Core, Grid, TtError, TtTensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrossError {
    #[error("invalid cross configuration: {0}")]
    InvalidConfig(String),
    #[error("target returned non-finite value {value} at multi-index {index:?}")]
    NonFinite { value: f64, index: Vec<usize> },
    #[error("evaluation budget {budget} too small to complete the first sweep")]
    BudgetTooSmall { budget: u64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Tt(#[from] TtError),
}

/// A function known at all points of a tensor grid.
///
/// Implementations must be reentrant: one unfolding is requested in a single
/// batched call and may be evaluated by parallel workers internally.
pub trait GridTarget<T: Scalar>: Sync {
    /// Values at `indices`, a flattened row-major `count x d` array of
    /// 0-based node indices.
    fn eval_indices(&self, d: usize, indices: &[u32]) -> Vec<T>;
}

/// Adapter for plain closures over a multi-index.
pub struct FnTarget<F>(pub F);

impl<T: Scalar, F: Fn(&[u32]) -> T + Sync> GridTarget<T> for FnTarget<F> {
    fn eval_indices(&self, d: usize, indices: &[u32]) -> Vec<T> {
        use rayon::prelude::*;
        if indices.len() >= 1 << 14 {
            indices.par_chunks(d).map(|row| (self.0)(row)).collect()
        } else {
            indices.chunks(d).map(|row| (self.0)(row)).collect()
        }
    }
}

impl<T: Scalar> GridTarget<T> for TtTensor<T> {
    fn eval_indices(&self, d: usize, indices: &[u32]) -> Vec<T> {
        let mut idx = vec![0usize; d];
        indices
            .chunks(d)
            .map(|row| {
                for (o, &v) in idx.iter_mut().zip(row) {
                    *o = v as usize;
                }
                self.eval_index(&idx).expect("index in range")
            })
            .collect()
    }
}

/// Nested pivot sets for every interface.
///
/// `left[k]` holds `k`-tuples addressing dimensions `0..k`, one per row of
/// the interface basis left of core `k`; `right[k]` holds `(d-1-k)`-tuples
/// addressing dimensions `k+1..d`. `left[0]` and `right[d-1]` hold a single
/// empty tuple.
#[derive(Debug, Clone)]
pub struct CrossIndexSets {
    pub left: Vec<Vec<Vec<usize>>>,
    pub right: Vec<Vec<Vec<usize>>>,
}

/// How auxiliary index tuples are drawn during rank enrichment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnrichmentStrategy {
    /// i.i.d. uniform tuples over the grid indices.
    Uniform,
    /// Half uniform, half drawn from the current surrogate iterate (mapped
    /// to the nearest grid nodes). Keeps exploration alive on concentrated
    /// densities where uniform tuples land in dead tails.
    SurrogateMixed,
}

/// Parameters of the cross iteration.
#[derive(Debug, Clone)]
pub struct CrossConfig<T> {
    /// Cardinality of the initial random right sets.
    pub init_rank: usize,
    /// Per-interface initial ranks `r_1 .. r_{d-1}`; overrides `init_rank`
    /// when non-empty. Oversized entries are capped by feasibility.
    pub init_ranks: Vec<usize>,
    /// Rank enrichment per half-sweep (rho).
    pub enrichment: usize,
    /// Source of the auxiliary enrichment tuples.
    pub enrichment_strategy: EnrichmentStrategy,
    /// Stopping tolerance on the relative change between iterates; also the
    /// base of the per-interface truncation threshold `tol / sqrt(d-1)`.
    pub tol: T,
    /// Maximum number of full (forward + backward) iterations.
    pub max_iters: usize,
    /// Hard cap on any interface rank; 0 disables the cap.
    pub max_rank: usize,
    /// Divisor mapping the requested accuracy to the internal sweep
    /// controls (stopping threshold and truncation level). The delivered
    /// accuracy of a cross interpolation trails the per-interface SVD level
    /// by roughly an order of magnitude, so controlling the sweeps at
    /// `tol / tol_safety` makes the result meet `tol`.
    pub tol_safety: f64,
    /// Cap on total target evaluations; 0 disables the cap.
    pub eval_budget: u64,
    /// Grow-from-low-rank mode with SVD truncation when true; fixed-rank
    /// interpolation when false.
    pub rank_adaptive: bool,
    /// Entry bound slack for maxvol.
    pub maxvol_tol: T,
    /// Seed for the initial sets and enrichment draws.
    pub seed: u64,
}

impl<T: Scalar> Default for CrossConfig<T> {
    fn default() -> Self {
        Self {
            init_rank: 2,
            init_ranks: Vec::new(),
            enrichment: 4,
            enrichment_strategy: EnrichmentStrategy::SurrogateMixed,
            tol: T::from_f64_lossy(1e-3),
            max_iters: 20,
            max_rank: 0,
            tol_safety: 20.0,
            eval_budget: 0,
            rank_adaptive: true,
            maxvol_tol: T::from_f64_lossy(5e-2),
            seed: 0,
        }
    }
}

/// Per-iteration progress record.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub iteration: usize,
    pub max_rank: usize,
    /// Cumulative target evaluations after this iteration.
    pub evaluations: u64,
    /// Relative Frobenius change against the previous iterate; infinite on
    /// the first iteration.
    pub rel_change: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CrossDiagnostics {
    pub sweeps: Vec<SweepRecord>,
    pub evaluations: u64,
    pub converged: bool,
    pub final_max_rank: usize,
}

impl CrossDiagnostics {
    /// Writes the per-sweep records as CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,max_rank,evaluations,rel_change")?;
        for s in &self.sweeps {
            writeln!(
                w,
                "{},{},{},{}",
                s.iteration, s.max_rank, s.evaluations, s.rel_change
            )?;
        }
        Ok(())
    }
}

pub struct CrossResult<T> {
    pub tt: TtTensor<T>,
    pub index_sets: CrossIndexSets,
    pub diagnostics: CrossDiagnostics,
}

/// Evaluates the `(|left| * n_k) x |right|` unfolding of `f` at
/// `left x grid_k x right` in one batched call.
pub fn evaluate_unfolding<T: Scalar>(
    f: &dyn GridTarget<T>,
    grid: &Grid<T>,
    left: &[Vec<usize>],
    k: usize,
    right: &[Vec<usize>],
) -> Result<Matrix<T>, CrossError> {
    let d = grid.dim();
    let n = grid.size(k);
    let (rl, rr) = (left.len(), right.len());
    let count = rl * n * rr;
    let mut indices = Vec::with_capacity(count * d);
    for lt in left {
        debug_assert_eq!(lt.len(), k);
        for i in 0..n {
            for rt in right {
                debug_assert_eq!(rt.len(), d - 1 - k);
                for &v in lt {
                    indices.push(v as u32);
                }
                indices.push(i as u32);
                for &v in rt {
                    indices.push(v as u32);
                }
            }
        }
    }
    let values = f.eval_indices(d, &indices);
    assert_eq!(values.len(), count, "target returned wrong batch size");
    for (pos, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            let row = &indices[pos * d..(pos + 1) * d];
            return Err(CrossError::NonFinite {
                value: v.to_f64_lossy(),
                index: row.iter().map(|&x| x as usize).collect(),
            });
        }
    }
    Ok(Matrix::from_vec(rl * n, rr, values))
}

/// Appends up to `rho` new distinct uniform tuples over the index space with
/// per-dimension sizes `dim_sizes`. Returns the number actually added, which
/// is smaller than `rho` when the space runs out of distinct tuples.
pub fn enrich_indices(
    set: &mut Vec<Vec<usize>>,
    rho: usize,
    dim_sizes: &[usize],
    rng: &mut impl Rng,
) -> usize {
    if rho == 0 || dim_sizes.is_empty() {
        return 0;
    }
    let total: usize = dim_sizes.iter().fold(1usize, |acc, &s| acc.saturating_mul(s));
    let want = rho.min(total.saturating_sub(set.len()));
    if want == 0 {
        return 0;
    }
    let mut added = 0;
    if total <= 2 * (set.len() + want) || total <= 64 {
        // Dense space: enumerate, filter, shuffle.
        let mut all: Vec<Vec<usize>> = Vec::with_capacity(total);
        let mut tuple = vec![0usize; dim_sizes.len()];
        loop {
            if !set.contains(&tuple) {
                all.push(tuple.clone());
            }
            let mut c = dim_sizes.len();
            loop {
                if c == 0 {
                    break;
                }
                c -= 1;
                tuple[c] += 1;
                if tuple[c] < dim_sizes[c] {
                    break;
                }
                tuple[c] = 0;
                if c == 0 {
                    c = usize::MAX;
                    break;
                }
            }
            if c == usize::MAX || tuple.iter().all(|&v| v == 0) {
                break;
            }
        }
        while added < want && !all.is_empty() {
            let pick = rng.gen_range(0..all.len());
            set.push(all.swap_remove(pick));
            added += 1;
        }
    } else {
        let mut guard = 0usize;
        while added < want && guard < 1000 * want {
            guard += 1;
            let tuple: Vec<usize> = dim_sizes.iter().map(|&s| rng.gen_range(0..s)).collect();
            if !set.contains(&tuple) {
                set.push(tuple);
                added += 1;
            }
        }
    }
    added
}

fn random_tuples(
    count: usize,
    dim_sizes: &[usize],
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let mut set = Vec::new();
    enrich_indices(&mut set, count, dim_sizes, rng);
    set
}

/// Columns of the basis kept after the relative SVD truncation.
fn truncate_basis<T: Scalar>(
    q: &Matrix<T>,
    r: &Matrix<T>,
    rel_tol: T,
    extra: usize,
    max_rank: usize,
) -> Matrix<T> {
    let (u, s, _) = jacobi_svd(r);
    let smax = s[0];
    if smax == T::zero() {
        // All sampled values vanish; fall back to the first orthonormal
        // column so maxvol still has a valid basis.
        return Matrix::from_fn(q.rows(), 1, |i, _| q.get(i, 0));
    }
    let trunc = s
        .iter()
        .take_while(|&&sv| sv > smax * rel_tol)
        .count()
        .max(1);
    // Keep up to `extra` live directions beyond the truncation rank; they
    // hold the working rank at r + rho so the next sweep samples a richer
    // subspace. Directions below the numerical floor are excluded (their
    // left singular vectors are zero).
    let nnz = s
        .iter()
        .take_while(|&&sv| sv > smax * T::from_f64_lossy(1e-13))
        .count()
        .max(1);
    let mut rank = (trunc + extra).min(nnz);
    if max_rank > 0 {
        rank = rank.min(max_rank).max(1);
    }
    if rank == s.len() {
        return q.matmul(&u);
    }
    let u_r = Matrix::from_fn(u.rows(), rank, |i, j| u.get(i, j));
    q.matmul(&u_r)
}

/// Draws auxiliary tuples over `dims` (a contiguous dimension range of the
/// grid), mixing uniform draws with draws from the current surrogate
/// iterate per the strategy. Appends only distinct tuples.
fn enrich_set<T: Scalar>(
    set: &mut Vec<Vec<usize>>,
    rho: usize,
    grid: &Grid<T>,
    dims: std::ops::Range<usize>,
    strategy: EnrichmentStrategy,
    sampler: Option<&CdSampler<T>>,
    rng: &mut ChaCha12Rng,
) -> usize {
    if rho == 0 || dims.is_empty() {
        return 0;
    }
    let sizes: Vec<usize> = dims.clone().map(|k| grid.size(k)).collect();
    let mut added = 0;
    if let (EnrichmentStrategy::SurrogateMixed, Some(s)) = (strategy, sampler) {
        // Surrogate-guided half: draw joint samples, keep the coordinates of
        // this dimension range snapped to the nearest grid nodes.
        let want = rho - rho / 2;
        let d = grid.dim();
        let mut attempts = 0;
        while added < want && attempts < 20 * want + 20 {
            attempts += 1;
            let seeds = Matrix::from_fn(1, d, |_, _| {
                T::from_f64_lossy(rng.gen_range(0.0..1.0))
            });
            let Ok(batch) = s.transform(&seeds, crate::cd::SeedKind::Iid) else {
                break;
            };
            let mut tuple = Vec::with_capacity(dims.len());
            for k in dims.clone() {
                let x = batch.points.get(0, k);
                let (cell, t) = s.grid().locate(k, x).expect("sample in box");
                let idx = if t.to_f64_lossy() > 0.5 { cell + 1 } else { cell };
                tuple.push(idx.min(grid.size(k) - 1));
            }
            if !set.contains(&tuple) {
                set.push(tuple);
                added += 1;
            }
        }
    }
    // Uniform remainder (and the whole budget for the Uniform strategy).
    added + enrich_indices(set, rho - added, &sizes, rng)
}

/// Rearranges a `(rl * n) x rr` unfolding into the transposed right
/// unfolding of shape `(n * rr) x rl`, rows indexed by `(i, beta)`.
fn to_right_transposed<T: Scalar>(a: &Matrix<T>, rl: usize, n: usize, rr: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(n * rr, rl);
    for alpha in 0..rl {
        for i in 0..n {
            let row = a.row(alpha * n + i);
            for (beta, &v) in row.iter().enumerate() {
                out.set(i * rr + beta, alpha, v);
            }
        }
    }
    out
}

/// TT approximation of `f` by alternating cross interpolation (maxvol
/// pivoting, random enrichment, relative-change stopping).
pub fn cross_approximate<T: Scalar>(
    f: &dyn GridTarget<T>,
    grid: &Grid<T>,
    cfg: &CrossConfig<T>,
) -> Result<CrossResult<T>, CrossError> {
    if cfg.tol <= T::zero() {
        return Err(CrossError::InvalidConfig("tol must be > 0".into()));
    }
    if cfg.max_iters == 0 {
        return Err(CrossError::InvalidConfig("max_iters must be >= 1".into()));
    }
    if cfg.init_rank == 0 {
        return Err(CrossError::InvalidConfig("init_rank must be >= 1".into()));
    }
    if !cfg.rank_adaptive && cfg.enrichment > 0 {
        return Err(CrossError::InvalidConfig(
            "enrichment requires rank-adaptive mode".into(),
        ));
    }
    let d = grid.dim();
    let sizes = grid.sizes();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    if !cfg.init_ranks.is_empty() && cfg.init_ranks.len() != d.saturating_sub(1) {
        return Err(CrossError::InvalidConfig(format!(
            "init_ranks needs {} entries, got {}",
            d - 1,
            cfg.init_ranks.len()
        )));
    }
    // Initial right sets: i.i.d. uniform tuples over the grid indices.
    let mut right_sets: Vec<Vec<Vec<usize>>> = Vec::with_capacity(d);
    for k in 0..d {
        if k == d - 1 {
            right_sets.push(vec![Vec::new()]);
        } else {
            let space: Vec<usize> = sizes[k + 1..].to_vec();
            let total: usize = space.iter().fold(1usize, |a, &s| a.saturating_mul(s));
            let left_total: usize = sizes[..=k].iter().fold(1usize, |a, &s| a.saturating_mul(s));
            let req = if cfg.init_ranks.is_empty() {
                cfg.init_rank
            } else {
                cfg.init_ranks[k]
            };
            let want = req.min(total).min(left_total).max(1);
            right_sets.push(random_tuples(want, &space, &mut rng));
        }
    }
    let mut left_sets: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new()]; d];

    let tol_internal = cfg.tol / T::from_f64_lossy(cfg.tol_safety.max(1.0));
    let rel_tol = if d > 1 {
        tol_internal / T::cast_usize(d - 1).sqrt()
    } else {
        tol_internal
    };

    let mut cores: Vec<Option<Core<T>>> = vec![None; d];
    let mut evals: u64 = 0;
    let mut prev_tt: Option<TtTensor<T>> = None;
    let mut surrogate: Option<CdSampler<T>> = None;
    let mut diagnostics = CrossDiagnostics::default();
    let mut budget_hit = false;

    'outer: for iter in 0..cfg.max_iters {
        // Forward sweep: rebuild left sets.
        for k in 0..d {
            if k + 1 < d {
                if cfg.rank_adaptive && cfg.enrichment > 0 {
                    let mut rho = cfg.enrichment;
                    if cfg.max_rank > 0 {
                        rho = rho.min(cfg.max_rank.saturating_sub(right_sets[k].len()));
                    }
                    enrich_set(
                        &mut right_sets[k],
                        rho,
                        grid,
                        (k + 1)..d,
                        cfg.enrichment_strategy,
                        surrogate.as_ref(),
                        &mut rng,
                    );
                }
                // More columns than rows cannot improve the basis.
                let row_cap = left_sets[k].len() * sizes[k];
                right_sets[k].truncate(row_cap);
                let a = evaluate_unfolding(f, grid, &left_sets[k], k, &right_sets[k])?;
                evals += (a.rows() * a.cols()) as u64;
                let (q, r) = thin_qr(&a);
                let basis = if cfg.rank_adaptive {
                    truncate_basis(&q, &r, rel_tol, cfg.enrichment, cfg.max_rank)
                } else {
                    q
                };
                let (pivots, b) = maxvol_with_basis(&basis, cfg.maxvol_tol, 100)?;
                let n = sizes[k];
                cores[k] = Some(Core::from_left_matrix(&b, left_sets[k].len(), n));
                let mut new_left = Vec::with_capacity(pivots.len());
                for &row in &pivots {
                    let (alpha, i) = (row / n, row % n);
                    let mut t = left_sets[k][alpha].clone();
                    t.push(i);
                    new_left.push(t);
                }
                left_sets[k + 1] = new_left;
            } else {
                let a = evaluate_unfolding(f, grid, &left_sets[k], k, &right_sets[k])?;
                evals += (a.rows() * a.cols()) as u64;
                cores[k] = Some(Core::from_left_matrix(&a, left_sets[k].len(), sizes[k]));
            }
        }
        // Backward sweep: rebuild right sets.
        for k in (0..d).rev() {
            if k > 0 {
                if cfg.rank_adaptive && cfg.enrichment > 0 {
                    let mut rho = cfg.enrichment;
                    if cfg.max_rank > 0 {
                        rho = rho.min(cfg.max_rank.saturating_sub(left_sets[k].len()));
                    }
                    enrich_set(
                        &mut left_sets[k],
                        rho,
                        grid,
                        0..k,
                        cfg.enrichment_strategy,
                        surrogate.as_ref(),
                        &mut rng,
                    );
                }
                let col_cap = right_sets[k].len() * sizes[k];
                left_sets[k].truncate(col_cap);
                let a = evaluate_unfolding(f, grid, &left_sets[k], k, &right_sets[k])?;
                evals += (a.rows() * a.cols()) as u64;
                let n = sizes[k];
                let (rl, rr) = (left_sets[k].len(), right_sets[k].len());
                let wide_t = to_right_transposed(&a, rl, n, rr);
                let (q, r) = thin_qr(&wide_t);
                let basis = if cfg.rank_adaptive {
                    truncate_basis(&q, &r, rel_tol, cfg.enrichment, cfg.max_rank)
                } else {
                    q
                };
                let (pivots, b) = maxvol_with_basis(&basis, cfg.maxvol_tol, 100)?;
                // b is (n * rr) x r'; the core is its transpose reshaped.
                let rnew = b.cols();
                let mut core = Core::zeros(rnew, n, rr);
                for i in 0..n {
                    for beta in 0..rr {
                        let row = b.row(i * rr + beta);
                        for (a_idx, &v) in row.iter().enumerate() {
                            core.set(a_idx, i, beta, v);
                        }
                    }
                }
                cores[k] = Some(core);
                let mut new_right = Vec::with_capacity(pivots.len());
                for &row in &pivots {
                    let (i, beta) = (row / rr, row % rr);
                    let mut t = Vec::with_capacity(d - k);
                    t.push(i);
                    t.extend_from_slice(&right_sets[k][beta]);
                    new_right.push(t);
                }
                right_sets[k - 1] = new_right;
            } else {
                let a = evaluate_unfolding(f, grid, &left_sets[k], k, &right_sets[k])?;
                evals += (a.rows() * a.cols()) as u64;
                cores[k] = Some(Core::from_left_matrix(&a, 1, sizes[k]));
            }
        }

        if cfg.eval_budget > 0 && evals >= cfg.eval_budget {
            budget_hit = true;
        }

        let tt = TtTensor::new(
            grid.clone(),
            cores.iter().map(|c| c.clone().expect("core built")).collect(),
        )?;
        // Compare delta-rounded iterates: the raw ones carry fresh random
        // exploration content at every sweep.
        let tt = if cfg.rank_adaptive && cfg.enrichment > 0 {
            tt.round(tol_internal)
        } else {
            tt
        };
        let rel_change = match &prev_tt {
            Some(prev) => {
                let norm = tt.norm();
                if norm == T::zero() {
                    0.0
                } else {
                    (tt.frobenius_distance(prev)? / norm).to_f64_lossy()
                }
            }
            None => f64::INFINITY,
        };
        diagnostics.sweeps.push(SweepRecord {
            iteration: iter,
            max_rank: tt.max_rank(),
            evaluations: evals,
            rel_change,
        });
        let converged = !budget_hit && rel_change <= tol_internal.to_f64_lossy();
        surrogate = CdSampler::prepare(tt.clone()).ok();
        prev_tt = Some(tt);
        if converged {
            diagnostics.converged = true;
            break 'outer;
        }
        if budget_hit {
            break 'outer;
        }
    }

    let tt = prev_tt.expect("at least one iteration");
    diagnostics.evaluations = evals;
    diagnostics.final_max_rank = tt.max_rank();
    Ok(CrossResult {
        tt,
        index_sets: CrossIndexSets {
            left: left_sets,
            right: right_sets,
        },
        diagnostics,
    })
}

//! Randomized rank-1 lattice rules.
//!
//! Points are `frac(l * z / N + shift)` for a generating vector `z` built by
//! component-by-component minimization of the shift-averaged worst-case
//! error in the weighted Korobov space with smoothness `alpha = 2` and
//! product weights `gamma_k = 1/k^2` (other product weights can be passed
//! in). For `N = 2^m` the CBC search evaluates all odd candidates at once
//! through circular correlations over the `{+-3^a}` subgroup structure of
//! the odd residues, so construction costs `O(d N log N)`.

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QmcError {
    #[error("invalid lattice configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad cache file: {0}")]
    BadCache(String),
}

pub const MAX_DIM: usize = 64;
pub const MAX_POINTS: u64 = 1 << 20;

/// A randomized rank-1 lattice rule: `d`, `N`, generating vector and a
/// uniform shift reproducible from its seed.
#[derive(Debug, Clone)]
pub struct LatticeRule {
    n: u64,
    z: Vec<u64>,
    shift: Vec<f64>,
    shift_seed: u64,
}

impl LatticeRule {
    /// Lattice with the shift drawn from `shift_seed`.
    pub fn new(z: Vec<u64>, n: u64, shift_seed: u64) -> Result<Self, QmcError> {
        if z.is_empty() {
            return Err(QmcError::Config("empty generating vector".into()));
        }
        if n < 2 {
            return Err(QmcError::Config("need at least 2 points".into()));
        }
        for &zk in &z {
            if zk == 0 || zk >= n {
                return Err(QmcError::Config(format!(
                    "generating component {zk} outside 1..{n}"
                )));
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(shift_seed);
        let shift = (0..z.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        Ok(Self {
            n,
            z,
            shift,
            shift_seed,
        })
    }

    /// Lattice with zero shift.
    pub fn unshifted(z: Vec<u64>, n: u64) -> Result<Self, QmcError> {
        let mut rule = Self::new(z, n, 0)?;
        rule.shift.iter_mut().for_each(|s| *s = 0.0);
        Ok(rule)
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn generating_vector(&self) -> &[u64] {
        &self.z
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn shift_seed(&self) -> u64 {
        self.shift_seed
    }

    /// All `N x d` points, `point(l)_k = frac(l z_k / N + shift_k)`.
    pub fn points<T: Scalar>(&self) -> Matrix<T> {
        let d = self.dim();
        let n = self.n;
        Matrix::from_fn(n as usize, d, |l, k| {
            let frac = ((l as u64 * self.z[k]) % n) as f64 / n as f64 + self.shift[k];
            T::from_f64_lossy(frac.fract())
        })
    }
}

/// Points of a lattice rule; convenience wrapper over [`LatticeRule::points`].
pub fn lattice_points<T: Scalar>(rule: &LatticeRule) -> Matrix<T> {
    rule.points()
}

/// Default product weights `gamma_k = 1 / k^2` (1-based `k`).
pub fn product_weights(d: usize) -> Vec<f64> {
    (1..=d).map(|k| 1.0 / (k * k) as f64).collect()
}

/// Second Bernoulli polynomial `B_2(x) = x^2 - x + 1/6`, the kernel of the
/// shift-averaged worst-case error (order-2 decay of the Fourier weights).
#[inline]
fn omega(x: f64) -> f64 {
    x * x - x + 1.0 / 6.0
}

/// Result of the CBC construction.
#[derive(Debug, Clone)]
pub struct GeneratingVector {
    pub d: usize,
    pub n: u64,
    pub z: Vec<u64>,
    /// Squared shift-averaged worst-case error after the last component.
    pub criterion_sq: f64,
}

struct LevelTables {
    /// For each modulus `2^mu` with `mu >= 3`: discrete logs of the odd
    /// residues, `dlog[(u - 1) / 2] = a` with `u = +-3^a (mod 2^mu)`.
    dlog: Vec<Vec<u32>>,
}

impl LevelTables {
    fn build(m: u32) -> Self {
        let mut dlog = Vec::new();
        for mu in 3..=m {
            let modulus = 1u64 << mu;
            let half = 1usize << (mu - 1);
            let cyc = 1usize << (mu - 2);
            let mut table = vec![0u32; half];
            let mut u = 1u64;
            for a in 0..cyc {
                table[((u - 1) / 2) as usize] = a as u32;
                table[((modulus - u - 1) / 2) as usize] = a as u32;
                u = (u * 3) % modulus;
            }
            dlog.push(table);
        }
        Self { dlog }
    }

    fn lookup(&self, mu: u32, u: u64) -> usize {
        self.dlog[(mu - 3) as usize][((u - 1) / 2) as usize] as usize
    }
}

/// Component-by-component construction of a generating vector for `N = 2^m`
/// points and the given product weights (length `d`).
///
/// All components are odd, so every 1-D projection is a full period.
pub fn build_generating_vector(
    d: usize,
    n: u64,
    weights: &[f64],
) -> Result<GeneratingVector, QmcError> {
    if d == 0 || d > MAX_DIM {
        return Err(QmcError::Config(format!(
            "dimension {d} outside 1..={MAX_DIM}"
        )));
    }
    if !n.is_power_of_two() || n < 2 || n > MAX_POINTS {
        return Err(QmcError::Config(format!(
            "point count {n} must be a power of 2 in 2..={MAX_POINTS}"
        )));
    }
    if weights.len() != d {
        return Err(QmcError::Config("weights length must equal d".into()));
    }
    let m = n.trailing_zeros();
    let tables = LevelTables::build(m);
    let mut planner = FftPlanner::<f64>::new();

    // Kernel values on the whole period, omega_tab[l] = omega(l / N).
    let omega_tab: Vec<f64> = (0..n).map(|l| omega(l as f64 / n as f64)).collect();
    // Running product over already-chosen dimensions.
    let mut q = vec![1.0f64; n as usize];
    let mut z = Vec::with_capacity(d);
    let mut criterion_sq = 0.0;

    for (j, &gamma) in weights.iter().enumerate() {
        // t[(v - 1) / 2] accumulates T(z = v) over all levels.
        let half = (n / 2) as usize;
        let mut t = vec![q[0] * omega_tab[0]; half];
        for s in 0..m {
            let mu = m - s;
            let modulus = 1u64 << mu;
            let step = 1u64 << s;
            match mu {
                1 => {
                    // Only o = 1: contribution q[2^s] * omega(1/2) for all z.
                    let c = q[step as usize] * omega((modulus / 2) as f64 / modulus as f64);
                    for tv in t.iter_mut() {
                        *tv += c;
                    }
                }
                2 => {
                    // o in {1, 3}; z mod 4 in {1, 3}.
                    let (q1, q3) = (q[step as usize], q[(3 * step) as usize]);
                    let w = |u: u64| omega(u as f64 / 4.0);
                    let c1 = q1 * w(1) + q3 * w(3);
                    let c3 = q1 * w(3) + q3 * w(9 % 4);
                    for (idx, tv) in t.iter_mut().enumerate() {
                        let v = (2 * idx + 1) as u64;
                        *tv += if v % 4 == 1 { c1 } else { c3 };
                    }
                }
                _ => {
                    let cyc = 1usize << (mu - 2);
                    // Fold q over the +- sign: qs[a] = q[2^s * 3^a] + q[2^s * (M - 3^a)].
                    let mut qs = vec![Complex::new(0.0, 0.0); cyc];
                    let mut w = vec![Complex::new(0.0, 0.0); cyc];
                    let mut u = 1u64;
                    for a in 0..cyc {
                        let plus = (step * u) as usize;
                        let minus = (step * (modulus - u)) as usize;
                        qs[a] = Complex::new(q[plus] + q[minus], 0.0);
                        w[a] = Complex::new(omega(u as f64 / modulus as f64), 0.0);
                        u = (u * 3) % modulus;
                    }
                    // Circular correlation c[b] = sum_a qs[a] w[(a + b) mod cyc].
                    let fft = planner.plan_fft_forward(cyc);
                    let ifft = planner.plan_fft_inverse(cyc);
                    fft.process(&mut qs);
                    fft.process(&mut w);
                    for (qa, wa) in qs.iter_mut().zip(&w) {
                        *qa = qa.conj() * wa;
                    }
                    ifft.process(&mut qs);
                    let scale = 1.0 / cyc as f64;
                    let corr: Vec<f64> = qs.iter().map(|c| c.re * scale).collect();
                    for (idx, tv) in t.iter_mut().enumerate() {
                        let v = (2 * idx + 1) as u64;
                        let b = tables.lookup(mu, v % modulus);
                        *tv += corr[b];
                    }
                }
            }
        }
        // Best odd candidate; ties resolved toward the smallest z.
        let mut best_idx = 0usize;
        let mut best_t = t[0];
        for (idx, &tv) in t.iter().enumerate().skip(1) {
            if tv < best_t {
                best_t = tv;
                best_idx = idx;
            }
        }
        let zj = (2 * best_idx + 1) as u64;
        z.push(zj);
        // Update the running product and the criterion.
        let mut qsum = 0.0;
        for l in 0..n {
            let idx = l as usize;
            q[idx] *= 1.0 + gamma * omega_tab[((l * zj) % n) as usize];
            qsum += q[idx];
        }
        criterion_sq = (qsum / n as f64 - 1.0).max(0.0);
        let _ = j;
    }
    Ok(GeneratingVector {
        d,
        n,
        z,
        criterion_sq,
    })
}

/// Brute-force criterion evaluation, `E^2(z)`; the test oracle for the CBC.
pub fn criterion_sq_direct(z: &[u64], n: u64, weights: &[f64]) -> f64 {
    let mut acc = 0.0;
    for l in 0..n {
        let mut prod = 1.0;
        for (k, &zk) in z.iter().enumerate() {
            let x = ((l * zk) % n) as f64 / n as f64;
            prod *= 1.0 + weights[k] * omega(x);
        }
        acc += prod;
    }
    (acc / n as f64 - 1.0).max(0.0)
}

/// Writes a generating vector cache file: `d n criterion_sq` then one
/// component per line.
pub fn save_vector<P: AsRef<Path>>(path: P, v: &GeneratingVector) -> Result<(), QmcError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{} {} {:e}", v.d, v.n, v.criterion_sq)?;
    for &zk in &v.z {
        writeln!(f, "{zk}")?;
    }
    Ok(())
}

pub fn load_vector<P: AsRef<Path>>(path: P) -> Result<GeneratingVector, QmcError> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let head = lines
        .next()
        .ok_or_else(|| QmcError::BadCache("empty file".into()))??;
    let mut it = head.split_whitespace();
    let d: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| QmcError::BadCache("bad dimension".into()))?;
    let n: u64 = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| QmcError::BadCache("bad point count".into()))?;
    let criterion_sq: f64 = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| QmcError::BadCache("bad criterion".into()))?;
    let mut z = Vec::with_capacity(d);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        z.push(
            line.trim()
                .parse()
                .map_err(|_| QmcError::BadCache(format!("bad component {line}")))?,
        );
    }
    if z.len() != d {
        return Err(QmcError::BadCache(format!(
            "expected {d} components, found {}",
            z.len()
        )));
    }
    Ok(GeneratingVector {
        d,
        n,
        z,
        criterion_sq,
    })
}

/// Loads a cached vector if it matches `(d, n)`, otherwise builds with the
/// default product weights and caches.
pub fn load_or_build<P: AsRef<Path>>(
    path: P,
    d: usize,
    n: u64,
) -> Result<GeneratingVector, QmcError> {
    if path.as_ref().exists() {
        if let Ok(v) = load_vector(&path) {
            if v.d == d && v.n == n {
                return Ok(v);
            }
        }
    }
    let v = build_generating_vector(d, n, &product_weights(d))?;
    if let Some(parent) = path.as_ref().parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_vector(&path, &v)?;
    Ok(v)
}

//! Bilinear finite elements on the unit square for the diffusion equation
//! `-div(kappa grad u) = 0` with `u = 1` at `x1 = 0`, `u = 0` at `x1 = 1`
//! and natural (no-flux) conditions on the other sides.
//!
//! The coefficient is taken cell-wise constant. Systems are solved by a
//! banded Cholesky factorization (direct, as appropriate for the mesh sizes
//! used here).

use super::TargetError;

/// Symmetric positive definite banded matrix in lower-band storage:
/// `band[i * (hbw + 1) + k]` holds `A[i, i - hbw + k]`.
struct BandedSpd {
    n: usize,
    hbw: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    fn zeros(n: usize, hbw: usize) -> Self {
        Self {
            n,
            hbw,
            band: vec![0.0; n * (hbw + 1)],
        }
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        // Lower triangle only.
        if j > i {
            return;
        }
        let off = self.hbw - (i - j);
        self.band[i * (self.hbw + 1) + off] += v;
    }

    /// In-place Cholesky; fails on a non-positive pivot.
    fn factor(&mut self) -> Result<(), TargetError> {
        let w = self.hbw + 1;
        for i in 0..self.n {
            let start = i.saturating_sub(self.hbw);
            for j in start..=i {
                let mut s = self.band[i * w + self.hbw - (i - j)];
                let kstart = start.max(j.saturating_sub(self.hbw));
                for k in kstart..j {
                    s -= self.band[i * w + self.hbw - (i - k)]
                        * self.band[j * w + self.hbw - (j - k)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(TargetError::SolverBreakdown(format!(
                            "non-positive pivot {s:.3e} at row {i}"
                        )));
                    }
                    self.band[i * w + self.hbw] = s.sqrt();
                } else {
                    self.band[i * w + self.hbw - (i - j)] = s / self.band[j * w + self.hbw];
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` with the factored matrix.
    fn solve(&self, b: &mut [f64]) {
        let w = self.hbw + 1;
        for i in 0..self.n {
            let start = i.saturating_sub(self.hbw);
            let mut s = b[i];
            for k in start..i {
                s -= self.band[i * w + self.hbw - (i - k)] * b[k];
            }
            b[i] = s / self.band[i * w + self.hbw];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            let end = (i + self.hbw).min(self.n - 1);
            for k in (i + 1)..=end {
                s -= self.band[k * w + self.hbw - (k - i)] * b[k];
            }
            b[i] = s / self.band[i * w + self.hbw];
        }
    }
}

/// Reference Q1 stiffness matrix for the Laplacian on a square cell (local
/// node order SW, SE, NE, NW); independent of the cell size in 2-D.
const K_REF: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// Uniform-mesh solver; `nx` cells per side, mesh size `h = 1/nx`.
pub struct FemSolver {
    nx: usize,
}

/// Nodal solution on the `(nx+1) x (nx+1)` grid, including boundary values.
pub struct FemSolution {
    pub nx: usize,
    /// Node `(i, j)` at `(i h, j h)` stored at `i + j (nx + 1)`.
    pub u: Vec<f64>,
}

impl FemSolver {
    pub fn new(nx: usize) -> Self {
        assert!(nx >= 2, "need at least 2 cells per side");
        Self { nx }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }

    /// Cell midpoints in row-major cell order `(cx, cy)` at `cx + cy * nx`.
    pub fn cell_midpoints(&self) -> Vec<(f64, f64)> {
        let h = self.h();
        let mut out = Vec::with_capacity(self.nx * self.nx);
        for cy in 0..self.nx {
            for cx in 0..self.nx {
                out.push(((cx as f64 + 0.5) * h, (cy as f64 + 0.5) * h));
            }
        }
        out
    }

    #[inline]
    fn node(&self, i: usize, j: usize) -> usize {
        i + j * (self.nx + 1)
    }

    /// Galerkin solve with cell-wise constant `kappa` (row-major cell order,
    /// `nx * nx` values, all positive).
    pub fn solve(&self, kappa_cells: &[f64]) -> Result<FemSolution, TargetError> {
        let nx = self.nx;
        assert_eq!(kappa_cells.len(), nx * nx);
        // Unknowns: nodes with 0 < i < nx, all j; u(0, j) = 1, u(nx, j) = 0.
        let cols = nx - 1;
        let rows = nx + 1;
        let n_unknown = cols * rows;
        let unk = |i: usize, j: usize| -> usize { (i - 1) + j * cols };
        let hbw = cols + 1;
        let mut a = BandedSpd::zeros(n_unknown, hbw);
        let mut rhs = vec![0.0; n_unknown];
        for cy in 0..nx {
            for cx in 0..nx {
                let kappa = kappa_cells[cx + cy * nx];
                if !(kappa > 0.0) || !kappa.is_finite() {
                    return Err(TargetError::SolverBreakdown(format!(
                        "non-positive diffusion coefficient {kappa:.3e} in cell ({cx}, {cy})"
                    )));
                }
                // Local nodes SW, SE, NE, NW.
                let li = [(cx, cy), (cx + 1, cy), (cx + 1, cy + 1), (cx, cy + 1)];
                for (a_loc, &(ia, ja)) in li.iter().enumerate() {
                    if ia == 0 || ia == nx {
                        continue;
                    }
                    let ra = unk(ia, ja);
                    for (b_loc, &(ib, jb)) in li.iter().enumerate() {
                        let kv = kappa * K_REF[a_loc][b_loc];
                        if ib == 0 {
                            // Dirichlet u = 1 at the inlet moves to the RHS.
                            rhs[ra] -= kv;
                        } else if ib == nx {
                            // u = 0 contributes nothing.
                        } else {
                            let rb = unk(ib, jb);
                            if rb <= ra {
                                a.add(ra, rb, kv);
                            }
                        }
                    }
                }
            }
        }
        a.factor()?;
        a.solve(&mut rhs);
        let mut u = vec![0.0; (nx + 1) * (nx + 1)];
        for j in 0..=nx {
            u[self.node(0, j)] = 1.0;
            for i in 1..nx {
                u[self.node(i, j)] = rhs[unk(i, j)];
            }
        }
        Ok(FemSolution { nx, u })
    }

    /// Average outflow flux via the volume form `-int kappa grad(w) grad(u)`
    /// with `w` the interpolant of `x1` (the FE function equal to 1 on the
    /// outflow boundary and 0 on the inflow boundary).
    pub fn flux(&self, kappa_cells: &[f64], sol: &FemSolution) -> f64 {
        let nx = self.nx;
        let h = self.h();
        let mut f = 0.0;
        for cy in 0..nx {
            for cx in 0..nx {
                let kappa = kappa_cells[cx + cy * nx];
                let sw = sol.u[self.node(cx, cy)];
                let se = sol.u[self.node(cx + 1, cy)];
                let ne = sol.u[self.node(cx + 1, cy + 1)];
                let nw = sol.u[self.node(cx, cy + 1)];
                // int_cell d1(u) dx = h/2 ((se + ne) - (sw + nw)).
                f -= kappa * 0.5 * h * ((se + ne) - (sw + nw));
            }
        }
        f
    }

    /// Average outflow flux via the boundary form
    /// `-int kappa d1(u) |_{x1 = 1} dx2`, one-sided from the last cell
    /// column. Used as a consistency check of the volume form.
    pub fn flux_boundary(&self, kappa_cells: &[f64], sol: &FemSolution) -> f64 {
        let nx = self.nx;
        let mut f = 0.0;
        for cy in 0..nx {
            let cx = nx - 1;
            let kappa = kappa_cells[cx + cy * nx];
            let sw = sol.u[self.node(cx, cy)];
            let se = sol.u[self.node(cx + 1, cy)];
            let ne = sol.u[self.node(cx + 1, cy + 1)];
            let nw = sol.u[self.node(cx, cy + 1)];
            // d1(u) is constant in x1 on the cell; integrate over the edge.
            f -= kappa * 0.5 * ((se - sw) + (ne - nw));
        }
        f
    }

    /// Mean of `u_h` over an axis-aligned rectangle, exact for the bilinear
    /// interpolant (partial cells included).
    pub fn region_average(&self, sol: &FemSolution, region: (f64, f64, f64, f64)) -> f64 {
        let (x_lo, x_hi, y_lo, y_hi) = region;
        let nx = self.nx;
        let h = self.h();
        let mut integral = 0.0;
        for cy in 0..nx {
            let cy_lo = cy as f64 * h;
            let cy_hi = cy_lo + h;
            let ya = y_lo.max(cy_lo);
            let yb = y_hi.min(cy_hi);
            if yb <= ya {
                continue;
            }
            for cx in 0..nx {
                let cx_lo = cx as f64 * h;
                let cx_hi = cx_lo + h;
                let xa = x_lo.max(cx_lo);
                let xb = x_hi.min(cx_hi);
                if xb <= xa {
                    continue;
                }
                let sw = sol.u[self.node(cx, cy)];
                let se = sol.u[self.node(cx + 1, cy)];
                let ne = sol.u[self.node(cx + 1, cy + 1)];
                let nw = sol.u[self.node(cx, cy + 1)];
                // Local coordinates of the sub-rectangle in [0, 1].
                let (ta, tb) = ((xa - cx_lo) / h, (xb - cx_lo) / h);
                let (sa, sb) = ((ya - cy_lo) / h, (yb - cy_lo) / h);
                // 1-D integrals of (1 - t) and t over [ta, tb].
                let ix0 = (tb - ta) - 0.5 * (tb * tb - ta * ta);
                let ix1 = 0.5 * (tb * tb - ta * ta);
                let iy0 = (sb - sa) - 0.5 * (sb * sb - sa * sa);
                let iy1 = 0.5 * (sb * sb - sa * sa);
                integral +=
                    h * h * (sw * ix0 * iy0 + se * ix1 * iy0 + nw * ix0 * iy1 + ne * ix1 * iy1);
            }
        }
        integral / ((x_hi - x_lo) * (y_hi - y_lo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_coefficient_gives_linear_ramp() {
        let solver = FemSolver::new(8);
        let kappa = vec![1.0; 64];
        let sol = solver.solve(&kappa).unwrap();
        for j in 0..=8 {
            for i in 0..=8 {
                let x = i as f64 / 8.0;
                assert!(
                    (sol.u[i + j * 9] - (1.0 - x)).abs() < 1e-12,
                    "node ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn solution_invariant_under_coefficient_scaling() {
        let solver = FemSolver::new(6);
        let sol1 = solver.solve(&vec![1.0; 36]).unwrap();
        let sol5 = solver.solve(&vec![5.0; 36]).unwrap();
        for (a, b) in sol1.u.iter().zip(&sol5.u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_conditions_are_exact() {
        let solver = FemSolver::new(8);
        let kappa: Vec<f64> = (0..64).map(|c| 1.0 + 0.5 * ((c * 7 % 13) as f64 / 13.0)).collect();
        let sol = solver.solve(&kappa).unwrap();
        for j in 0..=8 {
            assert_eq!(sol.u[0 + j * 9], 1.0);
            assert_eq!(sol.u[8 + j * 9], 0.0);
        }
    }

    #[test]
    fn layered_coefficient_matches_harmonic_average_solution() {
        // kappa depends on x1 only and is constant per cell column; the
        // exact solution is 1-D with flux q = 1 / sum(h / kappa_col) and the
        // FE solution is nodally exact for this data.
        let nx = 16;
        let solver = FemSolver::new(nx);
        let cols: Vec<f64> = (0..nx).map(|c| 1.0 + 0.3 * (c as f64 * 0.9).sin().abs()).collect();
        let mut kappa = vec![0.0; nx * nx];
        for cy in 0..nx {
            for cx in 0..nx {
                kappa[cx + cy * nx] = cols[cx];
            }
        }
        let sol = solver.solve(&kappa).unwrap();
        let h = solver.h();
        let resistance: f64 = cols.iter().map(|k| h / k).sum();
        let q = 1.0 / resistance;
        // Exact nodal values: u(x_i) = 1 - q * sum_{c < i} h / kappa_c.
        let mut expected = vec![0.0; nx + 1];
        expected[0] = 1.0;
        for i in 1..=nx {
            expected[i] = expected[i - 1] - q * h / cols[i - 1];
        }
        for j in 0..=nx {
            for i in 0..=nx {
                assert!(
                    (sol.u[i + j * (nx + 1)] - expected[i]).abs() < 1e-10,
                    "node ({i},{j})"
                );
            }
        }
        // Flux equals the harmonic-average flux.
        let f = solver.flux(&kappa, &sol);
        assert!((f - q).abs() < 1e-10);
    }

    #[test]
    fn unit_coefficient_flux_is_one_and_scales_linearly() {
        let solver = FemSolver::new(8);
        let sol = solver.solve(&vec![1.0; 64]).unwrap();
        assert!((solver.flux(&vec![1.0; 64], &sol) - 1.0).abs() < 1e-12);
        let sol2 = solver.solve(&vec![2.0; 64]).unwrap();
        assert!((solver.flux(&vec![2.0; 64], &sol2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn volume_and_boundary_flux_forms_agree() {
        let nx = 16;
        let solver = FemSolver::new(nx);
        let kappa: Vec<f64> = (0..nx * nx)
            .map(|c| {
                let (cx, cy) = (c % nx, c / nx);
                0.8 + 0.4 * ((cx as f64 * 0.37).sin() * (cy as f64 * 0.53).cos()).abs()
            })
            .collect();
        let sol = solver.solve(&kappa).unwrap();
        let fv = solver.flux(&kappa, &sol);
        let fb = solver.flux_boundary(&kappa, &sol);
        // One-sided boundary evaluation differs at discretization level.
        assert!(
            (fv - fb).abs() < 0.05 * fv.abs(),
            "volume {fv} vs boundary {fb}"
        );
    }

    #[test]
    fn region_average_of_linear_ramp() {
        let solver = FemSolver::new(8);
        let sol = solver.solve(&vec![1.0; 64]).unwrap();
        // mean of 1 - x1 over [0, 0.5] x [0, 0.5] is 0.75.
        let avg = solver.region_average(&sol, (0.0, 0.5, 0.0, 0.5));
        assert!((avg - 0.75).abs() < 1e-12);
        // Region not aligned with the mesh.
        let avg = solver.region_average(&sol, (0.1, 0.35, 0.2, 0.9));
        assert!((avg - (1.0 - 0.225)).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_coefficient_is_rejected() {
        let solver = FemSolver::new(4);
        let mut kappa = vec![1.0; 16];
        kappa[5] = 0.0;
        assert!(matches!(
            solver.solve(&kappa),
            Err(TargetError::SolverBreakdown(_))
        ));
    }

    #[test]
    fn flux_converges_at_second_order_for_smooth_coefficient() {
        // Non-separable kappa (a separable one makes the solution exactly
        // 1-D and the flux mesh-independent). Errors against a
        // Richardson-extrapolated reference should follow ~h^2.
        let kappa_fn = |x: f64, y: f64| (0.6
            * (2.0 * std::f64::consts::PI * x).cos()
            * (2.0 * std::f64::consts::PI * y).sin()
            + 0.3 * x * y)
            .exp();
        let flux_at = |nx: usize| -> f64 {
            let solver = FemSolver::new(nx);
            let kappa: Vec<f64> = solver
                .cell_midpoints()
                .iter()
                .map(|&(x, y)| kappa_fn(x, y))
                .collect();
            let sol = solver.solve(&kappa).unwrap();
            solver.flux(&kappa, &sol)
        };
        let coarse = [16usize, 32, 64];
        let f128 = flux_at(128);
        let f64v = flux_at(64);
        let reference = f128 + (f128 - f64v) / 3.0;
        let pts: Vec<(f64, f64)> = coarse
            .iter()
            .map(|&nx| {
                let e = (flux_at(nx) - reference).abs();
                ((1.0 / nx as f64).ln(), e.ln())
            })
            .collect();
        // Least-squares slope of log(error) against log(h).
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (1.4..=2.6).contains(&slope),
            "fitted convergence order {slope:.2}"
        );
    }
}

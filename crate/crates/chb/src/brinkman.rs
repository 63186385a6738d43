//! Stationary Brinkman velocity solver on a staggered lattice.
//!
//! The momentum balance `-div(nu grad u) + eta u + grad pi = f`, `div u = 0`,
//! `u = 0` on the walls is solved in stream-function form on the classical
//! staggered layout: the stream function `psi` lives at cell corners with the
//! boundary ring fixed to zero (walls are streamlines, so no-penetration is
//! exact), and velocities live on the interior faces,
//!
//! ```text
//!   u_face(i+1/2, j) =  (psi(i+1/2, j+1/2) - psi(i+1/2, j-1/2)) / hy
//!   v_face(i, j+1/2) = -(psi(i+1/2, j+1/2) - psi(i-1/2, j+1/2)) / hx
//! ```
//!
//! Writing this map as `u = C psi`, the face divergence of `C psi` telescopes
//! to zero around each corner for *any* `psi`, so incompressibility holds
//! identically rather than up to a solver tolerance.  The same telescoping
//! gives `C^T g = 0` exactly whenever `g` is a discrete face gradient
//! (two-point differences of a cell scalar): gradient forces produce no flow
//! at all, which is what makes uniform phase states exact steady states of
//! the coupled system.
//!
//! Substituting `u = C psi` into the weak form yields the symmetric positive
//! definite system `K psi = C^T f` with `K = C^T M C`; `M` is the five-point
//! momentum operator `nu L + diag(eta)` assembled per face lattice.  Wall
//! conditions on `M`: the normal component vanishes at wall faces, which are
//! genuine lattice points (exact Dirichlet), while the tangential component
//! uses a reflection ghost (`u_ghost = -u_in`, zero wall value to second
//! order).  `C` is injective on interior-corner unknowns, so no null-space
//! pinning is needed.  `K` is banded with half-bandwidth about `2 nx`; it is
//! factored once by a banded Cholesky and reused by every forward, tangent,
//! and adjoint solve on the grid (diagonally preconditioned CG takes over if
//! the band would be unreasonably large).
//!
//! The cell-centered velocity reported alongside the face field is the
//! two-point average of adjacent faces (wall faces contribute their exact
//! zeros).  The pressure never enters the velocity solve; it is recovered on
//! demand as the least-squares potential of the momentum residual via a
//! pinned five-point Neumann Laplacian.

use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};
use crate::ops::{self, avg_c2f, avg_v2f_t, div_f2c, FaceField};
use crate::sparse::{BandedCholesky, Csr};

/// Velocity solve output.  `psi` is the stream function on the corner
/// lattice (dimensions `(nx+1) x (ny+1)`, boundary ring identically zero),
/// `u` the cell-centered velocity and `u_face` the face velocities whose
/// discrete divergence vanishes identically.
#[derive(Debug, Clone)]
pub struct Flow {
    pub psi: ScalarField,
    pub u: VectorField,
    pub u_face: FaceField,
}

/// How an SPD system is solved: banded direct factorization when the band
/// fits in a sane memory budget, diagonally preconditioned CG otherwise.
enum SpdSolve {
    Direct(BandedCholesky),
    Iterative { a: Csr, diag_inv: Vec<f64>, rel_tol: f64 },
}

impl SpdSolve {
    /// Budget in stored band entries before falling back to CG.
    const MAX_BAND_ENTRIES: usize = 24_000_000;

    fn build(a: Csr, rel_tol: f64) -> Result<SpdSolve> {
        let band_entries = a.n_rows * (a.bandwidth() + 1);
        if band_entries <= Self::MAX_BAND_ENTRIES {
            Ok(SpdSolve::Direct(BandedCholesky::factor(&a)?))
        } else {
            let mut diag_inv = vec![0.0; a.n_rows];
            for r in 0..a.n_rows {
                for k in a.indptr[r]..a.indptr[r + 1] {
                    if a.indices[k] == r {
                        diag_inv[r] = 1.0 / a.data[k];
                    }
                }
            }
            Ok(SpdSolve::Iterative { a, diag_inv, rel_tol })
        }
    }

    /// Returns the solution and the iteration count (0 for direct).
    fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        match self {
            SpdSolve::Direct(chol) => Ok((chol.solve(b), 0)),
            SpdSolve::Iterative { a, diag_inv, rel_tol } => {
                let mut x = vec![0.0; b.len()];
                let iters = ops::cg(
                    |v, out| a.mul_vec(v, out),
                    b,
                    &mut x,
                    Some(diag_inv),
                    *rel_tol,
                    40 * b.len(),
                )?;
                Ok((x, iters))
            }
        }
    }
}

pub struct BrinkmanSolver {
    grid: Grid2D,
    nu: f64,
    div_tol: f64,
    /// Unscaled `-Laplacian` on the x-face lattice (Dirichlet in x,
    /// reflection ghost in y) and its y-face counterpart.
    lap_x: Csr,
    lap_y: Csr,
    /// `eta` averaged onto each face lattice.
    eta_face: FaceField,
    /// Factorization of `K = C^T M C` on interior-corner unknowns.
    k_solve: SpdSolve,
    /// Pinned five-point Neumann Laplacian for pressure recovery.
    p_solve: SpdSolve,
}

impl BrinkmanSolver {
    pub fn new(grid: &Grid2D, nu: f64, eta: &ScalarField, div_tol: f64) -> Result<BrinkmanSolver> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(ChbError::config(format!("viscosity must be positive, got {nu}")));
        }
        if !eta.is_finite() || eta.data.iter().any(|&v| v < 0.0) {
            return Err(ChbError::config(
                "permeability coefficient eta must be finite and nonnegative",
            ));
        }
        if !(div_tol > 0.0) {
            return Err(ChbError::config("divergence tolerance must be positive"));
        }
        let eta_face = avg_c2f(grid, eta);
        let lap_x = face_laplacian_x(grid);
        let lap_y = face_laplacian_y(grid);

        // Full per-lattice momentum operators M = nu L + diag(eta_face).
        let nfx = (grid.nx - 1) * grid.ny;
        let nfy = grid.nx * (grid.ny - 1);
        let mx = diag_csr(nfx, &eta_face.fx).add_scaled(nu, &lap_x);
        let my = diag_csr(nfy, &eta_face.fy).add_scaled(nu, &lap_y);

        // K = Cx^T Mx Cx + Cy^T My Cy on interior corners.
        let cx = curl_matrix_x(grid);
        let cy = curl_matrix_y(grid);
        let k = cx
            .transpose()
            .matmul(&mx.matmul(&cx))
            .add_scaled(1.0, &cy.transpose().matmul(&my.matmul(&cy)));

        // Pressure-recovery operator: -div(diff(.)) with no-flux closure,
        // singular on constants, pinned at the first cell.
        let ndof = grid.n();
        let p_op = neumann_laplacian(grid)
            .add_scaled(1.0, &Csr::from_triplets(ndof, ndof, vec![(0, 0, 1.0)]));

        Ok(BrinkmanSolver {
            grid: grid.clone(),
            nu,
            div_tol,
            lap_x,
            lap_y,
            eta_face,
            k_solve: SpdSolve::build(k, 1e-13)?,
            p_solve: SpdSolve::build(p_op, 1e-13)?,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// Solves the Brinkman system for a face-sampled force.  Returns the
    /// flow and the inner iteration count (0 when the direct factorization
    /// is used).
    pub fn solve(&self, f: &FaceField) -> Result<(Flow, usize)> {
        let rhs_corner = corner_to_faces_t(&self.grid, f);
        let rhs = extract_interior(&self.grid, &rhs_corner);
        let (psi_dof, iters) = self.k_solve.solve(&rhs)?;
        let psi = embed_interior(&self.grid, &psi_dof);
        let u_face = corner_to_faces(&self.grid, &psi);
        let u = avg_v2f_t(&self.grid, &u_face);
        let div_max = div_f2c(&self.grid, &u_face).max_abs();
        if div_max > self.div_tol {
            return Err(ChbError::numerical(format!(
                "velocity divergence {div_max:e} exceeds tolerance {:e}",
                self.div_tol
            )));
        }
        Ok((Flow { psi, u, u_face }, iters))
    }

    /// Exact transpose of the force-to-outputs map `f -> (u, u_face)`.
    /// Given duals `w_center` (paired with the centered velocity) and
    /// `w_face` (paired with the face velocities), returns the dual force
    /// on faces.
    pub fn adjoint_force(
        &self,
        w_center: &VectorField,
        w_face: Option<&FaceField>,
    ) -> Result<FaceField> {
        // Transpose of the face->center averaging is avg_v2f.
        let mut wf = ops::avg_v2f(&self.grid, w_center);
        if let Some(extra) = w_face {
            wf.axpy(1.0, extra);
        }
        let rhs = extract_interior(&self.grid, &corner_to_faces_t(&self.grid, &wf));
        let (psi_dual, _) = self.k_solve.solve(&rhs)?;
        Ok(corner_to_faces(&self.grid, &embed_interior(&self.grid, &psi_dual)))
    }

    /// Applies the momentum operator `M = nu L + diag(eta)` to face
    /// velocities.
    pub fn momentum(&self, u_face: &FaceField) -> FaceField {
        let mut out = FaceField::zeros(&self.grid);
        self.lap_x.mul_vec(&u_face.fx, &mut out.fx);
        self.lap_y.mul_vec(&u_face.fy, &mut out.fy);
        for (o, (u, e)) in out.fx.iter_mut().zip(u_face.fx.iter().zip(&self.eta_face.fx)) {
            *o = self.nu * *o + e * u;
        }
        for (o, (u, e)) in out.fy.iter_mut().zip(u_face.fy.iter().zip(&self.eta_face.fy)) {
            *o = self.nu * *o + e * u;
        }
        out
    }

    /// Viscous dissipation `nu <u, L u>` in the grid-weighted pairing;
    /// nonnegative because `L` is positive semidefinite.
    pub fn viscous_dissipation(&self, u_face: &FaceField) -> f64 {
        let mut lx = vec![0.0; u_face.fx.len()];
        let mut ly = vec![0.0; u_face.fy.len()];
        self.lap_x.mul_vec(&u_face.fx, &mut lx);
        self.lap_y.mul_vec(&u_face.fy, &mut ly);
        self.nu * (ops::dot(&u_face.fx, &lx) + ops::dot(&u_face.fy, &ly)) * self.grid.cell_area()
    }

    /// Permeability dissipation `<eta u, u>` over faces; nonnegative.
    pub fn permeability_dissipation(&self, u_face: &FaceField) -> f64 {
        (u_face
            .fx
            .iter()
            .zip(&self.eta_face.fx)
            .map(|(u, e)| e * u * u)
            .sum::<f64>()
            + u_face
                .fy
                .iter()
                .zip(&self.eta_face.fy)
                .map(|(u, e)| e * u * u)
                .sum::<f64>())
            * self.grid.cell_area()
    }

    /// Recovers the cell-centered pressure from the momentum residual: the
    /// least-squares potential of `f - M u` over discrete gradients, shifted
    /// to zero mean.
    pub fn pressure(&self, f: &FaceField, u_face: &FaceField) -> Result<ScalarField> {
        let mut res = f.clone();
        res.axpy(-1.0, &self.momentum(u_face));
        // Normal equations: (-div diff) pi = -div(res).
        let mut rhs = div_f2c(&self.grid, &res);
        rhs.scale(-1.0);
        let (p, _) = self.p_solve.solve(&rhs.data)?;
        let mut p = ScalarField { nx: self.grid.nx, ny: self.grid.ny, data: p };
        let mean = ops::mass(&self.grid, &p) / (self.grid.lx * self.grid.ly);
        for v in &mut p.data {
            *v -= mean;
        }
        Ok(p)
    }
}

/// Face velocities from a corner stream function: differences of corner
/// values along each interior face.  The face divergence of the result is
/// identically zero by telescoping.
pub fn corner_to_faces(grid: &Grid2D, psi: &ScalarField) -> FaceField {
    let (nx, ny) = (grid.nx, grid.ny);
    debug_assert_eq!((psi.nx, psi.ny), (nx + 1, ny + 1));
    let cw = nx + 1;
    let mut out = FaceField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            out.fx[j * (nx - 1) + i] =
                (psi.data[(j + 1) * cw + (i + 1)] - psi.data[j * cw + (i + 1)]) / grid.hy;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            out.fy[j * nx + i] =
                -(psi.data[(j + 1) * cw + (i + 1)] - psi.data[(j + 1) * cw + i]) / grid.hx;
        }
    }
    out
}

/// Exact transpose of [`corner_to_faces`] (duals land on the full corner
/// lattice; the boundary ring entries are irrelevant to the solve and left
/// as accumulated).
pub fn corner_to_faces_t(grid: &Grid2D, w: &FaceField) -> ScalarField {
    let (nx, ny) = (grid.nx, grid.ny);
    let cw = nx + 1;
    let mut out = ScalarField { nx: nx + 1, ny: ny + 1, data: vec![0.0; (nx + 1) * (ny + 1)] };
    for j in 0..ny {
        for i in 0..nx - 1 {
            let v = w.fx[j * (nx - 1) + i] / grid.hy;
            out.data[(j + 1) * cw + (i + 1)] += v;
            out.data[j * cw + (i + 1)] -= v;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let v = w.fy[j * nx + i] / grid.hx;
            out.data[(j + 1) * cw + (i + 1)] -= v;
            out.data[(j + 1) * cw + i] += v;
        }
    }
    out
}

/// Interior-corner unknown count: `(nx-1) * (ny-1)`.
fn n_interior(grid: &Grid2D) -> usize {
    (grid.nx - 1) * (grid.ny - 1)
}

/// DOF index of interior corner `(ci, cj)`, `ci in 1..nx`, `cj in 1..ny`.
#[inline]
fn dof(grid: &Grid2D, ci: usize, cj: usize) -> usize {
    (cj - 1) * (grid.nx - 1) + (ci - 1)
}

fn extract_interior(grid: &Grid2D, corner: &ScalarField) -> Vec<f64> {
    let cw = grid.nx + 1;
    let mut out = vec![0.0; n_interior(grid)];
    for cj in 1..grid.ny {
        for ci in 1..grid.nx {
            out[dof(grid, ci, cj)] = corner.data[cj * cw + ci];
        }
    }
    out
}

fn embed_interior(grid: &Grid2D, dofs: &[f64]) -> ScalarField {
    let cw = grid.nx + 1;
    let mut out = ScalarField {
        nx: grid.nx + 1,
        ny: grid.ny + 1,
        data: vec![0.0; (grid.nx + 1) * (grid.ny + 1)],
    };
    for cj in 1..grid.ny {
        for ci in 1..grid.nx {
            out.data[cj * cw + ci] = dofs[dof(grid, ci, cj)];
        }
    }
    out
}

/// The map from interior-corner psi to x-face velocities as a sparse matrix.
fn curl_matrix_x(grid: &Grid2D) -> Csr {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut t = Vec::with_capacity(2 * (nx - 1) * ny);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let r = j * (nx - 1) + i;
            // u = (psi(i+1, j+1) - psi(i+1, j)) / hy; boundary corners are 0.
            if j + 1 <= ny - 1 {
                t.push((r, dof(grid, i + 1, j + 1), 1.0 / grid.hy));
            }
            if j >= 1 {
                t.push((r, dof(grid, i + 1, j), -1.0 / grid.hy));
            }
        }
    }
    Csr::from_triplets((nx - 1) * ny, n_interior(grid), t)
}

/// The map from interior-corner psi to y-face velocities.
fn curl_matrix_y(grid: &Grid2D) -> Csr {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut t = Vec::with_capacity(2 * nx * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx {
            let r = j * nx + i;
            // v = -(psi(i+1, j+1) - psi(i, j+1)) / hx.
            if i + 1 <= nx - 1 {
                t.push((r, dof(grid, i + 1, j + 1), -1.0 / grid.hx));
            }
            if i >= 1 {
                t.push((r, dof(grid, i, j + 1), 1.0 / grid.hx));
            }
        }
    }
    Csr::from_triplets(nx * (ny - 1), n_interior(grid), t)
}

/// Unscaled `-Laplacian` on the x-face lattice `(nx-1) x ny`.  In x the
/// neighbors at `i = -1` and `i = nx-1` are wall faces where the normal
/// velocity is exactly zero (Dirichlet at a lattice point); in y the wall
/// lies half a cell outside and a reflection ghost enforces the zero wall
/// value of the tangential component.
fn face_laplacian_x(grid: &Grid2D) -> Csr {
    let (nx, ny) = (grid.nx, grid.ny);
    let rx = 1.0 / (grid.hx * grid.hx);
    let ry = 1.0 / (grid.hy * grid.hy);
    let n = (nx - 1) * ny;
    let mut t = Vec::with_capacity(5 * n);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let r = j * (nx - 1) + i;
            let mut diag = 2.0 * rx; // wall faces are exact zeros
            if i > 0 {
                t.push((r, r - 1, -rx));
            }
            if i < nx - 2 {
                t.push((r, r + 1, -rx));
            }
            diag += 2.0 * ry;
            if j > 0 {
                t.push((r, r - (nx - 1), -ry));
            } else {
                diag += ry; // reflection ghost: u(-1) = -u(0)
            }
            if j < ny - 1 {
                t.push((r, r + (nx - 1), -ry));
            } else {
                diag += ry;
            }
            t.push((r, r, diag));
        }
    }
    Csr::from_triplets(n, n, t)
}

/// Unscaled `-Laplacian` on the y-face lattice `nx x (ny-1)`; the roles of
/// the two directions are mirrored.
fn face_laplacian_y(grid: &Grid2D) -> Csr {
    let (nx, ny) = (grid.nx, grid.ny);
    let rx = 1.0 / (grid.hx * grid.hx);
    let ry = 1.0 / (grid.hy * grid.hy);
    let n = nx * (ny - 1);
    let mut t = Vec::with_capacity(5 * n);
    for j in 0..ny - 1 {
        for i in 0..nx {
            let r = j * nx + i;
            let mut diag = 2.0 * ry;
            if j > 0 {
                t.push((r, r - nx, -ry));
            }
            if j < ny - 2 {
                t.push((r, r + nx, -ry));
            }
            diag += 2.0 * rx;
            if i > 0 {
                t.push((r, r - 1, -rx));
            } else {
                diag += rx;
            }
            if i < nx - 1 {
                t.push((r, r + 1, -rx));
            } else {
                diag += rx;
            }
            t.push((r, r, diag));
        }
    }
    Csr::from_triplets(n, n, t)
}

/// Five-point `-div(diff(.))` with no-flux closure on cells: positive
/// semidefinite with constant null space.
fn neumann_laplacian(grid: &Grid2D) -> Csr {
    let (nx, ny) = (grid.nx, grid.ny);
    let rx = 1.0 / (grid.hx * grid.hx);
    let ry = 1.0 / (grid.hy * grid.hy);
    let mut t = Vec::with_capacity(5 * grid.n());
    for j in 0..ny {
        for i in 0..nx {
            let r = j * nx + i;
            let mut diag = 0.0;
            if i > 0 {
                t.push((r, r - 1, -rx));
                diag += rx;
            }
            if i < nx - 1 {
                t.push((r, r + 1, -rx));
                diag += rx;
            }
            if j > 0 {
                t.push((r, r - nx, -ry));
                diag += ry;
            }
            if j < ny - 1 {
                t.push((r, r + nx, -ry));
                diag += ry;
            }
            t.push((r, r, diag));
        }
    }
    Csr::from_triplets(grid.n(), grid.n(), t)
}

fn diag_csr(n: usize, values: &[f64]) -> Csr {
    Csr::from_triplets(n, n, values.iter().enumerate().map(|(k, &v)| (k, k, v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{diff_c2f, dot, inner_face, inner_vec, l2_norm_face, l2_norm_vec};
    use std::f64::consts::PI;

    fn eta_field(grid: &Grid2D) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| 1.0 + 0.5 * (PI * x).sin() * (PI * y).sin())
    }

    /// Manufactured Brinkman solution with exact no-slip walls on [0,1]^2:
    /// psi* = sin^2(pi x) sin^2(pi y) / pi, so
    /// u* = (sin^2(pi x) sin(2 pi y), -sin(2 pi x) sin^2(pi y)).
    fn exact_ux(x: f64, y: f64) -> f64 {
        (PI * x).sin().powi(2) * (2.0 * PI * y).sin()
    }

    fn exact_uy(x: f64, y: f64) -> f64 {
        -(2.0 * PI * x).sin() * (PI * y).sin().powi(2)
    }

    /// Forcing -nu lap(u*) + eta u* + grad(pi*) with pi* = cos(pi x) cos(pi y).
    fn force_x(x: f64, y: f64, nu: f64) -> f64 {
        let lap_ux = 2.0 * PI * PI * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
            - 4.0 * PI * PI * (PI * x).sin().powi(2) * (2.0 * PI * y).sin();
        let eta = 1.0 + 0.5 * (PI * x).sin() * (PI * y).sin();
        let dpx = -PI * (PI * x).sin() * (PI * y).cos();
        -nu * lap_ux + eta * exact_ux(x, y) + dpx
    }

    fn force_y(x: f64, y: f64, nu: f64) -> f64 {
        let lap_uy = 4.0 * PI * PI * (2.0 * PI * x).sin() * (PI * y).sin().powi(2)
            - 2.0 * PI * PI * (2.0 * PI * x).sin() * (2.0 * PI * y).cos();
        let eta = 1.0 + 0.5 * (PI * x).sin() * (PI * y).sin();
        let dpy = -PI * (PI * x).cos() * (PI * y).sin();
        -nu * lap_uy + eta * exact_uy(x, y) + dpy
    }

    #[test]
    fn zero_force_gives_bitwise_zero_flow() {
        let grid = Grid2D::new(16, 16, 1.0, 1.0).unwrap();
        let solver = BrinkmanSolver::new(&grid, 0.5, &eta_field(&grid), 1e-10).unwrap();
        let (flow, _) = solver.solve(&FaceField::zeros(&grid)).unwrap();
        assert_eq!(flow.u.max_norm(), 0.0);
        assert_eq!(flow.u_face.max_abs(), 0.0);
    }

    #[test]
    fn face_gradient_forces_produce_no_flow() {
        // f = diff(p) is annihilated by C^T exactly (telescoping), so the
        // velocity is zero up to rounding in the cancellation.
        let grid = Grid2D::new(24, 20, 1.0, 0.8).unwrap();
        let solver = BrinkmanSolver::new(&grid, 0.3, &eta_field(&grid), 1e-10).unwrap();
        let p = ScalarField::from_fn(&grid, |x, y| (3.0 * x).cos() * (2.0 * y + 0.3).sin());
        let f = diff_c2f(&grid, &p);
        let (flow, _) = solver.solve(&f).unwrap();
        let rel = flow.u_face.max_abs() / f.max_abs();
        assert!(rel <= 1e-12, "gradient force leaked velocity {rel:e}");
    }

    #[test]
    fn solved_flow_is_exactly_divergence_free() {
        let grid = Grid2D::new(20, 28, 1.0, 1.3).unwrap();
        let nu = 0.7;
        let solver = BrinkmanSolver::new(&grid, nu, &eta_field(&grid), 1e-10).unwrap();
        let f = FaceField::from_fn(&grid, |x, y| force_x(x, y, nu), |x, y| force_y(x, y, nu));
        let (flow, _) = solver.solve(&f).unwrap();
        let div = div_f2c(&grid, &flow.u_face).max_abs();
        let scale = flow.u_face.max_abs() / grid.hx.min(grid.hy);
        assert!(div <= 1e-13 * scale.max(1.0), "face divergence {div:e}");
    }

    #[test]
    fn corner_to_faces_transpose_is_exact() {
        let grid = Grid2D::new(9, 12, 1.0, 1.3).unwrap();
        let psi = ScalarField {
            nx: grid.nx + 1,
            ny: grid.ny + 1,
            data: (0..(grid.nx + 1) * (grid.ny + 1))
                .map(|k| (k as f64 * 0.61).sin())
                .collect(),
        };
        let mut w = FaceField::zeros(&grid);
        w.fx.iter_mut().enumerate().for_each(|(k, v)| *v = (k as f64 * 0.37).sin());
        w.fy.iter_mut().enumerate().for_each(|(k, v)| *v = (k as f64 * 0.21).cos());
        let fv = corner_to_faces(&grid, &psi);
        let lhs = dot(&fv.fx, &w.fx) + dot(&fv.fy, &w.fy);
        let rhs = dot(&psi.data, &corner_to_faces_t(&grid, &w).data);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn force_to_velocity_map_is_self_adjoint() {
        let grid = Grid2D::new(14, 10, 1.0, 0.7).unwrap();
        let solver = BrinkmanSolver::new(&grid, 0.4, &eta_field(&grid), 1e-9).unwrap();
        let f = FaceField::from_fn(&grid, |x, y| (4.0 * x + y).sin(), |x, y| (x - 3.0 * y).cos());
        let w = VectorField::from_fn(&grid, |x, y| (x * y * 9.0).cos(), |x, y| (2.0 * x + 2.0 * y).sin());
        let mut wf = FaceField::zeros(&grid);
        wf.fx.iter_mut().enumerate().for_each(|(k, v)| *v = ((k % 17) as f64 - 8.0) * 0.1);
        wf.fy.iter_mut().enumerate().for_each(|(k, v)| *v = ((k % 11) as f64 - 5.0) * 0.07);

        let (flow, _) = solver.solve(&f).unwrap();
        let lhs = inner_vec(&grid, &flow.u, &w) + inner_face(&grid, &flow.u_face, &wf);
        let dual = solver.adjoint_force(&w, Some(&wf)).unwrap();
        let rhs = inner_face(&grid, &f, &dual);
        let scale = lhs.abs().max(rhs.abs()).max(1e-30);
        assert!(
            ((lhs - rhs) / scale).abs() <= 1e-11,
            "adjoint pairing defect: lhs {lhs:e} rhs {rhs:e}"
        );
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let nu = 0.7;
        let mut errs = Vec::new();
        for &n in &[16usize, 32] {
            let grid = Grid2D::new(n, n, 1.0, 1.0).unwrap();
            let solver = BrinkmanSolver::new(&grid, nu, &eta_field(&grid), 1e-10).unwrap();
            let f = FaceField::from_fn(&grid, |x, y| force_x(x, y, nu), |x, y| force_y(x, y, nu));
            let (flow, _) = solver.solve(&f).unwrap();
            let exact = FaceField::from_fn(&grid, exact_ux, exact_uy);
            let mut diff = flow.u_face.clone();
            diff.axpy(-1.0, &exact);
            errs.push(l2_norm_face(&grid, &diff) / l2_norm_face(&grid, &exact));
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "MMS order {order:.3} (errors {errs:?})");
    }

    #[test]
    fn centered_velocity_converges_too() {
        let nu = 0.7;
        let mut errs = Vec::new();
        for &n in &[16usize, 32] {
            let grid = Grid2D::new(n, n, 1.0, 1.0).unwrap();
            let solver = BrinkmanSolver::new(&grid, nu, &eta_field(&grid), 1e-10).unwrap();
            let f = FaceField::from_fn(&grid, |x, y| force_x(x, y, nu), |x, y| force_y(x, y, nu));
            let (flow, _) = solver.solve(&f).unwrap();
            let exact = VectorField::from_fn(&grid, exact_ux, exact_uy);
            let mut diff = flow.u.clone();
            diff.axpy(-1.0, &exact);
            errs.push(l2_norm_vec(&grid, &diff) / l2_norm_vec(&grid, &exact));
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.5, "centered MMS order {order:.3} (errors {errs:?})");
    }

    #[test]
    fn pressure_recovery_tracks_manufactured_pressure() {
        let nu = 0.7;
        let grid = Grid2D::new(32, 32, 1.0, 1.0).unwrap();
        let solver = BrinkmanSolver::new(&grid, nu, &eta_field(&grid), 1e-10).unwrap();
        let f = FaceField::from_fn(&grid, |x, y| force_x(x, y, nu), |x, y| force_y(x, y, nu));
        let (flow, _) = solver.solve(&f).unwrap();
        let p = solver.pressure(&f, &flow.u_face).unwrap();
        // pi* = cos(pi x) cos(pi y) already has zero mean.
        let exact = ScalarField::from_fn(&grid, |x, y| (PI * x).cos() * (PI * y).cos());
        let err = ops::l2_norm(&grid, &p.sub(&exact)) / ops::l2_norm(&grid, &exact);
        assert!(err < 0.05, "pressure error {err:e}");
    }

    #[test]
    fn dissipation_terms_are_nonnegative() {
        let grid = Grid2D::new(12, 15, 1.0, 1.1).unwrap();
        let nu = 0.2;
        let solver = BrinkmanSolver::new(&grid, nu, &eta_field(&grid), 1e-9).unwrap();
        let f = FaceField::from_fn(&grid, |x, y| (x + y).sin(), |x, y| (x * y).cos());
        let (flow, _) = solver.solve(&f).unwrap();
        assert!(solver.viscous_dissipation(&flow.u_face) >= 0.0);
        assert!(solver.permeability_dissipation(&flow.u_face) >= 0.0);
        // Energy balance: <f, u> = viscous + permeability dissipation, a
        // consequence of testing the momentum equation with u itself.
        let lhs = inner_face(&grid, &f, &flow.u_face);
        let rhs = solver.viscous_dissipation(&flow.u_face)
            + solver.permeability_dissipation(&flow.u_face);
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}

//! Discrete calculus on the cell-centered grid.
//!
//! Two families of operators live here and they are kept strictly separate:
//!
//! * **Centered derivatives** ([`DiffOps`]): second-order stencils (centered
//!   in the interior, one-sided at the first and last cell of a line) used
//!   for gradients and divergences of smooth diagnostic quantities.  The
//!   stencils are stored as explicit sparse rows, so the exact transpose of
//!   every operator is available by scattering the same coefficients — the
//!   adjoint machinery relies on those transposes being exact to rounding.
//!
//! * **Face calculus** (`avg_*`, `diff_*`, `div_*`): two-point averages and
//!   differences between cell centers and the interior faces between them.
//!   Boundary faces carry zero flux, which is how the no-flux boundary
//!   condition enters.  A divergence built from face fluxes telescopes, so
//!   transport and diffusion in this form conserve mass to rounding.
//!
//! The variable-coefficient Laplacian [`vcl`] composes the face primitives:
//! `vcl(c, f) = div(avg(c) * diff(f))`.  It is symmetric, conservative, and
//! reduces to the standard five-point Laplacian for constant `c`.
//!
//! Reductions that feed conservation and energy statements (`mass`, `inner`)
//! use Neumaier-compensated summation so the measurement itself does not
//! drown the 1e-12-level budgets the solver is tested against.

use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};

// ---------------------------------------------------------------------------
// Compensated reductions
// ---------------------------------------------------------------------------

/// Neumaier-compensated sum; error is O(eps) independent of length.
pub fn ksum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

/// Discrete mass `sum_ij f_ij hx hy`.
pub fn mass(grid: &Grid2D, f: &ScalarField) -> f64 {
    ksum(f.data.iter().copied()) * grid.cell_area()
}

/// Discrete L2 inner product `sum_ij f_ij g_ij hx hy`.
pub fn inner(grid: &Grid2D, f: &ScalarField, g: &ScalarField) -> f64 {
    debug_assert!(f.same_shape(g));
    ksum(f.data.iter().zip(&g.data).map(|(a, b)| a * b)) * grid.cell_area()
}

/// Discrete L2 norm.
pub fn l2_norm(grid: &Grid2D, f: &ScalarField) -> f64 {
    inner(grid, f, f).sqrt()
}

/// Inner product of vector fields (sum over both components).
pub fn inner_vec(grid: &Grid2D, u: &VectorField, v: &VectorField) -> f64 {
    inner(grid, &u.x, &v.x) + inner(grid, &u.y, &v.y)
}

/// L2 norm of a vector field.
pub fn l2_norm_vec(grid: &Grid2D, u: &VectorField) -> f64 {
    inner_vec(grid, u, u).sqrt()
}

/// Inner product of face fields, both face sets, weighted by cell area.
pub fn inner_face(grid: &Grid2D, a: &crate::ops::FaceField, b: &crate::ops::FaceField) -> f64 {
    (ksum(a.fx.iter().zip(&b.fx).map(|(x, y)| x * y))
        + ksum(a.fy.iter().zip(&b.fy).map(|(x, y)| x * y)))
        * grid.cell_area()
}

/// L2 norm of a face field.
pub fn l2_norm_face(grid: &Grid2D, a: &crate::ops::FaceField) -> f64 {
    inner_face(grid, a, a).sqrt()
}

/// Plain (uncompensated) dot product of raw slices; used inside iterative
/// solvers where speed matters and rounding noise is harmless.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Centered derivatives with explicit transposes
// ---------------------------------------------------------------------------

/// A one-dimensional derivative operator stored as explicit sparse rows,
/// second-order accurate: centered differences in the interior, one-sided
/// three-point stencils on the first and last point of a line.
#[derive(Debug, Clone)]
pub struct Deriv1D {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rows_t: Vec<Vec<(usize, f64)>>,
}

impl Deriv1D {
    pub fn new(n: usize, h: f64) -> Self {
        assert!(n >= 4, "derivative stencils need at least 4 points");
        let c = 1.0 / (2.0 * h);
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        rows.push(vec![(0, -3.0 * c), (1, 4.0 * c), (2, -c)]);
        for k in 1..n - 1 {
            rows.push(vec![(k - 1, -c), (k + 1, c)]);
        }
        rows.push(vec![(n - 3, c), (n - 2, -4.0 * c), (n - 1, 3.0 * c)]);

        // Exact transpose: scatter the same coefficients by column.
        let mut rows_t: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for &(col, w) in row {
                rows_t[col].push((r, w));
            }
        }
        Deriv1D { n, rows, rows_t }
    }

    #[inline]
    fn stencil(&self, transpose: bool) -> &[Vec<(usize, f64)>] {
        if transpose {
            &self.rows_t
        } else {
            &self.rows
        }
    }

    /// Forward stencil row `k` as (column, coefficient) pairs; used to
    /// assemble the same operator into sparse matrices.
    pub fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.rows[k]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Centered derivative operators bound to one grid.  Build once per grid and
/// share; construction is cheap but not free.
#[derive(Debug, Clone)]
pub struct DiffOps {
    dx: Deriv1D,
    dy: Deriv1D,
}

impl DiffOps {
    pub fn new(grid: &Grid2D) -> Self {
        DiffOps {
            dx: Deriv1D::new(grid.nx, grid.hx),
            dy: Deriv1D::new(grid.ny, grid.hy),
        }
    }

    /// The 1D operator along x (for matrix assembly).
    pub fn dx_op(&self) -> &Deriv1D {
        &self.dx
    }

    /// The 1D operator along y (for matrix assembly).
    pub fn dy_op(&self) -> &Deriv1D {
        &self.dy
    }

    fn apply_x(&self, f: &ScalarField, transpose: bool) -> ScalarField {
        let (nx, ny) = (f.nx, f.ny);
        assert_eq!(nx, self.dx.n, "field width does not match operator");
        let rows = self.dx.stencil(transpose);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            let base = j * nx;
            for i in 0..nx {
                let mut s = 0.0;
                for &(col, w) in &rows[i] {
                    s += w * f.data[base + col];
                }
                out[base + i] = s;
            }
        }
        ScalarField { nx, ny, data: out }
    }

    fn apply_y(&self, f: &ScalarField, transpose: bool) -> ScalarField {
        let (nx, ny) = (f.nx, f.ny);
        assert_eq!(ny, self.dy.n, "field height does not match operator");
        let rows = self.dy.stencil(transpose);
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny {
            for &(col, w) in &rows[j] {
                let src = col * nx;
                let dst = j * nx;
                for i in 0..nx {
                    out[dst + i] += w * f.data[src + i];
                }
            }
        }
        ScalarField { nx, ny, data: out }
    }

    /// `d f / dx`, second order everywhere.
    pub fn ddx(&self, f: &ScalarField) -> ScalarField {
        self.apply_x(f, false)
    }

    /// `d f / dy`, second order everywhere.
    pub fn ddy(&self, f: &ScalarField) -> ScalarField {
        self.apply_y(f, false)
    }

    /// Exact matrix transpose of [`Self::ddx`].
    pub fn ddx_t(&self, f: &ScalarField) -> ScalarField {
        self.apply_x(f, true)
    }

    /// Exact matrix transpose of [`Self::ddy`].
    pub fn ddy_t(&self, f: &ScalarField) -> ScalarField {
        self.apply_y(f, true)
    }

    /// Centered gradient `(df/dx, df/dy)`.
    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        VectorField {
            x: self.ddx(f),
            y: self.ddy(f),
        }
    }

    /// Exact transpose of [`Self::gradient`]: `ddx_t(vx) + ddy_t(vy)`.
    pub fn gradient_t(&self, v: &VectorField) -> ScalarField {
        let mut out = self.ddx_t(&v.x);
        out.axpy(1.0, &self.ddy_t(&v.y));
        out
    }

    /// Centered divergence `dvx/dx + dvy/dy`.
    pub fn divergence(&self, v: &VectorField) -> ScalarField {
        let mut out = self.ddx(&v.x);
        out.axpy(1.0, &self.ddy(&v.y));
        out
    }
}

// ---------------------------------------------------------------------------
// Face calculus
// ---------------------------------------------------------------------------

/// Values on interior faces: `fx` on the (nx-1) x ny vertical faces, `fy` on
/// the nx x (ny-1) horizontal faces.  Boundary faces are implicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub nx: usize,
    pub ny: usize,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Grid2D) -> Self {
        FaceField {
            nx: grid.nx,
            ny: grid.ny,
            fx: vec![0.0; (grid.nx - 1) * grid.ny],
            fy: vec![0.0; grid.nx * (grid.ny - 1)],
        }
    }

    /// Samples `fx` at vertical-face centers `((i+1) hx, (j+1/2) hy)` and
    /// `fy` at horizontal-face centers `((i+1/2) hx, (j+1) hy)`.
    pub fn from_fn(
        grid: &Grid2D,
        mut fx: impl FnMut(f64, f64) -> f64,
        mut fy: impl FnMut(f64, f64) -> f64,
    ) -> Self {
        let mut out = FaceField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx - 1 {
                out.fx[j * (grid.nx - 1) + i] = fx((i + 1) as f64 * grid.hx, grid.y(j));
            }
        }
        for j in 0..grid.ny - 1 {
            for i in 0..grid.nx {
                out.fy[j * grid.nx + i] = fy(grid.x(i), (j + 1) as f64 * grid.hy);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        let a = self.fx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.fy.iter().fold(a, |m, v| m.max(v.abs()))
    }

    /// Index of the vertical face between cells `(i, j)` and `(i+1, j)`.
    #[inline]
    pub fn ix(&self, i: usize, j: usize) -> usize {
        j * (self.nx - 1) + i
    }

    /// Index of the horizontal face between cells `(i, j)` and `(i, j+1)`.
    #[inline]
    pub fn iy(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Elementwise product with another face field.
    pub fn mul(&self, other: &FaceField) -> FaceField {
        FaceField {
            nx: self.nx,
            ny: self.ny,
            fx: self.fx.iter().zip(&other.fx).map(|(a, b)| a * b).collect(),
            fy: self.fy.iter().zip(&other.fy).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn axpy(&mut self, s: f64, other: &FaceField) {
        for (a, b) in self.fx.iter_mut().zip(&other.fx) {
            *a += s * b;
        }
        for (a, b) in self.fy.iter_mut().zip(&other.fy) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.fx {
            *v *= s;
        }
        for v in &mut self.fy {
            *v *= s;
        }
    }
}

/// Two-point average of a cell scalar onto both face sets.
pub fn avg_c2f(grid: &Grid2D, c: &ScalarField) -> FaceField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = FaceField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            out.fx[j * (nx - 1) + i] = 0.5 * (c.data[j * nx + i] + c.data[j * nx + i + 1]);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            out.fy[j * nx + i] = 0.5 * (c.data[j * nx + i] + c.data[(j + 1) * nx + i]);
        }
    }
    out
}

/// Exact transpose of [`avg_c2f`]: spreads each face value back to its two
/// neighbouring cells with weight 1/2, summing both face sets.
pub fn avg_c2f_t(grid: &Grid2D, f: &FaceField) -> ScalarField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = ScalarField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let v = 0.5 * f.fx[j * (nx - 1) + i];
            out.data[j * nx + i] += v;
            out.data[j * nx + i + 1] += v;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let v = 0.5 * f.fy[j * nx + i];
            out.data[j * nx + i] += v;
            out.data[(j + 1) * nx + i] += v;
        }
    }
    out
}

/// General two-point face stencil: combines the two cells adjacent to each
/// interior face with face-resident weights, `out_f = w0_f c_L + w1_f c_R`
/// where `L` is the lower-index cell. [`avg_c2f`] is the special case
/// `w0 = w1 = 1/2`; a frozen-coefficient linearization of any face quantity
/// built from the two adjacent cell values lands in this form.
pub fn face_comb(grid: &Grid2D, w0: &FaceField, w1: &FaceField, c: &ScalarField) -> FaceField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = FaceField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let f = j * (nx - 1) + i;
            out.fx[f] = w0.fx[f] * c.data[j * nx + i] + w1.fx[f] * c.data[j * nx + i + 1];
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let f = j * nx + i;
            out.fy[f] = w0.fy[f] * c.data[j * nx + i] + w1.fy[f] * c.data[(j + 1) * nx + i];
        }
    }
    out
}

/// Exact transpose of [`face_comb`]: scatters each face value back to its two
/// neighbouring cells with the same weights, summing both face sets.
pub fn face_comb_t(grid: &Grid2D, w0: &FaceField, w1: &FaceField, f: &FaceField) -> ScalarField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = ScalarField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let k = j * (nx - 1) + i;
            out.data[j * nx + i] += w0.fx[k] * f.fx[k];
            out.data[j * nx + i + 1] += w1.fx[k] * f.fx[k];
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let k = j * nx + i;
            out.data[j * nx + i] += w0.fy[k] * f.fy[k];
            out.data[(j + 1) * nx + i] += w1.fy[k] * f.fy[k];
        }
    }
    out
}

/// Component-wise two-point average of a cell vector field onto faces:
/// `v.x` to vertical faces, `v.y` to horizontal faces.
pub fn avg_v2f(grid: &Grid2D, v: &VectorField) -> FaceField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = FaceField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            out.fx[j * (nx - 1) + i] = 0.5 * (v.x.data[j * nx + i] + v.x.data[j * nx + i + 1]);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            out.fy[j * nx + i] = 0.5 * (v.y.data[j * nx + i] + v.y.data[(j + 1) * nx + i]);
        }
    }
    out
}

/// Exact transpose of [`avg_v2f`].
pub fn avg_v2f_t(grid: &Grid2D, f: &FaceField) -> VectorField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = VectorField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let v = 0.5 * f.fx[j * (nx - 1) + i];
            out.x.data[j * nx + i] += v;
            out.x.data[j * nx + i + 1] += v;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let v = 0.5 * f.fy[j * nx + i];
            out.y.data[j * nx + i] += v;
            out.y.data[(j + 1) * nx + i] += v;
        }
    }
    out
}

/// Two-point difference quotient of a cell scalar at faces:
/// `(f_{i+1,j} - f_{i,j}) / hx` and `(f_{i,j+1} - f_{i,j}) / hy`.
pub fn diff_c2f(grid: &Grid2D, f: &ScalarField) -> FaceField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = FaceField::zeros(grid);
    let rx = 1.0 / grid.hx;
    let ry = 1.0 / grid.hy;
    for j in 0..ny {
        for i in 0..nx - 1 {
            out.fx[j * (nx - 1) + i] = rx * (f.data[j * nx + i + 1] - f.data[j * nx + i]);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            out.fy[j * nx + i] = ry * (f.data[(j + 1) * nx + i] - f.data[j * nx + i]);
        }
    }
    out
}

/// Divergence of a face flux: `(Fx_{i+1/2} - Fx_{i-1/2})/hx + (Fy_{j+1/2} -
/// Fy_{j-1/2})/hy`, with boundary faces contributing zero flux.  Summed over
/// all cells the result telescopes to zero exactly, which is the discrete
/// form of the no-flux conservation statement.
pub fn div_f2c(grid: &Grid2D, f: &FaceField) -> ScalarField {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = ScalarField::zeros(grid);
    let rx = 1.0 / grid.hx;
    let ry = 1.0 / grid.hy;
    for j in 0..ny {
        for i in 0..nx {
            let right = if i < nx - 1 { f.fx[j * (nx - 1) + i] } else { 0.0 };
            let left = if i > 0 { f.fx[j * (nx - 1) + i - 1] } else { 0.0 };
            let up = if j < ny - 1 { f.fy[j * nx + i] } else { 0.0 };
            let down = if j > 0 { f.fy[(j - 1) * nx + i] } else { 0.0 };
            out.data[j * nx + i] = rx * (right - left) + ry * (up - down);
        }
    }
    out
}

/// Exact transpose of [`div_f2c`], which is `-diff_c2f`.
pub fn div_f2c_t(grid: &Grid2D, g: &ScalarField) -> FaceField {
    let mut out = diff_c2f(grid, g);
    out.scale(-1.0);
    out
}

/// Variable-coefficient Laplacian `div(avg(c) * diff(f))` with no-flux
/// boundary conditions.  Symmetric in `f` for fixed `c`; exact zero for
/// constant `f`.
pub fn vcl(grid: &Grid2D, c: &ScalarField, f: &ScalarField) -> ScalarField {
    let flux = avg_c2f(grid, c).mul(&diff_c2f(grid, f));
    div_f2c(grid, &flux)
}

// ---------------------------------------------------------------------------
// Conjugate gradients
// ---------------------------------------------------------------------------

/// Matrix-free preconditioned conjugate gradients for SPD systems.
///
/// `apply(x, y)` must write `A x` into `y`.  `precond`, if given, holds the
/// inverse diagonal (or any SPD approximation of `A^-1` applied pointwise).
/// Iterates until `||r|| <= rel_tol * ||b||` or `max_iter` is hit; returns
/// the iteration count or a numerical error on stagnation.
pub fn cg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    precond: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    for k in 0..n {
        r[k] = b[k] - ax[k];
    }
    let norm_b = dot(b, b).sqrt();
    if norm_b == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let tol = rel_tol * norm_b;
    let apply_precond = |r: &[f64], z: &mut [f64]| match precond {
        Some(d) => {
            for k in 0..n {
                z[k] = d[k] * r[k];
            }
        }
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; n];
    apply_precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    if dot(&r, &r).sqrt() <= tol {
        return Ok(0);
    }
    for it in 1..=max_iter {
        apply(&p, &mut ax);
        let pap = dot(&p, &ax);
        if !(pap > 0.0) {
            return Err(ChbError::numerical(format!(
                "conjugate gradients lost positive definiteness (p.Ap = {pap:e})"
            )));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ax[k];
        }
        if dot(&r, &r).sqrt() <= tol {
            return Ok(it);
        }
        apply_precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(ChbError::numerical(format!(
        "conjugate gradients did not reach rel tol {rel_tol:e} in {max_iter} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize) -> Grid2D {
        Grid2D::new(nx, ny, 1.3, 0.9).unwrap()
    }

    /// Deterministic pseudo-random field (no RNG dependency in unit tests).
    fn wavy(grid: &Grid2D, seed: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| {
            (7.1 * x + seed).sin() * (3.3 * y - seed).cos() + 0.3 * (11.0 * x * y + seed).sin()
        })
    }

    #[test]
    fn ksum_is_accurate() {
        // Cancellation pattern that naive left-to-right summation gets
        // exactly wrong (it returns 0).
        assert_eq!(ksum([1.0, 1e100, 1.0, -1e100]), 2.0);
        let many: Vec<f64> = std::iter::repeat([1.0, 1e100, 1.0, -1e100])
            .take(2500)
            .flatten()
            .collect();
        assert_eq!(ksum(many), 5000.0);
    }

    #[test]
    fn centered_derivatives_exact_on_quadratics() {
        let g = grid(12, 9);
        let ops = DiffOps::new(&g);
        let f = ScalarField::from_fn(&g, |x, y| 1.0 + 2.0 * x - 0.5 * x * x + 3.0 * y + y * y);
        let dfdx = ops.ddx(&f);
        let dfdy = ops.ddy(&f);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = (g.x(i), g.y(j));
                assert!((dfdx.at(i, j) - (2.0 - x)).abs() < 1e-12, "ddx at {i},{j}");
                assert!((dfdy.at(i, j) - (3.0 + 2.0 * y)).abs() < 1e-12, "ddy at {i},{j}");
            }
        }
    }

    #[test]
    fn derivative_transposes_are_exact() {
        let g = grid(11, 7);
        let ops = DiffOps::new(&g);
        let f = wavy(&g, 0.4);
        let gfield = wavy(&g, 1.9);
        // Plain (unweighted) pairing: transposes are exact as matrices.
        let lhs = dot(&ops.ddx(&f).data, &gfield.data);
        let rhs = dot(&f.data, &ops.ddx_t(&gfield).data);
        assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        let lhs = dot(&ops.ddy(&f).data, &gfield.data);
        let rhs = dot(&f.data, &ops.ddy_t(&gfield).data);
        assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
    }

    #[test]
    fn face_primitive_transposes_are_exact() {
        let g = grid(9, 13);
        let s = wavy(&g, 0.7);
        let t = wavy(&g, 2.3);
        // div_f2c vs its claimed transpose -diff_c2f.
        let mut flux = avg_c2f(&g, &s);
        flux.fx.iter_mut().enumerate().for_each(|(k, v)| *v += (k as f64 * 0.01).sin());
        flux.fy.iter_mut().enumerate().for_each(|(k, v)| *v += (k as f64 * 0.013).cos());
        let lhs = dot(&div_f2c(&g, &flux).data, &t.data);
        let back = div_f2c_t(&g, &t);
        let rhs = dot(&flux.fx, &back.fx) + dot(&flux.fy, &back.fy);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        // avg_c2f vs avg_c2f_t.
        let lhs = dot(&avg_c2f(&g, &s).fx, &flux.fx) + dot(&avg_c2f(&g, &s).fy, &flux.fy);
        let rhs = dot(&s.data, &avg_c2f_t(&g, &flux).data);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        // avg_v2f vs avg_v2f_t.
        let v = VectorField { x: wavy(&g, 3.1), y: wavy(&g, 4.7) };
        let lhs = dot(&avg_v2f(&g, &v).fx, &flux.fx) + dot(&avg_v2f(&g, &v).fy, &flux.fy);
        let w = avg_v2f_t(&g, &flux);
        let rhs = dot(&v.x.data, &w.x.data) + dot(&v.y.data, &w.y.data);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn face_comb_generalizes_the_average_and_transposes_exactly() {
        let g = grid(8, 11);
        let s = wavy(&g, 0.5);
        let q = avg_c2f(&g, &wavy(&g, 5.3));
        // With w0 = w1 = 1/2 the stencil is exactly avg_c2f.
        let half0 = avg_c2f(&g, &ScalarField::constant(&g, 0.5));
        let same = face_comb(&g, &half0, &half0, &s);
        let avg = avg_c2f(&g, &s);
        assert_eq!(same.fx, avg.fx);
        assert_eq!(same.fy, avg.fy);
        // Generic weights: <comb(s), q> = <s, comb_t(q)> as plain matrices.
        let mut w0 = avg_c2f(&g, &wavy(&g, 6.1));
        let mut w1 = avg_c2f(&g, &wavy(&g, 7.9));
        w0.axpy(0.3, &q);
        w1.axpy(-0.4, &q);
        let lhs_face = face_comb(&g, &w0, &w1, &s);
        let lhs = dot(&lhs_face.fx, &q.fx) + dot(&lhs_face.fy, &q.fy);
        let rhs = dot(&s.data, &face_comb_t(&g, &w0, &w1, &q).data);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn vcl_conserves_and_is_symmetric() {
        let g = grid(10, 8);
        let c = wavy(&g, 0.2).map(|v| 1.5 + 0.5 * v); // positive coefficient
        let f = wavy(&g, 1.1);
        let s = wavy(&g, 2.2);
        let lf = vcl(&g, &c, &f);
        // Conservation: no-flux boundary makes the mean of vcl vanish.
        assert!(mass(&g, &lf).abs() < 1e-13);
        // Symmetry in the L2 pairing.
        let lhs = inner(&g, &lf, &s);
        let rhs = inner(&g, &f, &vcl(&g, &c, &s));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        // Constant fields are annihilated exactly.
        let one = ScalarField::constant(&g, 4.2);
        assert_eq!(vcl(&g, &c, &one).max_abs(), 0.0);
    }

    #[test]
    fn vcl_matches_constant_coefficient_laplacian_order_two() {
        // Manufactured solution with homogeneous Neumann data on [0,1]^2:
        // f = cos(pi x) cos(2 pi y), div(c grad f) computed analytically for
        // c = 2 + sin(pi x) sin(pi y).
        let mut errs = Vec::new();
        for &n in &[16usize, 32, 64] {
            let g = Grid2D::new(n, n, 1.0, 1.0).unwrap();
            let pi = std::f64::consts::PI;
            let f = ScalarField::from_fn(&g, |x, y| (pi * x).cos() * (2.0 * pi * y).cos());
            let c = ScalarField::from_fn(&g, |x, y| 2.0 + (pi * x).sin() * (pi * y).sin());
            let exact = ScalarField::from_fn(&g, |x, y| {
                let cf = 2.0 + (pi * x).sin() * (pi * y).sin();
                let cx = pi * (pi * x).cos() * (pi * y).sin();
                let cy = pi * (pi * x).sin() * (pi * y).cos();
                let fx = -pi * (pi * x).sin() * (2.0 * pi * y).cos();
                let fy = -2.0 * pi * (pi * x).cos() * (2.0 * pi * y).sin();
                let lap = -(pi * pi + 4.0 * pi * pi) * (pi * x).cos() * (2.0 * pi * y).cos();
                cx * fx + cy * fy + cf * lap
            });
            let num = vcl(&g, &c, &f);
            let err = l2_norm(&g, &num.sub(&exact));
            errs.push(err);
        }
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(order2 > 1.9, "orders {order1:.3}, {order2:.3}, errors {errs:?}");
    }

    #[test]
    fn cg_solves_spd_system() {
        let g = grid(12, 12);
        let c = ScalarField::constant(&g, 1.0);
        let dt = 0.01;
        // A = I/dt - vcl(c, .) is SPD.
        let apply = |x: &[f64], y: &mut [f64]| {
            let xf = ScalarField { nx: g.nx, ny: g.ny, data: x.to_vec() };
            let l = vcl(&g, &c, &xf);
            for k in 0..x.len() {
                y[k] = x[k] / dt - l.data[k];
            }
        };
        let truth = wavy(&g, 0.5);
        let mut b = vec![0.0; g.n()];
        apply(&truth.data, &mut b);
        let mut x = vec![0.0; g.n()];
        let iters = cg(apply, &b, &mut x, None, 1e-13, 1000).unwrap();
        assert!(iters > 0);
        let err: f64 = x
            .iter()
            .zip(&truth.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-10, "cg error {err:e} after {iters} iterations");
    }
}

//! Uniform cell-centered grid on a rectangle and the field containers that
//! live on it.
//!
//! The domain `[0, lx] x [0, ly]` is split into `nx * ny` equal cells; all
//! unknowns are sampled at cell centers `((i + 1/2) hx, (j + 1/2) hy)`.
//! Fields are stored row-major with `x` fastest: the value at cell `(i, j)`
//! sits at linear index `j * nx + i`.

use crate::error::{ChbError, Result};

/// Geometry of a uniform cell-centered rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Grid2D {
    /// Creates a grid, rejecting degenerate shapes.  At least four cells per
    /// direction are required so the one-sided boundary stencils never
    /// overlap each other.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(ChbError::config(format!(
                "grid must have at least 4 cells per direction, got {nx} x {ny}"
            )));
        }
        if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
            return Err(ChbError::config(format!(
                "domain extents must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Grid2D {
            nx,
            ny,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
        })
    }

    /// Number of cells.
    #[inline]
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    /// Area of one cell.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Linear index of cell `(i, j)`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// x-coordinate of the center of column `i`.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx
    }

    /// y-coordinate of the center of row `j`.
    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy
    }
}

/// A scalar field sampled at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid2D) -> Self {
        ScalarField {
            nx: grid.nx,
            ny: grid.ny,
            data: vec![0.0; grid.n()],
        }
    }

    pub fn constant(grid: &Grid2D, value: f64) -> Self {
        ScalarField {
            nx: grid.nx,
            ny: grid.ny,
            data: vec![value; grid.n()],
        }
    }

    /// Samples `f(x, y)` at every cell center.
    pub fn from_fn(grid: &Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.n());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                data.push(f(grid.x(i), grid.y(j)));
            }
        }
        ScalarField {
            nx: grid.nx,
            ny: grid.ny,
            data,
        }
    }

    /// Wraps raw data, checking shape and finiteness.  Use this for values
    /// that cross an external boundary (files, user input).
    pub fn from_vec(grid: &Grid2D, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n() {
            return Err(ChbError::config(format!(
                "field has {} values but the grid has {} cells",
                data.len(),
                grid.n()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(ChbError::config("field contains non-finite values"));
        }
        Ok(ScalarField {
            nx: grid.nx,
            ny: grid.ny,
            data,
        })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[j * self.nx + i]
    }

    /// Checks shape compatibility with another field.
    #[inline]
    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    /// Largest absolute value.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// True if every value is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += s * other`, shapes must match.
    pub fn axpy(&mut self, s: f64, other: &ScalarField) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Elementwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise product into a new field.
    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        debug_assert!(self.same_shape(other));
        ScalarField {
            nx: self.nx,
            ny: self.ny,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    /// `self - other` into a new field.
    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        debug_assert!(self.same_shape(other));
        ScalarField {
            nx: self.nx,
            ny: self.ny,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// A velocity-like field: one scalar component per coordinate direction,
/// both sampled at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: &Grid2D) -> Self {
        VectorField {
            x: ScalarField::zeros(grid),
            y: ScalarField::zeros(grid),
        }
    }

    pub fn from_fn(
        grid: &Grid2D,
        fx: impl FnMut(f64, f64) -> f64,
        fy: impl FnMut(f64, f64) -> f64,
    ) -> Self {
        VectorField {
            x: ScalarField::from_fn(grid, fx),
            y: ScalarField::from_fn(grid, fy),
        }
    }

    /// Largest pointwise Euclidean norm over cells.
    pub fn max_norm(&self) -> f64 {
        self.x
            .data
            .iter()
            .zip(&self.y.data)
            .fold(0.0_f64, |m, (a, b)| m.max(a.hypot(*b)))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn axpy(&mut self, s: f64, other: &VectorField) {
        self.x.axpy(s, &other.x);
        self.y.axpy(s, &other.y);
    }

    pub fn scale(&mut self, s: f64) {
        self.x.scale(s);
        self.y.scale(s);
    }

    pub fn same_shape(&self, other: &VectorField) -> bool {
        self.x.same_shape(&other.x) && self.y.same_shape(&other.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid2D::new(3, 8, 1.0, 1.0).is_err());
        assert!(Grid2D::new(8, 8, 0.0, 1.0).is_err());
        assert!(Grid2D::new(8, 8, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn cell_centers_and_indexing() {
        let g = Grid2D::new(8, 4, 2.0, 1.0).unwrap();
        assert_eq!(g.hx, 0.25);
        assert_eq!(g.hy, 0.25);
        assert_eq!(g.x(0), 0.125);
        assert_eq!(g.y(3), 0.875);
        // row-major, x fastest
        assert_eq!(g.idx(3, 2), 2 * 8 + 3);
        let f = ScalarField::from_fn(&g, |x, y| x + 10.0 * y);
        assert_eq!(f.at(3, 2), g.x(3) + 10.0 * g.y(2));
    }

    #[test]
    fn from_vec_validates() {
        let g = Grid2D::new(4, 4, 1.0, 1.0).unwrap();
        assert!(ScalarField::from_vec(&g, vec![0.0; 15]).is_err());
        let mut v = vec![0.0; 16];
        v[7] = f64::INFINITY;
        assert!(ScalarField::from_vec(&g, v).is_err());
        assert!(ScalarField::from_vec(&g, vec![1.0; 16]).is_ok());
    }
}

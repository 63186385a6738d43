//! Nonlocal interaction kernel: tabulation and fast convolution.
//!
//! The kernel `J` is radial and compactly supported; the default profile is
//! a Gaussian truncated at `R = 4 sigma`.  It is tabulated once on the
//! lattice of cell-center offsets and normalized *discretely*: the lattice
//! sum `sum_d J_d hx hy` equals the requested strength exactly.  With that
//! convention the interior plateau of `a(x) = (J * 1)(x)` equals the
//! strength to rounding, and a constant field is reproduced by `J *` up to
//! boundary effects only.
//!
//! Convolutions against a field extended by zero outside the domain are
//! computed by FFT on a zero-padded grid (linear, not circular: the padding
//! is wide enough that no wrap-around touches the physical window).  The
//! kernel spectrum is precomputed, so each convolution costs two transforms.
//! A direct summation oracle in the tests pins the FFT path to 1e-12.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField};

/// Kernel profile selector, as it appears in run configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// Radial Gaussian `exp(-|z|^2 / (2 sigma^2))` truncated at `4 sigma`,
    /// scaled so the lattice sum times the cell area equals `strength`.
    Gaussian { sigma: f64, strength: f64 },
    /// Deliberately odd test kernel (sin-modulated Gaussian).  It violates
    /// the evenness assumption and exists so the validator's kernel checks
    /// can be exercised end to end; the solver refuses to run with it.
    OddTest { sigma: f64, strength: f64 },
}

/// A tabulated kernel bound to one grid, with its convolution plan.
pub struct Kernel {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    /// Half widths of the stencil in cells per direction.
    kx: usize,
    ky: usize,
    /// Offset table, row-major over `(2ky+1)` rows of `(2kx+1)` values;
    /// entry `(di, dj)` sits at `(dj+ky)*(2kx+1) + (di+kx)`.
    stencil: Vec<f64>,
    /// Padded transform sizes (powers of two covering `n + 2k`).
    px: usize,
    py: usize,
    /// Kernel spectrum on the padded grid, premultiplied by the cell area
    /// and the inverse-transform normalization.
    spectrum: Vec<Complex<f64>>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kernel")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("kx", &self.kx)
            .field("ky", &self.ky)
            .field("px", &self.px)
            .field("py", &self.py)
            .finish()
    }
}

impl Kernel {
    /// Tabulates `spec` on `grid` and prepares the convolution plan.
    pub fn build(grid: &Grid2D, spec: &KernelSpec) -> Result<Kernel> {
        match *spec {
            KernelSpec::Gaussian { sigma, strength } => {
                check_params(sigma, strength)?;
                let radius = 4.0 * sigma;
                Kernel::from_profile(grid, radius, |x, y| {
                    let r2 = x * x + y * y;
                    if r2 <= radius * radius {
                        (-r2 / (2.0 * sigma * sigma)).exp()
                    } else {
                        0.0
                    }
                })
                .map(|k| k.normalized(strength))
            }
            KernelSpec::OddTest { sigma, strength } => {
                check_params(sigma, strength)?;
                let radius = 4.0 * sigma;
                let k = Kernel::from_profile(grid, radius, |x, y| {
                    let r2 = x * x + y * y;
                    if r2 <= radius * radius {
                        (-r2 / (2.0 * sigma * sigma)).exp() * (1.0 + 0.8 * (x / sigma).sin())
                    } else {
                        0.0
                    }
                })?;
                // Scale by the plain sum; an odd kernel may integrate to
                // anything, the hook only needs a fixed amplitude.
                Ok(k.normalized(strength))
            }
        }
    }

    /// Tabulates an arbitrary profile `j(zx, zy)` with support radius
    /// `radius` on the offset lattice of `grid`.
    pub fn from_profile(
        grid: &Grid2D,
        radius: f64,
        j: impl Fn(f64, f64) -> f64,
    ) -> Result<Kernel> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ChbError::config(format!(
                "kernel support radius must be positive and finite, got {radius}"
            )));
        }
        let kx = (radius / grid.hx).ceil() as usize;
        let ky = (radius / grid.hy).ceil() as usize;
        let mut stencil = Vec::with_capacity((2 * kx + 1) * (2 * ky + 1));
        for dj in -(ky as isize)..=(ky as isize) {
            for di in -(kx as isize)..=(kx as isize) {
                stencil.push(j(di as f64 * grid.hx, dj as f64 * grid.hy));
            }
        }
        if !stencil.iter().all(|v| v.is_finite()) {
            return Err(ChbError::config("kernel profile produced non-finite values"));
        }
        Ok(Kernel::from_stencil(grid, kx, ky, stencil))
    }

    /// Wraps an explicit offset table.  `stencil` must hold
    /// `(2kx+1) * (2ky+1)` values, row-major with the x-offset fastest and
    /// offset `(0, 0)` in the middle.
    pub fn from_stencil(grid: &Grid2D, kx: usize, ky: usize, stencil: Vec<f64>) -> Kernel {
        assert_eq!(stencil.len(), (2 * kx + 1) * (2 * ky + 1), "stencil shape");
        let px = (grid.nx + 2 * kx + 1).next_power_of_two();
        let py = (grid.ny + 2 * ky + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(px);
        let inv_x = planner.plan_fft_inverse(px);
        let fwd_y = planner.plan_fft_forward(py);
        let inv_y = planner.plan_fft_inverse(py);

        // Embed the stencil wrapped around the origin of the padded grid and
        // take its spectrum once.
        let mut buf = vec![Complex::new(0.0, 0.0); px * py];
        for dj in -(ky as isize)..=(ky as isize) {
            let row = ((dj + py as isize) % py as isize) as usize;
            for di in -(kx as isize)..=(kx as isize) {
                let col = ((di + px as isize) % px as isize) as usize;
                let v = stencil[((dj + ky as isize) as usize) * (2 * kx + 1)
                    + (di + kx as isize) as usize];
                buf[row * px + col] = Complex::new(v, 0.0);
            }
        }
        fft2(&mut buf, px, py, &fwd_x, &fwd_y);
        // Fold the convolution weight h^2 and the unnormalized-FFT factor
        // into the spectrum so convolve() is a plain multiply.
        let scale = grid.hx * grid.hy / (px as f64 * py as f64);
        for v in &mut buf {
            *v *= scale;
        }

        Kernel {
            nx: grid.nx,
            ny: grid.ny,
            hx: grid.hx,
            hy: grid.hy,
            kx,
            ky,
            stencil,
            px,
            py,
            spectrum: buf,
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
        }
    }

    /// Rescales the tabulated values so `sum_d J_d hx hy == strength` and
    /// rebuilds the spectrum.  No-op if the current sum vanishes.
    fn normalized(self, strength: f64) -> Kernel {
        let sum: f64 = crate::ops::ksum(self.stencil.iter().copied()) * self.hx * self.hy;
        if sum == 0.0 {
            return self;
        }
        let scale = strength / sum;
        let grid = Grid2D {
            nx: self.nx,
            ny: self.ny,
            lx: self.nx as f64 * self.hx,
            ly: self.ny as f64 * self.hy,
            hx: self.hx,
            hy: self.hy,
        };
        let stencil: Vec<f64> = self.stencil.iter().map(|v| v * scale).collect();
        Kernel::from_stencil(&grid, self.kx, self.ky, stencil)
    }

    /// `(J * f)(x_c) = sum_{c'} J(x_c - x_{c'}) f_{c'} hx hy`, with `f`
    /// extended by zero outside the domain.
    pub fn convolve(&self, f: &ScalarField) -> ScalarField {
        assert_eq!((f.nx, f.ny), (self.nx, self.ny), "field shape");
        let (px, py) = (self.px, self.py);
        let mut buf = vec![Complex::new(0.0, 0.0); px * py];
        for j in 0..self.ny {
            for i in 0..self.nx {
                buf[j * px + i] = Complex::new(f.data[j * self.nx + i], 0.0);
            }
        }
        fft2(&mut buf, px, py, &self.fwd_x, &self.fwd_y);
        for (v, s) in buf.iter_mut().zip(&self.spectrum) {
            *v *= s;
        }
        fft2(&mut buf, px, py, &self.inv_x, &self.inv_y);
        let mut out = ScalarField {
            nx: self.nx,
            ny: self.ny,
            data: vec![0.0; self.nx * self.ny],
        };
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.data[j * self.nx + i] = buf[j * px + i].re;
            }
        }
        out
    }

    /// `a(x) = (J * 1)(x)`.  Constant in the interior (one stencil radius
    /// away from the boundary), smaller near walls and corners.
    pub fn a_field(&self, grid: &Grid2D) -> ScalarField {
        self.convolve(&ScalarField::constant(grid, 1.0))
    }

    /// Stencil half-widths `(kx, ky)`.
    pub fn half_widths(&self) -> (usize, usize) {
        (self.kx, self.ky)
    }

    /// Tabulated value at offset `(di, dj)`; zero outside the stencil.
    pub fn at_offset(&self, di: isize, dj: isize) -> f64 {
        if di.unsigned_abs() > self.kx || dj.unsigned_abs() > self.ky {
            return 0.0;
        }
        self.stencil
            [(dj + self.ky as isize) as usize * (2 * self.kx + 1) + (di + self.kx as isize) as usize]
    }

    /// Lattice integral `sum |J| h^2`.
    pub fn sum_abs(&self) -> f64 {
        crate::ops::ksum(self.stencil.iter().map(|v| v.abs())) * self.hx * self.hy
    }

    /// Lattice integral `sum J h^2` (the kernel strength).
    pub fn sum(&self) -> f64 {
        crate::ops::ksum(self.stencil.iter().copied()) * self.hx * self.hy
    }

    /// Largest evenness defect `max |J(z) - J(-z)|` over the stencil.
    pub fn evenness_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for dj in -(self.ky as isize)..=(self.ky as isize) {
            for di in -(self.kx as isize)..=(self.kx as isize) {
                worst = worst.max((self.at_offset(di, dj) - self.at_offset(-di, -dj)).abs());
            }
        }
        worst
    }

    /// Lattice integral `sum |grad J| h^2` with central differences on the
    /// zero-extended table; finite when the profile is integrably smooth.
    pub fn sum_abs_grad(&self) -> f64 {
        let mut terms = Vec::new();
        for dj in -(self.ky as isize + 1)..=(self.ky as isize + 1) {
            for di in -(self.kx as isize + 1)..=(self.kx as isize + 1) {
                let gx = (self.at_offset(di + 1, dj) - self.at_offset(di - 1, dj)) / (2.0 * self.hx);
                let gy = (self.at_offset(di, dj + 1) - self.at_offset(di, dj - 1)) / (2.0 * self.hy);
                terms.push(gx.hypot(gy));
            }
        }
        crate::ops::ksum(terms) * self.hx * self.hy
    }
}

fn check_params(sigma: f64, strength: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ChbError::config(format!("kernel sigma must be positive, got {sigma}")));
    }
    if !(strength.is_finite() && strength != 0.0) {
        return Err(ChbError::config(format!(
            "kernel strength must be finite and nonzero, got {strength}"
        )));
    }
    Ok(())
}

/// In-place 2D FFT on a row-major `px * py` buffer: transform rows, then
/// columns (via transpose so both passes run on contiguous data).
fn fft2(
    buf: &mut [Complex<f64>],
    px: usize,
    py: usize,
    fft_x: &Arc<dyn Fft<f64>>,
    fft_y: &Arc<dyn Fft<f64>>,
) {
    let mut scratch = vec![Complex::new(0.0, 0.0); fft_x.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(px) {
        fft_x.process_with_scratch(row, &mut scratch);
    }
    let mut t = vec![Complex::new(0.0, 0.0); px * py];
    for j in 0..py {
        for i in 0..px {
            t[i * py + j] = buf[j * px + i];
        }
    }
    let mut scratch_y = vec![Complex::new(0.0, 0.0); fft_y.get_inplace_scratch_len()];
    for col in t.chunks_exact_mut(py) {
        fft_y.process_with_scratch(col, &mut scratch_y);
    }
    for i in 0..px {
        for j in 0..py {
            buf[j * px + i] = t[i * py + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct O(N^2) summation oracle, sharing nothing with the FFT path.
    fn convolve_direct(grid: &Grid2D, k: &Kernel, f: &ScalarField) -> ScalarField {
        let (kx, ky) = k.half_widths();
        let mut out = ScalarField::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let mut s = 0.0;
                for dj in -(ky as isize)..=(ky as isize) {
                    let jj = j as isize - dj;
                    if jj < 0 || jj >= grid.ny as isize {
                        continue;
                    }
                    for di in -(kx as isize)..=(kx as isize) {
                        let ii = i as isize - di;
                        if ii < 0 || ii >= grid.nx as isize {
                            continue;
                        }
                        s += k.at_offset(di, dj) * f.at(ii as usize, jj as usize);
                    }
                }
                *out.at_mut(i, j) = s * grid.hx * grid.hy;
            }
        }
        out
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let grid = Grid2D::new(24, 20, 1.0, 0.8).unwrap();
        let spec = KernelSpec::Gaussian { sigma: 0.07, strength: 1.7 };
        let k = Kernel::build(&grid, &spec).unwrap();
        // A rough field with an isolated spike exercises boundary clipping.
        let mut f = ScalarField::from_fn(&grid, |x, y| (23.0 * x).sin() * (17.0 * y).cos());
        *f.at_mut(0, 0) = 3.0;
        *f.at_mut(23, 19) = -2.0;
        let fast = k.convolve(&f);
        let slow = convolve_direct(&grid, &k, &f);
        let mut worst = 0.0_f64;
        for (a, b) in fast.data.iter().zip(&slow.data) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst <= 1e-12, "fft vs direct max diff {worst:e}");
    }

    #[test]
    fn unit_strength_gives_unit_interior_plateau() {
        let grid = Grid2D::new(48, 48, 1.0, 1.0).unwrap();
        let k = Kernel::build(&grid, &KernelSpec::Gaussian { sigma: 0.04, strength: 1.0 }).unwrap();
        assert!((k.sum() - 1.0).abs() <= 1e-13, "discrete normalization");
        let a = k.a_field(&grid);
        let (kx, ky) = k.half_widths();
        // Interior cells see the full stencil: a == strength to rounding.
        let mut worst = 0.0_f64;
        for j in ky..grid.ny - ky {
            for i in kx..grid.nx - kx {
                worst = worst.max((a.at(i, j) - 1.0).abs());
            }
        }
        assert!(worst <= 1e-12, "interior plateau defect {worst:e}");
        // Near the corner only about a quarter of the stencil is inside.
        assert!(a.at(0, 0) < 0.5);
        assert!(a.at(0, 0) > 0.0);
    }

    #[test]
    fn gaussian_is_even_and_odd_hook_is_not() {
        let grid = Grid2D::new(16, 16, 1.0, 1.0).unwrap();
        let even = Kernel::build(&grid, &KernelSpec::Gaussian { sigma: 0.1, strength: 2.0 }).unwrap();
        assert_eq!(even.evenness_defect(), 0.0);
        let odd = Kernel::build(&grid, &KernelSpec::OddTest { sigma: 0.1, strength: 2.0 }).unwrap();
        assert!(odd.evenness_defect() > 1e-3);
    }

    #[test]
    fn constant_field_reproduces_a_times_constant() {
        // J * (c 1) == c a(x) exactly, the identity behind the constant
        // steady state of the full scheme.
        let grid = Grid2D::new(20, 12, 2.0, 1.0).unwrap();
        let k = Kernel::build(&grid, &KernelSpec::Gaussian { sigma: 0.09, strength: 3.0 }).unwrap();
        let c = 0.37;
        let conv = k.convolve(&ScalarField::constant(&grid, c));
        let a = k.a_field(&grid);
        let mut worst = 0.0_f64;
        for (v, av) in conv.data.iter().zip(&a.data) {
            worst = worst.max((v - c * av).abs());
        }
        assert!(worst <= 1e-13, "linearity defect {worst:e}");
    }
}

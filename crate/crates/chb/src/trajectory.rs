//! Recorded forward trajectories: the state history that the tangent and
//! adjoint sweeps linearize around.
//!
//! A trajectory holds, for a run of `N` uniform steps of size `dt`, the
//! phases `phi^0 .. phi^N`, the chemical potentials `mu^0 .. mu^N`, and the
//! divergence-free face velocities `u_face^0 .. u_face^{N-1}` (the ones that
//! transport; the flow belonging to the final state never moves anything).
//! Small histories live in memory; above a size budget the fields are
//! transparently spooled to snapshot files in a temporary directory that is
//! removed when the trajectory is dropped.  Accessors hand out owned copies
//! either way, so callers cannot tell the difference.
//!
//! The convolution `J*phi^n` is *not* stored: it is recomputed on demand,
//! which is cheap (one FFT), deterministic, and bitwise identical to the
//! forward run's value.

use std::path::Path;

use crate::chbf::{self, ScalarSnapshot};
use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};
use crate::ops::{avg_v2f_t, FaceField};
use crate::solver::{ChbSolver, SolverState};

/// Borrowed time-dependent forcing: one applied force per time level.
#[derive(Clone, Copy)]
pub enum ForcingRef<'a> {
    /// No applied force.
    None,
    /// The same force at every time.
    Constant(&'a VectorField),
    /// One force per time level `0 .. N-1`; levels past the end of the
    /// slice are unforced (the flow at the final level transports nothing
    /// and is never tracked, so its force is irrelevant).
    Series(&'a [VectorField]),
}

impl<'a> ForcingRef<'a> {
    /// Force applied at time level `n`, if any.
    pub fn at(&self, n: usize) -> Option<&'a VectorField> {
        match self {
            ForcingRef::None => None,
            ForcingRef::Constant(h) => Some(h),
            ForcingRef::Series(hs) => hs.get(n),
        }
    }
}

/// Owned forcing, for callers that build the force series themselves
/// (configuration files, drivers) rather than borrowing one.
#[derive(Debug, Clone)]
pub enum Forcing {
    None,
    Constant(VectorField),
    Series(Vec<VectorField>),
}

impl Forcing {
    pub fn as_ref(&self) -> ForcingRef<'_> {
        match self {
            Forcing::None => ForcingRef::None,
            Forcing::Constant(h) => ForcingRef::Constant(h),
            Forcing::Series(hs) => ForcingRef::Series(hs),
        }
    }
}

/// In-memory budget before a trajectory spools to disk.
const SPOOL_BYTES: usize = 64 * 1024 * 1024;

enum Store {
    Memory {
        phi: Vec<ScalarField>,
        mu: Vec<ScalarField>,
        u_face: Vec<FaceField>,
    },
    Spooled {
        // Holding the handle keeps the directory alive; it is removed on drop.
        dir: tempfile::TempDir,
    },
}

/// The complete state history of one forward run.
pub struct Trajectory {
    grid: Grid2D,
    dt: f64,
    steps: usize,
    store: Store,
}

impl Trajectory {
    /// Runs the forward solver for `n_steps` uniform steps from `phi0`,
    /// recording every level.  Also returns the final state for callers
    /// that want its diagnostics.
    pub fn record(
        solver: &ChbSolver,
        phi0: ScalarField,
        dt: f64,
        n_steps: usize,
        h: ForcingRef,
    ) -> Result<(Trajectory, SolverState)> {
        Self::record_with_budget(solver, phi0, dt, n_steps, h, SPOOL_BYTES)
    }

    /// As [`Trajectory::record`] with an explicit in-memory budget; tests
    /// use a zero budget to exercise the spooled path on small grids.
    pub(crate) fn record_with_budget(
        solver: &ChbSolver,
        phi0: ScalarField,
        dt: f64,
        n_steps: usize,
        h: ForcingRef,
        budget: usize,
    ) -> Result<(Trajectory, SolverState)> {
        if n_steps == 0 {
            return Err(ChbError::config("a trajectory needs at least one step"));
        }
        let grid = solver.grid().clone();
        // phi and mu at N+1 levels, u_face (just under two scalars) at N.
        let bytes = 8 * grid.n() * (2 * (n_steps + 1) + 2 * n_steps);
        let mut store = if bytes <= budget {
            Store::Memory {
                phi: Vec::with_capacity(n_steps + 1),
                mu: Vec::with_capacity(n_steps + 1),
                u_face: Vec::with_capacity(n_steps),
            }
        } else {
            Store::Spooled {
                dir: tempfile::TempDir::new().map_err(|e| {
                    ChbError::config(format!("cannot create spool directory: {e}"))
                })?,
            }
        };

        let mut state = solver.initial_state(phi0, h.at(0))?;
        push_cells(&mut store, &grid, 0, &state)?;
        for n in 0..n_steps {
            push_face(&mut store, &grid, n, &state.u_face)?;
            let (next, _stats) = solver.advance(&state, dt, h.at(n + 1))?;
            state = next;
            push_cells(&mut store, &grid, n + 1, &state)?;
        }
        Ok((
            Trajectory {
                grid,
                dt,
                steps: n_steps,
                store,
            },
            state,
        ))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps `N`; levels run `0 ..= N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Phase at level `n` (`0 ..= N`).
    pub fn phi(&self, n: usize) -> Result<ScalarField> {
        self.check_level(n, self.steps + 1)?;
        match &self.store {
            Store::Memory { phi, .. } => Ok(phi[n].clone()),
            Store::Spooled { dir } => {
                chbf::read_scalar_field(&dir.path().join(format!("phi_{n}.chbf")), &self.grid)
            }
        }
    }

    /// Chemical potential at level `n` (`0 ..= N`).
    pub fn mu(&self, n: usize) -> Result<ScalarField> {
        self.check_level(n, self.steps + 1)?;
        match &self.store {
            Store::Memory { mu, .. } => Ok(mu[n].clone()),
            Store::Spooled { dir } => {
                chbf::read_scalar_field(&dir.path().join(format!("mu_{n}.chbf")), &self.grid)
            }
        }
    }

    /// Transporting face velocity at level `n` (`0 .. N`).
    pub fn u_face(&self, n: usize) -> Result<FaceField> {
        self.check_level(n, self.steps)?;
        match &self.store {
            Store::Memory { u_face, .. } => Ok(u_face[n].clone()),
            Store::Spooled { dir } => {
                let fx = read_block(
                    &dir.path().join(format!("ufx_{n}.chbf")),
                    self.grid.nx - 1,
                    self.grid.ny,
                )?;
                let fy = read_block(
                    &dir.path().join(format!("ufy_{n}.chbf")),
                    self.grid.nx,
                    self.grid.ny - 1,
                )?;
                let mut f = FaceField::zeros(&self.grid);
                f.fx = fx;
                f.fy = fy;
                Ok(f)
            }
        }
    }

    /// Cell-centered velocity at level `n` (`0 .. N`): the two-point average
    /// of the stored face velocity, exactly as the forward states carry it.
    pub fn u(&self, n: usize) -> Result<VectorField> {
        Ok(avg_v2f_t(&self.grid, &self.u_face(n)?))
    }

    fn check_level(&self, n: usize, len: usize) -> Result<()> {
        if n >= len {
            return Err(ChbError::config(format!(
                "trajectory level {n} out of range (have {len})"
            )));
        }
        Ok(())
    }
}

fn push_cells(store: &mut Store, grid: &Grid2D, level: usize, state: &SolverState) -> Result<()> {
    match store {
        Store::Memory { phi, mu, .. } => {
            debug_assert_eq!(phi.len(), level);
            phi.push(state.phi.clone());
            mu.push(state.mu.clone());
            Ok(())
        }
        Store::Spooled { dir } => {
            chbf::write_scalar_field(&dir.path().join(format!("phi_{level}.chbf")), grid, &state.phi)?;
            chbf::write_scalar_field(&dir.path().join(format!("mu_{level}.chbf")), grid, &state.mu)
        }
    }
}

fn push_face(store: &mut Store, grid: &Grid2D, level: usize, f: &FaceField) -> Result<()> {
    match store {
        Store::Memory { u_face, .. } => {
            debug_assert_eq!(u_face.len(), level);
            u_face.push(f.clone());
            Ok(())
        }
        Store::Spooled { dir } => {
            // Face components have their own shapes; store each as a plain
            // scalar block with the true face dimensions.
            let fx = ScalarSnapshot {
                nx: grid.nx - 1,
                ny: grid.ny,
                lx: grid.lx,
                ly: grid.ly,
                data: f.fx.clone(),
            };
            let fy = ScalarSnapshot {
                nx: grid.nx,
                ny: grid.ny - 1,
                lx: grid.lx,
                ly: grid.ly,
                data: f.fy.clone(),
            };
            chbf::write_scalar(&dir.path().join(format!("ufx_{level}.chbf")), &fx)?;
            chbf::write_scalar(&dir.path().join(format!("ufy_{level}.chbf")), &fy)
        }
    }
}

fn read_block(path: &Path, nx: usize, ny: usize) -> Result<Vec<f64>> {
    let snap = chbf::read_scalar(path)?;
    if snap.nx != nx || snap.ny != ny {
        return Err(ChbError::config(format!(
            "spooled face file {} is {} x {}, expected {nx} x {ny}",
            path.display(),
            snap.nx,
            snap.ny
        )));
    }
    Ok(snap.data)
}

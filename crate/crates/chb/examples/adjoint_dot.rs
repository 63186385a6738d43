//! Duality between the tangent and adjoint sweeps around one trajectory.
//!
//! The adjoint is assembled as the literal matrix transpose of each
//! tangent step, so for any forcing direction dU and any residual pair
//! (r_phi, r_u) the pairings <tangent(dU), r> and <dU, adjoint(r)> must
//! agree to solver tolerance — no discretization error is involved, only
//! the inner linear solves.  Both potentials run over several random
//! directions; anything beyond ~1e-12 here would point at a transpose
//! mismatch in one of the face primitives.

use chb::grid::{Grid2D, ScalarField, VectorField};
use chb::kernel::{Kernel, KernelSpec};
use chb::linearize::Linearization;
use chb::ops;
use chb::potential::{Mobility, OperatorTables, PotentialKind, PotentialSpec};
use chb::solver::{ChbSolver, Physics, SolverParams};
use chb::trajectory::{ForcingRef, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn solver(log: bool) -> ChbSolver {
    let grid = Grid2D::new(24, 20, 1.0, 1.0).unwrap();
    // The obstacle potential has no singular curvature to lean on, so its
    // implicit coefficient is elliptic only where the kernel mass a = J*1
    // exceeds one; scale the kernel to guarantee that on this grid.
    let unit = Kernel::build(&grid, &KernelSpec::Gaussian { sigma: 0.08, strength: 1.0 }).unwrap();
    let a_unit = unit.convolve(&ScalarField::constant(&grid, 1.0));
    let a_min = a_unit.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let (kind, strength) = if log {
        (PotentialKind::Logarithmic { theta: 0.1, theta_c: 0.2 }, 1.0)
    } else {
        (PotentialKind::DoubleObstacle, 1.3 / a_min)
    };
    let tables =
        OperatorTables::new(PotentialSpec::new(kind, 0.1).unwrap(), Mobility::Degenerate).unwrap();
    let kernel = Kernel::build(&grid, &KernelSpec::Gaussian { sigma: 0.08, strength }).unwrap();
    let physics = Physics {
        nu: 1.0,
        eta: ScalarField::constant(&grid, 1.0),
        kernel,
        tables,
    };
    let params = SolverParams { cg_tol: 1e-13, ..SolverParams::default() };
    ChbSolver::new(&grid, physics, params).unwrap()
}

fn random_scalar(grid: &Grid2D, rng: &mut impl Rng) -> ScalarField {
    let mut f = ScalarField::zeros(grid);
    for v in &mut f.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    f
}

fn random_vector(grid: &Grid2D, rng: &mut impl Rng) -> VectorField {
    let mut v = VectorField::zeros(grid);
    for c in v.x.data.iter_mut().chain(v.y.data.iter_mut()) {
        *c = rng.gen_range(-1.0..1.0);
    }
    v
}

fn main() {
    let n_steps = 12;
    println!("tangent/adjoint duality, 24x20, {n_steps} steps");
    println!("{:>12} {:>6} {:>22} {:>22} {:>12}", "potential", "seed", "lhs", "rhs", "rel err");
    for log in [true, false] {
        let s = solver(log);
        let phi0 = ScalarField::from_fn(s.grid(), |x, y| {
            0.4 * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
        });
        let dt = s.default_dt().min(2e-3);
        let (traj, _) = Trajectory::record(&s, phi0, dt, n_steps, ForcingRef::None).unwrap();
        let lin = Linearization::new(&s, &traj).unwrap();
        let name = if log { "logarithmic" } else { "obstacle" };

        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let du: Vec<VectorField> =
                (0..n_steps).map(|_| random_vector(s.grid(), &mut rng)).collect();
            let r_phi: Vec<ScalarField> =
                (0..n_steps).map(|_| random_scalar(s.grid(), &mut rng)).collect();
            let r_u: Vec<VectorField> =
                (0..n_steps).map(|_| random_vector(s.grid(), &mut rng)).collect();

            let tan = lin.tangent_sweep(&du).unwrap();
            let adj = lin.adjoint_sweep_raw(&r_phi, &r_u).unwrap();
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for n in 0..n_steps {
                lhs += ops::dot(&tan.psi[n + 1].data, &r_phi[n].data)
                    + ops::dot(&tan.w[n].x.data, &r_u[n].x.data)
                    + ops::dot(&tan.w[n].y.data, &r_u[n].y.data);
                rhs += ops::dot(&du[n].x.data, &adj.ga[n].x.data)
                    + ops::dot(&du[n].y.data, &adj.ga[n].y.data);
            }
            let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
            println!("{name:>12} {seed:>6} {lhs:>22.14e} {rhs:>22.14e} {rel:>12.3e}");
        }
    }
}

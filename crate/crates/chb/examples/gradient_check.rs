//! Second-order Taylor verification of the reduced cost gradient.
//!
//! The reduced cost J(U) tracks a manufactured target trajectory plus the
//! control energy.  Its gradient is assembled from one adjoint sweep as
//! g = 2(U + v), with v the dual velocity scaled back to the time grid.
//! If g is the exact derivative of the discrete-in-everything cost, the
//! remainder |J(U + eps dU) - J(U) - eps <g, dU>| must shrink like eps^2;
//! a consistent-but-wrong gradient would leave a first-order remainder and
//! flatten the fitted slope toward one.

use chb::control::{adjoint_sweep, cost, inner_q, manufactured_control, reduced_gradient,
    TrackingTargets};
use chb::grid::{Grid2D, ScalarField, VectorField};
use chb::kernel::{Kernel, KernelSpec};
use chb::linearize::Linearization;
use chb::potential::{Mobility, OperatorTables, PotentialKind, PotentialSpec};
use chb::solver::{ChbSolver, Physics, SolverParams};
use chb::trajectory::{ForcingRef, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn main() {
    let grid = Grid2D::new(16, 14, 1.0, 1.0).unwrap();
    let potential =
        PotentialSpec::new(PotentialKind::Logarithmic { theta: 0.1, theta_c: 0.2 }, 0.1).unwrap();
    let tables = OperatorTables::new(potential, Mobility::Degenerate).unwrap();
    let kernel = Kernel::build(&grid, &KernelSpec::Gaussian { sigma: 0.08, strength: 1.0 }).unwrap();
    let physics = Physics {
        nu: 1.0,
        eta: ScalarField::constant(&grid, 1.0),
        kernel,
        tables,
    };
    let params = SolverParams { cg_tol: 1e-13, ..SolverParams::default() };
    let s = ChbSolver::new(&grid, physics, params).unwrap();

    let phi0 =
        ScalarField::from_fn(&grid, |x, y| 0.1 + 0.4 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos());
    let dt = s.default_dt().min(2e-3);
    let n_steps = 10;

    // Targets from a benchmark control, expansion point away from zero so
    // the linear term genuinely competes with the quadratic one.
    let u_star = manufactured_control(&grid, n_steps, 0.05);
    let (bench, _) =
        Trajectory::record(&s, phi0.clone(), dt, n_steps, ForcingRef::Series(&u_star)).unwrap();
    let targets = TrackingTargets::of_trajectory(&bench).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random_series = |scale: f64| -> Vec<VectorField> {
        (0..n_steps)
            .map(|_| {
                let mut v = VectorField::zeros(&grid);
                for c in v.x.data.iter_mut().chain(v.y.data.iter_mut()) {
                    *c = scale * rng.gen_range(-1.0..1.0);
                }
                v
            })
            .collect()
    };
    let u_bar = random_series(0.1);
    let du = random_series(1.0);

    let (traj, _) =
        Trajectory::record(&s, phi0.clone(), dt, n_steps, ForcingRef::Series(&u_bar)).unwrap();
    let j0 = cost(&traj, &u_bar, &targets).unwrap();
    let lin = Linearization::new(&s, &traj).unwrap();
    let adj = adjoint_sweep(&lin, &targets).unwrap();
    let g = reduced_gradient(&u_bar, &adj);
    let gdot = inner_q(&grid, dt, &g, &du);

    println!("reduced-gradient Taylor test, 16x14, {n_steps} steps");
    println!("J(U) = {j0:.10e}, <g, dU> = {gdot:.10e}");
    println!("{:>10} {:>16} {:>16} {:>14} {:>8}", "eps", "J change", "eps<g,dU>", "remainder", "order");
    let mut prev: Option<f64> = None;
    for &eps in &[1e-2, 1e-3, 1e-4, 1e-5] {
        let mut u_eps = u_bar.clone();
        for (uc, dc) in u_eps.iter_mut().zip(&du) {
            uc.axpy(eps, dc);
        }
        let (t_eps, _) =
            Trajectory::record(&s, phi0.clone(), dt, n_steps, ForcingRef::Series(&u_eps)).unwrap();
        let j_eps = cost(&t_eps, &u_eps, &targets).unwrap();
        let remainder = (j_eps - j0 - eps * gdot).abs();
        match prev {
            Some(p) => println!(
                "{eps:>10.0e} {:>16.8e} {:>16.8e} {remainder:>14.3e} {:>8.3}",
                j_eps - j0,
                eps * gdot,
                (p / remainder).log10()
            ),
            None => println!(
                "{eps:>10.0e} {:>16.8e} {:>16.8e} {remainder:>14.3e} {:>8}",
                j_eps - j0,
                eps * gdot,
                "-"
            ),
        }
        prev = Some(remainder);
    }
    println!("(order column is per-decade decay of the remainder; 2 is exact)");
}

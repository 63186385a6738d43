//! Model-hypothesis validation on three contrasting setups.
//!
//! The checks mirror the structural assumptions the scheme rests on: a
//! nonnegative permeability with positive viscosity, an even nonnegative
//! smooth kernel, mobility degeneracy matched to the potential's singular
//! part (the product `lambda_1 = m F_1''` extends continuously with a
//! positive floor), and the measured ellipticity margins that size the
//! implicit step.  A passing logarithmic setup, a deliberately broken
//! pairing (constant mobility against the logarithmic singularity), and an
//! odd-kernel injection are reported side by side.

use chb::grid::{Grid2D, ScalarField};
use chb::kernel::{Kernel, KernelSpec};
use chb::potential::{Mobility, PotentialKind, PotentialSpec};
use chb::validate::validate_assumptions;

fn report(title: &str, spec: KernelSpec, mobility: Mobility) {
    let grid = Grid2D::new(48, 48, 1.0, 1.0).unwrap();
    let eta = ScalarField::constant(&grid, 1.0);
    let potential =
        PotentialSpec::new(PotentialKind::Logarithmic { theta: 0.1, theta_c: 0.2 }, 0.1).unwrap();
    let kernel = Kernel::build(&grid, &spec).unwrap();
    let rep = validate_assumptions(&grid, &potential, &mobility, &kernel, &eta, 1.0);

    println!("\n{title}");
    for c in &rep.checks {
        let status = if c.passed { "pass" } else { "FAIL" };
        println!("  [{:<2}] {}  margin {:>12.4e}  {}", c.name, status, c.margin, c.detail);
    }
    println!(
        "  margins: alpha0 = {:.4e}, alpha1 = {:.4e}, c0 = {:.4e}, a_min = {:.4e}",
        rep.margins.alpha0, rep.margins.alpha1, rep.margins.c0, rep.margins.a_min
    );
}

fn main() {
    let gaussian = KernelSpec::Gaussian { sigma: 0.08, strength: 1.0 };

    report(
        "logarithmic potential, degenerate mobility, Gaussian kernel (all pass)",
        gaussian.clone(),
        Mobility::Degenerate,
    );
    report(
        "constant mobility against the logarithmic singularity (compatibility fails)",
        gaussian,
        Mobility::Constant { m0: 1.0 },
    );
    report(
        "odd test kernel (evenness fails)",
        KernelSpec::OddTest { sigma: 0.08, strength: 1.0 },
        Mobility::Degenerate,
    );
}

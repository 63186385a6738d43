//! Behavior of the C^3 potential regularizations as the width shrinks.
//!
//! The double-obstacle construction adds a quartic-then-cubic spline tail
//! outside [-1, 1] and is exactly zero inside, so its sup-distance to the
//! obstacle potential on [-1, 1] is identically zero at every width.  The
//! logarithmic construction replaces each log branch beyond 1 - delta by
//! its third-order Taylor polynomial, and the sup-distance on a fixed
//! interior interval decays monotonically as delta shrinks.  The table
//! also cross-checks the C^3 joins by one-sided finite differences across
//! every breakpoint.

use chb::potential::{beta_do, PotentialKind, PotentialSpec};

fn branch_mismatch(spec: &PotentialSpec) -> f64 {
    // Approach each join from both sides through the value and the first
    // three derivatives; a C^3 construction leaves only the O(h) drift of
    // the fourth derivative, which reaches ~theta/delta^3 at the log
    // joins, so h must be small enough to keep that drift below 1e-9.
    let h = 1e-14;
    let mut worst = 0.0_f64;
    for bp in spec.breakpoints() {
        for order in 0..=3u8 {
            let eval = |r: f64| match order {
                0 => spec.f(r),
                1 => spec.f1(r),
                2 => spec.f2(r),
                _ => spec.f3(r),
            };
            worst = worst.max((eval(bp - h) - eval(bp + h)).abs());
        }
    }
    worst
}

fn main() {
    println!("double obstacle: beta_do tail and exactness on [-1, 1]");
    println!("{:>8} {:>16} {:>16}", "delta", "sup err [-1,1]", "beta(1+delta)");
    for &delta in &[0.1, 0.05, 0.025, 0.0125] {
        let spec = PotentialSpec::new(PotentialKind::DoubleObstacle, delta).unwrap();
        let mut sup = 0.0_f64;
        for k in 0..=10_000 {
            let r = -1.0 + 2.0 * k as f64 / 10_000.0;
            // Inside [-1, 1] the obstacle potential is its smooth part, so
            // the regularization error is exactly the spline tail.
            sup = sup.max((spec.f(r) - spec.f_singular(r).unwrap()).abs());
        }
        println!("{delta:>8} {sup:>16.3e} {:>16.3e}", beta_do(delta, 1.0 + delta, 0));
    }

    println!("\nlogarithmic (theta = 0.1, theta_c = 0.2): Taylor-branch distance");
    println!("{:>8} {:>18} {:>14}", "delta", "sup err [-.99,.99]", "C3 join defect");
    for &delta in &[0.1, 0.05, 0.025, 0.0125] {
        let spec =
            PotentialSpec::new(PotentialKind::Logarithmic { theta: 0.1, theta_c: 0.2 }, delta)
                .unwrap();
        let mut sup = 0.0_f64;
        for k in 0..=10_000 {
            let r = -0.99 + 1.98 * k as f64 / 10_000.0;
            sup = sup.max((spec.f(r) - spec.f_singular(r).unwrap()).abs());
        }
        println!("{delta:>8} {sup:>18.6e} {:>14.3e}", branch_mismatch(&spec));
    }
}

//! Singular configurational potentials, their C3 regularizations, mobilities,
//! and the combined coefficient functions the scheme is built from.
//!
//! Two singular potentials are supported on the physical range `[-1, 1]`:
//!
//! * **Double obstacle**: `F(r) = (1 - r^2)/2` inside `[-1, 1]`, `+inf`
//!   outside.  The convex part is `r^2/2` plus the obstacle indicator, the
//!   smooth concave part is `(1 - 2 r^2)/2`.
//! * **Logarithmic**: `F(r) = (theta/2)((1+r)ln(1+r) + (1-r)ln(1-r))
//!   + (theta_c/2)(1 - r^2)` with `0 < theta < theta_c`, whose first
//!   derivative blows up at the endpoints.
//!
//! The solver never evaluates the singular functions; it uses a regularized
//! potential `F_delta` that agrees with `F` well inside `[-1, 1]` and
//! continues it with controlled growth:
//!
//! * Double obstacle: `F_delta = beta_delta(r) + (1 - r^2)/2` where
//!   `beta_delta` is zero on `[-1, 1]`, a quartic spline `(|r|-1)^4 /
//!   delta^3` in the transition bands, and cubic-plus-linear beyond
//!   `1 + delta` — glued so the result is exactly C3.  On `[-1, 1]` the
//!   regularized and singular potentials are *identical expressions*, so
//!   they agree bit for bit.
//! * Logarithmic: the convex part is replaced by its third-order Taylor
//!   continuation about `+-(1 - delta)`, again C3 by construction, with a
//!   second derivative that keeps growing linearly (the continuation stays
//!   uniformly convex).
//!
//! Mobilities: degenerate `m(s) = max(0, 1 - s^2)`, its positive cutoff
//! `m_eps`, and a constant.  [`OperatorTables`] packages the derived
//! quantities the scheme needs — `lambda = m F_delta''`, its derivative,
//! the antiderivatives `b` and `B`, and the singular product
//! `lambda_1 = m F_1''` used by the structural validation checks (for the
//! degenerate-mobility / logarithmic pair that product is the constant
//! `theta`, a cancellation the tests pin down to near machine precision).

use crate::error::{ChbError, Result};

// ---------------------------------------------------------------------------
// Double-obstacle regularization spline
// ---------------------------------------------------------------------------

/// The C3 obstacle spline `beta_delta` and its first three derivatives.
///
/// Piecewise definition for `r >= 0` (odd-symmetric continuation gives an
/// even function overall):
///
/// * `0`                                     on `[0, 1]`
/// * `(r - 1)^4 / delta^3`                   on `(1, 1 + delta)`
/// * `(4/delta^2) (r - 1 - delta/2)^3 + (r - 1 - delta/2)` for `r >= 1 + delta`
///
/// Values and the first three derivatives match at both seams, so the spline
/// is C3 on all of R; `order` selects the derivative (0 through 3).
pub fn beta_do(delta: f64, r: f64, order: u8) -> f64 {
    assert!(order <= 3, "beta_do supports derivative orders 0..=3");
    assert!(delta > 0.0, "beta_do needs a positive regularization width");
    let s = r.abs();
    // Odd derivatives of an even function flip sign with r.
    let sign = if r < 0.0 { -1.0 } else { 1.0 };
    let odd = |v: f64| sign * v;
    if s <= 1.0 {
        return 0.0;
    }
    if s < 1.0 + delta {
        let e = s - 1.0;
        let d3 = delta * delta * delta;
        return match order {
            0 => e * e * e * e / d3,
            1 => odd(4.0 * e * e * e / d3),
            2 => 12.0 * e * e / d3,
            _ => odd(24.0 * e / d3),
        };
    }
    let c = s - (1.0 + 0.5 * delta);
    let d2 = delta * delta;
    match order {
        0 => 4.0 / d2 * c * c * c + c,
        1 => odd(12.0 / d2 * c * c + 1.0),
        2 => 24.0 / d2 * c,
        _ => odd(24.0 / d2),
    }
}

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

/// Which singular potential the run uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    DoubleObstacle,
    Logarithmic { theta: f64, theta_c: f64 },
}

/// A potential together with its regularization width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub delta: f64,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(ChbError::config(format!(
                "regularization width must lie in (0, 1/2], got {delta}"
            )));
        }
        if let PotentialKind::Logarithmic { theta, theta_c } = kind {
            if !(theta > 0.0 && theta_c > theta && theta_c.is_finite()) {
                return Err(ChbError::config(format!(
                    "logarithmic potential needs 0 < theta < theta_c, got theta={theta}, theta_c={theta_c}"
                )));
            }
        }
        Ok(PotentialSpec { kind, delta })
    }

    /// Regularized potential `F_delta(r)`.
    ///
    /// For the double obstacle the convex and concave quadratics are folded
    /// into the single expression `beta_delta(r) + (1 - r^2)/2`; on `[-1, 1]`
    /// the spline term is exactly zero, so the value agrees *bitwise* with
    /// the singular potential there.
    pub fn f(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::DoubleObstacle => {
                beta_do(self.delta, r, 0) + 0.5 * (1.0 - r * r)
            }
            PotentialKind::Logarithmic { .. } => self.f_convex(r, 0) + self.f_concave(r, 0),
        }
    }

    /// First derivative `F_delta'`.
    pub fn f1(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::DoubleObstacle => beta_do(self.delta, r, 1) - r,
            PotentialKind::Logarithmic { .. } => self.f_convex(r, 1) + self.f_concave(r, 1),
        }
    }

    /// Second derivative `F_delta''`.
    pub fn f2(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::DoubleObstacle => beta_do(self.delta, r, 2) - 1.0,
            PotentialKind::Logarithmic { .. } => self.f_convex(r, 2) + self.f_concave(r, 2),
        }
    }

    /// Third derivative `F_delta'''`.
    pub fn f3(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::DoubleObstacle => beta_do(self.delta, r, 3),
            PotentialKind::Logarithmic { .. } => self.f_convex(r, 3) + self.f_concave(r, 3),
        }
    }

    /// Divided difference of `F_delta'` between two states,
    /// `(F_delta'(r1) - F_delta'(r0)) / (r1 - r0)`, with the removable
    /// singularity filled by `F_delta''` at the midpoint.  By the mean value
    /// theorem the result equals `F_delta''` at some point between `r0` and
    /// `r1`, so it inherits every pointwise bound on the second derivative.
    /// This is the face transport coefficient that makes the discrete
    /// identity `diff(F'(phi)) = secant * diff(phi)` exact.
    pub fn f1_secant(&self, r0: f64, r1: f64) -> f64 {
        let d = r1 - r0;
        if d.abs() <= 1e-7 * (1.0 + r0.abs() + r1.abs()) {
            self.f2(0.5 * (r0 + r1))
        } else {
            (self.f1(r1) - self.f1(r0)) / d
        }
    }

    /// Partial derivatives of [`f1_secant`](Self::f1_secant) with respect to
    /// `(r0, r1)`.  The branch selection matches `f1_secant` exactly so that
    /// a linearization built from these values differentiates the very
    /// expression the nonlinear path evaluates.
    pub fn f1_secant_d(&self, r0: f64, r1: f64) -> (f64, f64) {
        let d = r1 - r0;
        if d.abs() <= 1e-7 * (1.0 + r0.abs() + r1.abs()) {
            let half_f3 = 0.5 * self.f3(0.5 * (r0 + r1));
            (half_f3, half_f3)
        } else {
            let s = (self.f1(r1) - self.f1(r0)) / d;
            ((s - self.f2(r0)) / d, (self.f2(r1) - s) / d)
        }
    }

    /// Regularized convex part `F_{1,delta}` and derivatives (orders 0..=3).
    pub fn f_convex(&self, r: f64, order: u8) -> f64 {
        assert!(order <= 3);
        match self.kind {
            PotentialKind::DoubleObstacle => {
                let quad = match order {
                    0 => 0.5 * r * r,
                    1 => r,
                    2 => 1.0,
                    _ => 0.0,
                };
                beta_do(self.delta, r, order) + quad
            }
            PotentialKind::Logarithmic { theta, .. } => {
                let edge = 1.0 - self.delta;
                if r.abs() <= edge {
                    log_convex(theta, r, order)
                } else {
                    // Third-order Taylor continuation about the matching
                    // edge: C3 at the seam by construction.
                    let s0 = edge.copysign(r);
                    let e = r - s0;
                    let d = [
                        log_convex(theta, s0, 0),
                        log_convex(theta, s0, 1),
                        log_convex(theta, s0, 2),
                        log_convex(theta, s0, 3),
                    ];
                    match order {
                        0 => d[0] + d[1] * e + 0.5 * d[2] * e * e + d[3] * e * e * e / 6.0,
                        1 => d[1] + d[2] * e + 0.5 * d[3] * e * e,
                        2 => d[2] + d[3] * e,
                        _ => d[3],
                    }
                }
            }
        }
    }

    /// Smooth concave part `F_2` and derivatives (not regularized; it is a
    /// polynomial already).  Double obstacle: `(1 - 2 r^2)/2`; logarithmic:
    /// `(theta_c / 2)(1 - r^2)`.
    pub fn f_concave(&self, r: f64, order: u8) -> f64 {
        assert!(order <= 3);
        let (c0, c2) = match self.kind {
            PotentialKind::DoubleObstacle => (0.5, -1.0),
            PotentialKind::Logarithmic { theta_c, .. } => (0.5 * theta_c, -0.5 * theta_c),
        };
        match order {
            0 => c0 + c2 * r * r,
            1 => 2.0 * c2 * r,
            2 => 2.0 * c2,
            _ => 0.0,
        }
    }

    /// Constant second derivative of the concave part.
    pub fn f_concave_d2(&self) -> f64 {
        self.f_concave(0.0, 2)
    }

    /// Unregularized potential.  Double obstacle returns the `+inf`
    /// sentinel outside `[-1, 1]`; the logarithmic potential is a domain
    /// error at and beyond the endpoints.
    pub fn f_singular(&self, r: f64) -> Result<f64> {
        match self.kind {
            PotentialKind::DoubleObstacle => {
                if r.abs() <= 1.0 {
                    Ok(0.5 * (1.0 - r * r))
                } else {
                    Ok(f64::INFINITY)
                }
            }
            PotentialKind::Logarithmic { theta, theta_c } => {
                if r.abs() >= 1.0 {
                    return Err(ChbError::config(format!(
                        "logarithmic potential is undefined at r = {r}; |r| < 1 required"
                    )));
                }
                Ok(0.5 * theta * ((1.0 + r) * (1.0 + r).ln() + (1.0 - r) * (1.0 - r).ln())
                    + 0.5 * theta_c * (1.0 - r * r))
            }
        }
    }

    /// Second derivative of the *singular* convex part; `+inf` outside the
    /// open interval where it exists.  This is the object the structural
    /// assumptions constrain, so validation samples it instead of the
    /// regularized surrogate.
    pub fn f_convex_d2_singular(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::DoubleObstacle => {
                if r.abs() <= 1.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            PotentialKind::Logarithmic { theta, .. } => {
                let w = 1.0 - r * r;
                if w > 0.0 {
                    theta / w
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Points where the regularized coefficient functions change branch;
    /// quadrature and sampling routines split at these.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            PotentialKind::DoubleObstacle => {
                let d = self.delta;
                vec![-1.0 - d, -1.0, 1.0, 1.0 + d]
            }
            PotentialKind::Logarithmic { .. } => {
                let e = 1.0 - self.delta;
                vec![-e, e]
            }
        }
    }
}

/// Convex part of the logarithmic potential (orders 0..=3), valid for
/// `|r| < 1`.
fn log_convex(theta: f64, r: f64, order: u8) -> f64 {
    let w = 1.0 - r * r;
    match order {
        0 => 0.5 * theta * ((1.0 + r) * (1.0 + r).ln() + (1.0 - r) * (1.0 - r).ln()),
        1 => 0.5 * theta * ((1.0 + r) / (1.0 - r)).ln(),
        2 => theta / w,
        _ => 2.0 * theta * r / (w * w),
    }
}

// ---------------------------------------------------------------------------
// Mobilities
// ---------------------------------------------------------------------------

/// Mobility profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mobility {
    /// `m(s) = max(0, 1 - s^2)`: vanishes at the pure phases.
    Degenerate,
    /// `m(s) = 1 - s^2` capped below at `1 - eps^2`: strictly positive.
    Cutoff { eps: f64 },
    /// Constant mobility `m0 > 0`.
    Constant { m0: f64 },
}

impl Mobility {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Mobility::Degenerate => Ok(()),
            Mobility::Cutoff { eps } => {
                if eps > 0.0 && eps < 1.0 {
                    Ok(())
                } else {
                    Err(ChbError::config(format!(
                        "mobility cutoff must lie in (0, 1), got {eps}"
                    )))
                }
            }
            Mobility::Constant { m0 } => {
                if m0 > 0.0 && m0.is_finite() {
                    Ok(())
                } else {
                    Err(ChbError::config(format!(
                        "constant mobility must be positive, got {m0}"
                    )))
                }
            }
        }
    }

    /// `m(s)`.
    pub fn m(&self, s: f64) -> f64 {
        match *self {
            Mobility::Degenerate => (1.0 - s * s).max(0.0),
            Mobility::Cutoff { eps } => {
                if s.abs() <= eps {
                    1.0 - s * s
                } else {
                    1.0 - eps * eps
                }
            }
            Mobility::Constant { m0 } => m0,
        }
    }

    /// `m'(s)` (zero on the flat branches).
    pub fn m_prime(&self, s: f64) -> f64 {
        match *self {
            Mobility::Degenerate => {
                if s.abs() < 1.0 {
                    -2.0 * s
                } else {
                    0.0
                }
            }
            Mobility::Cutoff { eps } => {
                if s.abs() <= eps {
                    -2.0 * s
                } else {
                    0.0
                }
            }
            Mobility::Constant { .. } => 0.0,
        }
    }

    /// Antiderivative `b(s) = int_0^s m`, odd, in closed form.
    pub fn b(&self, s: f64) -> f64 {
        match *self {
            Mobility::Degenerate => {
                let t = s.clamp(-1.0, 1.0);
                t - t * t * t / 3.0
            }
            Mobility::Cutoff { eps } => {
                let a = s.abs();
                let core = |t: f64| t - t * t * t / 3.0;
                if a <= eps {
                    core(s)
                } else {
                    (core(eps) + (1.0 - eps * eps) * (a - eps)).copysign(s)
                }
            }
            Mobility::Constant { m0 } => m0 * s,
        }
    }

    /// Branch points of `m`.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Mobility::Degenerate => vec![-1.0, 1.0],
            Mobility::Cutoff { eps } => vec![-eps, eps],
            Mobility::Constant { .. } => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Combined coefficient tables
// ---------------------------------------------------------------------------

/// Derived coefficient functions for one (potential, mobility) pair.
#[derive(Debug, Clone)]
pub struct OperatorTables {
    pub potential: PotentialSpec,
    pub mobility: Mobility,
}

impl OperatorTables {
    pub fn new(potential: PotentialSpec, mobility: Mobility) -> Result<Self> {
        mobility.validate()?;
        Ok(OperatorTables { potential, mobility })
    }

    /// `lambda(s) = m(s) F_delta''(s)` (regularized; what the scheme uses).
    pub fn lambda(&self, s: f64) -> f64 {
        self.mobility.m(s) * self.potential.f2(s)
    }

    /// `lambda'(s) = m' F_delta'' + m F_delta'''`.
    pub fn lambda_prime(&self, s: f64) -> f64 {
        self.mobility.m_prime(s) * self.potential.f2(s) + self.mobility.m(s) * self.potential.f3(s)
    }

    /// Singular product `lambda_1(s) = m(s) F_1''(s)` with the unregularized
    /// convex part.  For the degenerate-mobility / logarithmic pair the two
    /// factors cancel exactly and the product is the constant `theta`.
    pub fn lambda1_singular(&self, s: f64) -> f64 {
        self.mobility.m(s) * self.potential.f_convex_d2_singular(s)
    }

    /// `b(s) = int_0^s m`, closed form.
    pub fn b(&self, s: f64) -> f64 {
        self.mobility.b(s)
    }

    /// `B(s) = int_0^s lambda_delta`.  Constant mobility integrates in
    /// closed form (`m0 (F_delta'(s) - F_delta'(0))`, and `F_delta'(0) = 0`
    /// by symmetry); otherwise adaptive Simpson split at the branch points,
    /// absolute tolerance 1e-12.
    pub fn big_b(&self, s: f64) -> f64 {
        if let Mobility::Constant { m0 } = self.mobility {
            return m0 * self.potential.f1(s);
        }
        let mut knots = self.potential.breakpoints();
        knots.extend(self.mobility.breakpoints());
        integrate_with_breakpoints(|t| self.lambda(t), s, &knots, 1e-12)
    }

    /// `B_1(s) = int_0^s lambda_1` with the singular convex part; only
    /// meaningful for `|s| < 1`.  Adaptive Simpson on the sampled product
    /// (which is finite whenever the pairing is compatible).
    pub fn big_b1_singular(&self, s: f64) -> f64 {
        assert!(s.abs() < 1.0, "B_1 is defined on the open interval (-1, 1)");
        let mut knots = self.potential.breakpoints();
        knots.extend(self.mobility.breakpoints());
        integrate_with_breakpoints(|t| self.lambda1_singular(t), s, &knots, 1e-12)
    }

    /// `Btilde(s; a) = B(s) + a b(s)`, the primitive of the full mobility-
    /// weighted coefficient at a point where the kernel mass is `a`.
    pub fn btilde(&self, s: f64, a: f64) -> f64 {
        self.big_b(s) + a * self.b(s)
    }

    /// `Btilde'(s; a) = lambda(s) + a m(s)`: the diffusion coefficient of
    /// the convexified form of the equation.
    pub fn btilde_prime(&self, s: f64, a: f64) -> f64 {
        self.lambda(s) + a * self.mobility.m(s)
    }
}

/// `int_0^s f`, splitting at the given breakpoints so each adaptive-Simpson
/// panel sees a smooth integrand.
fn integrate_with_breakpoints(
    f: impl Fn(f64) -> f64,
    s: f64,
    knots: &[f64],
    tol: f64,
) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let (lo, hi) = if s > 0.0 { (0.0, s) } else { (s, 0.0) };
    let mut cuts: Vec<f64> = knots
        .iter()
        .copied()
        .filter(|&k| k > lo && k < hi)
        .collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let piece_tol = tol / cuts.len() as f64;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += adaptive_simpson(&f, w[0], w[1], piece_tol);
    }
    if s > 0.0 {
        total
    } else {
        -total
    }
}

/// Standard adaptive Simpson quadrature with absolute tolerance.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            return left + right + err / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

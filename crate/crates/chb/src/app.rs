//! Command-line driver: subcommand dispatch, run directories, and the CSV
//! and JSON artifacts a batch run leaves behind.
//!
//! Every subcommand reads one strict TOML configuration (`--config`),
//! writes into one output directory (`--out`, default the working
//! directory), and reports through its exit code: `0` success, `2`
//! malformed configuration, `3` failed model-hypothesis validation, `4`
//! numerical failure.  `--seed` overrides the configured RNG seed and
//! `--quiet` silences progress chatter (never the primary report).  A
//! given configuration and seed produce bit-identical outputs on the same
//! build; the only parallelism is across independent refinement levels in
//! `convergence`, capped by the `CHB_THREADS` environment variable, and
//! results are merged in level order so the worker count never changes a
//! byte of output.
//!
//! Plotting is deliberately out of process: the CSV layouts are stable,
//! and script templates under `scripts/` consume them without adding any
//! rendering dependency here.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chbf;
use crate::config::{EtaSpec, RunConfig};
use crate::control;
use crate::error::{ChbError, Result};
use crate::grid::{Grid2D, ScalarField, VectorField};
use crate::linearize::Linearization;
use crate::ops;
use crate::solver::EnergyReport;
use crate::trajectory::{ForcingRef, Trajectory};
use crate::validate::{self, AssumptionCheck, Margins, ValidationReport};

macro_rules! say {
    ($ctx:expr, $($arg:tt)*) => {
        if !$ctx.quiet {
            println!($($arg)*);
        }
    };
}

#[derive(Parser)]
#[command(
    name = "chb",
    version,
    about = "Nonlocal Cahn-Hilliard-Brinkman solver and optimal-control driver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (strict TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Overrides the seed given in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Suppress progress output (reports and artifacts still written).
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model hypotheses and print the validation report as JSON.
    Validate,
    /// Run the forward solver to the configured horizon.
    Simulate,
    /// Solve the tracking control problem by projected gradient descent.
    Optimize,
    /// Second-order Taylor test of the reduced cost gradient.
    CheckGradient,
    /// Tangent/adjoint duality test over random directions.
    CheckAdjoint,
    /// Grid/step refinement driver measuring observed convergence orders.
    Convergence,
}

struct Ctx {
    out: PathBuf,
    seed: Option<u64>,
    quiet: bool,
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| ChbError::config("missing required flag --config PATH"))?;
    let cfg = RunConfig::from_path(config_path)?;
    let ctx = Ctx {
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        seed: cli.seed,
        quiet: cli.quiet,
    };
    fs::create_dir_all(&ctx.out)?;
    match cli.command {
        Command::Validate => cmd_validate(&cfg, &ctx),
        Command::Simulate => cmd_simulate(&cfg, &ctx),
        Command::Optimize => cmd_optimize(&cfg, &ctx),
        Command::CheckGradient => cmd_check_gradient(&cfg, &ctx),
        Command::CheckAdjoint => cmd_check_adjoint(&cfg, &ctx),
        Command::Convergence => cmd_convergence(&cfg, &ctx),
    }
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

fn cmd_validate(cfg: &RunConfig, ctx: &Ctx) -> Result<()> {
    let grid = cfg.build_grid()?;
    let report = match cfg.potential_spec() {
        Ok(potential) => {
            let eta = cfg.eta_field(&grid)?;
            let kernel = crate::kernel::Kernel::build(&grid, &cfg.kernel_spec())?;
            validate::validate_assumptions(
                &grid,
                &potential,
                &cfg.mobility(),
                &kernel,
                &eta,
                cfg.physics.nu,
            )
        }
        // The potential parameters themselves violate a hypothesis; there
        // is nothing to measure, so the report carries the one failed
        // parameter check and no margins.
        Err(ChbError::Validation(lines)) => ValidationReport {
            checks: lines
                .iter()
                .map(|line| AssumptionCheck {
                    name: "A2".to_string(),
                    passed: false,
                    margin: f64::NAN,
                    detail: line.strip_prefix("[A2] ").unwrap_or(line).to_string(),
                })
                .collect(),
            margins: Margins {
                alpha0: f64::NAN,
                alpha1: f64::NAN,
                c0: f64::NAN,
                a_min: f64::NAN,
                evenness_defect: f64::NAN,
            },
        },
        Err(e) => return Err(e),
    };

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| ChbError::config(format!("cannot serialize report: {e}")))?;
    // The report is the product of this command, so it goes to stdout even
    // under --quiet, and to disk for batch consumers.
    println!("{json}");
    fs::write(ctx.out.join("validation.json"), format!("{json}\n"))?;

    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("[{}] {}", c.name, c.detail))
            .collect();
        Err(ChbError::Validation(failed))
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct EnergySummary {
    t: f64,
    steps: u64,
    div_u_max: f64,
    #[serde(flatten)]
    energy: EnergyReport,
}

fn cmd_simulate(cfg: &RunConfig, ctx: &Ctx) -> Result<()> {
    let setup = cfg.build(ctx.seed)?;
    let forcing = setup.forcing.as_ref();
    say!(
        ctx,
        "simulate: {}x{} grid, dt = {}, {} steps, seed {}",
        setup.grid.nx,
        setup.grid.ny,
        setup.dt,
        setup.n_steps,
        setup.seed
    );

    let mut diag = fs::File::create(ctx.out.join("diagnostics.csv"))?;
    writeln!(
        diag,
        "t,mass,energy,diss_mu,diss_visc,diss_perm,max_abs_phi,div_u_max,cg_iters,stokes_iters"
    )?;

    let snap = |step: u64, phi: &ScalarField, u: &VectorField| -> Result<()> {
        if setup.snapshot_every == 0 {
            return Ok(());
        }
        if step % setup.snapshot_every as u64 == 0 || step == setup.n_steps as u64 {
            chbf::write_scalar_field(&ctx.out.join(format!("phi_{step:06}.chbf")), &setup.grid, phi)?;
            chbf::write_vector_field(&ctx.out.join(format!("u_{step:06}.chbf")), &setup.grid, u)?;
        }
        Ok(())
    };

    let row = |diag: &mut fs::File,
                   state: &crate::solver::SolverState,
                   cg: usize,
                   stokes: usize|
     -> Result<EnergyReport> {
        let e = setup.solver.energy(state);
        let div = setup.solver.div_u_max(state);
        writeln!(
            diag,
            "{},{},{},{},{},{},{},{},{},{}",
            state.t, e.mass, e.e, e.diss_mu, e.diss_visc, e.diss_perm, e.max_abs_phi, div, cg, stokes
        )?;
        // Keep finished rows on disk even if a later step fails.
        diag.flush()?;
        Ok(e)
    };

    let mut state = setup.solver.initial_state(setup.phi0.clone(), forcing.at(0))?;
    row(&mut diag, &state, 0, 0)?;
    snap(0, &state.phi, &state.u)?;

    for k in 0..setup.n_steps {
        let (next, stats) = setup.solver.advance(&state, setup.dt, forcing.at(k + 1))?;
        state = next;
        row(&mut diag, &state, stats.cg_iters, stats.stokes_iters)?;
        snap(state.step, &state.phi, &state.u)?;
    }

    let summary = EnergySummary {
        t: state.t,
        steps: state.step,
        div_u_max: setup.solver.div_u_max(&state),
        energy: setup.solver.energy(&state),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| ChbError::config(format!("cannot serialize energy report: {e}")))?;
    fs::write(ctx.out.join("energy.json"), format!("{json}\n"))?;
    say!(
        ctx,
        "done: t = {}, mass = {}, energy = {}",
        state.t,
        summary.energy.mass,
        summary.energy.e
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

fn cmd_optimize(cfg: &RunConfig, ctx: &Ctx) -> Result<()> {
    let setup = cfg.build(ctx.seed)?;
    let targets = cfg.build_targets(&setup)?;
    let bounds = cfg.build_bounds(&setup.grid)?;
    let u0 = cfg.initial_control(&setup.grid, setup.n_steps)?;
    let opts = cfg.ocp_options();
    say!(
        ctx,
        "optimize: {}x{} grid, {} steps, up to {} iterations",
        setup.grid.nx,
        setup.grid.ny,
        setup.n_steps,
        opts.max_iters
    );

    let run = control::solve_ocp(
        &setup.solver,
        &setup.phi0,
        setup.dt,
        setup.n_steps,
        &targets,
        &bounds,
        &u0,
        &opts,
    )?;

    let mut log = fs::File::create(ctx.out.join("optimizer.csv"))?;
    writeln!(log, "iter,cost,kkt_residual,step_size,backtracks,grad_norm")?;
    for it in &run.iterates {
        writeln!(
            log,
            "{},{},{},{},{},{}",
            it.iter, it.cost, it.kkt_residual, it.step_size, it.backtracks, it.grad_norm
        )?;
    }
    log.flush()?;

    let last = run
        .iterates
        .last()
        .expect("an optimization run always evaluates its starting point");
    for (k, uk) in last.u.iter().enumerate() {
        chbf::write_vector_field(&ctx.out.join(format!("control_{k:06}.chbf")), &setup.grid, uk)?;
    }

    // One extra forward/backward pass at the accepted control dumps the
    // state and dual trajectories alongside it.
    let (traj, _) = Trajectory::record(
        &setup.solver,
        setup.phi0.clone(),
        setup.dt,
        setup.n_steps,
        ForcingRef::Series(&last.u),
    )?;
    let lin = Linearization::new(&setup.solver, &traj)?;
    let adj = control::adjoint_sweep(&lin, &targets)?;
    for n in 0..=setup.n_steps {
        chbf::write_scalar_field(
            &ctx.out.join(format!("state_phi_{n:06}.chbf")),
            &setup.grid,
            &traj.phi(n)?,
        )?;
        chbf::write_scalar_field(
            &ctx.out.join(format!("adjoint_{n:06}.chbf")),
            &setup.grid,
            &adj.xi[n],
        )?;
    }
    for n in 0..setup.n_steps {
        chbf::write_vector_field(
            &ctx.out.join(format!("state_u_{n:06}.chbf")),
            &setup.grid,
            &traj.u(n)?,
        )?;
    }

    let first = &run.iterates[0];
    say!(
        ctx,
        "{:?} after {} iterations: cost {} -> {}, stationarity {} -> {}",
        run.status,
        last.iter,
        first.cost,
        last.cost,
        first.kkt_residual,
        last.kkt_residual
    );
    match run.status {
        control::OcpStatus::LineSearchFailed => Err(ChbError::numerical(
            "line search found no acceptable step; iterate log and last control retained",
        )),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// check-gradient / check-adjoint
// ---------------------------------------------------------------------------

/// Least-squares slope of `ln y` against `ln x`.
fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.max(1e-300).ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn random_series(grid: &Grid2D, n: usize, rng: &mut impl Rng) -> Vec<VectorField> {
    (0..n)
        .map(|_| {
            let mut v = VectorField::zeros(grid);
            for c in v.x.data.iter_mut().chain(v.y.data.iter_mut()) {
                *c = rng.gen_range(-1.0..1.0);
            }
            v
        })
        .collect()
}

fn random_scalar_series(grid: &Grid2D, n: usize, rng: &mut impl Rng) -> Vec<ScalarField> {
    (0..n)
        .map(|_| {
            let mut f = ScalarField::zeros(grid);
            for c in f.data.iter_mut() {
                *c = rng.gen_range(-1.0..1.0);
            }
            f
        })
        .collect()
}

/// Check runs solve tighter than production so quadratic remainders stay
/// above the iterative-solver noise floor.
fn check_config(cfg: &RunConfig) -> RunConfig {
    let mut tight = cfg.clone();
    tight.tolerances.cg_tol = 1e-13;
    tight
}

fn write_check_csv(path: &Path, rows: &[(String, f64, f64, f64)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epsilon_or_seed,lhs,rhs,rel_err")?;
    for (label, lhs, rhs, rel) in rows {
        writeln!(f, "{label},{lhs},{rhs},{rel}")?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_check_gradient(cfg: &RunConfig, ctx: &Ctx) -> Result<()> {
    let cfg = check_config(cfg);
    let setup = cfg.build(ctx.seed)?;
    let targets = cfg.build_targets(&setup)?;

    // Expand around a generic point: a zero base control would leave the
    // linear term of the expansion negligible against the quadratic
    // control-energy term, and the slope gate would pass vacuously.  A
    // saved iterate series takes priority so resumed runs can be probed.
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let resumable = cfg.control.as_ref().is_some_and(|c| c.initial_files.is_some());
    let u_bar = if resumable {
        cfg.initial_control(&setup.grid, setup.n_steps)?
    } else {
        let mut base = random_series(&setup.grid, setup.n_steps, &mut rng);
        for v in &mut base {
            v.scale(0.1);
        }
        base
    };

    let (traj, _) = Trajectory::record(
        &setup.solver,
        setup.phi0.clone(),
        setup.dt,
        setup.n_steps,
        ForcingRef::Series(&u_bar),
    )?;
    let j0 = control::cost(&traj, &u_bar, &targets)?;
    let lin = Linearization::new(&setup.solver, &traj)?;
    let adj = control::adjoint_sweep(&lin, &targets)?;
    let g = control::reduced_gradient(&u_bar, &adj);

    let du = random_series(&setup.grid, setup.n_steps, &mut rng);
    let gdot = control::inner_q(&setup.grid, setup.dt, &g, &du);

    let epsilons = [1e-2, 1e-3, 1e-4, 1e-5];
    let mut rows = Vec::new();
    let mut remainders = Vec::new();
    for &eps in &epsilons {
        let mut u_eps = u_bar.clone();
        for (uc, dc) in u_eps.iter_mut().zip(&du) {
            uc.axpy(eps, dc);
        }
        let (t_eps, _) = Trajectory::record(
            &setup.solver,
            setup.phi0.clone(),
            setup.dt,
            setup.n_steps,
            ForcingRef::Series(&u_eps),
        )?;
        let j_eps = control::cost(&t_eps, &u_eps, &targets)?;
        let lhs = j_eps - j0;
        let rhs = eps * gdot;
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        remainders.push((lhs - rhs).abs());
        rows.push((format!("{eps}"), lhs, rhs, rel));
        say!(ctx, "eps {eps}: cost change {lhs}, predicted {rhs}, rel err {rel:.3e}");
    }
    write_check_csv(&ctx.out.join("check_gradient.csv"), &rows)?;

    let slope = fitted_slope(&epsilons, &remainders);
    say!(ctx, "taylor remainder slope: {slope:.4}");
    if !(1.9..=2.1).contains(&slope) {
        return Err(ChbError::numerical(format!(
            "Taylor remainder slope {slope:.4} outside [1.9, 2.1]; see check_gradient.csv"
        )));
    }
    Ok(())
}

fn cmd_check_adjoint(cfg: &RunConfig, ctx: &Ctx) -> Result<()> {
    let cfg = check_config(cfg);
    let setup = cfg.build(ctx.seed)?;
    let forcing = setup.forcing.as_ref();
    let (traj, _) = Trajectory::record(
        &setup.solver,
        setup.phi0.clone(),
        setup.dt,
        setup.n_steps,
        forcing,
    )?;
    let lin = Linearization::new(&setup.solver, &traj)?;

    let mut rows = Vec::new();
    let mut worst = 0.0_f64;
    for s in 0..10u64 {
        let seed = setup.seed.wrapping_add(s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let du = random_series(&setup.grid, setup.n_steps, &mut rng);
        let r_phi = random_scalar_series(&setup.grid, setup.n_steps, &mut rng);
        let r_u = random_series(&setup.grid, setup.n_steps, &mut rng);

        let tan = lin.tangent_sweep(&du)?;
        let adj = lin.adjoint_sweep_raw(&r_phi, &r_u)?;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for n in 0..setup.n_steps {
            lhs += ops::dot(&tan.psi[n + 1].data, &r_phi[n].data);
            lhs += ops::dot(&tan.w[n].x.data, &r_u[n].x.data)
                + ops::dot(&tan.w[n].y.data, &r_u[n].y.data);
            rhs += ops::dot(&du[n].x.data, &adj.ga[n].x.data)
                + ops::dot(&du[n].y.data, &adj.ga[n].y.data);
        }
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        rows.push((format!("{seed}"), lhs, rhs, rel));
        say!(ctx, "seed {seed}: <tangent du, r> = {lhs}, <du, adjoint r> = {rhs}, rel err {rel:.3e}");
    }
    write_check_csv(&ctx.out.join("check_adjoint.csv"), &rows)?;

    say!(ctx, "worst duality mismatch: {worst:.3e}");
    if worst > 1e-8 {
        return Err(ChbError::numerical(format!(
            "tangent/adjoint duality error {worst:.3e} exceeds 1e-8; see check_adjoint.csv"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convergence
// ---------------------------------------------------------------------------

struct LevelRun {
    nx: usize,
    ny: usize,
    dt: f64,
    n_steps: usize,
    phi: ScalarField,
    u: VectorField,
}

fn run_level(cfg: RunConfig, seed: Option<u64>) -> Result<LevelRun> {
    let setup = cfg.build(seed)?;
    let forcing = setup.forcing.as_ref();
    let mut state = setup.solver.initial_state(setup.phi0.clone(), forcing.at(0))?;
    for k in 0..setup.n_steps {
        state = setup.solver.advance(&state, setup.dt, forcing.at(k + 1))?.0;
    }
    Ok(LevelRun {
        nx: setup.grid.nx,
        ny: setup.grid.ny,
        dt: setup.dt,
        n_steps: setup.n_steps,
        phi: state.phi,
        u: state.u,
    })
}

/// Cell average of each 2x2 fine block — the exact adjoint of piecewise
/// constant refinement, second-order accurate at the coarse centers.
fn restrict_scalar(fine: &ScalarField, coarse: &Grid2D) -> ScalarField {
    let mut out = ScalarField::constant(coarse, 0.0);
    for j in 0..coarse.ny {
        for i in 0..coarse.nx {
            let (i2, j2) = (2 * i, 2 * j);
            let s = fine.data[j2 * fine.nx + i2]
                + fine.data[j2 * fine.nx + i2 + 1]
                + fine.data[(j2 + 1) * fine.nx + i2]
                + fine.data[(j2 + 1) * fine.nx + i2 + 1];
            out.data[j * coarse.nx + i] = 0.25 * s;
        }
    }
    out
}

fn l2_scalar_diff(grid: &Grid2D, a: &ScalarField, b: &ScalarField) -> f64 {
    let mut d = a.clone();
    for (x, y) in d.data.iter_mut().zip(&b.data) {
        *x -= y;
    }
    ops::l2_norm(grid, &d)
}

fn worker_cap(levels: usize) -> Result<usize> {
    match std::env::var("CHB_THREADS") {
        Err(std::env::VarError::NotPresent) => {
            let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
            Ok(avail.min(levels).max(1))
        }
        Err(e) => Err(ChbError::config(format!("CHB_THREADS is not readable: {e}"))),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| ChbError::config(format!("CHB_THREADS = {s:?} is not a positive integer"))),
    }
}

fn cmd_convergence(cfg: &RunConfig, ctx: &Ctx) -> Result<()> {
    const LEVELS: usize = 3;

    // Refinement reruns the same continuum problem on finer grids, so
    // every input must be a grid-independent description.
    if matches!(cfg.initial.r#type.as_str(), "spinodal" | "file") {
        return Err(ChbError::config(
            "convergence runs need a grid-independent initial pattern (constant or cosine)",
        ));
    }
    if matches!(cfg.physics.eta, EtaSpec::File { .. }) {
        return Err(ChbError::config("convergence runs need a constant permeability coefficient"));
    }
    if let Some(f) = &cfg.forcing {
        if f.r#type == "files" {
            return Err(ChbError::config("convergence runs need analytic (none/constant) forcing"));
        }
    }
    let max_n = cfg.grid.nx.max(cfg.grid.ny) << (LEVELS - 1);
    if max_n > 4096 {
        return Err(ChbError::config(format!(
            "finest level would be {max_n} cells per direction, beyond the supported 4096"
        )));
    }

    // The base level fixes dt; each refinement halves both the mesh and
    // the step, so the observed orders mix space and time consistently.
    let base = cfg.build(ctx.seed)?;
    let dt0 = base.dt;
    let cap = worker_cap(LEVELS)?;
    say!(
        ctx,
        "convergence: {} levels from {}x{}, dt0 = {}, {} worker(s)",
        LEVELS,
        cfg.grid.nx,
        cfg.grid.ny,
        dt0,
        cap
    );

    let mut results: Vec<Option<Result<LevelRun>>> = (0..LEVELS).map(|_| None).collect();
    for chunk_start in (0..LEVELS).step_by(cap) {
        let chunk_end = (chunk_start + cap).min(LEVELS);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for k in chunk_start..chunk_end {
                let mut cfg_k = cfg.clone();
                cfg_k.grid.nx = cfg.grid.nx << k;
                cfg_k.grid.ny = cfg.grid.ny << k;
                cfg_k.time.dt = Some(dt0 / (1u64 << k) as f64);
                let seed = ctx.seed;
                handles.push((k, scope.spawn(move || run_level(cfg_k, seed))));
            }
            for (k, h) in handles {
                results[k] = Some(
                    h.join()
                        .unwrap_or_else(|_| Err(ChbError::numerical("refinement worker panicked"))),
                );
            }
        });
    }
    let mut runs = Vec::with_capacity(LEVELS);
    for r in results {
        runs.push(r.expect("every level was scheduled")?);
    }

    // Terminal-state differences between consecutive levels, measured on
    // the coarser grid after block restriction.
    let mut err_phi = Vec::new();
    let mut err_u = Vec::new();
    for k in 0..LEVELS - 1 {
        let coarse = Grid2D::new(runs[k].nx, runs[k].ny, cfg.grid.lx, cfg.grid.ly)?;
        err_phi.push(l2_scalar_diff(&coarse, &restrict_scalar(&runs[k + 1].phi, &coarse), &runs[k].phi));
        let rux = l2_scalar_diff(&coarse, &restrict_scalar(&runs[k + 1].u.x, &coarse), &runs[k].u.x);
        let ruy = l2_scalar_diff(&coarse, &restrict_scalar(&runs[k + 1].u.y, &coarse), &runs[k].u.y);
        err_u.push(rux.hypot(ruy));
    }

    let mut out = fs::File::create(ctx.out.join("convergence.csv"))?;
    writeln!(out, "level,nx,ny,dt,n_steps,err_phi,err_u,order_phi,order_u")?;
    for (k, run) in runs.iter().enumerate() {
        let ep = if k < err_phi.len() { format!("{}", err_phi[k]) } else { String::new() };
        let eu = if k < err_u.len() { format!("{}", err_u[k]) } else { String::new() };
        let (op, ou) = if k >= 1 && k < err_phi.len() {
            (
                format!("{}", (err_phi[k - 1] / err_phi[k]).log2()),
                format!("{}", (err_u[k - 1] / err_u[k]).log2()),
            )
        } else {
            (String::new(), String::new())
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            k, run.nx, run.ny, run.dt, run.n_steps, ep, eu, op, ou
        )?;
    }
    out.flush()?;

    for k in 1..err_phi.len() {
        say!(
            ctx,
            "levels {}->{}: phase order {:.3}, velocity order {:.3}",
            k - 1,
            k,
            (err_phi[k - 1] / err_phi[k]).log2(),
            (err_u[k - 1] / err_u[k]).log2()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------

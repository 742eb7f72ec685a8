//! Command line interface: exact shadow and coupling computations, grid
//! embeddings, seeded simulation, statistical verification, and the
//! interpolation sweep. Exit code 0 means success (and all checks passed),
//! 1 means a verification check failed, 2 means the run itself failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use shadowsep::dilation::dilate;
use shadowsep::grid::{Barrier, GridSpec};
use shadowsep::io::{
    measure_from_json_str, read_closed_set_json, read_measure_json, read_samples_csv,
    write_barrier_csv, write_coupling_csv, write_measure_csv, write_measure_json,
    write_report_json, write_samples_csv, write_surface_csv,
};
use shadowsep::mc::{
    convergence_sweep, simulate, verify_embedding, verify_shadow_residual, EmbeddingCheck,
    ShadowResidualCheck, SimPlan, Simulation,
};
use shadowsep::measure::{max_atom_discrepancy, DiscreteMeasure};
use shadowsep::plot::{svg_barrier_plot, svg_line_plot};
use shadowsep::root::{root_solve, RootSolution};
use shadowsep::shadow::{left_curtain, obstructed_shadow, shadow_lp_oracle, shadow_with_tol};
use shadowsep::solvers::{
    interpolate_solve, lm_solve, multi_marginal_lm, InterpolatedSolution, LmSolution,
};
use shadowsep::{Error, Result};

#[derive(Parser)]
#[command(
    name = "shadowsep",
    version,
    about = "Shadows, curtain couplings, barrier embeddings and their Monte Carlo verification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    opts: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// Tolerance for exact-arithmetic consistency checks.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    /// Base seed for all randomized work.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Lattice spacing of the embedding grid.
    #[arg(long, global = true, default_value_t = 0.05)]
    grid_h: f64,
    /// Margin beyond the supports; defaults to max(2 * spread, 1).
    #[arg(long, global = true)]
    grid_margin: Option<f64>,
    /// Level budget of the grid; defaults to max(10 * spread^2, 4) time units.
    #[arg(long, global = true)]
    grid_levels: Option<usize>,
    /// Barrier contact threshold; defaults to a machine-precision scale.
    #[arg(long, global = true)]
    tol_barrier: Option<f64>,
    /// Output format for measures and couplings.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Render SVG plots alongside the data files.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, ValueEnum)]
enum Pipeline {
    Root,
    Lm,
    Interpolate,
}

impl Pipeline {
    fn name(self) -> &'static str {
        match self {
            Pipeline::Root => "root",
            Pipeline::Lm => "lm",
            Pipeline::Interpolate => "interpolate",
        }
    }
}

#[derive(Copy, Clone, PartialEq, ValueEnum)]
enum Control {
    None,
    FixedTime,
    Eroded,
}

impl Control {
    fn name(self) -> &'static str {
        match self {
            Control::None => "none",
            Control::FixedTime => "fixed-time",
            Control::Eroded => "eroded",
        }
    }
}

#[derive(Args)]
struct PipeArgs {
    /// Embedding pipeline to run.
    #[arg(long, value_enum)]
    pipeline: Pipeline,
    /// Start law: JSON file path or inline JSON.
    #[arg(long)]
    mu: String,
    /// Target law: JSON file path or inline JSON.
    #[arg(long)]
    nu: String,
    /// Branch time for the interpolated pipeline.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Shadow of a sub-measure in a target measure.
    Shadow {
        /// Source measure: JSON file path or inline JSON.
        #[arg(long)]
        eta: String,
        /// Target measure: JSON file path or inline JSON.
        #[arg(long)]
        nu: String,
        /// Cross-check the envelope construction against the LP oracle.
        #[arg(long)]
        lp_check: bool,
    },
    /// Left-curtain coupling of a convex-ordered pair.
    Curtain {
        #[arg(long)]
        mu: String,
        #[arg(long)]
        nu: String,
    },
    /// Push a measure through the dilation kernel of a closed set.
    Dilate {
        #[arg(long)]
        measure: String,
        /// Closed set JSON file with a "components" list of intervals.
        #[arg(long)]
        set: PathBuf,
    },
    /// Solve the obstacle problem and extract the stopping barrier.
    Root {
        #[arg(long)]
        mu: String,
        #[arg(long)]
        nu: String,
    },
    /// Left-monotone embedding plan with per-row sub-embeddings.
    Lm {
        #[arg(long)]
        mu: String,
        #[arg(long)]
        nu: String,
    },
    /// Interpolated embedding branching at a given time.
    Interpolate {
        #[arg(long)]
        mu: String,
        #[arg(long)]
        nu: String,
        #[arg(long)]
        lambda: f64,
    },
    /// Chained left-monotone couplings through several marginals, checked
    /// against the chained-shadow route.
    Multi {
        #[arg(long)]
        mu: String,
        /// Target marginals in increasing convex order.
        #[arg(long, num_args = 1.., required = true)]
        nus: Vec<String>,
    },
    /// Simulate the stopped walk under a solved plan.
    Simulate {
        #[command(flatten)]
        pipe: PipeArgs,
        #[arg(long, default_value_t = 100_000)]
        n_paths: usize,
        /// Snapshot times, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 1.0, 2.0])]
        levels: Vec<f64>,
        /// Samples CSV path; defaults to samples.csv in the output directory.
        #[arg(long)]
        samples_out: Option<PathBuf>,
    },
    /// Verify an embedding statistically; exits 1 when a check fails.
    Verify {
        #[command(flatten)]
        pipe: PipeArgs,
        #[arg(long, default_value_t = 100_000)]
        n_paths: usize,
        /// Snapshot times for the shadow-residual check, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 1.0, 2.0])]
        levels: Vec<f64>,
        /// Sabotage the plan to demonstrate the checks reject it.
        #[arg(long, value_enum, default_value_t = Control::None)]
        negative_control: Control,
        /// Verify stored samples instead of simulating fresh ones.
        #[arg(long)]
        samples_in: Option<PathBuf>,
    },
    /// Sweep the interpolation family across branch times.
    Sweep {
        #[arg(long)]
        mu: String,
        #[arg(long)]
        nu: String,
        /// Branch times, comma separated; "horizon" maps to the grid horizon.
        #[arg(long, value_delimiter = ',', default_value = "0.0025,0.1,0.5,1,2,5,horizon")]
        lambdas: Vec<String>,
        #[arg(long, default_value_t = 100_000)]
        n_paths: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_measure(spec: &str) -> Result<DiscreteMeasure> {
    if spec.trim_start().starts_with('{') {
        measure_from_json_str(spec)
    } else {
        read_measure_json(Path::new(spec))
    }
}

fn build_grid(opts: &GlobalOpts, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<GridSpec> {
    match opts.grid_margin {
        Some(m) => GridSpec::with_margin(mu, nu, opts.grid_h, m, opts.grid_levels),
        None => GridSpec::cover(mu, nu, opts.grid_h, opts.grid_levels),
    }
}

fn write_measure(opts: &GlobalOpts, name: &str, m: &DiscreteMeasure) -> Result<PathBuf> {
    let path = match opts.format {
        Format::Json => {
            let p = opts.out.join(format!("{name}.json"));
            write_measure_json(&p, m)?;
            p
        }
        Format::Csv => {
            let p = opts.out.join(format!("{name}.csv"));
            write_measure_csv(&p, m)?;
            p
        }
    };
    Ok(path)
}

fn write_coupling(
    opts: &GlobalOpts,
    name: &str,
    c: &shadowsep::shadow::Coupling,
) -> Result<PathBuf> {
    let path = match opts.format {
        Format::Json => {
            let p = opts.out.join(format!("{name}.json"));
            write_report_json(&p, "coupling", c)?;
            p
        }
        Format::Csv => {
            let p = opts.out.join(format!("{name}.csv"));
            write_coupling_csv(&p, c)?;
            p
        }
    };
    Ok(path)
}

/// Snapshot times in time units mapped to level indices on the grid.
fn level_indices(times: &[f64], grid: &GridSpec) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Parse(format!(
                "snapshot time must be finite and nonnegative, got {t}"
            )));
        }
        let idx = (t / grid.delta()).round() as usize;
        out.push(idx.min(grid.n_levels()) as u32);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

enum PlanBox {
    Root(RootSolution),
    Lm(LmSolution),
    Interp(InterpolatedSolution),
}

impl PlanBox {
    fn plan(&self) -> SimPlan<'_> {
        match self {
            PlanBox::Root(s) => SimPlan::Root(s),
            PlanBox::Lm(s) => SimPlan::LeftMonotone(s),
            PlanBox::Interp(s) => SimPlan::Interpolated(s),
        }
    }

    /// Snapshot levels at which the shadow-residual identity is expected:
    /// every level for the one-barrier pipeline, levels up to the branch
    /// for the interpolated one, none for the plan-indexed one.
    fn residual_levels(&self, recorded: &[u32]) -> Vec<u32> {
        match self {
            PlanBox::Root(_) => recorded.to_vec(),
            PlanBox::Interp(s) => recorded
                .iter()
                .copied()
                .filter(|&l| (l as usize) <= s.lambda_level)
                .collect(),
            PlanBox::Lm(_) => Vec::new(),
        }
    }
}

fn build_plan(opts: &GlobalOpts, pipe: &PipeArgs, control: Control) -> Result<PlanBox> {
    let mu = load_measure(&pipe.mu)?;
    let nu = load_measure(&pipe.nu)?;
    let grid = build_grid(opts, &mu, &nu)?;
    if control != Control::None && !matches!(pipe.pipeline, Pipeline::Root) {
        return Err(Error::Parse(
            "negative controls sabotage the root barrier; use --pipeline root".into(),
        ));
    }
    Ok(match pipe.pipeline {
        Pipeline::Root => {
            let mut sol = root_solve(&mu, &nu, &grid, opts.tol_barrier)?;
            match control {
                Control::None => {}
                Control::FixedTime => {
                    let level = ((0.1 / grid.delta()).round() as usize)
                        .max(1)
                        .min(grid.n_levels());
                    sol.barrier = Barrier::fixed_time(&grid, level);
                    sol.levels_run = level;
                }
                Control::Eroded => {
                    sol.barrier = sol.barrier.eroded(2);
                }
            }
            PlanBox::Root(sol)
        }
        Pipeline::Lm => PlanBox::Lm(lm_solve(&mu, &nu, &grid)?),
        Pipeline::Interpolate => {
            let lambda = pipe.lambda.ok_or_else(|| {
                Error::Parse("the interpolated pipeline needs --lambda".into())
            })?;
            PlanBox::Interp(interpolate_solve(&mu, &nu, lambda, &grid, opts.tol_barrier)?)
        }
    })
}

#[derive(Serialize)]
struct VerifyReport {
    pipeline: String,
    negative_control: String,
    n_paths: usize,
    seed: u64,
    embedding: EmbeddingCheck,
    shadow_residual: Option<ShadowResidualCheck>,
    passed: bool,
}

fn print_embedding(e: &EmbeddingCheck) {
    println!(
        "terminal_law: {} (W1 {:.3e} <= {:.3e})",
        pass_str(e.terminal_ok),
        e.w1_terminal,
        e.tol_terminal
    );
    println!(
        "stop_time: {} (|{:.4} - {:.4}| <= {:.3e})",
        pass_str(e.stop_time_ok),
        e.mean_stop_time,
        e.target_stop_time,
        e.tol_stop_time
    );
    println!(
        "contact: {} (violation fraction {:.2e} over {} starts)",
        pass_str(e.contact_ok),
        e.contact_violation_fraction,
        e.contact_starts
    );
    if e.cap_hit_fraction > 0.01 {
        println!(
            "warning: {:.2}% of paths hit the level cap; results are truncated",
            100.0 * e.cap_hit_fraction
        );
    }
}

fn print_residual(r: &ShadowResidualCheck) {
    for row in &r.rows {
        if row.skipped {
            println!(
                "shadow_residual t={:.3}: skipped ({} survivors)",
                row.time, row.survivors
            );
        } else {
            println!(
                "shadow_residual t={:.3}: {} (W1 {:.3e} <= {:.3e}, {} survivors)",
                row.time,
                pass_str(row.passed),
                row.w1,
                row.tol,
                row.survivors
            );
        }
    }
}

fn pass_str(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn run(cli: Cli) -> Result<bool> {
    let opts = &cli.opts;
    fs::create_dir_all(&opts.out)?;
    match cli.cmd {
        Cmd::Shadow { eta, nu, lp_check } => {
            let eta = load_measure(&eta)?;
            let nu = load_measure(&nu)?;
            let s = shadow_with_tol(&eta, &nu, opts.tol)?;
            let path = write_measure(opts, "shadow", &s)?;
            println!(
                "shadow: {} atoms, mass {:.6}, mean {:.6} -> {}",
                s.len(),
                s.mass(),
                s.mean().unwrap_or(f64::NAN),
                path.display()
            );
            if lp_check {
                let oracle = shadow_lp_oracle(&eta, &nu)?;
                let d = max_atom_discrepancy(&s, &oracle);
                let tol = opts.tol.max(1e-8);
                println!("lp_check: {} (max discrepancy {:.3e} <= {:.3e})", pass_str(d <= tol), d, tol);
                return Ok(d <= tol);
            }
            Ok(true)
        }
        Cmd::Curtain { mu, nu } => {
            let mu = load_measure(&mu)?;
            let nu = load_measure(&nu)?;
            let c = left_curtain(&mu, &nu, opts.tol)?;
            let d = max_atom_discrepancy(&c.target_marginal(), &nu);
            let path = write_coupling(opts, "curtain", &c)?;
            println!(
                "curtain: {} rows, target marginal off by {:.3e} -> {}",
                c.rows().len(),
                d,
                path.display()
            );
            Ok(d <= opts.tol.max(1e-8))
        }
        Cmd::Dilate { measure, set } => {
            let m = load_measure(&measure)?;
            let f = read_closed_set_json(&set)?;
            let d = dilate(&m, &f)?;
            let path = write_measure(opts, "dilated", &d)?;
            println!(
                "dilated: {} atoms, mass {:.6} (was {:.6}), mean {:.6} (was {:.6}) -> {}",
                d.len(),
                d.mass(),
                m.mass(),
                d.mean().unwrap_or(f64::NAN),
                m.mean().unwrap_or(f64::NAN),
                path.display()
            );
            Ok(true)
        }
        Cmd::Root { mu, nu } => {
            let mu = load_measure(&mu)?;
            let nu = load_measure(&nu)?;
            let grid = build_grid(opts, &mu, &nu)?;
            let sol = root_solve(&mu, &nu, &grid, opts.tol_barrier)?;
            write_barrier_csv(&opts.out.join("barrier.csv"), &sol.barrier, &sol.grid)?;
            write_surface_csv(&opts.out.join("surface.csv"), &sol.surface)?;
            write_measure(opts, "final_law", &sol.final_law)?;
            let report = serde_json::json!({
                "h": sol.grid.h(),
                "levels_run": sol.levels_run,
                "expected_stop_time": sol.expected_stop_time,
                "target_variance_gap": sol.target_variance_gap,
                "variance_gap": sol.variance_gap,
                "residual_mass": sol.residual_mass,
                "max_obstacle_gap_final": sol.max_obstacle_gap_final,
                "stats": sol.stats,
            });
            write_report_json(&opts.out.join("root_report.json"), "root", &report)?;
            if opts.plot {
                fs::write(
                    opts.out.join("barrier.svg"),
                    svg_barrier_plot(&sol.barrier, &sol.grid, "stopping region"),
                )?;
                let xs = sol.grid.nodes();
                let v_pts: Vec<(f64, f64)> =
                    xs.iter().copied().zip(sol.surface.v().iter().copied()).collect();
                let u_pts: Vec<(f64, f64)> = xs
                    .iter()
                    .copied()
                    .zip(sol.surface.final_row().iter().copied())
                    .collect();
                fs::write(
                    opts.out.join("potentials.svg"),
                    svg_line_plot(
                        &[("target potential", v_pts), ("stopped potential", u_pts)],
                        "obstacle solution",
                        "x",
                        "potential",
                        false,
                    ),
                )?;
            }
            println!(
                "root: {} levels, E[stop] {:.4} (target gap {:.4}), residual mass {:.2e} -> {}",
                sol.levels_run,
                sol.expected_stop_time,
                sol.target_variance_gap,
                sol.residual_mass,
                opts.out.display()
            );
            Ok(true)
        }
        Cmd::Lm { mu, nu } => {
            let mu = load_measure(&mu)?;
            let nu = load_measure(&nu)?;
            let grid = build_grid(opts, &mu, &nu)?;
            let sol = lm_solve(&mu, &nu, &grid)?;
            let path = write_coupling(opts, "lm_coupling", &sol.coupling)?;
            let stopped = sol.rows.iter().filter(|r| r.stopped).count();
            let report = serde_json::json!({
                "h": grid.h(),
                "rows": sol.rows.len(),
                "stopped_rows": stopped,
                "time_change": sol.spec,
            });
            write_report_json(&opts.out.join("lm_report.json"), "lm", &report)?;
            println!(
                "lm: {} rows ({} stopped at time zero) -> {}",
                sol.rows.len(),
                stopped,
                path.display()
            );
            Ok(true)
        }
        Cmd::Interpolate { mu, nu, lambda } => {
            let mu = load_measure(&mu)?;
            let nu = load_measure(&nu)?;
            let grid = build_grid(opts, &mu, &nu)?;
            let sol = interpolate_solve(&mu, &nu, lambda, &grid, opts.tol_barrier)?;
            let path = write_coupling(opts, "interpolated_coupling", &sol.coupling)?;
            let report = serde_json::json!({
                "lambda_requested": sol.lambda_requested,
                "lambda": sol.lambda,
                "lambda_level": sol.lambda_level,
                "stopped_mass_at_branch": sol.eta_stopped.mass(),
                "running_mass_at_branch": sol.eta_alive.mass(),
                "stage_two_rows": sol.stage2.len(),
                "time_change": sol.spec,
            });
            write_report_json(&opts.out.join("interpolate_report.json"), "interpolate", &report)?;
            if opts.plot {
                fs::write(
                    opts.out.join("barrier.svg"),
                    svg_barrier_plot(&sol.root.barrier, &sol.root.grid, "stopping region before the branch"),
                )?;
            }
            println!(
                "interpolate: branch at {:.4} (level {}), stopped mass {:.4}, {} second-stage rows -> {}",
                sol.lambda,
                sol.lambda_level,
                sol.eta_stopped.mass(),
                sol.stage2.len(),
                path.display()
            );
            Ok(true)
        }
        Cmd::Multi { mu, nus } => {
            let mu = load_measure(&mu)?;
            let nus = nus
                .iter()
                .map(|s| load_measure(s))
                .collect::<Result<Vec<_>>>()?;
            let couplings = multi_marginal_lm(&mu, &nus, opts.tol)?;
            let mut max_d: f64 = 0.0;
            for (i, c) in couplings.iter().enumerate() {
                write_coupling(opts, &format!("multi_stage_{i}"), c)?;
                for (q, _) in mu.iter() {
                    let restricted = c.target_restricted(q);
                    let chained = obstructed_shadow(&mu.restrict_leq(q), &nus[..=i], opts.tol)?;
                    let reference = chained.last().expect("chain is nonempty");
                    max_d = max_d.max(max_atom_discrepancy(&restricted, reference));
                }
            }
            let tol = opts.tol.max(1e-8);
            let report = serde_json::json!({
                "stages": couplings.len(),
                "max_restriction_discrepancy": max_d,
                "tol": tol,
            });
            write_report_json(&opts.out.join("multi_report.json"), "multi", &report)?;
            println!(
                "multi: {} stages, restriction check {} (max discrepancy {:.3e} <= {:.3e})",
                couplings.len(),
                pass_str(max_d <= tol),
                max_d,
                tol
            );
            Ok(max_d <= tol)
        }
        Cmd::Simulate {
            pipe,
            n_paths,
            levels,
            samples_out,
        } => {
            let planned = build_plan(opts, &pipe, Control::None)?;
            let plan = planned.plan();
            let level_idx = level_indices(&levels, plan.grid())?;
            let sim = simulate(&plan, n_paths, opts.seed, &level_idx)?;
            let path = samples_out.unwrap_or_else(|| opts.out.join("samples.csv"));
            write_samples_csv(&path, &sim)?;
            let report = serde_json::json!({
                "pipeline": pipe.pipeline.name(),
                "n_paths": n_paths,
                "seed": opts.seed,
                "levels": sim.levels,
                "mean_stop_time": sim.mean_stop_time(),
                "se_stop_time": sim.se_stop_time(),
                "cap_hit_fraction": sim.cap_hit_fraction(),
            });
            write_report_json(&opts.out.join("simulate_report.json"), "simulate", &report)?;
            if sim.cap_hit_fraction() > 0.01 {
                println!(
                    "warning: {:.2}% of paths hit the level cap",
                    100.0 * sim.cap_hit_fraction()
                );
            }
            println!(
                "simulate: {} paths, E[stop] {:.4} (se {:.1e}) -> {}",
                n_paths,
                sim.mean_stop_time(),
                sim.se_stop_time(),
                path.display()
            );
            Ok(true)
        }
        Cmd::Verify {
            pipe,
            n_paths,
            levels,
            negative_control,
            samples_in,
        } => {
            let planned = build_plan(opts, &pipe, negative_control)?;
            let plan = planned.plan();
            let sim = match samples_in {
                Some(path) => {
                    let (file_levels, samples) = read_samples_csv(&path)?;
                    Simulation::from_samples(
                        plan.grid().h(),
                        plan.grid().delta(),
                        file_levels,
                        samples,
                    )?
                }
                None => {
                    let all_idx = level_indices(&levels, plan.grid())?;
                    let idx = planned.residual_levels(&all_idx);
                    if idx.len() < all_idx.len() {
                        println!(
                            "note: dropping {} snapshot times past the plan's residual range",
                            all_idx.len() - idx.len()
                        );
                    }
                    simulate(&plan, n_paths, opts.seed, &idx)?
                }
            };
            let embedding = verify_embedding(&sim, &plan)?;
            print_embedding(&embedding);
            let residual = if sim.levels.is_empty() {
                None
            } else {
                let r = verify_shadow_residual(&sim, plan.target_law())?;
                print_residual(&r);
                Some(r)
            };
            let passed =
                embedding.passed && residual.as_ref().map(|r| r.passed).unwrap_or(true);
            let report = VerifyReport {
                pipeline: pipe.pipeline.name().into(),
                negative_control: negative_control.name().into(),
                n_paths: sim.n_paths,
                seed: sim.seed,
                embedding,
                shadow_residual: residual,
                passed,
            };
            write_report_json(&opts.out.join("verify_report.json"), "verify", &report)?;
            println!("overall: {}", pass_str(passed));
            Ok(passed)
        }
        Cmd::Sweep {
            mu,
            nu,
            lambdas,
            n_paths,
        } => {
            let mu = load_measure(&mu)?;
            let nu = load_measure(&nu)?;
            let grid = build_grid(opts, &mu, &nu)?;
            let parsed: Vec<f64> = lambdas
                .iter()
                .map(|t| {
                    if t.trim() == "horizon" {
                        Ok(grid.horizon())
                    } else {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("branch time {t:?}: {e}")))
                    }
                })
                .collect::<Result<_>>()?;
            let report = convergence_sweep(&mu, &nu, &grid, &parsed, n_paths, opts.seed)?;
            println!("lambda      level    d_lm        d_root");
            for p in &report.points {
                println!(
                    "{:<11.4} {:<8} {:<11.4e} {:<11.4e}",
                    p.lambda, p.lambda_level, p.d_lm, p.d_root
                );
            }
            write_report_json(&opts.out.join("sweep_report.json"), "sweep", &report)?;
            if opts.plot {
                let lm_pts: Vec<(f64, f64)> =
                    report.points.iter().map(|p| (p.lambda, p.d_lm)).collect();
                let root_pts: Vec<(f64, f64)> =
                    report.points.iter().map(|p| (p.lambda, p.d_root)).collect();
                fs::write(
                    opts.out.join("sweep.svg"),
                    svg_line_plot(
                        &[("to curtain coupling", lm_pts), ("to stopped coupling", root_pts)],
                        "interpolation sweep",
                        "branch time",
                        "coupling distance",
                        true,
                    ),
                )?;
            }
            println!("sweep: {} points -> {}", report.points.len(), opts.out.display());
            Ok(true)
        }
    }
}

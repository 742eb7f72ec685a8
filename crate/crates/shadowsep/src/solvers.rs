//! Embeddings assembled from the obstacle scheme and the shadow couplings:
//! the Root coupling, the left-monotone plan, the lambda-interpolated
//! family joining the two, and the multi-marginal left-monotone chain.
//! Each solver also reports the level process / time change pair it
//! realizes, so the stopping rule can be evaluated path by path.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::measure::{order_leq, DiscreteMeasure, Order, DEFAULT_TOL};
use crate::root::{
    absorb_split, law_from_node_weights, root_solve, root_solve_truncated, RootSolution,
};
use crate::shadow::{left_curtain, shadow_with_tol, Coupling, CouplingRow};

/// Stage-two source atoms lighter than this are stopped in place instead of
/// getting a sub-embedding: normalizing a conditional on a thinner atom
/// amplifies rounding noise past any useful precision, and the mass moved
/// is far below every verification tolerance.
pub const PLAN_DUST_FLOOR: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Level processes and time changes.
// ---------------------------------------------------------------------------

/// Which embedding a solution realizes, with the parameters needed to
/// evaluate its level process and time change along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeChangeSpec {
    Root,
    LeftMonotone,
    Interpolated { lambda: f64 },
    MultiMarginalLm { stages: usize },
}

/// Per-path data the level process may depend on: the start value and the
/// marked path values `(time, value)` recorded at stage boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PathContext {
    pub b0: f64,
    pub marks: Vec<(f64, f64)>,
}

impl PathContext {
    pub fn new(b0: f64) -> Self {
        PathContext { b0, marks: Vec::new() }
    }

    pub fn with_marks(b0: f64, marks: Vec<(f64, f64)>) -> Self {
        PathContext { b0, marks }
    }

    fn mark_value_at(&self, time: f64) -> f64 {
        let tol = 1e-12 * time.abs().max(1.0);
        self.marks
            .iter()
            .find(|(t, _)| (t - time).abs() <= tol)
            .map_or(f64::NAN, |&(_, b)| b)
    }
}

impl TimeChangeSpec {
    /// Level cleared by time `t`: nondecreasing and right-continuous in `t`.
    ///
    /// The interpolated variant needs a mark at its branch time holding the
    /// path value there; the multi-marginal variant reads its stage
    /// boundary times from the marks (stage zero starts at time zero).
    /// Missing marks evaluate to NaN.
    pub fn level_process(&self, ctx: &PathContext, t: f64) -> f64 {
        match *self {
            TimeChangeSpec::Root => t,
            TimeChangeSpec::LeftMonotone => (-ctx.b0).exp(),
            TimeChangeSpec::Interpolated { lambda } => {
                if t < lambda {
                    t
                } else {
                    lambda + (-ctx.mark_value_at(lambda)).exp()
                }
            }
            TimeChangeSpec::MultiMarginalLm { stages } => {
                let window = ctx
                    .marks
                    .iter()
                    .take(stages.saturating_sub(1))
                    .filter(|&&(e, _)| e <= t)
                    .count();
                window as f64 + (-ctx.b0).exp()
            }
        }
    }

    /// First time level `l` is cleared; infinity when it never is.
    pub fn time_change(&self, ctx: &PathContext, l: f64) -> f64 {
        match *self {
            TimeChangeSpec::Root => l.max(0.0),
            TimeChangeSpec::LeftMonotone => {
                if (-ctx.b0).exp() >= l {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            TimeChangeSpec::Interpolated { lambda } => {
                if l <= lambda {
                    l.max(0.0)
                } else if lambda + (-ctx.mark_value_at(lambda)).exp() >= l {
                    lambda
                } else {
                    f64::INFINITY
                }
            }
            TimeChangeSpec::MultiMarginalLm { stages } => {
                let c = (-ctx.b0).exp();
                let window = (l - c).ceil().max(0.0);
                if window >= stages as f64 {
                    return f64::INFINITY;
                }
                let w = window as usize;
                if w == 0 {
                    0.0
                } else {
                    ctx.marks.get(w - 1).map_or(f64::INFINITY, |&(e, _)| e)
                }
            }
        }
    }
}

/// The pair (level process, time change) of a spec along one path, exposed
/// through the adjunction that defines each side from the other.
#[derive(Debug, Clone, Copy)]
pub struct AdjointFamily<'a> {
    spec: &'a TimeChangeSpec,
    ctx: &'a PathContext,
}

/// Adjoint view of `spec` along `ctx`.
pub fn adjoint_level_process<'a>(
    spec: &'a TimeChangeSpec,
    ctx: &'a PathContext,
) -> AdjointFamily<'a> {
    AdjointFamily { spec, ctx }
}

impl AdjointFamily<'_> {
    /// inf over probed times of { t : X_t >= l }; infinity when no probed
    /// time clears the level. Recovers the time change when the probe
    /// contains the jump times of the level process.
    pub fn time_from_levels(&self, l: f64, probe_times: &[f64]) -> f64 {
        probe_times
            .iter()
            .copied()
            .filter(|&t| self.spec.level_process(self.ctx, t) >= l)
            .fold(f64::INFINITY, f64::min)
    }

    /// sup over probed levels of { l : T_l <= t }; negative infinity when no
    /// probed level has been cleared by `t`. Recovers the level process
    /// when the probe contains the values the level process attains.
    pub fn level_from_times(&self, t: f64, probe_levels: &[f64]) -> f64 {
        probe_levels
            .iter()
            .copied()
            .filter(|&l| self.spec.time_change(self.ctx, l) <= t)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Plans and solutions.
// ---------------------------------------------------------------------------

/// One planned source atom of a staged embedding: the conditional law it
/// must reach and, unless it is already stopped, the sub-embedding that
/// realizes the conditional as a walk from the atom.
#[derive(Debug, Clone)]
pub struct PlanRow {
    pub source_x: f64,
    pub source_w: f64,
    pub conditional: DiscreteMeasure,
    pub stopped: bool,
    pub embed: Option<RootSolution>,
}

/// Left-monotone embedding of a pair projected on a grid.
#[derive(Debug, Clone)]
pub struct LmSolution {
    pub grid: GridSpec,
    pub mu_snapped: DiscreteMeasure,
    pub nu_snapped: DiscreteMeasure,
    /// Left-curtain coupling of the projected pair.
    pub coupling: Coupling,
    /// One row per source atom, with its sub-embedding.
    pub rows: Vec<PlanRow>,
    pub spec: TimeChangeSpec,
}

/// Interpolated embedding: run the Root barrier until the branch time, then
/// finish with a left-curtain plan from the law reached there.
#[derive(Debug, Clone)]
pub struct InterpolatedSolution {
    pub lambda_requested: f64,
    /// Branch time snapped to the level lattice.
    pub lambda: f64,
    pub lambda_level: usize,
    /// Obstacle solve truncated at the branch level.
    pub root: RootSolution,
    /// Terminal law of the untruncated walk; stage two embeds into it.
    pub terminal: DiscreteMeasure,
    /// Law of the walk at the branch time (stopped plus alive).
    pub eta: DiscreteMeasure,
    pub eta_stopped: DiscreteMeasure,
    pub eta_alive: DiscreteMeasure,
    /// Stage-two plan over the atoms still alive at the branch time; empty
    /// when the walk drains before reaching it.
    pub stage2: Vec<PlanRow>,
    /// Composed coupling: one row per start atom, conditional on the
    /// terminal position.
    pub coupling: Coupling,
    pub spec: TimeChangeSpec,
}

/// Martingale coupling realized by a Root solution: each source atom's
/// conditional is the arrival law of unit mass evolved from that atom
/// through the barrier.
pub fn root_coupling(sol: &RootSolution) -> Result<Coupling> {
    let atoms: Vec<(f64, f64)> = sol.mu_snapped.iter().collect();
    let rows = atoms
        .par_iter()
        .map(|&(x, w)| -> Result<CouplingRow> {
            let i = sol
                .grid
                .index_at(x)
                .ok_or_else(|| Error::Grid(format!("source atom {x} is off the lattice")))?;
            let (mut acc, alive) =
                absorb_split(&[(i, 1.0)], &sol.barrier, sol.grid.n_x(), sol.levels_run);
            for (a, b) in acc.iter_mut().zip(&alive) {
                *a += b;
            }
            Ok(CouplingRow {
                source_x: x,
                source_w: w,
                conditional: law_from_node_weights(&sol.grid, &acc),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Coupling::new(rows, 1e-6)
}

/// Left-monotone embedding of `(mu, nu)` projected on `grid`: the coupling
/// is the left curtain of the projected pair, and every non-stopped row
/// carries a Root sub-embedding of its conditional on a matching lattice.
pub fn lm_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &GridSpec,
) -> Result<LmSolution> {
    if !mu.is_probability(1e-9) {
        return Err(Error::MassMismatch { left: mu.mass(), right: 1.0 });
    }
    if !nu.is_probability(1e-9) {
        return Err(Error::MassMismatch { left: nu.mass(), right: 1.0 });
    }
    if !grid.covers(mu) || !grid.covers(nu) {
        return Err(Error::Grid(
            "grid does not cover the supports of both measures".into(),
        ));
    }
    let mu_g = grid.snap(mu)?;
    let nu_g = grid.snap(nu)?;
    let coupling = left_curtain(&mu_g, &nu_g, DEFAULT_TOL)?;
    let rows = coupling
        .rows()
        .par_iter()
        .map(|row| plan_row_for(row.source_x, row.source_w, &row.conditional, grid.h()))
        .collect::<Result<Vec<_>>>()?;
    Ok(LmSolution {
        grid: grid.clone(),
        mu_snapped: mu_g,
        nu_snapped: nu_g,
        coupling,
        rows,
        spec: TimeChangeSpec::LeftMonotone,
    })
}

/// Builds the plan row for one source atom: a stopped row when the
/// conditional is the atom itself, otherwise a Root sub-embedding of the
/// conditional from the atom, solved on its own covering grid with the
/// same spacing (so all sub-lattices agree with the main one).
fn plan_row_for(
    source_x: f64,
    source_w: f64,
    conditional: &DiscreteMeasure,
    h: f64,
) -> Result<PlanRow> {
    let stopped = conditional.len() == 1;
    let embed = if stopped {
        None
    } else {
        // Curtain conditionals are shadow measures recovered from potential
        // envelopes, so mass and barycenter can sit a few 1e-10 off their
        // exact values (one, and the source atom). The embed gate needs both
        // exact; restore the martingale-row invariant before solving.
        let unit = conditional.normalize()?;
        let shift = source_x - unit.mean().unwrap_or(source_x);
        let target = DiscreteMeasure::new(unit.iter().map(|(x, w)| (x + shift, w)))?;
        let start = DiscreteMeasure::point(source_x, 1.0);
        let sub = GridSpec::cover(&start, &target, h, None)?;
        Some(root_solve(&start, &target, &sub, None)?)
    };
    Ok(PlanRow {
        source_x,
        source_w,
        conditional: conditional.clone(),
        stopped,
        embed,
    })
}

/// Interpolated embedding with branch time `lambda`.
///
/// The branch time is snapped to the level lattice (at least one level, at
/// most the grid horizon). Stage one runs the obstacle solve truncated at
/// the branch level; stage two is the left curtain from the alive part of
/// the law reached there into what the untruncated walk still had to place.
/// Per-atom dust (below [`PLAN_DUST_FLOOR`]) stops in place. When the walk
/// drains before the branch level, stage two is empty and the result
/// reproduces the Root solution's coupling exactly.
pub fn interpolate_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    lambda: f64,
    grid: &GridSpec,
    tol_barrier: Option<f64>,
) -> Result<InterpolatedSolution> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Grid(format!(
            "branch time must be finite and nonnegative, got {lambda}"
        )));
    }
    let lambda_level = ((lambda / grid.delta()).round() as usize)
        .max(1)
        .min(grid.n_levels());
    let lambda_snapped = lambda_level as f64 * grid.delta();

    let trunc = root_solve_truncated(mu, nu, grid, tol_barrier, Some(lambda_level))?;
    let full = if trunc.levels_run < lambda_level {
        // Drained before the branch: the truncated run is already the full
        // run, and there is nothing alive to branch.
        trunc.clone()
    } else {
        root_solve_truncated(mu, nu, grid, tol_barrier, None)?
    };
    let terminal = full.final_law.clone();

    let n_x = grid.n_x();
    let starts: Vec<(usize, f64)> = trunc
        .mu_snapped
        .iter()
        .map(|(x, w)| (grid.index_at(x).expect("projected atom on lattice"), w))
        .collect();
    let (frozen, alive) = absorb_split(&starts, &trunc.barrier, n_x, trunc.levels_run);
    let mut arrival = frozen.clone();
    for (a, b) in arrival.iter_mut().zip(&alive) {
        *a += b;
    }
    let eta = law_from_node_weights(grid, &arrival);
    let eta_stopped = law_from_node_weights(grid, &frozen);
    let eta_alive = law_from_node_weights(grid, &alive);

    // Stage two exists only if the walk actually reaches the branch level.
    let branch_active = trunc.levels_run == lambda_level && !eta_alive.is_empty();
    let stage2 = if branch_active {
        stage_two_plan(&eta_alive, &eta_stopped, &terminal, grid)?
    } else {
        Vec::new()
    };

    // Index stage-two rows by lattice node for composition and simulation.
    let mut by_node: HashMap<usize, &PlanRow> = HashMap::new();
    for row in &stage2 {
        let i = grid
            .index_at(row.source_x)
            .ok_or_else(|| Error::Grid(format!("stage-two atom {} off the lattice", row.source_x)))?;
        by_node.insert(i, row);
    }

    let rows = starts
        .par_iter()
        .map(|&(i, w)| -> Result<CouplingRow> {
            let (mut acc, alive_i) =
                absorb_split(&[(i, 1.0)], &trunc.barrier, n_x, trunc.levels_run);
            for (y, &wy) in alive_i.iter().enumerate() {
                if wy <= 0.0 {
                    continue;
                }
                match by_node.get(&y) {
                    Some(row) if !row.stopped => {
                        for (z, cw) in row.conditional.iter() {
                            let k = grid.index_at(z).ok_or_else(|| {
                                Error::Grid(format!("conditional atom {z} off the lattice"))
                            })?;
                            acc[k] += wy * cw;
                        }
                    }
                    // Unplanned or stopped arrivals stay in place, exactly as
                    // the simulator treats them.
                    _ => acc[y] += wy,
                }
            }
            Ok(CouplingRow {
                source_x: grid.x(i),
                source_w: w,
                conditional: law_from_node_weights(grid, &acc),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let coupling = Coupling::new(rows, 1e-6)?;

    Ok(InterpolatedSolution {
        lambda_requested: lambda,
        lambda: lambda_snapped,
        lambda_level,
        root: trunc,
        terminal,
        eta,
        eta_stopped,
        eta_alive,
        stage2,
        coupling,
        spec: TimeChangeSpec::Interpolated { lambda: lambda_snapped },
    })
}

/// Builds the stage-two plan: dust atoms stop in place; the rest are
/// curtain-coupled into the terminal law net of the already-stopped part,
/// with the dust removed from both sides (subtracting the same point masses
/// from source and target preserves the convex order).
fn stage_two_plan(
    eta_alive: &DiscreteMeasure,
    eta_stopped: &DiscreteMeasure,
    terminal: &DiscreteMeasure,
    grid: &GridSpec,
) -> Result<Vec<PlanRow>> {
    let target_alive = terminal.sub(eta_stopped, 1e-9)?;
    let dust = DiscreteMeasure::new(eta_alive.iter().filter(|&(_, w)| w < PLAN_DUST_FLOOR))?;
    let lean_src = eta_alive.sub(&dust, 1e-15)?;
    let mut rows: Vec<PlanRow> = dust
        .iter()
        .map(|(x, w)| PlanRow {
            source_x: x,
            source_w: w,
            conditional: DiscreteMeasure::point(x, 1.0),
            stopped: true,
            embed: None,
        })
        .collect();
    if !lean_src.is_empty() {
        let mut lean_tgt = target_alive.sub(&dust, 1e-9)?;
        // The untruncated run drains to a sub-probability law, so the target
        // side can run a hair light. Rebalance the masses exactly; a gap
        // beyond rounding scale is a real error and must surface.
        let ratio = lean_src.mass() / lean_tgt.mass();
        if !ratio.is_finite() || (ratio - 1.0).abs() > 1e-6 {
            return Err(Error::MassMismatch {
                left: lean_tgt.mass(),
                right: lean_src.mass(),
            });
        }
        if ratio != 1.0 {
            lean_tgt = lean_tgt.scale(ratio)?;
        }
        let curtain = left_curtain(&lean_src, &lean_tgt, DEFAULT_TOL)?;
        let planned = curtain
            .rows()
            .par_iter()
            .map(|row| plan_row_for(row.source_x, row.source_w, &row.conditional, grid.h()))
            .collect::<Result<Vec<_>>>()?;
        rows.extend(planned);
    }
    rows.sort_by(|a, b| a.source_x.total_cmp(&b.source_x));
    Ok(rows)
}

/// Multi-marginal left-monotone chain: couples `mu` to each target in turn,
/// carrying each source atom's stage law forward as the shadow of its
/// previous stage law in what remains of the next target. Exact measure
/// arithmetic throughout; no grid is involved.
pub fn multi_marginal_lm(
    mu: &DiscreteMeasure,
    nus: &[DiscreteMeasure],
    tol: f64,
) -> Result<Vec<Coupling>> {
    if nus.is_empty() {
        return Err(Error::EmptyInput("target chain"));
    }
    if !mu.is_probability(tol.max(1e-9)) {
        return Err(Error::MassMismatch { left: mu.mass(), right: 1.0 });
    }
    for (i, nu) in nus.iter().enumerate() {
        let prev: &DiscreteMeasure = if i == 0 { mu } else { &nus[i - 1] };
        if !order_leq(prev, nu, Order::Convex, tol) {
            return Err(Error::NotConvexOrder {
                detail: format!("chain breaks entering target {}", i + 1),
            }
            .at_stage(i + 1));
        }
    }

    let sources: Vec<(f64, f64)> = mu.iter().collect();
    // Absolute (mass-carrying) row laws of the previous stage, per source atom.
    let mut prev_rows: Vec<DiscreteMeasure> = sources
        .iter()
        .map(|&(x, w)| DiscreteMeasure::point(x, w))
        .collect();
    let mut out = Vec::with_capacity(nus.len());
    for (stage, nu) in nus.iter().enumerate() {
        let mut remaining = nu.clone();
        let mut rows = Vec::with_capacity(sources.len());
        for (k, &(x, w)) in sources.iter().enumerate() {
            let s = shadow_with_tol(&prev_rows[k], &remaining, tol)
                .map_err(|e| e.at_stage(stage + 1))?;
            remaining = remaining.sub(&s, tol).map_err(|e| e.at_stage(stage + 1))?;
            rows.push(CouplingRow {
                source_x: x,
                source_w: w,
                conditional: s.scale(1.0 / w)?,
            });
            prev_rows[k] = s;
        }
        out.push(Coupling::new(rows, tol.max(1e-7))?);
    }
    Ok(out)
}

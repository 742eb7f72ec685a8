//! Explicit obstacle scheme for the Root embedding on the walk lattice.
//!
//! The scheme iterates u(l+1, x) = min(v(x), (u(l, x-h) + u(l, x+h)) / 2)
//! from u(0, .) = U_mu with v = U_nu, both projected onto the grid. Rows
//! stay convex, bounded by v, and nondecreasing in l; the stopped region is
//! the thresholded contact set {v - u <= tol}, which is nested across
//! levels. Alongside the potential rows the solver evolves the walk law
//! itself with absorption on the contact set; that absorbed law is what the
//! path simulator samples, so couplings and intermediate laws derived from
//! it match simulation exactly in distribution.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Barrier, GridSpec, PotentialSurface};
use crate::measure::{order_leq, DiscreteMeasure, Order, DEFAULT_TOL, WEIGHT_FLOOR};
use crate::piecewise::{measure_from_potential, potential_on_points, PiecewiseLinear};

/// Contact threshold default: this many machine epsilons per unit of
/// potential scale.
pub const TOL_BARRIER_EPS_FACTOR: f64 = 10.0;
/// The level loop stops once the running (unstopped) mass falls below this.
/// Kept three orders below the probability tolerance so the final law's
/// deficit never trips downstream mass checks.
const RUN_MASS_FLOOR: f64 = 1e-12;
/// Cap on stored surface rows; levels are stride sampled.
const MAX_STORED_ROWS: usize = 256;

/// Numerical health counters of one solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RootStats {
    /// Worst convexity defect of any row: max over levels and interior nodes
    /// of -(u[i-1] - 2 u[i] + u[i+1]), clamped at 0.
    pub max_row_convexity_violation: f64,
    /// Worst defect of |row mass - total mass| over levels.
    pub max_mass_budget_error: f64,
    /// Worst one-step decrease of u at a node before the monotone clamp.
    pub max_monotonicity_violation: f64,
    /// W1 distance between the final law read from the potential row and the
    /// final law of the absorbed walk evolution. The two are independent
    /// bookkeepings of the same object.
    pub scheme_vs_walk_w1: f64,
}

/// Output of one obstacle solve.
#[derive(Debug, Clone)]
pub struct RootSolution {
    pub grid: GridSpec,
    pub mu_snapped: DiscreteMeasure,
    pub nu_snapped: DiscreteMeasure,
    pub barrier: Barrier,
    pub surface: PotentialSurface,
    /// Law of the stopped walk at the final level (absorbed evolution).
    pub final_law: DiscreteMeasure,
    /// Mass newly stopped at each level, from the absorbed evolution.
    pub stopped_level_mass: Vec<f64>,
    /// Time-budget estimate of E[tau]: delta * sum of surviving mass per level.
    pub expected_stop_time: f64,
    /// Var(final law) - Var(mu): equals E[tau] by the walk's variance
    /// bookkeeping, up to clamping effects of order delta.
    pub variance_gap: f64,
    /// Var(nu) - Var(mu) on the grid: the target value of E[tau].
    pub target_variance_gap: f64,
    pub levels_run: usize,
    /// Unstopped mass left at the final level.
    pub residual_mass: f64,
    /// max over nodes of v - u at the final level.
    pub max_obstacle_gap_final: f64,
    /// Absolute contact threshold actually used.
    pub tol_barrier: f64,
    pub stats: RootStats,
}

/// Evolves a sub-probability vector on the lattice through the barrier:
/// diffuse one level, then absorb whatever sits on the stopped set of the
/// new level. `start` holds (node, weight) pairs; absorption at level 0 is
/// applied first. Returns the absorbed mass and the mass still alive after
/// `levels` steps, as separate node-weight vectors.
pub(crate) fn absorb_split(
    start: &[(usize, f64)],
    barrier: &Barrier,
    n_x: usize,
    levels: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut alive = vec![0.0f64; n_x];
    let mut stopped = vec![0.0f64; n_x];
    let mut lo = n_x;
    let mut hi = 0usize;
    for &(i, w) in start {
        if barrier.is_stopped(0, i) {
            stopped[i] += w;
        } else {
            alive[i] += w;
            lo = lo.min(i);
            hi = hi.max(i);
        }
    }
    if lo > hi {
        return (stopped, alive);
    }
    let mut next = vec![0.0f64; n_x];
    for l in 1..=levels {
        let (nlo, nhi) = (lo.saturating_sub(1), (hi + 1).min(n_x - 1));
        for i in nlo..=nhi {
            let left = if i > 0 { alive[i - 1] } else { 0.0 };
            let right = if i + 1 < n_x { alive[i + 1] } else { 0.0 };
            next[i] = 0.5 * (left + right);
        }
        let mut alo = n_x;
        let mut ahi = 0usize;
        let mut total_alive = 0.0;
        for i in nlo..=nhi {
            let w = next[i];
            next[i] = 0.0;
            if w == 0.0 {
                alive[i] = 0.0;
                continue;
            }
            if barrier.is_stopped(l, i) {
                stopped[i] += w;
                alive[i] = 0.0;
            } else {
                alive[i] = w;
                total_alive += w;
                alo = alo.min(i);
                ahi = ahi.max(i);
            }
        }
        if total_alive == 0.0 {
            return (stopped, alive);
        }
        lo = alo;
        hi = ahi;
    }
    (stopped, alive)
}

/// Arrival law of [`absorb_split`]: absorbed plus still-alive mass.
#[cfg(test)]
pub(crate) fn absorb_evolve(
    start: &[(usize, f64)],
    barrier: &Barrier,
    n_x: usize,
    levels: usize,
) -> Vec<f64> {
    let (mut stopped, alive) = absorb_split(start, barrier, n_x, levels);
    for i in 0..n_x {
        stopped[i] += alive[i];
    }
    stopped
}

pub(crate) fn law_from_node_weights(grid: &GridSpec, weights: &[f64]) -> DiscreteMeasure {
    let atoms: Vec<(f64, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > WEIGHT_FLOOR)
        .map(|(i, &w)| (grid.x(i), w))
        .collect();
    DiscreteMeasure::new(atoms).expect("node weights form a measure")
}

/// Runs the obstacle scheme to the grid horizon.
pub fn root_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &GridSpec,
    tol_barrier: Option<f64>,
) -> Result<RootSolution> {
    root_solve_truncated(mu, nu, grid, tol_barrier, None)
}

/// Runs the obstacle scheme, optionally truncated at `max_levels`. The level
/// loop also stops early once the surviving mass drains below 1e-12.
pub fn root_solve_truncated(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &GridSpec,
    tol_barrier: Option<f64>,
    max_levels: Option<usize>,
) -> Result<RootSolution> {
    if !mu.is_probability(1e-9) {
        return Err(Error::MassMismatch {
            left: mu.mass(),
            right: 1.0,
        });
    }
    if !nu.is_probability(1e-9) {
        return Err(Error::MassMismatch {
            left: nu.mass(),
            right: 1.0,
        });
    }
    if !grid.covers(mu) || !grid.covers(nu) {
        return Err(Error::Grid(
            "grid does not cover the supports of both measures".into(),
        ));
    }
    if !order_leq(mu, nu, Order::Convex, DEFAULT_TOL) {
        return Err(Error::NotConvexOrder {
            detail: "embedding requires the start below the target in convex order".into(),
        });
    }
    let mu_g = grid.snap(mu)?;
    let nu_g = grid.snap(nu)?;
    if !order_leq(&mu_g, &nu_g, Order::Convex, DEFAULT_TOL) {
        return Err(Error::NotConvexOrder {
            detail: "grid projections lost the convex order".into(),
        });
    }

    let n = grid.n_x();
    let nodes = grid.nodes();
    let mass = mu_g.mass();
    let v = potential_on_points(&nu_g, &nodes);
    let mut u = potential_on_points(&mu_g, &nodes);
    let scale = v.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let thresh = match tol_barrier {
        Some(t) if t.is_finite() && t > 0.0 => t,
        Some(t) => {
            return Err(Error::Grid(format!(
                "contact threshold must be positive, got {t}"
            )))
        }
        None => TOL_BARRIER_EPS_FACTOR * f64::EPSILON * scale,
    };

    let cap = max_levels.unwrap_or(usize::MAX).min(grid.n_levels());
    let delta = grid.delta();
    let h = grid.h();

    let mut stopped = vec![false; n];
    let mut alive = vec![0.0f64; n];
    let mut frozen = vec![0.0f64; n];
    for (x, w) in mu_g.iter() {
        let i = grid
            .index_at(x)
            .ok_or_else(|| Error::Grid(format!("projected atom {x} is off the lattice")))?;
        alive[i] += w;
    }

    let mut stats = RootStats {
        max_row_convexity_violation: 0.0,
        max_mass_budget_error: 0.0,
        max_monotonicity_violation: 0.0,
        scheme_vs_walk_w1: 0.0,
    };

    // Level 0 contact and absorption.
    for i in 0..n {
        if u[i] > v[i] {
            u[i] = v[i]; // float guard, order was checked above
        }
        if v[i] - u[i] <= thresh {
            stopped[i] = true;
            u[i] = v[i];
            frozen[i] += alive[i];
            alive[i] = 0.0;
        }
    }

    let row_intervals = |stopped: &[bool]| -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for (i, &s) in stopped.iter().enumerate() {
            match (s, start) {
                (true, None) => start = Some(i),
                (false, Some(a)) => {
                    out.push((a as u32, (i - 1) as u32));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(a) = start {
            out.push((a as u32, (n - 1) as u32));
        }
        out
    };

    let row_stats = |u: &[f64], stats: &mut RootStats| {
        let mut row_mass = 0.0;
        for i in 0..n {
            let w = if i == 0 {
                ((u[1] - u[0]) / h + mass) / 2.0
            } else if i == n - 1 {
                (mass - (u[n - 1] - u[n - 2]) / h) / 2.0
            } else {
                let second = u[i - 1] - 2.0 * u[i] + u[i + 1];
                if second < 0.0 {
                    stats.max_row_convexity_violation =
                        stats.max_row_convexity_violation.max(-second);
                }
                second / (2.0 * h)
            };
            row_mass += w;
        }
        stats.max_mass_budget_error = stats.max_mass_budget_error.max((row_mass - mass).abs());
    };
    row_stats(&u, &mut stats);

    let mut barrier_rows = vec![row_intervals(&stopped)];
    let mut stopped_level_mass = vec![frozen.iter().sum::<f64>()];
    let mut running = mass - stopped_level_mass[0];
    let mut e_sum = 0.0;

    let stride = (grid.n_levels() / MAX_STORED_ROWS).max(1);
    let mut surf_rows: Vec<(usize, Vec<f64>)> = vec![(0, u.clone())];

    let mut next_u = u.clone();
    let mut next_alive = vec![0.0f64; n];
    let mut level = 0usize;

    while level < cap && running > RUN_MASS_FLOOR {
        e_sum += running;
        level += 1;
        // Diffuse the potential row and the alive mass.
        for i in 0..n {
            if stopped[i] || i == 0 || i == n - 1 {
                // Contact nodes stay on the obstacle; boundary columns are
                // pinned to it (they sit beyond both supports).
                next_u[i] = v[i];
                continue;
            }
            let avg = 0.5 * (u[i - 1] + u[i + 1]);
            if avg < u[i] {
                stats.max_monotonicity_violation = stats.max_monotonicity_violation.max(u[i] - avg);
            }
            next_u[i] = avg.max(u[i]).min(v[i]);
        }
        for i in 0..n {
            let left = if i > 0 { alive[i - 1] } else { 0.0 };
            let right = if i + 1 < n { alive[i + 1] } else { 0.0 };
            next_alive[i] = 0.5 * (left + right);
        }
        // Contact detection, pinning, absorption.
        let mut newly = 0.0;
        for i in 0..n {
            if stopped[i] {
                newly += next_alive[i];
                frozen[i] += next_alive[i];
                next_alive[i] = 0.0;
            } else if v[i] - next_u[i] <= thresh {
                stopped[i] = true;
                next_u[i] = v[i];
                newly += next_alive[i];
                frozen[i] += next_alive[i];
                next_alive[i] = 0.0;
            }
        }
        std::mem::swap(&mut u, &mut next_u);
        std::mem::swap(&mut alive, &mut next_alive);
        running -= newly;
        stopped_level_mass.push(newly);
        barrier_rows.push(row_intervals(&stopped));
        row_stats(&u, &mut stats);
        if level % stride == 0 {
            surf_rows.push((level, u.clone()));
        }
    }
    if surf_rows.last().map(|(l, _)| *l) != Some(level) {
        surf_rows.push((level, u.clone()));
    }

    let barrier = Barrier::from_levels(barrier_rows, n)?;
    let mut arrival = frozen.clone();
    for i in 0..n {
        arrival[i] += alive[i];
    }
    let final_law = law_from_node_weights(grid, &arrival);

    let max_gap = u
        .iter()
        .zip(v.iter())
        .fold(0.0f64, |a, (&ui, &vi)| a.max(vi - ui));

    let row_pl = PiecewiseLinear::new(nodes.clone(), u.clone(), -mass, mass)?;
    let scheme_final = measure_from_potential(&row_pl, 1e-6)?;
    stats.scheme_vs_walk_w1 = crate::measure::wasserstein1(&scheme_final, &final_law)
        .unwrap_or(f64::INFINITY);

    let expected_stop_time = delta * e_sum;
    let var_mu = mu_g.variance().unwrap_or(0.0);
    let variance_gap = final_law.variance().unwrap_or(0.0) - var_mu;
    let target_variance_gap = nu_g.variance().unwrap_or(0.0) - var_mu;
    let surface = PotentialSurface::new(grid.clone(), v, surf_rows);

    Ok(RootSolution {
        grid: grid.clone(),
        mu_snapped: mu_g,
        nu_snapped: nu_g,
        barrier,
        surface,
        final_law,
        stopped_level_mass,
        expected_stop_time,
        variance_gap,
        target_variance_gap,
        levels_run: level,
        residual_mass: running,
        max_obstacle_gap_final: max_gap,
        tol_barrier: thresh,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::wasserstein1;

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    fn analytic_pair() -> (DiscreteMeasure, DiscreteMeasure, GridSpec) {
        let mu = m(&[(0.0, 1.0)]);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let grid = GridSpec::cover(&mu, &nu, 0.05, None).unwrap();
        (mu, nu, grid)
    }

    #[test]
    fn analytic_two_point_case() {
        let (mu, nu, grid) = analytic_pair();
        let sol = root_solve(&mu, &nu, &grid, None).unwrap();

        // Level-0 stopped set is exactly {x <= -1} union {x >= 1}.
        let i_lo = grid.index_at(-1.0).unwrap();
        let i_hi = grid.index_at(1.0).unwrap();
        assert_eq!(
            sol.barrier.level_intervals(0),
            &[(0, i_lo as u32), (i_hi as u32, (grid.n_x() - 1) as u32)]
        );
        // The interior never stops: the final level has the same stopped set.
        assert_eq!(
            sol.barrier.level_intervals(sol.levels_run),
            sol.barrier.level_intervals(0)
        );

        // Gambler's-ruin exit time from 0 to +-1 on a lattice of step h is
        // exactly (1/h)^2 steps, i.e. E[tau] = 1.
        assert!(
            (sol.expected_stop_time - 1.0).abs() < 1e-6,
            "E[tau] = {}",
            sol.expected_stop_time
        );
        assert!((sol.variance_gap - 1.0).abs() < 1e-6);
        assert!((sol.target_variance_gap - 1.0).abs() < 1e-12);

        // Final law is the target.
        assert!(wasserstein1(&sol.final_law, &sol.nu_snapped).unwrap() < 1e-7);
        assert!(sol.residual_mass < 1e-9);
        assert!(sol.max_obstacle_gap_final < 1e-6);

        // Scheme health.
        assert!(sol.stats.max_mass_budget_error < 1e-9);
        assert!(sol.stats.max_row_convexity_violation < 1e-11);
        assert!(sol.stats.max_monotonicity_violation < 1e-11);
        assert!(sol.stats.scheme_vs_walk_w1 < 1e-8);
    }

    #[test]
    fn equal_marginals_stop_instantly() {
        let nu = m(&[(-0.5, 0.25), (0.0, 0.5), (0.75, 0.25)]);
        let grid = GridSpec::cover(&nu, &nu, 0.05, None).unwrap();
        let sol = root_solve(&nu, &nu, &grid, None).unwrap();
        assert_eq!(sol.levels_run, 0);
        assert_eq!(sol.expected_stop_time, 0.0);
        assert_eq!(sol.residual_mass, 0.0);
        // The stopped set at level 0 covers the support.
        for (x, _) in sol.nu_snapped.iter() {
            let i = grid.index_at(x).unwrap();
            assert!(sol.barrier.is_stopped(0, i));
        }
        assert!(wasserstein1(&sol.final_law, &sol.nu_snapped).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_unordered_pair() {
        let mu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let nu = m(&[(0.0, 1.0)]);
        let grid = GridSpec::cover(&mu, &nu, 0.1, None).unwrap();
        assert!(matches!(
            root_solve(&mu, &nu, &grid, None),
            Err(Error::NotConvexOrder { .. })
        ));
    }

    #[test]
    fn rejects_non_probability() {
        let mu = m(&[(0.0, 0.5)]);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let grid = GridSpec::cover(&mu, &nu, 0.1, None).unwrap();
        assert!(matches!(
            root_solve(&mu, &nu, &grid, None),
            Err(Error::MassMismatch { .. })
        ));
    }

    #[test]
    fn truncation_matches_full_run_prefix() {
        let (mu, nu, grid) = analytic_pair();
        let full = root_solve(&mu, &nu, &grid, None).unwrap();
        let cut = root_solve_truncated(&mu, &nu, &grid, None, Some(50)).unwrap();
        assert_eq!(cut.levels_run, 50);
        // Barrier prefix agrees.
        for l in 0..=50 {
            assert_eq!(cut.barrier.level_intervals(l), full.barrier.level_intervals(l));
        }
        // Stopped-mass sequence agrees on the prefix.
        for l in 0..=50 {
            assert!((cut.stopped_level_mass[l] - full.stopped_level_mass[l]).abs() < 1e-15);
        }
        // Truncation far beyond the drain level reproduces the full run.
        let big = root_solve_truncated(&mu, &nu, &grid, None, Some(grid.n_levels() * 2)).unwrap();
        assert_eq!(big.levels_run, full.levels_run);
        assert_eq!(big.final_law, full.final_law);
    }

    #[test]
    fn absorption_matches_scheme_row_on_aggregate() {
        let mu = m(&[(-0.3, 0.5), (0.5, 0.5)]);
        let nu = m(&[(-1.2, 0.3), (0.1, 0.45), (1.4, 0.25)]);
        assert!((mu.first_moment() - nu.first_moment()).abs() < 0.2);
        // Build a feasible pair: merge nu into its barycenter groups.
        let mid = m(&[(nu.first_moment(), 1.0)]);
        let grid = GridSpec::cover(&mid, &nu, 0.05, None).unwrap();
        let sol = root_solve(&mid, &nu, &grid, None).unwrap();
        // Walk law and scheme row differ by the spatial discretization error,
        // which is below h^2 scale here and shrinks superlinearly under
        // refinement; the walk itself satisfies the variance identity to
        // rounding.
        let h2 = grid.h() * grid.h();
        assert!(sol.stats.scheme_vs_walk_w1 < h2);
        assert!(wasserstein1(&sol.final_law, &sol.nu_snapped).unwrap() < h2);
        assert!((sol.expected_stop_time - sol.variance_gap).abs() < 2.0 * grid.delta() + 1e-9);
        assert!((sol.variance_gap - sol.target_variance_gap).abs() < h2);

        let fine = GridSpec::cover(&mid, &nu, 0.025, None).unwrap();
        let sol_f = root_solve(&mid, &nu, &fine, None).unwrap();
        assert!(sol_f.stats.scheme_vs_walk_w1 < 0.6 * sol.stats.scheme_vs_walk_w1);
    }

    #[test]
    fn absorb_evolve_agrees_with_solver_law() {
        let (mu, nu, grid) = analytic_pair();
        let sol = root_solve(&mu, &nu, &grid, None).unwrap();
        let starts: Vec<(usize, f64)> = sol
            .mu_snapped
            .iter()
            .map(|(x, w)| (grid.index_at(x).unwrap(), w))
            .collect();
        let law = absorb_evolve(&starts, &sol.barrier, grid.n_x(), sol.levels_run);
        let law_m = law_from_node_weights(&grid, &law);
        assert!(wasserstein1(&law_m, &sol.final_law).unwrap() < 1e-12);
    }
}

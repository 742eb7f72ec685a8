//! Monte Carlo harness: seeded simulation of the stopped lattice walk under
//! a solved embedding plan, statistical verification of the embedding and of
//! the shadow-residual property, and the interpolation convergence sweep.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Barrier, GridSpec};
use crate::measure::{wasserstein1, DiscreteMeasure, DEFAULT_TOL};
use crate::root::{root_solve, RootSolution};
use crate::shadow::{left_curtain, shadow_with_tol};
use crate::solvers::{interpolate_solve, InterpolatedSolution, LmSolution, PlanRow};

/// Model-plus-sampling tolerance for comparing an empirical law of `n` walk
/// samples on an `h`-lattice against its target measure.
pub fn tol_model(n: usize, h: f64) -> f64 {
    2.0 * h + 5.0 / (n as f64).sqrt()
}

/// Minimum number of surviving paths below which a residual check row is
/// skipped rather than evaluated.
pub const MIN_SURVIVORS: usize = 100;

/// One simulated path of the stopped walk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppedSample {
    /// Start position, an atom of the plan's snapped start law.
    pub start: f64,
    /// Global level index at which the path stopped.
    pub stop_level: u32,
    /// Position at the stop level.
    pub stop_x: f64,
    /// True when the walk exhausted its level budget while still unstopped,
    /// so the recorded stop is a truncation rather than a planned stop.
    pub cap_hit: bool,
    /// Position of the stopped walk at each requested snapshot level: the
    /// walk position while running, frozen at `stop_x` afterwards.
    pub at_levels: Vec<f64>,
}

/// A batch of simulated paths together with the sampling geometry.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub seed: u64,
    pub n_paths: usize,
    pub h: f64,
    pub delta: f64,
    /// Requested snapshot levels, sorted and deduplicated.
    pub levels: Vec<u32>,
    pub samples: Vec<StoppedSample>,
}

impl Simulation {
    /// Rebuilds a simulation batch from stored samples, e.g. after a CSV
    /// round trip. The seed is unknown and recorded as zero.
    pub fn from_samples(
        h: f64,
        delta: f64,
        levels: Vec<u32>,
        samples: Vec<StoppedSample>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("stored samples"));
        }
        if let Some(bad) = samples.iter().find(|s| s.at_levels.len() != levels.len()) {
            return Err(Error::Sim(format!(
                "sample records {} snapshots, expected {}",
                bad.at_levels.len(),
                levels.len()
            )));
        }
        Ok(Simulation {
            seed: 0,
            n_paths: samples.len(),
            h,
            delta,
            levels,
            samples,
        })
    }

    pub fn cap_hit_fraction(&self) -> f64 {
        let hits = self.samples.iter().filter(|s| s.cap_hit).count();
        hits as f64 / self.n_paths as f64
    }

    /// Mean stopping time in time units (levels scaled by the level width).
    pub fn mean_stop_time(&self) -> f64 {
        let sum: f64 = self.samples.iter().map(|s| s.stop_level as f64).sum();
        sum / self.n_paths as f64 * self.delta
    }

    /// Standard error of the mean stopping time.
    pub fn se_stop_time(&self) -> f64 {
        let n = self.n_paths as f64;
        let mean = self.mean_stop_time() / self.delta;
        let ss: f64 = self
            .samples
            .iter()
            .map(|s| (s.stop_level as f64 - mean).powi(2))
            .sum();
        (ss / (n * (n - 1.0).max(1.0))).sqrt() * self.delta
    }

    /// Empirical law of the stop positions, each path weighted `1/n`.
    pub fn terminal_law(&self) -> Result<DiscreteMeasure> {
        let w = 1.0 / self.n_paths as f64;
        DiscreteMeasure::new(self.samples.iter().map(|s| (s.stop_x, w)))
    }

    /// Empirical sub-law of the paths alive at `level` (stop level at or
    /// past it), their terminal sub-law, and the survivor count. `level`
    /// must be one of the recorded snapshot levels.
    pub fn survivors_at(&self, level: u32) -> Result<(DiscreteMeasure, DiscreteMeasure, usize)> {
        let j = self
            .levels
            .iter()
            .position(|&l| l == level)
            .ok_or_else(|| Error::Sim(format!("level {level} was not recorded")))?;
        let w = 1.0 / self.n_paths as f64;
        let mut now = Vec::new();
        let mut landed = Vec::new();
        for s in &self.samples {
            if s.stop_level >= level {
                now.push((s.at_levels[j], w));
                landed.push((s.stop_x, w));
            }
        }
        let n = now.len();
        Ok((DiscreteMeasure::new(now)?, DiscreteMeasure::new(landed)?, n))
    }
}

/// A solved embedding that the walk simulator can execute.
#[derive(Debug, Clone, Copy)]
pub enum SimPlan<'a> {
    Root(&'a RootSolution),
    LeftMonotone(&'a LmSolution),
    Interpolated(&'a InterpolatedSolution),
}

impl SimPlan<'_> {
    pub fn start_law(&self) -> &DiscreteMeasure {
        match self {
            SimPlan::Root(s) => &s.mu_snapped,
            SimPlan::LeftMonotone(s) => &s.mu_snapped,
            SimPlan::Interpolated(s) => &s.root.mu_snapped,
        }
    }

    pub fn target_law(&self) -> &DiscreteMeasure {
        match self {
            SimPlan::Root(s) => &s.nu_snapped,
            SimPlan::LeftMonotone(s) => &s.nu_snapped,
            SimPlan::Interpolated(s) => &s.root.nu_snapped,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        match self {
            SimPlan::Root(s) => &s.grid,
            SimPlan::LeftMonotone(s) => &s.grid,
            SimPlan::Interpolated(s) => &s.root.grid,
        }
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Fair-coin step source: one `u64` buys 64 steps, consumed LSB first.
struct BitBuffer {
    bits: u64,
    left: u8,
}

impl BitBuffer {
    fn new() -> Self {
        BitBuffer { bits: 0, left: 0 }
    }

    fn step_up(&mut self, rng: &mut ChaCha8Rng) -> bool {
        if self.left == 0 {
            self.bits = rng.random::<u64>();
            self.left = 64;
        }
        let up = self.bits & 1 == 1;
        self.bits >>= 1;
        self.left -= 1;
        up
    }
}

fn draw_start(mu: &DiscreteMeasure, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>() * mu.mass();
    let mut acc = 0.0;
    for (x, w) in mu.iter() {
        acc += w;
        if u < acc {
            return x;
        }
    }
    mu.xs()[mu.len() - 1]
}

/// Records the walk position at each requested global level, in order.
struct Snapshots<'a> {
    want: &'a [u32],
    at: Vec<f64>,
    next: usize,
}

impl<'a> Snapshots<'a> {
    fn new(want: &'a [u32]) -> Self {
        Snapshots {
            want,
            at: Vec::with_capacity(want.len()),
            next: 0,
        }
    }

    fn visit(&mut self, level: u32, x: f64) {
        if self.next < self.want.len() && self.want[self.next] == level {
            self.at.push(x);
            self.next += 1;
        }
    }

    fn finish(mut self, stop_x: f64) -> Vec<f64> {
        while self.next < self.want.len() {
            self.at.push(stop_x);
            self.next += 1;
        }
        self.at
    }
}

/// Walks one barrier segment from node `ix0`, checking the barrier after
/// each recorded position so a stop at the current level is inclusive.
/// Returns the global stop level, the stop node, and whether the segment's
/// level budget ran out with the walk still unstopped.
#[allow(clippy::too_many_arguments)]
fn walk_barrier(
    grid: &GridSpec,
    barrier: &Barrier,
    ix0: usize,
    cap: usize,
    offset: u32,
    record_entry: bool,
    rng: &mut ChaCha8Rng,
    buf: &mut BitBuffer,
    snaps: &mut Snapshots,
) -> (u32, usize, bool) {
    let last = grid.n_x() - 1;
    let mut ix = ix0;
    if record_entry {
        snaps.visit(offset, grid.x(ix));
    }
    if barrier.is_stopped(0, ix) {
        return (offset, ix, false);
    }
    for l in 1..=cap {
        ix = if buf.step_up(rng) {
            (ix + 1).min(last)
        } else {
            ix.saturating_sub(1)
        };
        let global = offset + l as u32;
        snaps.visit(global, grid.x(ix));
        if barrier.is_stopped(l, ix) {
            return (global, ix, false);
        }
    }
    (offset + cap as u32, ix, true)
}

/// Simulates `n_paths` independent stopped walks under `plan`. Each path
/// draws from its own counter-keyed stream, so the output is byte-identical
/// across runs and thread counts for a fixed `(seed, n_paths, levels)`.
pub fn simulate(
    plan: &SimPlan,
    n_paths: usize,
    seed: u64,
    levels: &[u32],
) -> Result<Simulation> {
    if n_paths == 0 {
        return Err(Error::EmptyInput("simulation path count"));
    }
    let mut want: Vec<u32> = levels.to_vec();
    want.sort_unstable();
    want.dedup();

    let mu = plan.start_law();
    if mu.is_empty() {
        return Err(Error::EmptyInput("simulation start law"));
    }

    // Per-plan lookup tables, built once.
    let lm_rows: HashMap<u64, &PlanRow> = match plan {
        SimPlan::LeftMonotone(s) => s
            .rows
            .iter()
            .map(|r| (r.source_x.to_bits(), r))
            .collect(),
        _ => HashMap::new(),
    };
    let stage2_rows: HashMap<usize, &PlanRow> = match plan {
        SimPlan::Interpolated(s) => s
            .stage2
            .iter()
            .filter_map(|r| s.root.grid.index_at(r.source_x).map(|ix| (ix, r)))
            .collect(),
        _ => HashMap::new(),
    };

    let samples: Vec<StoppedSample> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<StoppedSample> {
            let mut rng = path_rng(seed, p as u64);
            let start = draw_start(mu, &mut rng);
            let mut buf = BitBuffer::new();
            let mut snaps = Snapshots::new(&want);

            let (stop_level, stop_x, cap_hit) = match plan {
                SimPlan::Root(sol) => {
                    let ix0 = sol.grid.index_at(start).ok_or_else(|| {
                        Error::Sim(format!("start {start} is off the walk lattice"))
                    })?;
                    let (l, ix, cap) = walk_barrier(
                        &sol.grid,
                        &sol.barrier,
                        ix0,
                        sol.levels_run,
                        0,
                        true,
                        &mut rng,
                        &mut buf,
                        &mut snaps,
                    );
                    (l, sol.grid.x(ix), cap)
                }
                SimPlan::LeftMonotone(_) => {
                    let row = lm_rows.get(&start.to_bits()).ok_or_else(|| {
                        Error::Sim(format!("no plan row for start {start}"))
                    })?;
                    snaps.visit(0, start);
                    if row.stopped {
                        (0, start, false)
                    } else {
                        let embed = row.embed.as_ref().ok_or_else(|| {
                            Error::Sim(format!("running row at {start} has no sub-embedding"))
                        })?;
                        let ix0 = embed.grid.index_at(start).ok_or_else(|| {
                            Error::Sim(format!("start {start} is off its sub-lattice"))
                        })?;
                        let (l, ix, cap) = walk_barrier(
                            &embed.grid,
                            &embed.barrier,
                            ix0,
                            embed.levels_run,
                            0,
                            false,
                            &mut rng,
                            &mut buf,
                            &mut snaps,
                        );
                        (l, embed.grid.x(ix), cap)
                    }
                }
                SimPlan::Interpolated(sol) => {
                    let grid = &sol.root.grid;
                    let ix0 = grid.index_at(start).ok_or_else(|| {
                        Error::Sim(format!("start {start} is off the walk lattice"))
                    })?;
                    let branch = sol.root.levels_run;
                    let (l1, ix1, alive) = walk_barrier(
                        grid,
                        &sol.root.barrier,
                        ix0,
                        branch,
                        0,
                        true,
                        &mut rng,
                        &mut buf,
                        &mut snaps,
                    );
                    if !alive {
                        (l1, grid.x(ix1), false)
                    } else {
                        match stage2_rows.get(&ix1) {
                            None => (l1, grid.x(ix1), true),
                            Some(row) if row.stopped => (l1, grid.x(ix1), false),
                            Some(row) => {
                                let embed = row.embed.as_ref().ok_or_else(|| {
                                    Error::Sim(format!(
                                        "running row at {} has no sub-embedding",
                                        row.source_x
                                    ))
                                })?;
                                let y = grid.x(ix1);
                                let iy = embed.grid.index_at(y).ok_or_else(|| {
                                    Error::Sim(format!("branch point {y} is off its sub-lattice"))
                                })?;
                                let (l2, ix2, cap) = walk_barrier(
                                    &embed.grid,
                                    &embed.barrier,
                                    iy,
                                    embed.levels_run,
                                    l1,
                                    false,
                                    &mut rng,
                                    &mut buf,
                                    &mut snaps,
                                );
                                (l2, embed.grid.x(ix2), cap)
                            }
                        }
                    }
                }
            };

            Ok(StoppedSample {
                start,
                stop_level,
                stop_x,
                cap_hit,
                at_levels: snaps.finish(stop_x),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Simulation {
        seed,
        n_paths,
        h: plan.grid().h(),
        delta: plan.grid().delta(),
        levels: want,
        samples,
    })
}

/// One snapshot row of the shadow-residual verification.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualRow {
    pub level: u32,
    pub time: f64,
    pub survivors: usize,
    /// Distance between the shadow of the surviving sub-law in the target
    /// and the empirical law of where those same paths eventually stop.
    pub w1: f64,
    pub tol: f64,
    pub skipped: bool,
    pub passed: bool,
}

/// Result of the shadow-residual verification across snapshot levels.
#[derive(Debug, Clone, Serialize)]
pub struct ShadowResidualCheck {
    pub rows: Vec<ResidualRow>,
    pub passed: bool,
}

/// Checks, at every recorded snapshot level, that the shadow of the
/// still-running sub-law in the target measure matches where those paths
/// eventually land. Barrier-type stopping rules satisfy this identity; a
/// stopping rule that parks mass it should have released does not.
pub fn verify_shadow_residual(
    sim: &Simulation,
    target: &DiscreteMeasure,
) -> Result<ShadowResidualCheck> {
    let mut rows = Vec::with_capacity(sim.levels.len());
    let mut all = true;
    for &level in &sim.levels {
        let (alive, landed, n) = sim.survivors_at(level)?;
        if n < MIN_SURVIVORS {
            rows.push(ResidualRow {
                level,
                time: level as f64 * sim.delta,
                survivors: n,
                w1: f64::NAN,
                tol: f64::NAN,
                skipped: true,
                passed: true,
            });
            continue;
        }
        // Empirical sub-laws carry O(1/sqrt(n)) moment noise, so the shadow
        // feasibility checks get a matching allowance.
        let feas = (5.0 / (n as f64).sqrt()).max(1e-6);
        let w1 = match shadow_with_tol(&alive, target, feas) {
            Ok(sh) => wasserstein1(&sh, &landed)?,
            Err(_) => f64::INFINITY,
        };
        let tol = tol_model(n, sim.h);
        let passed = w1 <= tol;
        all &= passed;
        rows.push(ResidualRow {
            level,
            time: level as f64 * sim.delta,
            survivors: n,
            w1,
            tol,
            skipped: false,
            passed,
        });
    }
    Ok(ShadowResidualCheck { rows, passed: all })
}

/// Result of the embedding verification on one simulation batch.
#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingCheck {
    pub n_paths: usize,
    pub w1_terminal: f64,
    pub tol_terminal: f64,
    pub terminal_ok: bool,
    pub mean_stop_time: f64,
    pub se_stop_time: f64,
    pub target_stop_time: f64,
    pub tol_stop_time: f64,
    pub stop_time_ok: bool,
    pub contact_starts: usize,
    pub contact_violation_fraction: f64,
    pub contact_ok: bool,
    pub cap_hit_fraction: f64,
    pub passed: bool,
}

/// Verifies a simulation batch against its plan: the terminal law must match
/// the snapped target, the mean stopping time must match the variance gap,
/// and paths starting on the stopping set must stop immediately.
pub fn verify_embedding(sim: &Simulation, plan: &SimPlan) -> Result<EmbeddingCheck> {
    let mu = plan.start_law();
    let nu = plan.target_law();
    let var_mu = mu
        .variance()
        .ok_or(Error::EmptyInput("start law variance"))?;
    let var_nu = nu
        .variance()
        .ok_or(Error::EmptyInput("target law variance"))?;
    let target_gap = var_nu - var_mu;

    let terminal = sim.terminal_law()?;
    let w1_terminal = wasserstein1(&terminal, nu)?;
    let tol_terminal = tol_model(sim.n_paths, sim.h);
    let terminal_ok = w1_terminal <= tol_terminal;

    let mean_stop_time = sim.mean_stop_time();
    let se_stop_time = sim.se_stop_time();
    let tol_stop_time = 3.0 * se_stop_time + 2.0 * sim.h;
    let stop_time_ok = (mean_stop_time - target_gap).abs() <= tol_stop_time;

    let starts_stopped: Box<dyn Fn(f64) -> bool> = match plan {
        SimPlan::Root(sol) => {
            let grid = sol.grid.clone();
            let barrier = sol.barrier.clone();
            Box::new(move |x| grid.index_at(x).is_some_and(|ix| barrier.is_stopped(0, ix)))
        }
        SimPlan::Interpolated(sol) => {
            let grid = sol.root.grid.clone();
            let barrier = sol.root.barrier.clone();
            Box::new(move |x| grid.index_at(x).is_some_and(|ix| barrier.is_stopped(0, ix)))
        }
        SimPlan::LeftMonotone(sol) => {
            let stopped: Vec<u64> = sol
                .rows
                .iter()
                .filter(|r| r.stopped)
                .map(|r| r.source_x.to_bits())
                .collect();
            Box::new(move |x| stopped.contains(&x.to_bits()))
        }
    };
    let mut contact_starts = 0usize;
    let mut contact_violations = 0usize;
    for s in &sim.samples {
        if starts_stopped(s.start) {
            contact_starts += 1;
            if s.stop_level > 0 {
                contact_violations += 1;
            }
        }
    }
    let contact_violation_fraction = if contact_starts == 0 {
        0.0
    } else {
        contact_violations as f64 / contact_starts as f64
    };
    let contact_ok = contact_violation_fraction <= 1e-3;

    Ok(EmbeddingCheck {
        n_paths: sim.n_paths,
        w1_terminal,
        tol_terminal,
        terminal_ok,
        mean_stop_time,
        se_stop_time,
        target_stop_time: target_gap,
        tol_stop_time,
        stop_time_ok,
        contact_starts,
        contact_violation_fraction,
        contact_ok,
        cap_hit_fraction: sim.cap_hit_fraction(),
        passed: terminal_ok && stop_time_ok && contact_ok,
    })
}

/// Empirical coupling rows: for each atom of the exact start law, its exact
/// weight and the normalized empirical conditional of the stop positions of
/// the paths launched from it. Atoms that drew no paths are omitted.
fn empirical_rows(
    sim: &Simulation,
    mu: &DiscreteMeasure,
) -> Result<Vec<(f64, f64, DiscreteMeasure)>> {
    let mut buckets: HashMap<u64, Vec<f64>> = HashMap::new();
    for s in &sim.samples {
        buckets.entry(s.start.to_bits()).or_default().push(s.stop_x);
    }
    let mut rows = Vec::with_capacity(mu.len());
    for (x, w) in mu.iter() {
        if let Some(stops) = buckets.get(&x.to_bits()) {
            let wi = 1.0 / stops.len() as f64;
            let cond = DiscreteMeasure::new(stops.iter().map(|&y| (y, wi)))?;
            rows.push((x, w, cond));
        }
    }
    Ok(rows)
}

/// Weighted row-wise distance between two row lists keyed on the same start
/// atoms: the exact-weight average of the conditional transport distances
/// over the starts present in both.
fn coupling_distance(
    a: &[(f64, f64, DiscreteMeasure)],
    b: &[(f64, f64, DiscreteMeasure)],
) -> Result<f64> {
    let bmap: HashMap<u64, &DiscreteMeasure> =
        b.iter().map(|(x, _, c)| (x.to_bits(), c)).collect();
    let mut d = 0.0;
    for (x, w, cond) in a {
        if let Some(other) = bmap.get(&x.to_bits()) {
            d += w * wasserstein1(cond, other)?;
        }
    }
    Ok(d)
}

/// One branch time in the convergence sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub lambda_requested: f64,
    pub lambda: f64,
    pub lambda_level: usize,
    /// Distance from the simulated interpolation to the exact left-curtain
    /// coupling of the snapped pair.
    pub d_lm: f64,
    /// Distance from the simulated interpolation to the simulated Root
    /// coupling under the same seed.
    pub d_root: f64,
}

/// Convergence sweep report across branch times.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub n_paths: usize,
    pub seed: u64,
    pub h: f64,
    pub horizon: f64,
    pub points: Vec<SweepPoint>,
}

/// Sweeps the interpolation family over `lambdas`, measuring for each branch
/// time the distance of the simulated coupling to the exact left-curtain
/// coupling and to the Root coupling simulated under the same seed. Small
/// branch times should approach the former, large ones the latter.
pub fn convergence_sweep(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    grid: &GridSpec,
    lambdas: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<SweepReport> {
    if lambdas.is_empty() {
        return Err(Error::EmptyInput("sweep branch times"));
    }
    let root = root_solve(mu, nu, grid, None)?;
    let root_sim = simulate(&SimPlan::Root(&root), n_paths, seed, &[])?;
    let root_rows = empirical_rows(&root_sim, &root.mu_snapped)?;

    let curtain = left_curtain(&root.mu_snapped, &root.nu_snapped, DEFAULT_TOL)?;
    let lm_rows: Vec<(f64, f64, DiscreteMeasure)> = curtain
        .rows()
        .iter()
        .map(|r| (r.source_x, r.source_w, r.conditional.clone()))
        .collect();

    let mut points = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let sol = interpolate_solve(mu, nu, lam, grid, None)?;
        let sim = simulate(&SimPlan::Interpolated(&sol), n_paths, seed, &[])?;
        let rows = empirical_rows(&sim, &root.mu_snapped)?;
        points.push(SweepPoint {
            lambda_requested: lam,
            lambda: sol.lambda,
            lambda_level: sol.lambda_level,
            d_lm: coupling_distance(&rows, &lm_rows)?,
            d_root: coupling_distance(&rows, &root_rows)?,
        });
    }

    Ok(SweepReport {
        n_paths,
        seed,
        h: grid.h(),
        horizon: grid.horizon(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::root::root_solve;
    use crate::solvers::lm_solve;

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    fn analytic_pair() -> (DiscreteMeasure, DiscreteMeasure, GridSpec) {
        let mu = DiscreteMeasure::dirac(0.0);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let grid = GridSpec::cover(&mu, &nu, 0.05, None).unwrap();
        (mu, nu, grid)
    }

    #[test]
    fn seeded_paths_are_deterministic_and_order_stable() {
        let (mu, nu, grid) = analytic_pair();
        let sol = root_solve(&mu, &nu, &grid, None).unwrap();
        let plan = SimPlan::Root(&sol);
        let a = simulate(&plan, 300, 11, &[0, 40]).unwrap();
        let b = simulate(&plan, 300, 11, &[0, 40]).unwrap();
        assert_eq!(a.samples, b.samples);

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap();
        let c = pool.install(|| simulate(&plan, 300, 11, &[0, 40]).unwrap());
        assert_eq!(a.samples, c.samples);

        let d = simulate(&plan, 300, 12, &[0, 40]).unwrap();
        assert_ne!(a.samples, d.samples);
    }

    #[test]
    fn analytic_root_walk_embeds_and_passes_checks() {
        let (mu, nu, grid) = analytic_pair();
        let sol = root_solve(&mu, &nu, &grid, None).unwrap();
        let plan = SimPlan::Root(&sol);
        // Snapshot levels at times 0, 0.25 and 0.5.
        let sim = simulate(&plan, 20_000, 7, &[0, 100, 200]).unwrap();

        let emb = verify_embedding(&sim, &plan).unwrap();
        assert!(emb.terminal_ok, "terminal W1 {}", emb.w1_terminal);
        assert!(emb.stop_time_ok, "mean stop time {}", emb.mean_stop_time);
        assert!(emb.contact_ok);
        assert!(emb.passed);
        // Lattice gambler's ruin has mean hitting time exactly one.
        assert!((emb.mean_stop_time - 1.0).abs() < 0.05);
        assert!(emb.cap_hit_fraction < 1e-3);

        let res = verify_shadow_residual(&sim, &sol.nu_snapped).unwrap();
        assert!(res.passed);
        assert_eq!(res.rows.len(), 3);
        assert!(res.rows.iter().all(|r| !r.skipped));
        // At time zero every path survives and sits at the start, so the
        // shadow side is the whole target and the distance is pure noise.
        assert!(res.rows[0].w1 < 0.02, "row0 w1 {}", res.rows[0].w1);
    }

    #[test]
    fn fixed_time_control_fails_residual_and_stop_time() {
        let (mu, nu, grid) = analytic_pair();
        let mut doctored = root_solve(&mu, &nu, &grid, None).unwrap();
        doctored.barrier = Barrier::fixed_time(&grid, 40);
        doctored.levels_run = 40;
        let plan = SimPlan::Root(&doctored);
        let sim = simulate(&plan, 5_000, 7, &[0]).unwrap();

        let emb = verify_embedding(&sim, &plan).unwrap();
        assert!(!emb.terminal_ok);
        assert!(!emb.stop_time_ok);
        assert!((emb.mean_stop_time - 0.1).abs() < 1e-12);

        let res = verify_shadow_residual(&sim, &doctored.nu_snapped).unwrap();
        assert!(!res.passed);
        let row0 = &res.rows[0];
        assert!(!row0.skipped);
        // Stopping everything at time 0.1 parks the mass far from the
        // two-point target the shadow of the survivors promises.
        assert!(row0.w1 > 0.5, "row0 w1 {}", row0.w1);
    }

    #[test]
    fn eroded_barrier_control_overshoots_stop_time() {
        let (mu, nu, grid) = analytic_pair();
        let mut doctored = root_solve(&mu, &nu, &grid, None).unwrap();
        doctored.barrier = doctored.barrier.eroded(2);
        let plan = SimPlan::Root(&doctored);
        let sim = simulate(&plan, 5_000, 7, &[]).unwrap();

        let emb = verify_embedding(&sim, &plan).unwrap();
        // Pushing the barrier out by two nodes moves the absorbing rays to
        // 1.1, so the mean stop time lands near 1.21 instead of 1.
        assert!(!emb.stop_time_ok);
        assert!((emb.mean_stop_time - 1.21).abs() < 0.05);
    }

    #[test]
    fn lm_simulation_matches_planned_coupling() {
        let mu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let nu = m(&[(-2.0, 1.0 / 3.0), (0.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let grid = GridSpec::cover(&mu, &nu, 0.05, None).unwrap();
        let sol = lm_solve(&mu, &nu, &grid).unwrap();
        let plan = SimPlan::LeftMonotone(&sol);
        let sim = simulate(&plan, 20_000, 3, &[]).unwrap();

        let emb = verify_embedding(&sim, &plan).unwrap();
        assert!(emb.passed, "{emb:?}");
        assert!((emb.target_stop_time - 5.0 / 3.0).abs() < 1e-9);

        let rows = empirical_rows(&sim, &sol.mu_snapped).unwrap();
        assert_eq!(rows.len(), 2);
        for (x, _, cond) in &rows {
            let planned = sol.coupling.row_at(*x).unwrap();
            let w1 = wasserstein1(cond, &planned.conditional).unwrap();
            assert!(w1 <= tol_model(10_000, grid.h()), "row {x}: {w1}");
        }
    }

    #[test]
    fn interpolation_at_horizon_walks_exactly_like_root() {
        let (mu, nu, grid) = analytic_pair();
        let root = root_solve(&mu, &nu, &grid, None).unwrap();
        let interp = interpolate_solve(&mu, &nu, grid.horizon(), &grid, None).unwrap();
        let a = simulate(&SimPlan::Root(&root), 400, 5, &[0, 200]).unwrap();
        let b = simulate(&SimPlan::Interpolated(&interp), 400, 5, &[0, 200]).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn sweep_orders_interpolations_between_curtain_and_root() {
        let mu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let nu = m(&[(-2.0, 1.0 / 3.0), (0.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let grid = GridSpec::cover(&mu, &nu, 0.05, None).unwrap();
        let lambdas = [grid.delta(), grid.horizon()];
        let report = convergence_sweep(&mu, &nu, &grid, &lambdas, 4_000, 9).unwrap();
        assert_eq!(report.points.len(), 2);
        let early = &report.points[0];
        let late = &report.points[1];
        // Branching immediately reproduces the curtain; never branching
        // reproduces Root byte-for-byte under the shared seed.
        assert!(early.d_lm < late.d_lm, "{early:?} vs {late:?}");
        assert_eq!(late.d_root, 0.0);
        assert!(early.d_root > late.d_root);
    }
}

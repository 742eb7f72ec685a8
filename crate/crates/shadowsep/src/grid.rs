//! Space-time lattice for the walk schemes, per-level stopped regions, and
//! sampled potential surfaces.
//!
//! The lattice has space step h and time step delta = h^2, matching the
//! per-step variance of the simple random walk, so one level is one walk
//! step. Nodes sit at integer multiples of h (the grid stores its anchor as
//! an integer lattice index), which makes every grid with the same h share
//! one global lattice: sub-grids built for conditional embeddings are node
//! compatible with their parent by construction.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{ClosedSet, DiscreteMeasure};

/// Relative slack (in units of h) under which an atom counts as sitting
/// exactly on a node when projecting a measure onto the grid.
const NODE_EDGE_TOL: f64 = 1e-9;

/// Uniform lattice `x_i = (k_min + i) * h`, `i = 0..n_x`, with `n_levels`
/// time levels of step `delta = h^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    h: f64,
    k_min: i64,
    n_x: usize,
    n_levels: usize,
}

impl GridSpec {
    pub fn new(h: f64, k_min: i64, n_x: usize, n_levels: usize) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Grid(format!("space step must be positive, got {h}")));
        }
        if n_x < 2 {
            return Err(Error::Grid(format!("need at least 2 nodes, got {n_x}")));
        }
        if n_levels == 0 {
            return Err(Error::Grid("need at least 1 time level".into()));
        }
        let lo = k_min as f64 * h;
        let hi = (k_min + n_x as i64 - 1) as f64 * h;
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Grid(format!("grid bounds overflow: [{lo}, {hi}]")));
        }
        Ok(GridSpec {
            h,
            k_min,
            n_x,
            n_levels,
        })
    }

    /// Builds a grid covering both supports with the given margin on each
    /// side, anchored on the global h-lattice.
    pub fn with_margin(
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        h: f64,
        margin: f64,
        n_levels: Option<usize>,
    ) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Grid(format!("space step must be positive, got {h}")));
        }
        if !(margin.is_finite() && margin > 0.0) {
            return Err(Error::Grid(format!("margin must be positive, got {margin}")));
        }
        let (lo_m, hi_m) = match (mu.support_bounds(), nu.support_bounds()) {
            (Some((a, b)), Some((c, d))) => (a.min(c), b.max(d)),
            (Some(p), None) | (None, Some(p)) => p,
            (None, None) => return Err(Error::EmptyInput("grid cover of two empty measures")),
        };
        let spread = hi_m - lo_m;
        let k_min = ((lo_m - margin) / h).floor() as i64;
        let k_max = ((hi_m + margin) / h).ceil() as i64;
        let n_x = usize::try_from(k_max - k_min + 1)
            .map_err(|_| Error::Grid("grid bounds out of range".into()))?;
        let levels = match n_levels {
            Some(l) => l,
            None => {
                // Generous default horizon: long enough for the running mass
                // of any embedding on this span to drain well below the
                // early-stop floor. The level loop stops early anyway.
                let horizon = (10.0 * spread * spread).max(4.0);
                (horizon / (h * h)).ceil() as usize
            }
        };
        GridSpec::new(h, k_min, n_x, levels)
    }

    /// Builds a grid covering both supports with margin max(2 * spread, 1).
    pub fn cover(
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        h: f64,
        n_levels: Option<usize>,
    ) -> Result<Self> {
        let (lo_m, hi_m) = match (mu.support_bounds(), nu.support_bounds()) {
            (Some((a, b)), Some((c, d))) => (a.min(c), b.max(d)),
            (Some(p), None) | (None, Some(p)) => p,
            (None, None) => return Err(Error::EmptyInput("grid cover of two empty measures")),
        };
        let margin = (2.0 * (hi_m - lo_m)).max(1.0);
        GridSpec::with_margin(mu, nu, h, margin, n_levels)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn delta(&self) -> f64 {
        self.h * self.h
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    /// Time horizon n_levels * delta.
    pub fn horizon(&self) -> f64 {
        self.n_levels as f64 * self.delta()
    }

    pub fn x_min(&self) -> f64 {
        self.k_min as f64 * self.h
    }

    pub fn x_max(&self) -> f64 {
        (self.k_min + self.n_x as i64 - 1) as f64 * self.h
    }

    /// Node position. Computed from the integer lattice index so equal
    /// lattice points agree bitwise across grids with the same h.
    pub fn x(&self, i: usize) -> f64 {
        (self.k_min + i as i64) as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    /// Index of the node at x, if x lies on the lattice (within a relative
    /// slack of h) and inside the grid.
    pub fn index_at(&self, x: f64) -> Option<usize> {
        let rel = (x - self.x_min()) / self.h;
        let i = rel.round();
        if (rel - i).abs() > 1e-6 {
            return None;
        }
        if i < 0.0 || i >= self.n_x as f64 {
            return None;
        }
        Some(i as usize)
    }

    /// True if the support of m lies inside the grid bounds.
    pub fn covers(&self, m: &DiscreteMeasure) -> bool {
        match m.support_bounds() {
            None => true,
            Some((lo, hi)) => lo >= self.x_min() - NODE_EDGE_TOL * self.h && hi <= self.x_max() + NODE_EDGE_TOL * self.h,
        }
    }

    /// Projects a measure onto the grid by splitting every atom between its
    /// two neighboring nodes with barycenter kept at the atom. The split is
    /// a martingale kernel, so mass, first moment, and convex order are
    /// preserved exactly (the projection dominates the original in convex
    /// order, and projections of ordered pairs stay ordered).
    pub fn snap(&self, m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        let mut atoms = Vec::with_capacity(2 * m.len());
        for (x, w) in m.iter() {
            let rel = (x - self.x_min()) / self.h;
            if rel < -NODE_EDGE_TOL || rel > (self.n_x - 1) as f64 + NODE_EDGE_TOL {
                return Err(Error::OutsideHull {
                    x,
                    lo: self.x_min(),
                    hi: self.x_max(),
                });
            }
            let i = rel.floor().clamp(0.0, (self.n_x - 2) as f64) as usize;
            let frac = (x - self.x(i)) / self.h;
            if frac <= NODE_EDGE_TOL {
                atoms.push((self.x(i), w));
            } else if frac >= 1.0 - NODE_EDGE_TOL {
                atoms.push((self.x(i + 1), w));
            } else {
                atoms.push((self.x(i), w * (1.0 - frac)));
                atoms.push((self.x(i + 1), w * frac));
            }
        }
        DiscreteMeasure::new(atoms)
    }
}

/// Per-level stopped regions of the lattice, stored as sorted disjoint
/// inclusive index intervals. Monotone in the level: the stopped set at
/// level l is contained in the stopped set at any later level. Lookups past
/// the last stored level reuse the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct Barrier {
    n_x: u32,
    levels: Vec<Vec<(u32, u32)>>,
}

fn intervals_valid(row: &[(u32, u32)], n_x: u32) -> bool {
    let mut prev_end: Option<u32> = None;
    for &(lo, hi) in row {
        if lo > hi || hi >= n_x {
            return false;
        }
        if let Some(p) = prev_end {
            // Adjacent intervals must be separated by a gap, else they
            // should have been merged.
            if lo <= p + 1 {
                return false;
            }
        }
        prev_end = Some(hi);
    }
    true
}

fn row_contains(row: &[(u32, u32)], ix: u32) -> bool {
    let p = row.partition_point(|&(lo, _)| lo <= ix);
    p > 0 && row[p - 1].1 >= ix
}

fn row_superset(sup: &[(u32, u32)], sub: &[(u32, u32)]) -> bool {
    sub.iter()
        .all(|&(lo, hi)| {
            let p = sup.partition_point(|&(a, _)| a <= lo);
            p > 0 && sup[p - 1].1 >= hi
        })
}

impl Barrier {
    /// Validates interval rows (sorted, disjoint, in bounds) and the nesting
    /// of consecutive levels.
    pub fn from_levels(levels: Vec<Vec<(u32, u32)>>, n_x: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyInput("barrier levels"));
        }
        let n_x = u32::try_from(n_x).map_err(|_| Error::Grid("grid too wide".into()))?;
        for (l, row) in levels.iter().enumerate() {
            if !intervals_valid(row, n_x) {
                return Err(Error::BadSet(format!(
                    "barrier level {l}: intervals not sorted, disjoint, and in bounds"
                )));
            }
            if l > 0 && !row_superset(row, &levels[l - 1]) {
                return Err(Error::BadSet(format!(
                    "barrier level {l} does not contain level {}",
                    l - 1
                )));
            }
        }
        Ok(Barrier { n_x, levels })
    }

    /// Barrier that stops nothing before `level` and everything from it on.
    pub fn fixed_time(grid: &GridSpec, level: usize) -> Self {
        let n_x = grid.n_x() as u32;
        let mut levels = vec![Vec::new(); level];
        levels.push(vec![(0, n_x - 1)]);
        Barrier { n_x, levels }
    }

    pub fn n_x(&self) -> usize {
        self.n_x as usize
    }

    /// Number of stored level rows.
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn is_stopped(&self, level: usize, ix: usize) -> bool {
        let row = &self.levels[level.min(self.levels.len() - 1)];
        row_contains(row, ix as u32)
    }

    /// Interval row for a level, clamped to the last stored level.
    pub fn level_intervals(&self, level: usize) -> &[(u32, u32)] {
        &self.levels[level.min(self.levels.len() - 1)]
    }

    /// Stopped set of a level as a closed subset of the line.
    pub fn level_set(&self, level: usize, grid: &GridSpec) -> Result<ClosedSet> {
        let row = self.level_intervals(level);
        ClosedSet::new(
            row.iter()
                .map(|&(lo, hi)| (grid.x(lo as usize), grid.x(hi as usize))),
        )
    }

    /// Erodes every stopped component by k nodes from each end, except at
    /// ends pinned to the grid edge; components that erode away are dropped.
    /// This delays stopping everywhere: a negative control for verifiers.
    pub fn eroded(&self, k: usize) -> Self {
        let k = k as u32;
        let last = self.n_x - 1;
        let levels = self
            .levels
            .iter()
            .map(|row| {
                row.iter()
                    .filter_map(|&(lo, hi)| {
                        let lo2 = if lo == 0 { 0 } else { lo.saturating_add(k) };
                        let hi2 = if hi == last { last } else { hi.saturating_sub(k) };
                        (lo2 <= hi2).then_some((lo2, hi2))
                    })
                    .collect()
            })
            .collect();
        Barrier {
            n_x: self.n_x,
            levels,
        }
    }
}

/// Sampled rows of the scheme's potential surface, plus the obstacle v on
/// the grid. Rows are stored on a level stride (first and last level always
/// included); u is nondecreasing in the level and bounded by v.
#[derive(Debug, Clone)]
pub struct PotentialSurface {
    grid: GridSpec,
    v: Vec<f64>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl PotentialSurface {
    pub(crate) fn new(grid: GridSpec, v: Vec<f64>, rows: Vec<(usize, Vec<f64>)>) -> Self {
        PotentialSurface { grid, v, rows }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// Stored (level, row) pairs in level order.
    pub fn rows(&self) -> &[(usize, Vec<f64>)] {
        &self.rows
    }

    pub fn row_at(&self, level: usize) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, r)| r.as_slice())
    }

    pub fn final_row(&self) -> &[f64] {
        &self.rows.last().expect("surface stores at least one row").1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{order_leq, Order, DEFAULT_TOL};

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    #[test]
    fn cover_margin_and_lattice_anchor() {
        let mu = m(&[(0.0, 1.0)]);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let g = GridSpec::cover(&mu, &nu, 0.05, None).unwrap();
        // spread 2, margin 4: bounds at least [-5, 5]
        assert!(g.x_min() <= -5.0 + 1e-12 && g.x_max() >= 5.0 - 1e-12);
        // 0 and the target atoms are lattice nodes
        assert!(g.index_at(0.0).is_some());
        assert!(g.index_at(1.0).is_some());
        assert!(g.index_at(-1.0).is_some());
        let i = g.index_at(1.0).unwrap();
        assert_eq!(g.x(i), 1.0);
        assert!((g.delta() - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn same_h_grids_share_one_lattice() {
        let a = GridSpec::cover(&m(&[(0.2, 1.0)]), &m(&[(-0.6, 0.5), (1.0, 0.5)]), 0.05, None).unwrap();
        let b = GridSpec::cover(&m(&[(0.45, 1.0)]), &m(&[(0.4, 0.5), (0.5, 0.5)]), 0.05, None).unwrap();
        // Every node of b that lies in a's range is bitwise a node of a.
        for i in 0..b.n_x() {
            let x = b.x(i);
            if x >= a.x_min() && x <= a.x_max() {
                let j = a.index_at(x).expect("shared lattice");
                assert_eq!(a.x(j).to_bits(), x.to_bits());
            }
        }
    }

    #[test]
    fn snap_is_a_martingale_projection() {
        let g = GridSpec::new(0.25, -8, 65, 100).unwrap();
        let m0 = m(&[(0.1, 0.3), (0.55, 0.2), (1.0, 0.5)]);
        let s = g.snap(&m0).unwrap();
        assert!((s.mass() - m0.mass()).abs() < 1e-15);
        assert!((s.first_moment() - m0.first_moment()).abs() < 1e-12);
        for &x in s.xs() {
            let i = g.index_at(x).unwrap();
            assert_eq!(g.x(i).to_bits(), x.to_bits());
        }
        // Projection dominates in convex order.
        assert!(order_leq(&m0, &s, Order::Convex, DEFAULT_TOL));
        // On-node atoms are kept whole.
        let s2 = g.snap(&m(&[(1.0, 1.0)])).unwrap();
        assert_eq!(s2.len(), 1);
        assert_eq!(s2.xs()[0], 1.0);
    }

    #[test]
    fn snap_preserves_convex_order_of_pairs() {
        let g = GridSpec::new(0.3, -20, 141, 10).unwrap();
        let nu = m(&[(-1.3, 0.4), (0.11, 0.25), (1.64, 0.35)]);
        // Merge the two left atoms of nu into their barycenter: mu <=c nu by construction.
        let xbar = (0.4 * -1.3 + 0.25 * 0.11) / 0.65;
        let mu = m(&[(xbar, 0.65), (1.64, 0.35)]);
        assert!(order_leq(&mu, &nu, Order::Convex, DEFAULT_TOL));
        let mg = g.snap(&mu).unwrap();
        let ng = g.snap(&nu).unwrap();
        assert!(order_leq(&mg, &ng, Order::Convex, DEFAULT_TOL));
    }

    #[test]
    fn snap_rejects_outside_atoms() {
        let g = GridSpec::new(0.5, 0, 3, 5).unwrap(); // [0, 1]
        assert!(matches!(
            g.snap(&m(&[(1.4, 1.0)])),
            Err(Error::OutsideHull { .. })
        ));
    }

    #[test]
    fn barrier_validation_and_lookup() {
        let rows = vec![
            vec![(0u32, 3u32), (10, 12)],
            vec![(0, 4), (10, 12)],
            vec![(0, 5), (8, 14)],
        ];
        let b = Barrier::from_levels(rows, 20).unwrap();
        assert!(b.is_stopped(0, 2));
        assert!(!b.is_stopped(0, 4));
        assert!(b.is_stopped(1, 4));
        assert!(b.is_stopped(2, 9));
        // Clamp past the last level.
        assert!(b.is_stopped(99, 14));
        assert!(!b.is_stopped(99, 7));
    }

    #[test]
    fn barrier_rejects_broken_nesting() {
        let rows = vec![vec![(0u32, 5u32)], vec![(1, 5)]];
        assert!(Barrier::from_levels(rows, 20).is_err());
        let rows = vec![vec![(3u32, 2u32)]];
        assert!(Barrier::from_levels(rows, 20).is_err());
        let rows = vec![vec![(0u32, 2u32), (3, 5)]];
        assert!(Barrier::from_levels(rows, 20).is_err(), "touching intervals must be merged");
    }

    #[test]
    fn erosion_delays_stopping_and_pins_edges() {
        let rows = vec![vec![(0u32, 4u32), (8, 10), (16, 19)]];
        let b = Barrier::from_levels(rows, 20).unwrap();
        let e = b.eroded(2);
        assert_eq!(e.level_intervals(0), &[(0, 2), (18, 19)]);
        // Interior component [8, 10] is narrower than 2 * 2 + 1: dropped.
        assert!(!e.is_stopped(0, 9));
    }

    #[test]
    fn fixed_time_barrier() {
        let g = GridSpec::new(0.1, 0, 11, 50).unwrap();
        let b = Barrier::fixed_time(&g, 3);
        assert!(!b.is_stopped(0, 5));
        assert!(!b.is_stopped(2, 0));
        assert!(b.is_stopped(3, 0));
        assert!(b.is_stopped(10, 10));
    }
}

//! Discrete measures on the real line and closed target sets.
//!
//! A `DiscreteMeasure` is a finite nonnegative measure with finitely many
//! atoms. All higher-level objects in this crate (potentials, shadows,
//! couplings, embedded laws) reduce to this representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atoms closer than this are merged on construction.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// Reconstructed or subtracted weights at or below this floor are dropped.
pub const WEIGHT_FLOOR: f64 = 1e-13;

/// Default absolute tolerance for comparisons of masses, moments and
/// potential values.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    xs: Vec<f64>,
    ws: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from (position, weight) pairs. Atoms are sorted,
    /// positions within `ATOM_MERGE_TOL` are merged (weights add, position
    /// becomes the weighted mean), zero weights are dropped, negative
    /// weights are rejected.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for (x, w) in atoms {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    what: "atom position",
                    value: x,
                });
            }
            if !w.is_finite() {
                return Err(Error::NonFinite {
                    what: "atom weight",
                    value: w,
                });
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { x, w });
            }
            if w > 0.0 {
                pairs.push((x, w));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut xs: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut ws: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match xs.last() {
                Some(&last) if x - last <= ATOM_MERGE_TOL => {
                    let i = xs.len() - 1;
                    let total = ws[i] + w;
                    xs[i] = (xs[i] * ws[i] + x * w) / total;
                    ws[i] = total;
                }
                _ => {
                    xs.push(x);
                    ws.push(w);
                }
            }
        }
        Ok(DiscreteMeasure { xs, ws })
    }

    pub fn empty() -> Self {
        DiscreteMeasure {
            xs: Vec::new(),
            ws: Vec::new(),
        }
    }

    /// Unit mass at `x`.
    pub fn dirac(x: f64) -> Self {
        Self::point(x, 1.0)
    }

    /// Mass `w` at `x`.
    pub fn point(x: f64, w: f64) -> Self {
        Self::new([(x, w)]).expect("point measure")
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ws(&self) -> &[f64] {
        &self.ws
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ws.iter().copied())
    }

    pub fn mass(&self) -> f64 {
        self.ws.iter().sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.iter().map(|(x, w)| x * w).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.iter().map(|(x, w)| x * x * w).sum()
    }

    /// Barycenter; `None` for the empty measure.
    pub fn mean(&self) -> Option<f64> {
        let m = self.mass();
        (m > 0.0).then(|| self.first_moment() / m)
    }

    /// Variance of the normalized measure; `None` for the empty measure.
    pub fn variance(&self) -> Option<f64> {
        let m = self.mass();
        if m <= 0.0 {
            return None;
        }
        let mean = self.first_moment() / m;
        Some(self.second_moment() / m - mean * mean)
    }

    /// `(min, max)` of the support; `None` for the empty measure.
    pub fn support_bounds(&self) -> Option<(f64, f64)> {
        match (self.xs.first(), self.xs.last()) {
            (Some(&a), Some(&b)) => Some((a, b)),
            _ => None,
        }
    }

    /// Weight at position `x` (matched within `ATOM_MERGE_TOL`).
    pub fn weight_at(&self, x: f64) -> f64 {
        match self
            .xs
            .binary_search_by(|probe| probe.total_cmp(&x))
        {
            Ok(i) => self.ws[i],
            Err(i) => {
                let mut w = 0.0;
                if i < self.xs.len() && (self.xs[i] - x).abs() <= ATOM_MERGE_TOL {
                    w += self.ws[i];
                }
                if i > 0 && (x - self.xs[i - 1]).abs() <= ATOM_MERGE_TOL {
                    w += self.ws[i - 1];
                }
                w
            }
        }
    }

    /// Scales all weights by `c >= 0`.
    pub fn scale(&self, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                what: "scale factor",
                value: c,
            });
        }
        if c < 0.0 {
            return Err(Error::NegativeScale(c));
        }
        if c == 0.0 {
            return Ok(Self::empty());
        }
        Ok(DiscreteMeasure {
            xs: self.xs.clone(),
            ws: self.ws.iter().map(|w| w * c).collect(),
        })
    }

    /// Sum of two measures (atoms merged).
    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.iter().chain(other.iter())).expect("adding valid measures")
    }

    /// Subtracts `other` from `self`, requiring `other <= self` atomwise
    /// within `tol` on weights. Tiny negative results are clamped to zero.
    pub fn sub(&self, other: &Self, tol: f64) -> Result<Self> {
        let mut ws = self.ws.clone();
        for (x, w) in other.iter() {
            let i = match nearest_index(&self.xs, x) {
                Some(i) if (self.xs[i] - x).abs() <= ATOM_MERGE_TOL => i,
                _ => {
                    if w > tol {
                        return Err(Error::NotPositiveOrder {
                            detail: format!("atom at {x} with weight {w} missing from minuend"),
                        });
                    }
                    continue;
                }
            };
            if w > ws[i] + tol {
                return Err(Error::NotPositiveOrder {
                    detail: format!(
                        "weight {} at x = {} exceeds available {}",
                        w, x, ws[i]
                    ),
                });
            }
            ws[i] -= w;
        }
        Self::new(
            self.xs
                .iter()
                .copied()
                .zip(ws)
                .filter(|&(_, w)| w > WEIGHT_FLOOR),
        )
    }

    /// Restriction to the closed interval `[lo, hi]` (touching atoms kept
    /// within `ATOM_MERGE_TOL`).
    pub fn restrict(&self, lo: f64, hi: f64) -> Self {
        Self::new(
            self.iter()
                .filter(|&(x, _)| x >= lo - ATOM_MERGE_TOL && x <= hi + ATOM_MERGE_TOL),
        )
        .expect("restriction of valid measure")
    }

    /// Restriction to `(-inf, q]`.
    pub fn restrict_leq(&self, q: f64) -> Self {
        self.restrict(f64::NEG_INFINITY, q)
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() <= tol
    }

    pub fn normalize(&self) -> Result<Self> {
        let m = self.mass();
        if m <= 0.0 {
            return Err(Error::EmptyInput("cannot normalize the empty measure"));
        }
        self.scale(1.0 / m)
    }
}

fn nearest_index(xs: &[f64], x: f64) -> Option<usize> {
    if xs.is_empty() {
        return None;
    }
    let i = xs.partition_point(|&p| p < x);
    let candidates = [i.checked_sub(1), (i < xs.len()).then_some(i)];
    candidates
        .into_iter()
        .flatten()
        .min_by(|&a, &b| (xs[a] - x).abs().total_cmp(&(xs[b] - x).abs()))
}

/// Largest absolute weight difference over the union of atom positions.
pub fn max_atom_discrepancy(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, w) in a.iter() {
        worst = worst.max((w - b.weight_at(x)).abs());
    }
    for (x, w) in b.iter() {
        worst = worst.max((w - a.weight_at(x)).abs());
    }
    worst
}

/// Partial orders on measures used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    /// `a <= b` iff potentials satisfy `U_a <= U_b` pointwise and the
    /// masses and barycenters agree.
    Convex,
    /// `a <= b` iff every atom of `a` is dominated by the atom of `b` at
    /// the same position.
    Positive,
}

/// Checks `a <= b` in the given order, with absolute tolerance `tol`.
/// Returns `false` (not an error) when the preconditions for comparability
/// fail, e.g. unequal masses in the convex order.
pub fn order_leq(a: &DiscreteMeasure, b: &DiscreteMeasure, order: Order, tol: f64) -> bool {
    match order {
        Order::Positive => a.iter().all(|(x, w)| w <= b.weight_at(x) + tol),
        Order::Convex => {
            if (a.mass() - b.mass()).abs() > tol {
                return false;
            }
            if (a.first_moment() - b.first_moment()).abs() > tol {
                return false;
            }
            let ua = crate::piecewise::potential_of(a);
            let ub = crate::piecewise::potential_of(b);
            a.xs()
                .iter()
                .chain(b.xs().iter())
                .all(|&x| ua.eval(x) <= ub.eval(x) + tol)
        }
    }
}

/// Exact 1-Wasserstein distance between two measures of equal mass,
/// computed as the integral of the absolute CDF difference.
pub fn wasserstein1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    let (ma, mb) = (a.mass(), b.mass());
    if (ma - mb).abs() > DEFAULT_TOL * ma.max(mb).max(1.0) {
        return Err(Error::MassMismatch { left: ma, right: mb });
    }
    let mut grid: Vec<f64> = a.xs().iter().chain(b.xs().iter()).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut dist = 0.0;
    for k in 0..grid.len() {
        let x = grid[k];
        while ia < a.len() && a.xs()[ia] <= x {
            fa += a.ws()[ia];
            ia += 1;
        }
        while ib < b.len() && b.xs()[ib] <= x {
            fb += b.ws()[ib];
            ib += 1;
        }
        if k + 1 < grid.len() {
            dist += (fa - fb).abs() * (grid[k + 1] - x);
        }
    }
    Ok(dist)
}

/// A closed subset of the line: finitely many disjoint closed intervals,
/// points included as degenerate intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedSet {
    components: Vec<(f64, f64)>,
}

impl ClosedSet {
    /// Builds a set from intervals; overlapping or touching intervals are
    /// merged and the result is sorted.
    pub fn new(intervals: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut parts: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in intervals {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::BadSet(format!("non-finite interval [{lo}, {hi}]")));
            }
            if lo > hi {
                return Err(Error::BadSet(format!("inverted interval [{lo}, {hi}]")));
            }
            parts.push((lo, hi));
        }
        parts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut components: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in parts {
            match components.last_mut() {
                Some(last) if lo <= last.1 + ATOM_MERGE_TOL => last.1 = last.1.max(hi),
                _ => components.push((lo, hi)),
            }
        }
        if components.is_empty() {
            return Err(Error::BadSet("empty set".into()));
        }
        Ok(ClosedSet { components })
    }

    /// A set of isolated points.
    pub fn from_points(points: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(points.into_iter().map(|x| (x, x)))
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }

    pub fn min(&self) -> f64 {
        self.components[0].0
    }

    pub fn max(&self) -> f64 {
        self.components[self.components.len() - 1].1
    }

    pub fn contains(&self, x: f64) -> bool {
        let i = self.components.partition_point(|&(lo, _)| lo <= x + ATOM_MERGE_TOL);
        i > 0 && x <= self.components[i - 1].1 + ATOM_MERGE_TOL
    }

    /// Largest element `<= x`, i.e. `sup(F ∩ (-inf, x])`.
    pub fn sup_leq(&self, x: f64) -> Option<f64> {
        if self.contains(x) {
            return Some(x);
        }
        let i = self.components.partition_point(|&(lo, _)| lo <= x);
        (i > 0).then(|| self.components[i - 1].1.min(x))
    }

    /// Smallest element `>= x`, i.e. `inf(F ∩ [x, inf))`.
    pub fn inf_geq(&self, x: f64) -> Option<f64> {
        if self.contains(x) {
            return Some(x);
        }
        let i = self.components.partition_point(|&(_, hi)| hi < x);
        (i < self.components.len()).then(|| self.components[i].0.max(x))
    }

    /// True when every component of `other` lies inside a component of
    /// `self` (within `tol` on the endpoints).
    pub fn is_superset_of(&self, other: &ClosedSet, tol: f64) -> bool {
        other.components.iter().all(|&(lo, hi)| {
            self.components
                .iter()
                .any(|&(slo, shi)| slo <= lo + tol && hi <= shi + tol)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    #[test]
    fn construction_sorts_merges_and_drops() {
        let a = m(&[(1.0, 0.5), (-1.0, 0.25), (1.0 + 1e-13, 0.5), (3.0, 0.0)]);
        assert_eq!(a.len(), 2);
        assert_eq!(a.xs()[0], -1.0);
        assert!((a.ws()[1] - 1.0).abs() < 1e-15);
        assert!((a.xs()[1] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(DiscreteMeasure::new([(0.0, -0.1)]).is_err());
    }

    #[test]
    fn moments_and_bounds() {
        let a = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert_eq!(a.mass(), 1.0);
        assert_eq!(a.first_moment(), 0.0);
        assert_eq!(a.mean(), Some(0.0));
        assert_eq!(a.variance(), Some(1.0));
        assert_eq!(a.support_bounds(), Some((-1.0, 1.0)));
        assert!(DiscreteMeasure::empty().mean().is_none());
    }

    #[test]
    fn algebra_add_scale_sub_restrict() {
        let a = m(&[(0.0, 0.5)]);
        let b = m(&[(0.0, 0.25), (2.0, 0.25)]);
        let sum = a.add(&b);
        assert_eq!(sum.len(), 2);
        assert!((sum.weight_at(0.0) - 0.75).abs() < 1e-15);

        let doubled = sum.scale(2.0).unwrap();
        assert!((doubled.mass() - 2.0).abs() < 1e-15);
        assert!(sum.scale(-1.0).is_err());
        assert!(sum.scale(0.0).unwrap().is_empty());

        let back = sum.sub(&b, 1e-12).unwrap();
        assert!(max_atom_discrepancy(&back, &a) < 1e-15);
        assert!(a.sub(&b, 1e-12).is_err());

        let left = sum.restrict_leq(0.0);
        assert_eq!(left.len(), 1);
        assert_eq!(left.weight_at(0.0), 0.75);
        let mid = sum.restrict(1.0, 3.0);
        assert_eq!(mid.len(), 1);
        assert_eq!(mid.weight_at(2.0), 0.25);
    }

    #[test]
    fn positive_order_examples() {
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let sub = m(&[(-1.0, 0.25)]);
        assert!(order_leq(&sub, &nu, Order::Positive, 1e-12));
        assert!(!order_leq(&nu, &sub, Order::Positive, 1e-12));
        let off_grid = m(&[(0.0, 0.25)]);
        assert!(!order_leq(&off_grid, &nu, Order::Positive, 1e-12));
    }

    #[test]
    fn convex_order_examples() {
        let mu = DiscreteMeasure::dirac(0.0);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert!(order_leq(&mu, &nu, Order::Convex, 1e-12));
        assert!(!order_leq(&nu, &mu, Order::Convex, 1e-12));
        // Unequal barycenters are incomparable.
        let shifted = DiscreteMeasure::dirac(0.5);
        assert!(!order_leq(&shifted, &nu, Order::Convex, 1e-12));
        // Unequal masses are incomparable.
        let half = m(&[(0.0, 0.5)]);
        assert!(!order_leq(&half, &nu, Order::Convex, 1e-12));
    }

    #[test]
    fn wasserstein_examples() {
        let a = DiscreteMeasure::dirac(0.0);
        let b = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert!((wasserstein1(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
        // Translation: W1(delta_0, delta_c) = |c|.
        let c = DiscreteMeasure::dirac(2.5);
        assert!((wasserstein1(&a, &c).unwrap() - 2.5).abs() < 1e-15);
        // Mass mismatch is an error.
        assert!(wasserstein1(&a, &m(&[(0.0, 0.5)])).is_err());
    }

    #[test]
    fn wasserstein_triangle_and_symmetry() {
        let a = m(&[(-2.0, 0.3), (0.0, 0.4), (1.0, 0.3)]);
        let b = m(&[(-1.0, 0.5), (2.0, 0.5)]);
        let c = m(&[(0.0, 1.0)]);
        let ab = wasserstein1(&a, &b).unwrap();
        let ba = wasserstein1(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        let ac = wasserstein1(&a, &c).unwrap();
        let cb = wasserstein1(&c, &b).unwrap();
        assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn closed_set_basics() {
        let f = ClosedSet::new([(1.0, 3.0), (-2.0, -2.0)]).unwrap();
        assert_eq!(f.components(), &[(-2.0, -2.0), (1.0, 3.0)]);
        assert!(f.contains(-2.0));
        assert!(f.contains(2.0));
        assert!(!f.contains(0.0));
        assert_eq!(f.sup_leq(0.0), Some(-2.0));
        assert_eq!(f.inf_geq(0.0), Some(1.0));
        assert_eq!(f.sup_leq(-3.0), None);
        assert_eq!(f.inf_geq(4.0), None);
        assert_eq!(f.sup_leq(2.0), Some(2.0));
        assert_eq!(f.min(), -2.0);
        assert_eq!(f.max(), 3.0);
    }

    #[test]
    fn closed_set_merges_touching() {
        let f = ClosedSet::new([(0.0, 1.0), (1.0, 2.0), (5.0, 6.0)]).unwrap();
        assert_eq!(f.components(), &[(0.0, 2.0), (5.0, 6.0)]);
        assert!(ClosedSet::new([(1.0, 0.0)]).is_err());
        assert!(ClosedSet::new(std::iter::empty()).is_err());
    }

    #[test]
    fn superset_checks() {
        let big = ClosedSet::new([(-2.0, -1.0), (1.0, 3.0)]).unwrap();
        let small = ClosedSet::new([(-2.0, -2.0), (2.0, 3.0)]).unwrap();
        assert!(big.is_superset_of(&small, 1e-12));
        assert!(!small.is_superset_of(&big, 1e-12));
        // Straddling a gap is not containment.
        let straddle = ClosedSet::new([(0.0, 2.0)]).unwrap();
        assert!(!big.is_superset_of(&straddle, 1e-12));
    }
}

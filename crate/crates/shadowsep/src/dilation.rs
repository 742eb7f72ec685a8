//! Barycenter-preserving dilation onto a closed set, and the shadow
//! decomposition identity it induces.
//!
//! The kernel K_F maps a point x of F to the Dirac mass at x, and a point x
//! outside F to the two-point measure on its closed-set neighbors
//! x_minus = sup(F ∩ (-inf, x]) and x_plus = inf(F ∩ [x, inf)) weighted so
//! the barycenter stays x:
//! (x_plus - x) / (x_plus - x_minus) at x_minus and
//! (x - x_minus) / (x_plus - x_minus) at x_plus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{max_atom_discrepancy, ClosedSet, DiscreteMeasure};
use crate::shadow::shadow_with_tol;

/// Pushes `m` through the dilation kernel of `F`. Every atom must lie in
/// the convex hull of `F`.
pub fn dilate(m: &DiscreteMeasure, f: &ClosedSet) -> Result<DiscreteMeasure> {
    let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(2 * m.len());
    for (x, w) in m.iter() {
        if f.contains(x) {
            atoms.push((x, w));
            continue;
        }
        let (lo, hi) = (f.min(), f.max());
        let (x_minus, x_plus) = match (f.sup_leq(x), f.inf_geq(x)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::OutsideHull { x, lo, hi }),
        };
        let span = x_plus - x_minus;
        atoms.push((x_minus, w * (x_plus - x) / span));
        atoms.push((x_plus, w * (x - x_minus) / span));
    }
    DiscreteMeasure::new(atoms)
}

/// One stage of a decomposition: scaled source measure and its target set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionStage {
    pub weight: f64,
    pub mu: DiscreteMeasure,
    pub set: ClosedSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// Aggregate target sum_i w_i * (mu_i K_{F_i}).
    pub nu: DiscreteMeasure,
    /// Per-prefix atomwise discrepancy between the shadow of the prefix
    /// source and the prefix of dilated parts.
    pub prefix_discrepancies: Vec<f64>,
    pub max_discrepancy: f64,
}

/// Verifies the decomposition identity: with closed sets decreasing along
/// the stages and nu built as the weighted sum of dilated stages, the
/// shadow in nu of every prefix of the source equals the corresponding
/// prefix of dilated parts. Returns the per-prefix discrepancies; rejects
/// families whose sets are not nested.
pub fn shadow_decomposition_check(
    stages: &[DecompositionStage],
    tol: f64,
) -> Result<DecompositionReport> {
    if stages.is_empty() {
        return Err(Error::EmptyInput("decomposition stages"));
    }
    for (i, pair) in stages.windows(2).enumerate() {
        if !pair[0].set.is_superset_of(&pair[1].set, 1e-12) {
            return Err(Error::NotNested { stage: i + 1 });
        }
    }
    let mut parts = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        if stage.weight <= 0.0 {
            return Err(Error::NegativeScale(stage.weight).at_stage(i));
        }
        let scaled = stage.mu.scale(stage.weight)?;
        parts.push(dilate(&scaled, &stage.set).map_err(|e| e.at_stage(i))?);
    }
    let mut nu = DiscreteMeasure::empty();
    for part in &parts {
        nu = nu.add(part);
    }
    let mut prefix_source = DiscreteMeasure::empty();
    let mut prefix_target = DiscreteMeasure::empty();
    let mut prefix_discrepancies = Vec::with_capacity(stages.len());
    for (stage, part) in stages.iter().zip(&parts) {
        prefix_source = prefix_source.add(&stage.mu.scale(stage.weight)?);
        prefix_target = prefix_target.add(part);
        let s = shadow_with_tol(&prefix_source, &nu, tol)?;
        prefix_discrepancies.push(max_atom_discrepancy(&s, &prefix_target));
    }
    let max_discrepancy = prefix_discrepancies.iter().copied().fold(0.0, f64::max);
    Ok(DecompositionReport {
        nu,
        prefix_discrepancies,
        max_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{order_leq, Order};

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    fn points(pts: &[f64]) -> ClosedSet {
        ClosedSet::from_points(pts.iter().copied()).unwrap()
    }

    #[test]
    fn dilate_fixes_points_of_the_set() {
        let f = ClosedSet::new([(-1.0, 1.0)]).unwrap();
        let mu = m(&[(0.0, 0.4), (0.5, 0.6)]);
        let out = dilate(&mu, &f).unwrap();
        assert!(max_atom_discrepancy(&out, &mu) < 1e-15);
    }

    #[test]
    fn dilate_splits_to_neighbors() {
        let f = points(&[-1.0, 1.0]);
        let out = dilate(&DiscreteMeasure::dirac(0.0), &f).unwrap();
        assert!(max_atom_discrepancy(&out, &m(&[(-1.0, 0.5), (1.0, 0.5)])) < 1e-15);
    }

    #[test]
    fn dilate_worked_example() {
        let f = points(&[-1.0, 1.0, 3.0]);
        let mu = m(&[(0.0, 0.5), (2.0, 0.5)]);
        let out = dilate(&mu, &f).unwrap();
        let want = m(&[(-1.0, 0.25), (1.0, 0.5), (3.0, 0.25)]);
        assert!(max_atom_discrepancy(&out, &want) < 1e-15);
    }

    #[test]
    fn dilate_outside_hull_rejected() {
        let f = points(&[-1.0, 1.0]);
        assert!(matches!(
            dilate(&DiscreteMeasure::dirac(2.0), &f),
            Err(Error::OutsideHull { .. })
        ));
    }

    #[test]
    fn dilate_preserves_mass_and_mean() {
        let f = ClosedSet::new([(-3.0, -1.0), (2.0, 2.0), (4.0, 5.0)]).unwrap();
        let mu = m(&[(-2.0, 0.3), (0.0, 0.4), (3.0, 0.2), (4.5, 0.1)]);
        let out = dilate(&mu, &f).unwrap();
        assert!((out.mass() - mu.mass()).abs() < 1e-12);
        assert!((out.first_moment() - mu.first_moment()).abs() < 1e-12);
        // A dilation increases the measure in convex order.
        assert!(order_leq(&mu, &out, Order::Convex, 1e-9));
    }

    #[test]
    fn dilate_is_idempotent() {
        let f = ClosedSet::new([(-2.0, -1.0), (1.0, 2.0)]).unwrap();
        let mu = m(&[(0.0, 0.5), (1.5, 0.5)]);
        let once = dilate(&mu, &f).unwrap();
        let twice = dilate(&once, &f).unwrap();
        assert!(max_atom_discrepancy(&once, &twice) < 1e-15);
    }

    #[test]
    fn smaller_sets_dilate_further() {
        let big = points(&[-2.0, -1.0, 1.0, 2.0]);
        let small = points(&[-2.0, 2.0]);
        let mu = m(&[(-1.2, 0.5), (0.4, 0.5)]);
        let a = dilate(&mu, &big).unwrap();
        let b = dilate(&mu, &small).unwrap();
        assert!(order_leq(&a, &b, Order::Convex, 1e-9));
    }

    #[test]
    fn decomposition_two_stage_example() {
        let stages = vec![
            DecompositionStage {
                weight: 0.5,
                mu: DiscreteMeasure::dirac(0.0),
                set: points(&[-2.0, -1.0, 1.0, 2.0]),
            },
            DecompositionStage {
                weight: 0.5,
                mu: DiscreteMeasure::dirac(0.0),
                set: points(&[-2.0, 2.0]),
            },
        ];
        let report = shadow_decomposition_check(&stages, 1e-9).unwrap();
        let want_nu = m(&[(-2.0, 0.25), (-1.0, 0.25), (1.0, 0.25), (2.0, 0.25)]);
        assert!(max_atom_discrepancy(&report.nu, &want_nu) < 1e-12);
        assert!(report.max_discrepancy < 1e-9, "{report:?}");
    }

    #[test]
    fn decomposition_rejects_non_nested_sets() {
        let stages = vec![
            DecompositionStage {
                weight: 0.5,
                mu: DiscreteMeasure::dirac(0.0),
                set: points(&[-2.0, 2.0]),
            },
            DecompositionStage {
                weight: 0.5,
                mu: DiscreteMeasure::dirac(0.0),
                set: points(&[-1.0, 1.0]),
            },
        ];
        assert!(matches!(
            shadow_decomposition_check(&stages, 1e-9),
            Err(Error::NotNested { stage: 1 })
        ));
    }
}

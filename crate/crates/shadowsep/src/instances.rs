//! Seeded random instance generators for the verification suites.
//!
//! Every constrained object is built so the constraint holds by
//! construction: dominated measures come from barycenter merges of
//! consecutive atom groups, sub-measures from scaling atom weights down,
//! and nested set families from shrinking point sets.

use rand::Rng;

use crate::dilation::DecompositionStage;
use crate::measure::{ClosedSet, DiscreteMeasure};

/// Random probability measure with 1 to `max_atoms` atoms spread over
/// `[-span, span]`.
pub fn rand_measure<R: Rng>(rng: &mut R, max_atoms: usize, span: f64) -> DiscreteMeasure {
    let n = rng.random_range(1..=max_atoms.max(1));
    let mut atoms = Vec::with_capacity(n);
    for _ in 0..n {
        let x = (rng.random::<f64>() * 2.0 - 1.0) * span;
        let w = 0.1 + 0.9 * rng.random::<f64>();
        atoms.push((x, w));
    }
    let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
    DiscreteMeasure::new(atoms.into_iter().map(|(x, w)| (x, w / total)))
        .expect("random atoms form a measure")
}

/// Merges random consecutive atom groups of `m` into their barycenters.
/// The result precedes `m` in convex order with the same mass and mean.
pub fn rand_merge<R: Rng>(rng: &mut R, m: &DiscreteMeasure) -> DiscreteMeasure {
    let mut atoms = Vec::new();
    let mut i = 0;
    while i < m.len() {
        let size = rng.random_range(1..=3).min(m.len() - i);
        let mut w = 0.0;
        let mut wx = 0.0;
        for j in i..i + size {
            w += m.ws()[j];
            wx += m.ws()[j] * m.xs()[j];
        }
        atoms.push((wx / w, w));
        i += size;
    }
    DiscreteMeasure::new(atoms).expect("merged atoms form a measure")
}

/// Random probability pair `(mu, nu)` with `mu` preceding `nu` in convex
/// order, built by merging atom groups of `nu`.
pub fn rand_convex_pair<R: Rng>(
    rng: &mut R,
    max_atoms: usize,
    span: f64,
) -> (DiscreteMeasure, DiscreteMeasure) {
    let nu = rand_measure(rng, max_atoms, span);
    let mut mu = rand_merge(rng, &nu);
    if rng.random::<f64>() < 0.5 {
        mu = rand_merge(rng, &mu);
    }
    (mu, nu)
}

/// Random feasible shadow instance: a probability `nu` and a sub-probability
/// `eta` dominated in convex order by a sub-measure of `nu`.
pub fn rand_shadow_instance<R: Rng>(
    rng: &mut R,
    max_atoms: usize,
    span: f64,
) -> (DiscreteMeasure, DiscreteMeasure) {
    let nu = rand_measure(rng, max_atoms, span);
    let xi = DiscreteMeasure::new(
        nu.iter()
            .map(|(x, w)| (x, w * (0.3 + 0.7 * rng.random::<f64>()))),
    )
    .expect("scaled atoms form a measure");
    let mut eta = rand_merge(rng, &xi);
    if rng.random::<f64>() < 0.5 {
        eta = rand_merge(rng, &eta);
    }
    (eta, nu)
}

/// Splits `m` atomwise into two sub-measures that add back to `m`.
pub fn rand_split<R: Rng>(
    rng: &mut R,
    m: &DiscreteMeasure,
) -> (DiscreteMeasure, DiscreteMeasure) {
    let mut a = Vec::with_capacity(m.len());
    let mut b = Vec::with_capacity(m.len());
    for (x, w) in m.iter() {
        let u = 0.05 + 0.9 * rng.random::<f64>();
        a.push((x, w * u));
        b.push((x, w * (1.0 - u)));
    }
    (
        DiscreteMeasure::new(a).expect("split atoms form a measure"),
        DiscreteMeasure::new(b).expect("split atoms form a measure"),
    )
}

/// Random chain of probabilities increasing in convex order, most
/// concentrated first, with `len` entries.
pub fn rand_chain<R: Rng>(
    rng: &mut R,
    len: usize,
    max_atoms: usize,
    span: f64,
) -> Vec<DiscreteMeasure> {
    let len = len.max(1);
    let mut chain = vec![rand_measure(rng, max_atoms, span)];
    for _ in 1..len {
        let next = rand_merge(rng, chain.last().expect("chain is nonempty"));
        chain.push(next);
    }
    chain.reverse();
    chain
}

/// Random decomposition family: stages with positive weights, shrinking
/// point sets, and sources supported inside the hull of their own set.
pub fn rand_decomposition<R: Rng>(rng: &mut R, max_stages: usize, span: f64) -> Vec<DecompositionStage> {
    let n_points = rng.random_range(4..=8);
    let mut points: Vec<f64> = (0..n_points)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * span)
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let n_stages = rng.random_range(2..=max_stages.max(2));
    let mut stages = Vec::with_capacity(n_stages);
    let mut current = points;
    for _ in 0..n_stages {
        while current.len() > 2 && rng.random::<f64>() < 0.5 {
            let drop = rng.random_range(0..current.len());
            current.remove(drop);
        }
        let set = ClosedSet::from_points(current.iter().copied()).expect("nonempty point set");
        let (lo, hi) = (set.min(), set.max());
        let n_atoms = rng.random_range(1..=4);
        let atoms: Vec<(f64, f64)> = (0..n_atoms)
            .map(|_| {
                (
                    lo + rng.random::<f64>() * (hi - lo),
                    0.1 + 0.9 * rng.random::<f64>(),
                )
            })
            .collect();
        let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
        let mu = DiscreteMeasure::new(atoms.into_iter().map(|(x, w)| (x, w / total)))
            .expect("stage atoms form a measure");
        stages.push(DecompositionStage {
            weight: 0.2 + 0.8 * rng.random::<f64>(),
            mu,
            set,
        });
    }
    stages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilation::shadow_decomposition_check;
    use crate::measure::{max_atom_discrepancy, order_leq, Order, DEFAULT_TOL};
    use crate::shadow::shadow;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_deterministic_under_a_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(rand_measure(&mut a, 12, 2.0), rand_measure(&mut b, 12, 2.0));
        assert_eq!(
            rand_convex_pair(&mut a, 12, 2.0),
            rand_convex_pair(&mut b, 12, 2.0)
        );
    }

    #[test]
    fn convex_pairs_are_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (mu, nu) = rand_convex_pair(&mut rng, 15, 3.0);
            assert!((mu.mass() - 1.0).abs() < 1e-12);
            assert!(order_leq(&mu, &nu, Order::Convex, DEFAULT_TOL));
        }
    }

    #[test]
    fn shadow_instances_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let (eta, nu) = rand_shadow_instance(&mut rng, 20, 3.0);
            assert!(eta.mass() <= nu.mass() + 1e-12);
            shadow(&eta, &nu).expect("instance is feasible by construction");
        }
    }

    #[test]
    fn splits_add_back_to_the_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let m = rand_measure(&mut rng, 15, 2.0);
            let (a, b) = rand_split(&mut rng, &m);
            assert!(max_atom_discrepancy(&a.add(&b), &m) < 1e-12);
        }
    }

    #[test]
    fn chains_increase_in_convex_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let chain = rand_chain(&mut rng, 4, 12, 2.0);
            assert_eq!(chain.len(), 4);
            for pair in chain.windows(2) {
                assert!(order_leq(&pair[0], &pair[1], Order::Convex, DEFAULT_TOL));
            }
        }
    }

    #[test]
    fn decompositions_satisfy_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let stages = rand_decomposition(&mut rng, 4, 2.0);
            let report = shadow_decomposition_check(&stages, DEFAULT_TOL).unwrap();
            assert!(
                report.max_discrepancy < 1e-8,
                "discrepancy {}",
                report.max_discrepancy
            );
        }
    }
}

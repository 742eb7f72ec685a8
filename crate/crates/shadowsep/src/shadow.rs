//! Shadows of measures and couplings built from them.
//!
//! The shadow of eta in nu is the convex-order-minimal measure xi with
//! eta <= xi in convex order and xi <= nu atomwise. Its potential is
//! U_nu - conv(U_nu - U_eta), where conv denotes the largest convex
//! minorant; this module computes it that way and cross-checks the result
//! against an independent linear-programming characterization.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{
    max_atom_discrepancy, order_leq, DiscreteMeasure, Order, ATOM_MERGE_TOL, DEFAULT_TOL,
    WEIGHT_FLOOR,
};
use crate::piecewise::{measure_from_potential, potential_of};

/// Shadow of `eta` in `nu` with the default tolerance.
pub fn shadow(eta: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    shadow_with_tol(eta, nu, DEFAULT_TOL)
}

/// Shadow of `eta` in `nu`.
///
/// `tol` is the absolute tolerance used both to validate the reconstructed
/// potential and to check the postconditions: mass and barycenter of the
/// shadow match `eta`, the shadow is dominated by `nu` atomwise, and `eta`
/// precedes it in convex order. Infeasible inputs (no xi with
/// eta <= xi <= nu in the two orders) surface as one of these checks
/// failing.
pub fn shadow_with_tol(
    eta: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    tol: f64,
) -> Result<DiscreteMeasure> {
    if eta.is_empty() {
        return Ok(DiscreteMeasure::empty());
    }
    let mass_gap = eta.mass() - nu.mass();
    if mass_gap > tol {
        return Err(Error::ShadowInfeasible {
            check: "mass",
            gap: mass_gap,
        });
    }
    let u_eta = potential_of(eta);
    let u_nu = potential_of(nu);
    let g = u_nu.sub(&u_eta);
    let env = g.convex_envelope()?;
    let u_s = u_nu.sub(&env);
    let s = measure_from_potential(&u_s, tol).map_err(|e| match e {
        Error::InconsistentPotential { gap, .. } => Error::ShadowInfeasible {
            check: "barycenter",
            gap,
        },
        other => other,
    })?;

    let scale = 1.0f64.max(nu.mass());
    let mass_err = (s.mass() - eta.mass()).abs();
    if mass_err > tol * scale {
        return Err(Error::ShadowInfeasible {
            check: "mass",
            gap: mass_err,
        });
    }
    let mean_err = (s.first_moment() - eta.first_moment()).abs();
    if mean_err > tol * scale.max(s.xs().last().map_or(1.0, |x| x.abs())) {
        return Err(Error::ShadowInfeasible {
            check: "barycenter",
            gap: mean_err,
        });
    }
    if !order_leq(&s, nu, Order::Positive, tol * scale) {
        return Err(Error::ShadowInfeasible {
            check: "atomwise domination",
            gap: f64::NAN,
        });
    }
    if !order_leq(eta, &s, Order::Convex, tol * scale) {
        return Err(Error::ShadowInfeasible {
            check: "convex order",
            gap: f64::NAN,
        });
    }
    Ok(s)
}

/// Independent characterization of the shadow as the unique minimizer of
/// the second moment over { xi : eta <= xi convex, xi <= nu atomwise }.
///
/// The convex-order constraint is imposed through the potential inequality
/// U_xi >= U_eta at every breakpoint of either potential, which suffices
/// for piecewise linear potentials with matching asymptotes. Intended for
/// desk-scale instances (tens of atoms); used as a test oracle for
/// [`shadow`].
pub fn shadow_lp_oracle(eta: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    if eta.is_empty() {
        return Ok(DiscreteMeasure::empty());
    }
    if eta.mass() > nu.mass() + DEFAULT_TOL {
        return Err(Error::ShadowInfeasible {
            check: "mass",
            gap: eta.mass() - nu.mass(),
        });
    }
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = nu
        .iter()
        .map(|(z, w)| problem.add_var(z * z, (0.0, w)))
        .collect();
    problem.add_constraint(
        vars.iter().copied().zip(std::iter::repeat(1.0)),
        ComparisonOp::Eq,
        eta.mass(),
    );
    problem.add_constraint(
        vars.iter().copied().zip(nu.xs().iter().copied()),
        ComparisonOp::Eq,
        eta.first_moment(),
    );
    let u_eta = potential_of(eta);
    let mut grid: Vec<f64> = eta.xs().iter().chain(nu.xs().iter()).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= ATOM_MERGE_TOL);
    for &b in &grid {
        problem.add_constraint(
            vars.iter()
                .copied()
                .zip(nu.xs().iter().map(|&z| (z - b).abs())),
            ComparisonOp::Ge,
            u_eta.eval(b),
        );
    }
    let solution = problem
        .solve()
        .map_err(|e| Error::Lp(format!("shadow oracle: {e}")))?;
    DiscreteMeasure::new(
        nu.xs()
            .iter()
            .zip(&vars)
            .map(|(&z, &v)| (z, solution[v]))
            .filter(|&(_, w)| w > WEIGHT_FLOOR),
    )
}

/// Report of the associativity identity
/// `S(eta1 + eta2, nu) = S(eta1, nu) + S(eta2, nu - S(eta1, nu))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssociativityReport {
    pub lhs: DiscreteMeasure,
    pub rhs: DiscreteMeasure,
    pub max_discrepancy: f64,
}

/// Evaluates both sides of the shadow associativity identity and reports
/// the largest atomwise discrepancy.
pub fn shadow_associativity_check(
    eta1: &DiscreteMeasure,
    eta2: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    tol: f64,
) -> Result<AssociativityReport> {
    let lhs = shadow_with_tol(&eta1.add(eta2), nu, tol)?;
    let s1 = shadow_with_tol(eta1, nu, tol)?;
    let remaining = nu.sub(&s1, tol)?;
    let rhs = s1.add(&shadow_with_tol(eta2, &remaining, tol)?);
    let max_discrepancy = max_atom_discrepancy(&lhs, &rhs);
    Ok(AssociativityReport {
        lhs,
        rhs,
        max_discrepancy,
    })
}

/// Shadow of `eta` through the chain `nu_1, ..., nu_n`: the i-th entry is
/// the shadow of the (i-1)-th in `nu_i`. The chain must be increasing in
/// convex order with equal masses.
pub fn obstructed_shadow(
    eta: &DiscreteMeasure,
    nus: &[DiscreteMeasure],
    tol: f64,
) -> Result<Vec<DiscreteMeasure>> {
    if nus.is_empty() {
        return Err(Error::EmptyInput("target chain"));
    }
    for (i, pair) in nus.windows(2).enumerate() {
        if !order_leq(&pair[0], &pair[1], Order::Convex, tol) {
            return Err(Error::NotConvexOrder {
                detail: format!("target {} does not precede target {}", i, i + 1),
            }
            .at_stage(i + 1));
        }
    }
    let mut out = Vec::with_capacity(nus.len());
    let mut current = eta.clone();
    for (i, nu) in nus.iter().enumerate() {
        current = shadow_with_tol(&current, nu, tol).map_err(|e| e.at_stage(i))?;
        out.push(current.clone());
    }
    Ok(out)
}

/// One row of a martingale coupling: a source atom and the conditional law
/// of the target given that atom. The conditional has unit mass and its
/// barycenter equals the source position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub source_x: f64,
    pub source_w: f64,
    pub conditional: DiscreteMeasure,
}

/// A martingale coupling in row form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    rows: Vec<CouplingRow>,
}

impl Coupling {
    pub fn new(rows: Vec<CouplingRow>, tol: f64) -> Result<Self> {
        for row in &rows {
            if row.source_w <= 0.0 {
                return Err(Error::Coupling(format!(
                    "nonpositive source weight at x = {}",
                    row.source_x
                )));
            }
            let mass = row.conditional.mass();
            if (mass - 1.0).abs() > tol {
                return Err(Error::Coupling(format!(
                    "conditional at x = {} has mass {}",
                    row.source_x, mass
                )));
            }
            let mean = row.conditional.mean().unwrap_or(f64::NAN);
            let scale = 1.0f64.max(row.source_x.abs());
            if (mean - row.source_x).abs() > tol * scale {
                return Err(Error::Coupling(format!(
                    "conditional at x = {} has barycenter {}",
                    row.source_x, mean
                )));
            }
        }
        Ok(Coupling { rows })
    }

    pub fn rows(&self) -> &[CouplingRow] {
        &self.rows
    }

    pub fn row_at(&self, x: f64) -> Option<&CouplingRow> {
        self.rows
            .iter()
            .find(|r| (r.source_x - x).abs() <= ATOM_MERGE_TOL)
    }

    pub fn source_marginal(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(self.rows.iter().map(|r| (r.source_x, r.source_w)))
            .expect("valid source marginal")
    }

    pub fn target_marginal(&self) -> DiscreteMeasure {
        let mut total = DiscreteMeasure::empty();
        for row in &self.rows {
            total = total.add(&row.conditional.scale(row.source_w).expect("positive weight"));
        }
        total
    }

    /// Aggregated target over source atoms `<= q`.
    pub fn target_restricted(&self, q: f64) -> DiscreteMeasure {
        let mut total = DiscreteMeasure::empty();
        for row in &self.rows {
            if row.source_x <= q + ATOM_MERGE_TOL {
                total = total.add(&row.conditional.scale(row.source_w).expect("positive weight"));
            }
        }
        total
    }
}

/// Left-curtain coupling of `mu` into `nu` (equal masses, convex order
/// required). Source atoms are processed left to right; the row at each
/// atom is the shadow of that atom's mass in what remains of `nu` after the
/// shadows of all atoms to its left, equivalently the increment of the
/// shadows of the cumulative restrictions.
pub fn left_curtain(mu: &DiscreteMeasure, nu: &DiscreteMeasure, tol: f64) -> Result<Coupling> {
    if mu.is_empty() {
        return Err(Error::EmptyInput("curtain source"));
    }
    if !order_leq(mu, nu, Order::Convex, tol) {
        return Err(Error::NotConvexOrder {
            detail: "curtain source must precede target".into(),
        });
    }
    let mut remaining = nu.clone();
    let mut rows = Vec::with_capacity(mu.len());
    for (x, w) in mu.iter() {
        let increment = shadow_with_tol(&DiscreteMeasure::point(x, w), &remaining, tol)?;
        remaining = remaining.sub(&increment, tol)?;
        rows.push(CouplingRow {
            source_x: x,
            source_w: w,
            conditional: increment.scale(1.0 / w)?,
        });
    }
    Coupling::new(rows, tol.max(1e-7))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    #[test]
    fn shadow_of_dominated_measure_is_itself() {
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let eta = m(&[(-1.0, 0.3), (1.0, 0.1)]);
        let s = shadow(&eta, &nu).unwrap();
        assert!(max_atom_discrepancy(&s, &eta) < 1e-12);
    }

    #[test]
    fn shadow_worked_example_two_point() {
        let eta = m(&[(0.0, 0.5)]);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let s = shadow(&eta, &nu).unwrap();
        let want = m(&[(-1.0, 0.25), (1.0, 0.25)]);
        assert!(max_atom_discrepancy(&s, &want) < 1e-12);
    }

    #[test]
    fn shadow_worked_example_asymmetric() {
        let eta = m(&[(-1.0, 0.5)]);
        let nu = m(&[(-2.0, 1.0 / 3.0), (0.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let s = shadow(&eta, &nu).unwrap();
        let want = m(&[(-2.0, 0.25), (0.0, 0.25)]);
        assert!(max_atom_discrepancy(&s, &want) < 1e-12);
    }

    #[test]
    fn shadow_of_full_mass_is_target() {
        let mu = m(&[(-0.5, 0.5), (0.5, 0.5)]);
        let nu = m(&[(-2.0, 0.25), (0.0, 0.5), (2.0, 0.25)]);
        let s = shadow(&mu, &nu).unwrap();
        assert!(max_atom_discrepancy(&s, &nu) < 1e-12);
    }

    #[test]
    fn shadow_infeasible_barycenter() {
        // A point mass far to the right of the target cannot be embedded.
        let eta = DiscreteMeasure::dirac(5.0);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert!(matches!(
            shadow(&eta, &nu),
            Err(Error::ShadowInfeasible { .. })
        ));
    }

    #[test]
    fn shadow_infeasible_mass() {
        let eta = m(&[(0.0, 2.0)]);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert!(matches!(
            shadow(&eta, &nu),
            Err(Error::ShadowInfeasible { check: "mass", .. })
        ));
    }

    #[test]
    fn shadow_empty_eta() {
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert!(shadow(&DiscreteMeasure::empty(), &nu).unwrap().is_empty());
    }

    #[test]
    fn lp_oracle_matches_envelope_on_worked_examples() {
        let cases = [
            (m(&[(0.0, 0.5)]), m(&[(-1.0, 0.5), (1.0, 0.5)])),
            (
                m(&[(-1.0, 0.5)]),
                m(&[(-2.0, 1.0 / 3.0), (0.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]),
            ),
            (
                m(&[(-1.0, 0.25), (0.5, 0.5)]),
                m(&[(-2.0, 0.3), (-1.0, 0.2), (0.0, 0.1), (1.0, 0.2), (2.0, 0.2)]),
            ),
        ];
        for (eta, nu) in cases {
            let s = shadow(&eta, &nu).unwrap();
            let lp = shadow_lp_oracle(&eta, &nu).unwrap();
            assert!(
                max_atom_discrepancy(&s, &lp) < 1e-8,
                "eta = {eta:?}, nu = {nu:?}"
            );
        }
    }

    #[test]
    fn associativity_worked_example() {
        let eta1 = m(&[(0.0, 0.25)]);
        let eta2 = m(&[(0.0, 0.25)]);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let report = shadow_associativity_check(&eta1, &eta2, &nu, 1e-9).unwrap();
        assert!(report.max_discrepancy < 1e-12);
    }

    #[test]
    fn obstructed_shadow_worked_example() {
        let eta = m(&[(0.0, 0.5)]);
        let nu1 = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let nu2 = m(&[(-2.0, 0.5), (2.0, 0.5)]);
        let stages = obstructed_shadow(&eta, &[nu1, nu2], 1e-9).unwrap();
        assert!(max_atom_discrepancy(&stages[0], &m(&[(-1.0, 0.25), (1.0, 0.25)])) < 1e-12);
        assert!(max_atom_discrepancy(&stages[1], &m(&[(-2.0, 0.25), (2.0, 0.25)])) < 1e-12);
    }

    #[test]
    fn obstructed_shadow_constant_chain_stabilizes() {
        let eta = m(&[(0.2, 0.4)]);
        let nu = m(&[(-1.0, 0.4), (0.0, 0.2), (1.0, 0.4)]);
        let stages = obstructed_shadow(&eta, &[nu.clone(), nu.clone(), nu], 1e-9).unwrap();
        assert!(max_atom_discrepancy(&stages[0], &stages[1]) < 1e-12);
        assert!(max_atom_discrepancy(&stages[1], &stages[2]) < 1e-12);
    }

    #[test]
    fn obstructed_shadow_rejects_unordered_chain() {
        let eta = m(&[(0.0, 0.5)]);
        let nu1 = m(&[(-2.0, 0.5), (2.0, 0.5)]);
        let nu2 = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert!(obstructed_shadow(&eta, &[nu1, nu2], 1e-9).is_err());
    }

    #[test]
    fn left_curtain_worked_example() {
        let mu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let nu = m(&[(-2.0, 1.0 / 3.0), (0.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let coupling = left_curtain(&mu, &nu, 1e-9).unwrap();
        let rows = coupling.rows();
        assert_eq!(rows.len(), 2);
        let want0 = m(&[(-2.0, 0.5), (0.0, 0.5)]);
        let want1 = m(&[(-2.0, 1.0 / 6.0), (0.0, 1.0 / 6.0), (2.0, 2.0 / 3.0)]);
        assert!(max_atom_discrepancy(&rows[0].conditional, &want0) < 1e-12);
        assert!(max_atom_discrepancy(&rows[1].conditional, &want1) < 1e-12);
        // Rows aggregate back to nu.
        assert!(max_atom_discrepancy(&coupling.target_marginal(), &nu) < 1e-12);
        // Each row is a martingale conditional.
        for row in rows {
            assert!((row.conditional.mean().unwrap() - row.source_x).abs() < 1e-12);
        }
    }

    #[test]
    fn left_curtain_identity_when_equal() {
        let mu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let coupling = left_curtain(&mu, &mu, 1e-9).unwrap();
        for row in coupling.rows() {
            assert_eq!(row.conditional.len(), 1);
            assert!((row.conditional.xs()[0] - row.source_x).abs() < 1e-12);
        }
    }

    #[test]
    fn left_curtain_rejects_unordered_pair() {
        let mu = m(&[(-2.0, 0.5), (2.0, 0.5)]);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert!(left_curtain(&mu, &nu, 1e-9).is_err());
    }

    #[test]
    fn restricted_targets_match_direct_shadows() {
        let mu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let nu = m(&[(-2.0, 1.0 / 3.0), (0.0, 1.0 / 3.0), (2.0, 1.0 / 3.0)]);
        let coupling = left_curtain(&mu, &nu, 1e-9).unwrap();
        for &q in mu.xs() {
            let restricted = coupling.target_restricted(q);
            let direct = shadow(&mu.restrict_leq(q), &nu).unwrap();
            assert!(
                max_atom_discrepancy(&restricted, &direct) < 1e-8,
                "quantile {q}"
            );
        }
    }
}

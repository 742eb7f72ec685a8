//! Piecewise linear functions, potential functions of measures, and the
//! largest convex minorant.
//!
//! The potential of a measure m is U_m(x) = ∫ |y - x| m(dy). For a discrete
//! measure it is piecewise linear with a breakpoint at every atom: the atom
//! weight equals half the slope jump. Outside the support the potential is
//! affine with slopes -mass and +mass, meeting the asymptote
//! mass * |x - barycenter|.

use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, ATOM_MERGE_TOL, WEIGHT_FLOOR};

/// Piecewise linear function with affine tails. Breakpoints are strictly
/// increasing; the function is linear between consecutive breakpoints and
/// extends with `left_slope` / `right_slope` beyond the first / last one.
/// Convexity is not an invariant of the type: it is validated where a
/// potential is required.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
    left_slope: f64,
    right_slope: f64,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, left_slope: f64, right_slope: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("piecewise linear breakpoints"));
        }
        if xs.len() != ys.len() {
            return Err(Error::Parse(format!(
                "breakpoint/value length mismatch: {} vs {}",
                xs.len(),
                ys.len()
            )));
        }
        for (i, win) in xs.windows(2).enumerate() {
            if !(win[1] > win[0]) {
                return Err(Error::NotSorted { index: i + 1 });
            }
        }
        for &x in xs.iter() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    what: "breakpoint",
                    value: x,
                });
            }
        }
        for &y in ys.iter() {
            if !y.is_finite() {
                return Err(Error::NonFinite {
                    what: "value",
                    value: y,
                });
            }
        }
        if !left_slope.is_finite() || !right_slope.is_finite() {
            return Err(Error::BadTails {
                left: left_slope,
                right: right_slope,
            });
        }
        Ok(PiecewiseLinear {
            xs,
            ys,
            left_slope,
            right_slope,
        })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn left_slope(&self) -> f64 {
        self.left_slope
    }

    pub fn right_slope(&self) -> f64 {
        self.right_slope
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.left_slope * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.right_slope * (x - self.xs[n - 1]);
        }
        let i = self.xs.partition_point(|&p| p <= x);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Slopes of the n+1 affine pieces, left tail first.
    pub fn slopes(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.xs.len() + 1);
        s.push(self.left_slope);
        for i in 1..self.xs.len() {
            s.push((self.ys[i] - self.ys[i - 1]) / (self.xs[i] - self.xs[i - 1]));
        }
        s.push(self.right_slope);
        s
    }

    /// Largest slope decrease across a breakpoint; <= 0 for convex input.
    pub fn max_convexity_violation(&self) -> f64 {
        let s = self.slopes();
        s.windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_convex(&self, tol: f64) -> bool {
        self.max_convexity_violation() <= tol
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        let mut xs: Vec<f64> = Vec::with_capacity(self.xs.len() + other.xs.len());
        let (mut i, mut j) = (0usize, 0usize);
        while i < self.xs.len() || j < other.xs.len() {
            let take_self = match (self.xs.get(i), other.xs.get(j)) {
                (Some(&a), Some(&b)) => a <= b,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let x = if take_self {
                let x = self.xs[i];
                i += 1;
                x
            } else {
                let x = other.xs[j];
                j += 1;
                x
            };
            match xs.last() {
                Some(&last) if x - last <= ATOM_MERGE_TOL => {}
                _ => xs.push(x),
            }
        }
        let ys = xs
            .iter()
            .map(|&x| self.eval(x) + sign * other.eval(x))
            .collect();
        PiecewiseLinear {
            xs,
            ys,
            left_slope: self.left_slope + sign * other.left_slope,
            right_slope: self.right_slope + sign * other.right_slope,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, -1.0)
    }

    /// Largest convex minorant with the same affine tails.
    ///
    /// Equivalently the pointwise supremum of all affine functions lying
    /// below `self`; admissible tangent slopes are clamped to
    /// `[left_slope, right_slope]`, which must be ordered for a minorant
    /// bounded below to exist.
    pub fn convex_envelope(&self) -> Result<Self> {
        let (mut left_slope, mut right_slope) = (self.left_slope, self.right_slope);
        if left_slope > right_slope {
            // Tail slopes that should coincide can come out inverted by a
            // few ulps after potential subtractions; collapse those to the
            // midpoint. Genuine inversions have no convex minorant.
            let scale = 1.0f64.max(left_slope.abs()).max(right_slope.abs());
            if left_slope - right_slope > 1e-9 * scale {
                return Err(Error::BadTails {
                    left: left_slope,
                    right: right_slope,
                });
            }
            let mid = 0.5 * (left_slope + right_slope);
            left_slope = mid;
            right_slope = mid;
        }
        // Lower convex hull of the breakpoints (monotone chain).
        let n = self.xs.len();
        let mut hull: Vec<usize> = Vec::with_capacity(n);
        for i in 0..n {
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                // Drop b when it lies on or above the chord a -> i.
                let cross = (self.xs[b] - self.xs[a]) * (self.ys[i] - self.ys[a])
                    - (self.xs[i] - self.xs[a]) * (self.ys[b] - self.ys[a]);
                if cross <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        // Clamp the hull to admissible tangent slopes: keep the vertex range
        // where segment slopes lie in [left_slope, right_slope].
        let m = hull.len();
        let seg_slope = |k: usize| {
            let (a, b) = (hull[k], hull[k + 1]);
            (self.ys[b] - self.ys[a]) / (self.xs[b] - self.xs[a])
        };
        let mut first = m - 1;
        for k in 0..m - 1 {
            if seg_slope(k) >= left_slope {
                first = k;
                break;
            }
        }
        let mut last = 0;
        for k in (0..m - 1).rev() {
            if seg_slope(k) <= right_slope {
                last = k + 1;
                break;
            }
        }
        let (first, last) = if first <= last { (first, last) } else { (last, last) };
        let xs: Vec<f64> = hull[first..=last].iter().map(|&i| self.xs[i]).collect();
        let ys: Vec<f64> = hull[first..=last].iter().map(|&i| self.ys[i]).collect();
        Ok(PiecewiseLinear {
            xs,
            ys,
            left_slope,
            right_slope,
        })
    }
}

/// Potential function U_m of a discrete measure. The empty measure gets the
/// zero function (single breakpoint at 0).
pub fn potential_of(m: &DiscreteMeasure) -> PiecewiseLinear {
    if m.is_empty() {
        return PiecewiseLinear {
            xs: vec![0.0],
            ys: vec![0.0],
            left_slope: 0.0,
            right_slope: 0.0,
        };
    }
    let mass = m.mass();
    let moment = m.first_moment();
    // Prefix sums give U(x_j) = x_j (2 W_left - mass) - (2 M_left - moment)
    // where W_left, M_left accumulate weights and weighted positions of
    // atoms strictly left of (and at) x_j.
    let mut w_left = 0.0;
    let mut m_left = 0.0;
    let mut ys = Vec::with_capacity(m.len());
    for (x, w) in m.iter() {
        w_left += w;
        m_left += x * w;
        ys.push(x * (2.0 * w_left - mass) - (2.0 * m_left - moment));
    }
    PiecewiseLinear {
        xs: m.xs().to_vec(),
        ys,
        left_slope: -mass,
        right_slope: mass,
    }
}

/// Evaluates U_m on a sorted slice of points in one merge pass.
///
/// Equivalent to calling `potential_of(m).eval(x)` per point but O(n + k).
/// Points must be nondecreasing.
pub fn potential_on_points(m: &DiscreteMeasure, xs: &[f64]) -> Vec<f64> {
    let mass = m.mass();
    let moment = m.first_moment();
    let atoms_x = m.xs();
    let atoms_w = m.ws();
    let mut w_left = 0.0;
    let mut m_left = 0.0;
    let mut j = 0usize;
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        while j < atoms_x.len() && atoms_x[j] <= x {
            w_left += atoms_w[j];
            m_left += atoms_x[j] * atoms_w[j];
            j += 1;
        }
        out.push(x * (2.0 * w_left - mass) - (2.0 * m_left - moment));
    }
    out
}

/// Recovers the measure whose potential is `f`.
///
/// `f` must be convex (slope decreases beyond `tol` are rejected), have
/// tails with `right_slope = -left_slope = mass >= 0`, and its values must
/// meet the asymptote implied by the reconstructed mass and barycenter
/// within `tol` (per unit of scale). Atom weights are half the slope jumps;
/// jumps at or below the weight floor are dropped.
pub fn measure_from_potential(f: &PiecewiseLinear, tol: f64) -> Result<DiscreteMeasure> {
    let slopes = f.slopes();
    let mass = (f.right_slope() - f.left_slope()) / 2.0;
    let scale = 1.0f64
        .max(mass)
        .max(f.ys().first().copied().unwrap_or(0.0).abs())
        .max(f.ys().last().copied().unwrap_or(0.0).abs());
    if (f.left_slope() + f.right_slope()).abs() > tol * scale {
        return Err(Error::BadTails {
            left: f.left_slope(),
            right: f.right_slope(),
        });
    }
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for i in 0..f.xs().len() {
        let jump = slopes[i + 1] - slopes[i];
        if jump < -tol * scale {
            return Err(Error::NonConvex {
                x: f.xs()[i],
                drop: -jump,
            });
        }
        let w = jump / 2.0;
        if w > WEIGHT_FLOOR * scale {
            atoms.push((f.xs()[i], w));
        }
    }
    let m = DiscreteMeasure::new(atoms)?;
    // Asymptote consistency: on the left tail the potential must equal
    // moment - mass * x, on the right tail mass * x - moment.
    let moment = m.first_moment();
    let x0 = f.xs()[0];
    let xn = f.xs()[f.xs().len() - 1];
    let left_gap = f.ys()[0] - (moment - mass * x0);
    let right_gap = f.ys()[f.ys().len() - 1] - (mass * xn - moment);
    if left_gap.abs() > tol * scale {
        return Err(Error::InconsistentPotential {
            side: "left",
            gap: left_gap,
        });
    }
    if right_gap.abs() > tol * scale {
        return Err(Error::InconsistentPotential {
            side: "right",
            gap: right_gap,
        });
    }
    Ok(m)
}

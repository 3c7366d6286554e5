//! Finite configurations of a state space and the functionals on them.
//!
//! A configuration is a finite multiset of points; the empty multiset is
//! the zero measure. Point order never matters: every functional here is
//! symmetric, which is what makes the multiset an honest stand-in for an
//! unordered symmetric power.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
#[allow(unused_imports)] // inherent f64 methods shadow FloatExt under cfg(test)
use crate::num::{wrap, FloatExt};
use crate::UNIT_RANGE_SLACK;

/// State space underlying fields, models, and configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// A single state; fields are scalars.
    Single,
    /// `states` discrete states indexed `0..states`.
    Finite { states: usize },
    /// Circle of circumference `length` discretized by `grid` equispaced
    /// nodes at `i * length / grid`.
    Torus { length: f64, grid: usize },
}

impl Domain {
    pub fn node_count(&self) -> usize {
        match self {
            Domain::Single => 1,
            Domain::Finite { states } => *states,
            Domain::Torus { grid, .. } => *grid,
        }
    }

    /// Grid spacing on the torus.
    pub fn dx(&self) -> f64 {
        match self {
            Domain::Torus { length, grid } => length / *grid as f64,
            _ => 0.0,
        }
    }

    /// The point sitting at grid node `i`.
    pub fn point_at(&self, i: usize) -> Point {
        match self {
            Domain::Single => Point::Index(0),
            Domain::Finite { .. } => Point::Index(i),
            Domain::Torus { .. } => Point::Coord(self.dx() * i as f64),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        match (self, p) {
            (Domain::Single, Point::Index(0)) => true,
            (Domain::Finite { states }, Point::Index(i)) => i < states,
            (Domain::Torus { length, .. }, Point::Coord(x)) => {
                x.is_finite() && *x >= 0.0 && x < length
            }
            _ => false,
        }
    }

    pub(crate) fn check_matches(&self, other: &Domain, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(CoreError::Invalid(alloc::format!(
                "{what}: domain mismatch ({self:?} vs {other:?})"
            )))
        }
    }
}

/// A point of the state space: a state index for discrete spaces, a real
/// coordinate on the torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    Index(usize),
    Coord(f64),
}

/// A real-valued function on the state space, stored per node; off-node
/// evaluation on the torus interpolates linearly, and that rule is part of
/// the field so every consumer agrees.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: Domain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(domain: Domain, value: f64) -> Self {
        let n = domain.node_count();
        ScalarField {
            domain,
            values: vec![value; n],
        }
    }

    pub fn from_values(domain: Domain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.node_count() {
            return Err(CoreError::Invalid(alloc::format!(
                "field has {} values for a domain with {} nodes",
                values.len(),
                domain.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Invalid(String::from(
                "field values must be finite",
            )));
        }
        Ok(ScalarField { domain, values })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn replace_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        ScalarField {
            domain: self.domain.clone(),
            values,
        }
    }

    /// Evaluate at a point (linear interpolation between torus nodes).
    pub fn eval(&self, p: &Point) -> f64 {
        match (&self.domain, p) {
            (Domain::Single, _) => self.values[0],
            (Domain::Finite { .. }, Point::Index(i)) => self.values[*i],
            (Domain::Torus { length, grid }, Point::Coord(x)) => {
                let n = *grid;
                let dx = length / n as f64;
                let s = wrap(*x, *length) / dx;
                let i0 = s.floor() as usize % n;
                let frac = s - s.floor();
                self.values[i0] * (1.0 - frac) + self.values[(i0 + 1) % n] * frac
            }
            _ => panic!("point/domain mismatch in field evaluation"),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Does the field lie in `[0, 1]` (up to rounding slack)?
    pub fn in_unit_range(&self) -> bool {
        self.min_value() >= -UNIT_RANGE_SLACK && self.max_value() <= 1.0 + UNIT_RANGE_SLACK
    }

    pub(crate) fn check_unit_range(&self) -> Result<()> {
        if self.in_unit_range() {
            Ok(())
        } else {
            Err(CoreError::NotUnitRange {
                min: self.min_value(),
                max: self.max_value(),
            })
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.min_value() >= -UNIT_RANGE_SLACK
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            domain: self.domain.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise `exp(-f)`; sends a nonnegative field into the unit range.
    pub fn exp_neg(&self) -> Self {
        self.map(|v| (-v).exp())
    }
}

/// A finite configuration: a multiset of points. Empty means the zero
/// measure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Configuration {
    points: Vec<Point>,
}

impl Configuration {
    /// The zero measure.
    pub fn zero() -> Self {
        Configuration { points: Vec::new() }
    }

    pub fn from_points(points: Vec<Point>) -> Self {
        Configuration { points }
    }

    pub fn single(p: Point) -> Self {
        Configuration { points: vec![p] }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn is_zero(&self) -> bool {
        self.points.is_empty()
    }

    /// Multiset union; the empirical counterpart of measure addition.
    pub fn union(&self, other: &Configuration) -> Configuration {
        let mut points = Vec::with_capacity(self.points.len() + other.points.len());
        points.extend_from_slice(&self.points);
        points.extend_from_slice(&other.points);
        Configuration { points }
    }

    /// Product of `phi` over the points; `1` on the zero measure.
    ///
    /// `phi` must take values in `[0, 1]`. A zero factor yields exactly
    /// zero (no log-space detour here).
    pub fn multiplicative(&self, phi: &ScalarField) -> Result<f64> {
        phi.check_unit_range()?;
        let mut prod = 1.0;
        for p in &self.points {
            prod *= phi.eval(p);
            if prod == 0.0 {
                return Ok(0.0);
            }
        }
        Ok(prod)
    }

    /// `sum of f over the points`; `0` on the zero measure.
    pub fn linear(&self, f: &ScalarField) -> f64 {
        self.points.iter().map(|p| f.eval(p)).sum()
    }

    /// `exp(-<mu, f>)` for `f >= 0`; `1` on the zero measure.
    pub fn exponential(&self, f: &ScalarField) -> f64 {
        (-self.linear(f)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_state() -> Domain {
        Domain::Finite { states: 3 }
    }

    #[test]
    fn multiplicative_on_zero_measure_is_one() {
        let phi = ScalarField::constant(three_state(), 0.37);
        assert_eq!(Configuration::zero().multiplicative(&phi).unwrap(), 1.0);
    }

    #[test]
    fn multiplicative_products() {
        let phi = ScalarField::constant(three_state(), 0.5);
        let mu = Configuration::from_points(vec![Point::Index(0), Point::Index(1)]);
        assert!((mu.multiplicative(&phi).unwrap() - 0.25).abs() < 1e-15);

        let phi = ScalarField::from_values(three_state(), vec![0.2, 0.5, 1.0]).unwrap();
        let mu =
            Configuration::from_points(vec![Point::Index(0), Point::Index(0), Point::Index(1)]);
        assert!((mu.multiplicative(&phi).unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn multiplicative_rejects_fields_outside_unit_range() {
        let phi = ScalarField::from_values(three_state(), vec![0.2, 1.5, 0.0]).unwrap();
        let mu = Configuration::single(Point::Index(0));
        assert!(matches!(
            mu.multiplicative(&phi),
            Err(CoreError::NotUnitRange { .. })
        ));
    }

    #[test]
    fn linear_counts_with_unit_field() {
        let one = ScalarField::constant(three_state(), 1.0);
        let mu =
            Configuration::from_points(vec![Point::Index(2), Point::Index(0), Point::Index(2)]);
        assert_eq!(mu.linear(&one), 3.0);
        assert_eq!(Configuration::zero().linear(&one), 0.0);

        let f = ScalarField::from_values(three_state(), vec![2.0, -1.0, 0.0]).unwrap();
        let mu =
            Configuration::from_points(vec![Point::Index(0), Point::Index(1), Point::Index(1)]);
        assert_eq!(mu.linear(&f), 0.0);
    }

    #[test]
    fn exponential_values() {
        let f = ScalarField::constant(three_state(), core::f64::consts::LN_2);
        assert_eq!(Configuration::zero().exponential(&f), 1.0);
        let mu =
            Configuration::from_points(vec![Point::Index(0), Point::Index(1), Point::Index(2)]);
        assert!((mu.exponential(&f) - 0.125).abs() < 1e-15);

        let g = ScalarField::constant(three_state(), 1.0);
        let one_pt = Configuration::single(Point::Index(1));
        assert!((one_pt.exponential(&g) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn union_is_multiset_addition() {
        let a = Configuration::single(Point::Index(0));
        let zero = Configuration::zero();
        assert_eq!(zero.union(&a), a);
        let aa = a.union(&a);
        assert_eq!(aa.size(), 2);

        let f = ScalarField::from_values(three_state(), vec![0.3, 0.9, 0.1]).unwrap();
        let b = Configuration::single(Point::Index(1));
        let ab = a.union(&b);
        assert_eq!(
            ab.exponential(&f),
            Configuration::from_points(vec![Point::Index(0), Point::Index(1)]).exponential(&f)
        );
    }

    #[test]
    fn torus_interpolation_is_linear_and_periodic() {
        let dom = Domain::Torus {
            length: 2.0,
            grid: 4,
        };
        let f = ScalarField::from_values(dom.clone(), vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        assert_eq!(f.eval(&Point::Coord(0.5)), 1.0);
        assert!((f.eval(&Point::Coord(0.25)) - 0.5).abs() < 1e-15);
        // across the seam: node 3 at x=1.5 has -1, node 0 has 0
        assert!((f.eval(&Point::Coord(1.75)) - (-0.5)).abs() < 1e-15);
        // wrapping
        assert!((f.eval(&Point::Coord(2.25)) - 0.5).abs() < 1e-15);
        assert!((f.eval(&Point::Coord(-0.25)) - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn domain_point_membership() {
        let t = Domain::Torus {
            length: 1.0,
            grid: 8,
        };
        assert!(t.contains(&Point::Coord(0.999)));
        assert!(!t.contains(&Point::Coord(1.0)));
        assert!(!t.contains(&Point::Index(0)));
        let f = Domain::Finite { states: 2 };
        assert!(f.contains(&Point::Index(1)));
        assert!(!f.contains(&Point::Index(2)));
    }
}

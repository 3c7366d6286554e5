//! Offspring laws: what a destroyed particle leaves behind.
//!
//! A law assigns each state a distribution `q_0, q_1, ..., q_K` over litter
//! sizes, plus a displacement rule for where the children land relative to
//! the parent. Mass on `k = 0` is allowed; a death with no offspring moves
//! the configuration toward the zero measure, which is what extinction
//! experiments probe. Litter positions are i.i.d. displacements of the
//! parent, so the kernel stays in product form.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::config_space::{Configuration, Domain, Point, ScalarField};
use crate::error::{CoreError, Result};
#[allow(unused_imports)] // inherent f64 methods shadow FloatExt under cfg(test)
use crate::num::{wrap, FloatExt};
use crate::stream::SeededStream;

const PROB_SLACK: f64 = 1e-12;

/// Where a child starts relative to its parent.
#[derive(Debug, Clone, PartialEq)]
pub enum Displacement {
    /// Children appear at the parent position (local branching).
    None,
    /// Gaussian offset with the given standard deviation (torus only).
    Gaussian { sigma: f64 },
    /// Uniform offset in `[-radius, radius]` (torus only).
    UniformBall { radius: f64 },
}

#[derive(Debug, Clone)]
enum Counts {
    /// One distribution shared by every state.
    Constant(Vec<f64>),
    /// One distribution per grid node.
    PerState(Vec<Vec<f64>>),
}

/// Offspring-count probabilities plus displacement rule.
#[derive(Debug, Clone)]
pub struct OffspringLaw {
    domain: Domain,
    counts: Counts,
    displacement: Displacement,
    /// Convolution weights of the single-child displacement operator on the
    /// grid; `None` when the displacement is `None`.
    kernel_weights: Option<Vec<f64>>,
    markovian: bool,
}

/// The constants controlling the branching evolution: `beta1` bounds the
/// mean litter size, `beta0 = sup(c) * beta1` is the Picard contraction
/// rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismConstants {
    pub beta1: f64,
    pub beta0: f64,
    /// Supremum of the mean offspring count; equals `beta1` for the
    /// product-form laws realized here.
    pub q_bar: f64,
    /// Whether `beta1 > 1`.
    pub beta1_gt_one: bool,
    /// Whether the killing rate satisfies `c < beta1 / (beta1 - 1)`
    /// pointwise (only meaningful when `beta1 > 1`).
    pub killing_below_critical: bool,
}

impl OffspringLaw {
    /// Law with the same count distribution `q[k]`, `k = 0..=K`, at every
    /// state.
    pub fn constant(domain: Domain, q: Vec<f64>, displacement: Displacement) -> Result<Self> {
        Self::build(domain, Counts::Constant(q), displacement)
    }

    /// Law with one count distribution per grid node.
    pub fn per_state(
        domain: Domain,
        rows: Vec<Vec<f64>>,
        displacement: Displacement,
    ) -> Result<Self> {
        Self::build(domain, Counts::PerState(rows), displacement)
    }

    fn build(domain: Domain, counts: Counts, displacement: Displacement) -> Result<Self> {
        let rows: &[Vec<f64>] = match &counts {
            Counts::Constant(q) => core::slice::from_ref(q),
            Counts::PerState(rows) => rows,
        };
        if let Counts::PerState(rows) = &counts {
            if rows.len() != domain.node_count() {
                return Err(CoreError::Invalid(alloc::format!(
                    "per-state law has {} rows for {} nodes",
                    rows.len(),
                    domain.node_count()
                )));
            }
        }
        let mut markovian = true;
        for q in rows {
            if q.is_empty() {
                return Err(CoreError::Invalid(String::from(
                    "offspring distribution must have at least the k=0 entry",
                )));
            }
            if q.iter().any(|&p| !(0.0..=1.0 + PROB_SLACK).contains(&p)) {
                return Err(CoreError::Invalid(String::from(
                    "offspring probabilities must lie in [0, 1]",
                )));
            }
            let total: f64 = q.iter().sum();
            if total > 1.0 + PROB_SLACK {
                return Err(CoreError::Invalid(alloc::format!(
                    "offspring probabilities sum to {total} > 1"
                )));
            }
            if (total - 1.0).abs() > PROB_SLACK {
                markovian = false;
            }
        }
        let kernel_weights = match &displacement {
            Displacement::None => None,
            Displacement::Gaussian { sigma } => {
                let (length, grid) = torus_of(&domain)?;
                if *sigma <= 0.0 {
                    return Err(CoreError::Invalid(String::from("sigma must be positive")));
                }
                Some(gaussian_weights(length, grid, *sigma))
            }
            Displacement::UniformBall { radius } => {
                let (length, grid) = torus_of(&domain)?;
                if *radius <= 0.0 {
                    return Err(CoreError::Invalid(String::from("radius must be positive")));
                }
                Some(ball_weights(length, grid, *radius))
            }
        };
        Ok(OffspringLaw {
            domain,
            counts,
            displacement,
            kernel_weights,
            markovian,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn displacement(&self) -> &Displacement {
        &self.displacement
    }

    /// Does every state's distribution sum to one?
    pub fn is_markovian(&self) -> bool {
        self.markovian
    }

    pub fn is_local(&self) -> bool {
        matches!(self.displacement, Displacement::None)
    }

    /// The shared count distribution, if the law is state-independent.
    pub fn constant_counts(&self) -> Option<&[f64]> {
        match &self.counts {
            Counts::Constant(q) => Some(q),
            Counts::PerState(_) => None,
        }
    }

    /// Largest litter size with assigned probability.
    pub fn k_max(&self) -> usize {
        match &self.counts {
            Counts::Constant(q) => q.len() - 1,
            Counts::PerState(rows) => rows.iter().map(|q| q.len() - 1).max().unwrap_or(0),
        }
    }

    fn row(&self, node: usize) -> &[f64] {
        match &self.counts {
            Counts::Constant(q) => q,
            Counts::PerState(rows) => &rows[node],
        }
    }

    /// Count probabilities at an arbitrary point, interpolating per-state
    /// tables linearly between torus nodes (a convex combination of
    /// distributions is again a distribution).
    fn row_at(&self, p: &Point) -> Vec<f64> {
        match &self.counts {
            Counts::Constant(q) => q.clone(),
            Counts::PerState(rows) => match (&self.domain, p) {
                (Domain::Torus { length, grid }, Point::Coord(x)) => {
                    let n = *grid;
                    let dx = length / n as f64;
                    let s = wrap(*x, *length) / dx;
                    let i0 = s.floor() as usize % n;
                    let frac = s - s.floor();
                    let a = &rows[i0];
                    let b = &rows[(i0 + 1) % n];
                    let len = a.len().max(b.len());
                    (0..len)
                        .map(|k| {
                            let qa = a.get(k).copied().unwrap_or(0.0);
                            let qb = b.get(k).copied().unwrap_or(0.0);
                            qa * (1.0 - frac) + qb * frac
                        })
                        .collect()
                }
                (_, Point::Index(i)) => rows[*i].clone(),
                _ => panic!("point/domain mismatch in offspring law"),
            },
        }
    }

    /// Mean offspring count per node.
    pub fn mean_offspring_field(&self) -> ScalarField {
        let n = self.domain.node_count();
        let values = (0..n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| k as f64 * p)
                    .sum()
            })
            .collect();
        ScalarField::from_values(self.domain.clone(), values).expect("sized by construction")
    }

    /// Average a field over the single-child displacement.
    pub fn displace_field(&self, f: &ScalarField) -> ScalarField {
        match &self.kernel_weights {
            None => f.clone(),
            Some(w) => {
                let v = f.values();
                let n = v.len();
                let out = (0..n)
                    .map(|i| (0..n).map(|j| w[j] * v[(i + j) % n]).sum())
                    .collect();
                f.replace_values(out)
            }
        }
    }

    /// Action on a multiplicative test function:
    /// `q0(x) + sum_k q_k(x) (Dh)(x)^k` with `D` the displacement average.
    pub fn apply_to_multiplicative(&self, h: &ScalarField) -> Result<ScalarField> {
        self.domain.check_matches(h.domain(), "offspring law")?;
        h.check_unit_range()?;
        let dh = self.displace_field(h);
        let out = dh
            .values()
            .iter()
            .enumerate()
            .map(|(i, &hv)| {
                let hv = hv.clamp(0.0, 1.0);
                let mut acc = 0.0;
                let mut pow = 1.0;
                for &p in self.row(i) {
                    acc += p * pow;
                    pow *= hv;
                }
                acc
            })
            .collect();
        Ok(h.replace_values(out))
    }

    /// Action on a linear test function: `q_o(x) * (Df)(x)`.
    pub fn apply_to_linear(&self, f: &ScalarField) -> Result<ScalarField> {
        self.domain.check_matches(f.domain(), "offspring law")?;
        let df = self.displace_field(f);
        let qo = self.mean_offspring_field();
        let out = df
            .values()
            .iter()
            .zip(qo.values())
            .map(|(&fv, &q)| q * fv)
            .collect();
        Ok(f.replace_values(out))
    }

    /// Draw a litter for a parent destroyed at `x`.
    pub fn sample_offspring(&self, x: &Point, stream: &mut SeededStream) -> Result<Configuration> {
        if !self.markovian {
            return Err(CoreError::SubMarkovianSampling);
        }
        let q = self.row_at(x);
        let k = stream.categorical(&q);
        let mut points = Vec::with_capacity(k);
        for _ in 0..k {
            points.push(self.displace_point(x, stream));
        }
        Ok(Configuration::from_points(points))
    }

    /// One displaced child position.
    pub fn displace_point(&self, x: &Point, stream: &mut SeededStream) -> Point {
        match (&self.displacement, x) {
            (Displacement::None, _) => *x,
            (Displacement::Gaussian { sigma }, Point::Coord(c)) => {
                let length = torus_length(&self.domain);
                Point::Coord(wrap(c + sigma * stream.normal(), length))
            }
            (Displacement::UniformBall { radius }, Point::Coord(c)) => {
                let length = torus_length(&self.domain);
                Point::Coord(wrap(c + radius * (2.0 * stream.uniform() - 1.0), length))
            }
            _ => panic!("displacement requires torus coordinates"),
        }
    }

    /// Mean-offspring constants paired with a killing rate.
    pub fn constants(&self, c: &ScalarField) -> Result<MechanismConstants> {
        self.domain.check_matches(c.domain(), "constants")?;
        if !c.is_nonnegative() {
            return Err(CoreError::Invalid(String::from(
                "killing rate must be nonnegative",
            )));
        }
        let qo = self.mean_offspring_field();
        let beta1 = qo.max_value();
        let c_sup = c.max_value();
        let beta1_gt_one = beta1 > 1.0;
        let killing_below_critical = beta1_gt_one && c_sup < beta1 / (beta1 - 1.0);
        Ok(MechanismConstants {
            beta1,
            beta0: c_sup * beta1,
            q_bar: beta1,
            beta1_gt_one,
            killing_below_critical,
        })
    }
}

fn torus_of(domain: &Domain) -> Result<(f64, usize)> {
    match domain {
        Domain::Torus { length, grid } => Ok((*length, *grid)),
        _ => Err(CoreError::Invalid(String::from(
            "displaced offspring require a torus domain",
        ))),
    }
}

fn torus_length(domain: &Domain) -> f64 {
    match domain {
        Domain::Torus { length, .. } => *length,
        _ => panic!("displacement requires a torus domain"),
    }
}

/// Wrapped-Gaussian convolution weights on the grid (midpoint rule,
/// normalized).
fn gaussian_weights(length: f64, grid: usize, sigma: f64) -> Vec<f64> {
    let dx = length / grid as f64;
    let wraps = ((8.0 * sigma / length).ceil() as i64).max(1);
    let mut w = vec![0.0; grid];
    for (j, wj) in w.iter_mut().enumerate() {
        let e = j as f64 * dx;
        let mut dens = 0.0;
        for m in -wraps..=wraps {
            let d = e + m as f64 * length;
            dens += (-0.5 * (d / sigma) * (d / sigma)).exp();
        }
        *wj = dens;
    }
    let total: f64 = w.iter().sum();
    for wj in &mut w {
        *wj /= total;
    }
    w
}

/// Indicator weights of the wrapped ball of the given radius (normalized).
fn ball_weights(length: f64, grid: usize, radius: f64) -> Vec<f64> {
    let dx = length / grid as f64;
    let mut w = vec![0.0; grid];
    for (j, wj) in w.iter_mut().enumerate() {
        let e = j as f64 * dx;
        let d = e.min(length - e);
        if d <= radius {
            *wj = 1.0;
        }
    }
    let total: f64 = w.iter().sum();
    for wj in &mut w {
        *wj /= total;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom() -> Domain {
        Domain::Finite { states: 2 }
    }

    #[test]
    fn multiplicative_action_binary_law() {
        let law = OffspringLaw::constant(dom(), vec![0.0, 0.0, 1.0], Displacement::None).unwrap();
        let h = ScalarField::constant(dom(), 0.5);
        let out = law.apply_to_multiplicative(&h).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn markovian_law_preserves_one() {
        let law =
            OffspringLaw::constant(dom(), vec![0.1, 0.4, 0.3, 0.2], Displacement::None).unwrap();
        assert!(law.is_markovian());
        let one = ScalarField::constant(dom(), 1.0);
        let out = law.apply_to_multiplicative(&one).unwrap();
        assert!(out.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn generating_function_fixed_point() {
        // q0 = 1/4, q2 = 3/4 at h = 1/3: 1/4 + 3/4 * 1/9 = 1/3
        let law = OffspringLaw::constant(dom(), vec![0.25, 0.0, 0.75], Displacement::None).unwrap();
        let h = ScalarField::constant(dom(), 1.0 / 3.0);
        let out = law.apply_to_multiplicative(&h).unwrap();
        assert!(out.values().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn linear_action_is_mean_offspring() {
        let law = OffspringLaw::constant(dom(), vec![0.0, 0.0, 1.0], Displacement::None).unwrap();
        let one = ScalarField::constant(dom(), 1.0);
        let out = law.apply_to_linear(&one).unwrap();
        assert!(out.values().iter().all(|&v| (v - 2.0).abs() < 1e-15));

        let law = OffspringLaw::constant(dom(), vec![0.25, 0.0, 0.75], Displacement::None).unwrap();
        let out = law.apply_to_linear(&one).unwrap();
        assert!(out.values().iter().all(|&v| (v - 1.5).abs() < 1e-15));

        let zero = ScalarField::constant(dom(), 0.0);
        let out = law.apply_to_linear(&zero).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_and_hypothesis_flags() {
        let c = ScalarField::constant(dom(), 1.0);
        let binary =
            OffspringLaw::constant(dom(), vec![0.0, 0.0, 1.0], Displacement::None).unwrap();
        let k = binary.constants(&c).unwrap();
        assert_eq!(k.beta1, 2.0);
        assert_eq!(k.beta0, 2.0);
        assert!(k.beta1_gt_one && k.killing_below_critical);

        let single = OffspringLaw::constant(dom(), vec![0.0, 1.0], Displacement::None).unwrap();
        let k = single.constants(&c).unwrap();
        assert_eq!(k.beta1, 1.0);
        assert!(!k.beta1_gt_one);

        let half = OffspringLaw::constant(dom(), vec![0.5, 0.0, 0.5], Displacement::None).unwrap();
        let c2 = ScalarField::constant(dom(), 2.0);
        let k = half.constants(&c2).unwrap();
        assert_eq!(k.beta1, 1.0);
        assert!(!k.beta1_gt_one && !k.killing_below_critical);
    }

    #[test]
    fn sampling_deterministic_cases() {
        let mut s = SeededStream::new(1);
        let one_child = OffspringLaw::constant(dom(), vec![0.0, 1.0], Displacement::None).unwrap();
        let x = Point::Index(1);
        for _ in 0..10 {
            let cfg = one_child.sample_offspring(&x, &mut s).unwrap();
            assert_eq!(cfg.points(), &[x]);
        }
        let two = OffspringLaw::constant(dom(), vec![0.0, 0.0, 1.0], Displacement::None).unwrap();
        let cfg = two.sample_offspring(&x, &mut s).unwrap();
        assert_eq!(cfg.points(), &[x, x]);
    }

    #[test]
    fn sampling_requires_markovian_law() {
        let sub = OffspringLaw::constant(dom(), vec![0.1, 0.2], Displacement::None).unwrap();
        assert!(!sub.is_markovian());
        let mut s = SeededStream::new(1);
        assert!(matches!(
            sub.sample_offspring(&Point::Index(0), &mut s),
            Err(CoreError::SubMarkovianSampling)
        ));
    }

    #[test]
    fn empirical_offspring_mean() {
        let law = OffspringLaw::constant(dom(), vec![0.25, 0.0, 0.75], Displacement::None).unwrap();
        let mut s = SeededStream::new(31);
        let n = 100_000;
        let mut total = 0usize;
        for _ in 0..n {
            total += law
                .sample_offspring(&Point::Index(0), &mut s)
                .unwrap()
                .size();
        }
        let mean = total as f64 / n as f64;
        // variance of the count is q0*q2*(0-1.5)^2.. = E k^2 - 2.25 = 3 - 2.25
        let se = (0.75f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn empirical_count_distribution_chi_square() {
        let law =
            OffspringLaw::constant(dom(), vec![0.2, 0.3, 0.25, 0.15, 0.1], Displacement::None)
                .unwrap();
        let mut s = SeededStream::new(77);
        let n = 100_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let k = law
                .sample_offspring(&Point::Index(0), &mut s)
                .unwrap()
                .size();
            counts[k] += 1;
        }
        let expected = [0.2, 0.3, 0.25, 0.15, 0.1].map(|p| p * n as f64);
        let chi2: f64 = counts
            .iter()
            .zip(expected.iter())
            .map(|(&o, &e)| (o as f64 - e) * (o as f64 - e) / e)
            .sum();
        // chi-square critical value, 4 degrees of freedom, significance 0.001
        assert!(chi2 < 18.467, "chi2 {chi2}");
    }

    #[test]
    fn per_state_law_matches_constant_when_rows_agree() {
        let q = vec![0.25, 0.0, 0.75];
        let constant = OffspringLaw::constant(dom(), q.clone(), Displacement::None).unwrap();
        let per_state =
            OffspringLaw::per_state(dom(), vec![q.clone(), q], Displacement::None).unwrap();
        assert!(per_state.is_markovian());
        let h = ScalarField::from_values(dom(), vec![0.4, 0.9]).unwrap();
        assert_eq!(
            constant.apply_to_multiplicative(&h).unwrap(),
            per_state.apply_to_multiplicative(&h).unwrap()
        );
        assert_eq!(
            constant.apply_to_linear(&h).unwrap(),
            per_state.apply_to_linear(&h).unwrap()
        );
        let mut s1 = SeededStream::new(3);
        let mut s2 = SeededStream::new(3);
        for _ in 0..50 {
            assert_eq!(
                constant
                    .sample_offspring(&Point::Index(1), &mut s1)
                    .unwrap(),
                per_state
                    .sample_offspring(&Point::Index(1), &mut s2)
                    .unwrap()
            );
        }
    }

    #[test]
    fn per_state_law_varies_by_state() {
        let rows = vec![vec![0.0, 1.0], vec![0.0, 0.0, 1.0]];
        let law = OffspringLaw::per_state(dom(), rows, Displacement::None).unwrap();
        let qo = law.mean_offspring_field();
        assert_eq!(qo.values(), &[1.0, 2.0]);
        let c = ScalarField::constant(dom(), 0.5);
        let k = law.constants(&c).unwrap();
        assert_eq!(k.beta1, 2.0);
        assert_eq!(k.beta0, 1.0);
    }

    #[test]
    fn per_state_rows_interpolate_on_the_torus() {
        let torus = Domain::Torus {
            length: 1.0,
            grid: 4,
        };
        let rows = vec![
            vec![0.0, 1.0],      // node 0: one child
            vec![0.0, 0.0, 1.0], // node 1: two children
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        let law = OffspringLaw::per_state(torus, rows, Displacement::None).unwrap();
        // halfway between nodes 0 and 1 the count law is the 50/50 mixture
        let mut s = SeededStream::new(9);
        let n = 40_000;
        let mut total = 0usize;
        for _ in 0..n {
            total += law
                .sample_offspring(&Point::Coord(0.125), &mut s)
                .unwrap()
                .size();
        }
        let mean = total as f64 / n as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((mean - 1.5).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn uniform_ball_displacement_weights_and_draws() {
        let torus = Domain::Torus {
            length: 1.0,
            grid: 16,
        };
        let law = OffspringLaw::constant(
            torus.clone(),
            vec![0.0, 1.0],
            Displacement::UniformBall { radius: 0.15 },
        )
        .unwrap();
        let c = ScalarField::constant(torus, 0.7);
        let out = law.displace_field(&c);
        assert!(out.values().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let mut s = SeededStream::new(21);
        for _ in 0..500 {
            let child = law
                .sample_offspring(&Point::Coord(0.5), &mut s)
                .unwrap()
                .points()[0];
            match child {
                Point::Coord(x) => assert!((x - 0.5).abs() <= 0.15 + 1e-12),
                _ => panic!("expected a coordinate"),
            }
        }
    }

    #[test]
    fn displacement_restricted_to_torus() {
        assert!(OffspringLaw::constant(
            dom(),
            vec![0.0, 1.0],
            Displacement::Gaussian { sigma: 0.1 }
        )
        .is_err());
    }

    #[test]
    fn displaced_kernel_weights_normalize_and_average() {
        let torus = Domain::Torus {
            length: 1.0,
            grid: 32,
        };
        let law = OffspringLaw::constant(
            torus.clone(),
            vec![0.0, 1.0],
            Displacement::Gaussian { sigma: 0.05 },
        )
        .unwrap();
        // averaging a constant leaves it unchanged
        let c = ScalarField::constant(torus.clone(), 0.7);
        let out = law.displace_field(&c);
        assert!(out.values().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        // averaging smooths a spike: mass stays, max drops
        let mut spike = vec![0.0; 32];
        spike[16] = 1.0;
        let f = ScalarField::from_values(torus, spike).unwrap();
        let out = law.displace_field(&f);
        let total: f64 = out.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(out.max_value() < 0.5);
    }

    #[test]
    fn lipschitz_bound_on_multiplicative_action() {
        let law = OffspringLaw::constant(dom(), vec![0.1, 0.2, 0.3, 0.2, 0.2], Displacement::None)
            .unwrap();
        let c = ScalarField::constant(dom(), 1.0);
        let beta1 = law.constants(&c).unwrap().beta1;
        let mut s = SeededStream::new(5150);
        for _ in 0..200 {
            let h = ScalarField::from_values(dom(), vec![s.uniform(), s.uniform()]).unwrap();
            let g = ScalarField::from_values(dom(), vec![s.uniform(), s.uniform()]).unwrap();
            let bh = law.apply_to_multiplicative(&h).unwrap();
            let bg = law.apply_to_multiplicative(&g).unwrap();
            let lhs = bh
                .values()
                .iter()
                .zip(bg.values())
                .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
            let rhs = h
                .values()
                .iter()
                .zip(g.values())
                .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
            assert!(lhs <= beta1 * rhs + 1e-12, "lhs {lhs} rhs {rhs}");
        }
    }
}

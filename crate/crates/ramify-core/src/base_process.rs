//! The base motion: semigroup action and path sampling.
//!
//! Three concrete models stand behind one contract so the solvers never
//! care which motion they drive:
//!
//! * `SingleSite`: one state, no motion; semigroups are scalars.
//! * `FiniteChain`: continuous-time chain with a conservative rate matrix;
//!   semigroup action by uniformization of the (killed) generator, paths by
//!   the exact jump chain.
//! * `BrownianTorus`: Brownian motion on a circle, discretized on a grid;
//!   semigroup action by Crank–Nicolson steps, paths by Euler increments.
//!
//! The killed semigroup applies the Feynman–Kac weight `exp(-int c(X_s) ds)`:
//! analytically via the generator `L - c`, stochastically via the exact
//! per-segment integral (chains) or the trapezoidal rule (torus paths).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::config_space::{Domain, Point, ScalarField};
use crate::error::{CoreError, Result};
use crate::num::{wrap, FloatExt};
use crate::stream::SeededStream;

/// Truncation tolerance for uniformized matrix exponentials.
const EXPM_TOL: f64 = 1e-12;
/// Largest Poisson mean handled in a single uniformization substep.
const EXPM_SEGMENT: f64 = 30.0;
/// Hard cap on internal substeps before reporting a step-size failure.
const MAX_SUBSTEPS: usize = 1_000_000;

/// A base Markov motion together with its killing rate.
#[derive(Debug, Clone)]
pub enum BaseModel {
    SingleSite {
        killing: ScalarField,
    },
    FiniteChain {
        /// Row-major conservative rate matrix: nonnegative off-diagonal,
        /// zero row sums.
        rates: Vec<f64>,
        states: usize,
        killing: ScalarField,
    },
    BrownianTorus {
        diffusion: f64,
        length: f64,
        grid: usize,
        killing: ScalarField,
    },
}

impl BaseModel {
    pub fn single_site(killing_rate: f64) -> Result<Self> {
        let killing = ScalarField::constant(Domain::Single, killing_rate);
        check_killing(&killing)?;
        Ok(BaseModel::SingleSite { killing })
    }

    pub fn finite_chain(rates: Vec<Vec<f64>>, killing: ScalarField) -> Result<Self> {
        let states = rates.len();
        if states == 0 {
            return Err(CoreError::Invalid(String::from("empty rate matrix")));
        }
        let mut flat = Vec::with_capacity(states * states);
        for (i, row) in rates.iter().enumerate() {
            if row.len() != states {
                return Err(CoreError::Invalid(String::from(
                    "rate matrix must be square",
                )));
            }
            let mut off_sum = 0.0;
            for (j, &r) in row.iter().enumerate() {
                if i != j {
                    if r < 0.0 {
                        return Err(CoreError::Invalid(String::from(
                            "off-diagonal rates must be nonnegative",
                        )));
                    }
                    off_sum += r;
                }
            }
            if (row[i] + off_sum).abs() > 1e-9 {
                return Err(CoreError::Invalid(alloc::format!(
                    "row {i} of the rate matrix does not sum to zero"
                )));
            }
            for (j, &r) in row.iter().enumerate() {
                // pin the diagonal so conservativity is exact
                flat.push(if i == j { -off_sum } else { r });
            }
        }
        let domain = Domain::Finite { states };
        domain.check_matches(killing.domain(), "finite chain killing")?;
        check_killing(&killing)?;
        Ok(BaseModel::FiniteChain {
            rates: flat,
            states,
            killing,
        })
    }

    pub fn brownian_torus(
        diffusion: f64,
        length: f64,
        grid: usize,
        killing: ScalarField,
    ) -> Result<Self> {
        if !(diffusion > 0.0) || !(length > 0.0) {
            return Err(CoreError::Invalid(String::from(
                "diffusion and length must be positive",
            )));
        }
        if grid < 3 {
            return Err(CoreError::Invalid(String::from(
                "torus grid needs at least 3 nodes",
            )));
        }
        let domain = Domain::Torus { length, grid };
        domain.check_matches(killing.domain(), "torus killing")?;
        check_killing(&killing)?;
        Ok(BaseModel::BrownianTorus {
            diffusion,
            length,
            grid,
            killing,
        })
    }

    pub fn domain(&self) -> Domain {
        match self {
            BaseModel::SingleSite { .. } => Domain::Single,
            BaseModel::FiniteChain { states, .. } => Domain::Finite { states: *states },
            BaseModel::BrownianTorus { length, grid, .. } => Domain::Torus {
                length: *length,
                grid: *grid,
            },
        }
    }

    pub fn killing(&self) -> &ScalarField {
        match self {
            BaseModel::SingleSite { killing }
            | BaseModel::FiniteChain { killing, .. }
            | BaseModel::BrownianTorus { killing, .. } => killing,
        }
    }

    /// Largest killing rate; the thinning envelope for the particle engine.
    pub fn killing_sup(&self) -> f64 {
        self.killing().max_value()
    }

    fn killing_is_constant(&self) -> bool {
        let v = self.killing().values();
        v.iter().all(|&c| c == v[0])
    }

    /// `T_t f`, the plain (conservative) semigroup.
    pub fn apply_semigroup(&self, t: f64, f: &ScalarField) -> Result<ScalarField> {
        self.apply(t, f, false)
    }

    /// `T_t^c f`, the semigroup killed at rate `c`.
    pub fn apply_killed_semigroup(&self, t: f64, f: &ScalarField) -> Result<ScalarField> {
        self.apply(t, f, true)
    }

    fn apply(&self, t: f64, f: &ScalarField, killed: bool) -> Result<ScalarField> {
        self.domain().check_matches(f.domain(), "semigroup input")?;
        if t < 0.0 {
            return Err(CoreError::Invalid(String::from("time must be nonnegative")));
        }
        if t == 0.0 {
            return Ok(f.clone());
        }
        // constant killing factors out of the exponential
        if killed && self.killing_is_constant() {
            let c0 = self.killing().values()[0];
            let plain = self.apply(t, f, false)?;
            let factor = (-c0 * t).exp();
            return Ok(plain.map(|v| factor * v));
        }
        match self {
            BaseModel::SingleSite { killing } => {
                let rate = if killed { killing.values()[0] } else { 0.0 };
                Ok(f.map(|v| (-rate * t).exp() * v))
            }
            BaseModel::FiniteChain {
                rates,
                states,
                killing,
            } => {
                let gen = generator(rates, *states, killed.then(|| killing.values()));
                let out = expm_action(&gen, *states, t, f.values())?;
                Ok(f.replace_values(out))
            }
            BaseModel::BrownianTorus {
                diffusion,
                length,
                grid,
                killing,
            } => {
                let dx = length / *grid as f64;
                let steps = (t / dx).ceil().max(1.0) as usize;
                let cn = CrankNicolson::new(
                    *diffusion,
                    *length,
                    *grid,
                    t / steps as f64,
                    killed.then(|| killing.values()),
                );
                let mut v = f.values().to_vec();
                for _ in 0..steps {
                    v = cn.apply(&v);
                }
                Ok(f.replace_values(v))
            }
        }
    }

    /// One-step propagator for the Volterra solvers: applies `T_dt` (or
    /// `T_dt^c`) to per-node values. Built once, applied per mesh step, so
    /// repeated application reproduces the semigroup exactly in the
    /// discretization's own arithmetic.
    pub fn step_propagator(&self, dt: f64, killed: bool) -> Result<Propagator> {
        if !(dt > 0.0) {
            return Err(CoreError::Invalid(String::from(
                "step size must be positive",
            )));
        }
        match self {
            BaseModel::SingleSite { killing } => {
                let rate = if killed { killing.values()[0] } else { 0.0 };
                Ok(Propagator::Scalar {
                    factor: (-rate * dt).exp(),
                })
            }
            BaseModel::FiniteChain {
                rates,
                states,
                killing,
            } => {
                let n = *states;
                let gen = generator(rates, n, killed.then(|| killing.values()));
                // columns of exp(dt * generator)
                let mut matrix = vec![0.0; n * n];
                for j in 0..n {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    let col = expm_action(&gen, n, dt, &e)?;
                    for i in 0..n {
                        matrix[i * n + j] = col[i];
                    }
                }
                Ok(Propagator::Dense { n, matrix })
            }
            BaseModel::BrownianTorus {
                diffusion,
                length,
                grid,
                killing,
            } => Ok(Propagator::Cyclic(CrankNicolson::new(
                *diffusion,
                *length,
                *grid,
                dt,
                killed.then(|| killing.values()),
            ))),
        }
    }

    /// Sample a path reported on the grid `0, dt, ..., n_steps * dt`.
    ///
    /// Chains jump exactly (the grid is only the reporting mesh); the torus
    /// advances by Euler increments of size `dt`.
    pub fn sample_path(
        &self,
        x0: &Point,
        dt: f64,
        n_steps: usize,
        stream: &mut SeededStream,
    ) -> Vec<Point> {
        let mut path = Vec::with_capacity(n_steps + 1);
        let mut x = *x0;
        path.push(x);
        for _ in 0..n_steps {
            x = self.advance(&x, dt, dt, stream);
            path.push(x);
        }
        path
    }

    /// Advance the motion for `duration` (Euler substep `path_dt` on the
    /// torus; exact elsewhere).
    pub fn advance(
        &self,
        x: &Point,
        duration: f64,
        path_dt: f64,
        stream: &mut SeededStream,
    ) -> Point {
        self.advance_weighted(x, duration, path_dt, None, stream).0
    }

    /// Advance the motion and accumulate `int w(X_s) ds` along the way.
    ///
    /// Chains integrate exactly over the piecewise-constant path; the torus
    /// uses the trapezoidal rule on the Euler grid.
    pub fn advance_with_integral(
        &self,
        x: &Point,
        duration: f64,
        path_dt: f64,
        weight: &ScalarField,
        stream: &mut SeededStream,
    ) -> (Point, f64) {
        self.advance_weighted(x, duration, path_dt, Some(weight), stream)
    }

    fn advance_weighted(
        &self,
        x: &Point,
        duration: f64,
        path_dt: f64,
        weight: Option<&ScalarField>,
        stream: &mut SeededStream,
    ) -> (Point, f64) {
        if duration <= 0.0 {
            return (*x, 0.0);
        }
        match self {
            BaseModel::SingleSite { .. } => {
                let w = weight.map_or(0.0, |w| w.eval(x) * duration);
                (*x, w)
            }
            BaseModel::FiniteChain { rates, states, .. } => {
                let n = *states;
                let mut state = match x {
                    Point::Index(i) => *i,
                    _ => panic!("chain motion needs an index point"),
                };
                let mut remaining = duration;
                let mut integral = 0.0;
                loop {
                    let rate = -rates[state * n + state];
                    let hold = stream.exponential(rate);
                    let seg = hold.min(remaining);
                    if let Some(w) = weight {
                        integral += w.eval(&Point::Index(state)) * seg;
                    }
                    if hold >= remaining {
                        return (Point::Index(state), integral);
                    }
                    remaining -= hold;
                    // embedded jump
                    let u = stream.uniform() * rate;
                    let mut acc = 0.0;
                    let mut next = state;
                    for j in 0..n {
                        if j == state {
                            continue;
                        }
                        acc += rates[state * n + j];
                        if u < acc {
                            next = j;
                            break;
                        }
                    }
                    if next == state {
                        // numerical residue: pick the last positive rate
                        for j in (0..n).rev() {
                            if j != state && rates[state * n + j] > 0.0 {
                                next = j;
                                break;
                            }
                        }
                    }
                    state = next;
                }
            }
            BaseModel::BrownianTorus {
                diffusion, length, ..
            } => {
                let mut pos = match x {
                    Point::Coord(c) => *c,
                    _ => panic!("torus motion needs a coordinate point"),
                };
                let mut remaining = duration;
                let mut integral = 0.0;
                let mut w_here = weight.map_or(0.0, |w| w.eval(&Point::Coord(pos)));
                while remaining > 0.0 {
                    let h = path_dt.min(remaining);
                    let step = (2.0 * diffusion * h).sqrt() * stream.normal();
                    pos = wrap(pos + step, *length);
                    if let Some(w) = weight {
                        let w_next = w.eval(&Point::Coord(pos));
                        integral += 0.5 * (w_here + w_next) * h;
                        w_here = w_next;
                    }
                    remaining -= h;
                }
                (Point::Coord(pos), integral)
            }
        }
    }
}

fn check_killing(killing: &ScalarField) -> Result<()> {
    if killing.is_nonnegative() {
        Ok(())
    } else {
        Err(CoreError::Invalid(String::from(
            "killing rate must be nonnegative",
        )))
    }
}

/// Row-major `L - diag(c)` (or plain `L`).
fn generator(rates: &[f64], n: usize, killing: Option<&[f64]>) -> Vec<f64> {
    let mut a = rates.to_vec();
    if let Some(c) = killing {
        for i in 0..n {
            a[i * n + i] -= c[i];
        }
    }
    a
}

/// `exp(t A) f` by uniformization: `A = -Lambda (I - M)` with `M`
/// substochastic, so the exponential is a Poisson mixture of powers of `M`.
/// Truncation error is controlled to `EXPM_TOL` per call; long horizons are
/// split into substeps.
fn expm_action(a: &[f64], n: usize, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    let lambda = (0..n).fold(0.0f64, |m, i| m.max(-a[i * n + i]));
    if lambda * t == 0.0 {
        return Ok(f.to_vec());
    }
    let substeps = ((lambda * t) / EXPM_SEGMENT).ceil().max(1.0) as usize;
    if substeps > MAX_SUBSTEPS {
        return Err(CoreError::StepSize {
            needed: substeps,
            max: MAX_SUBSTEPS,
        });
    }
    let tau = t / substeps as f64;
    // M = I + A / Lambda
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = a[i * n + j] / lambda + if i == j { 1.0 } else { 0.0 };
        }
    }
    let tol = EXPM_TOL / substeps as f64;
    let mean = lambda * tau;
    let mut v = f.to_vec();
    for _ in 0..substeps {
        let mut term = v.clone();
        let mut weight = (-mean).exp();
        let mut out: Vec<f64> = term.iter().map(|&x| weight * x).collect();
        let mut covered = weight;
        let mut k = 0usize;
        while covered < 1.0 - tol {
            k += 1;
            term = matvec(&m, n, &term);
            weight *= mean / k as f64;
            for (o, &x) in out.iter_mut().zip(term.iter()) {
                *o += weight * x;
            }
            covered += weight;
            if k > 100_000 {
                return Err(CoreError::StepSize {
                    needed: k,
                    max: 100_000,
                });
            }
        }
        v = out;
    }
    Ok(v)
}

fn matvec(m: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let row = &m[i * n..(i + 1) * n];
            row.iter().zip(x.iter()).map(|(&a, &b)| a * b).sum()
        })
        .collect()
}

/// One mesh step of a (killed) semigroup, in a form the Volterra solvers can
/// apply thousands of times cheaply.
#[derive(Debug, Clone)]
pub enum Propagator {
    Scalar {
        factor: f64,
    },
    Dense {
        n: usize,
        matrix: Vec<f64>,
    },
    Cyclic(CrankNicolson),
    /// A step multiplied by a constant factor, absorbing an extra constant
    /// killing rate such as `exp(-beta1 dt)`.
    Scaled {
        inner: alloc::boxed::Box<Propagator>,
        factor: f64,
    },
}

impl Propagator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Propagator::Scalar { factor } => v.iter().map(|&x| factor * x).collect(),
            Propagator::Dense { n, matrix } => matvec(matrix, *n, v),
            Propagator::Cyclic(cn) => cn.apply(v),
            Propagator::Scaled { inner, factor } => {
                let mut out = inner.apply(v);
                for x in &mut out {
                    *x *= factor;
                }
                out
            }
        }
    }

    pub fn scaled(self, factor: f64) -> Propagator {
        match self {
            Propagator::Scalar { factor: f0 } => Propagator::Scalar {
                factor: f0 * factor,
            },
            other => Propagator::Scaled {
                inner: alloc::boxed::Box::new(other),
                factor,
            },
        }
    }
}

/// Crank–Nicolson step for `d/dt u = D u'' - c u` on the periodic grid.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    n: usize,
    /// Row coefficients of `B = I + (dt/2) G` (sub, diag, sup per node).
    b_sub: Vec<f64>,
    b_diag: Vec<f64>,
    b_sup: Vec<f64>,
    /// Row coefficients of `A = I - (dt/2) G`.
    a_sub: Vec<f64>,
    a_diag: Vec<f64>,
    a_sup: Vec<f64>,
    /// Periodic corner entries of `A` and `B` (constant: A[0,n-1] = A[n-1,0]).
    a_corner: f64,
    b_corner: f64,
}

impl CrankNicolson {
    fn new(diffusion: f64, length: f64, grid: usize, dt: f64, killing: Option<&[f64]>) -> Self {
        let n = grid;
        let dx = length / n as f64;
        let r = diffusion / (dx * dx);
        let half = dt / 2.0;
        let mut b_sub = vec![half * r; n];
        let mut b_sup = vec![half * r; n];
        let mut a_sub = vec![-half * r; n];
        let mut a_sup = vec![-half * r; n];
        let mut b_diag = vec![0.0; n];
        let mut a_diag = vec![0.0; n];
        for i in 0..n {
            let c = killing.map_or(0.0, |c| c[i]);
            let g_ii = -2.0 * r - c;
            b_diag[i] = 1.0 + half * g_ii;
            a_diag[i] = 1.0 - half * g_ii;
        }
        // corner coefficients couple node 0 and node n-1
        let a_corner = -half * r;
        let b_corner = half * r;
        b_sub[0] = 0.0;
        b_sup[n - 1] = 0.0;
        a_sub[0] = 0.0;
        a_sup[n - 1] = 0.0;
        CrankNicolson {
            n,
            b_sub,
            b_diag,
            b_sup,
            a_sub,
            a_diag,
            a_sup,
            a_corner,
            b_corner,
        }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        // rhs = B v with periodic corners
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let left = if i == 0 { v[n - 1] } else { v[i - 1] };
            let right = if i == n - 1 { v[0] } else { v[i + 1] };
            let sub = if i == 0 { self.b_corner } else { self.b_sub[i] };
            let sup = if i == n - 1 {
                self.b_corner
            } else {
                self.b_sup[i]
            };
            rhs[i] = sub * left + self.b_diag[i] * v[i] + sup * right;
        }
        self.solve_cyclic(&rhs)
    }

    /// Solve `A x = r` where `A` is tridiagonal with periodic corners, by
    /// the Sherman–Morrison rank-one correction over the Thomas algorithm.
    fn solve_cyclic(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n;
        let alpha = self.a_corner; // A[0, n-1]
        let beta = self.a_corner; // A[n-1, 0]
        let gamma = -self.a_diag[0];
        let mut diag = self.a_diag.clone();
        diag[0] -= gamma;
        diag[n - 1] -= alpha * beta / gamma;
        let y = thomas(&self.a_sub, &diag, &self.a_sup, r);
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = beta;
        let z = thomas(&self.a_sub, &diag, &self.a_sup, &u);
        let fact = (y[0] + alpha * y[n - 1] / gamma) / (1.0 + z[0] + alpha * z[n - 1] / gamma);
        y.iter()
            .zip(z.iter())
            .map(|(&yi, &zi)| yi - fact * zi)
            .collect()
    }
}

/// Thomas algorithm for a strictly tridiagonal system.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = sup[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * cp[i - 1];
        cp[i] = sup[i] / m;
        dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(c: Vec<f64>) -> BaseModel {
        let killing = ScalarField::from_values(Domain::Finite { states: 2 }, c).unwrap();
        BaseModel::finite_chain(vec![vec![-1.0, 1.0], vec![1.0, -1.0]], killing).unwrap()
    }

    /// Classical RK4 on a fixed mesh; the independent oracle for killed
    /// semigroup values.
    fn rk4(mut y: Vec<f64>, deriv: impl Fn(&[f64]) -> Vec<f64>, t: f64, steps: usize) -> Vec<f64> {
        let h = t / steps as f64;
        for _ in 0..steps {
            let k1 = deriv(&y);
            let y2: Vec<f64> = y.iter().zip(&k1).map(|(&a, &b)| a + 0.5 * h * b).collect();
            let k2 = deriv(&y2);
            let y3: Vec<f64> = y.iter().zip(&k2).map(|(&a, &b)| a + 0.5 * h * b).collect();
            let k3 = deriv(&y3);
            let y4: Vec<f64> = y.iter().zip(&k3).map(|(&a, &b)| a + h * b).collect();
            let k4 = deriv(&y4);
            for i in 0..y.len() {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    #[test]
    fn identity_at_time_zero() {
        let m = two_state(vec![0.3, 0.7]);
        let f = ScalarField::from_values(m.domain(), vec![0.2, 0.9]).unwrap();
        assert_eq!(m.apply_semigroup(0.0, &f).unwrap(), f);
        assert_eq!(m.apply_killed_semigroup(0.0, &f).unwrap(), f);
    }

    #[test]
    fn conservative_chain_fixes_constants() {
        let m = two_state(vec![0.0, 0.0]);
        let one = ScalarField::constant(m.domain(), 1.0);
        let out = m.apply_semigroup(1.7, &one).unwrap();
        for &v in out.values() {
            assert!((v - 1.0).abs() < 1e-11, "{v}");
        }
    }

    #[test]
    fn two_state_closed_form() {
        let m = two_state(vec![0.0, 0.0]);
        let f = ScalarField::from_values(m.domain(), vec![1.0, 0.0]).unwrap();
        let out = m.apply_semigroup(1.0, &f).unwrap();
        let e2 = (-2.0f64).exp();
        assert!((out.values()[0] - (1.0 + e2) / 2.0).abs() < 1e-10);
        assert!((out.values()[1] - (1.0 - e2) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn single_site_pure_killing() {
        let m = BaseModel::single_site(1.0).unwrap();
        let one = ScalarField::constant(Domain::Single, 1.0);
        for &t in &[0.1, 0.5, 2.0] {
            let out = m.apply_killed_semigroup(t, &one).unwrap();
            assert!((out.values()[0] - (-t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_killing_means_plain_semigroup() {
        let m = two_state(vec![0.0, 0.0]);
        let f = ScalarField::from_values(m.domain(), vec![0.4, 0.6]).unwrap();
        let a = m.apply_semigroup(0.8, &f).unwrap();
        let b = m.apply_killed_semigroup(0.8, &f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn killed_chain_matches_rk4_oracle() {
        let m = two_state(vec![1.0, 0.0]);
        let f = ScalarField::constant(m.domain(), 1.0);
        let out = m.apply_killed_semigroup(1.0, &f).unwrap();
        // u' = (L - diag(c)) u
        let oracle = rk4(
            vec![1.0, 1.0],
            |u| vec![-u[0] + u[1] - 1.0 * u[0], u[0] - u[1]],
            1.0,
            20_000,
        );
        assert!((out.values()[0] - oracle[0]).abs() < 1e-8);
        assert!((out.values()[1] - oracle[1]).abs() < 1e-8);
    }

    #[test]
    fn semigroup_composition_law() {
        let m = two_state(vec![0.5, 1.5]);
        let f = ScalarField::from_values(m.domain(), vec![0.9, 0.1]).unwrap();
        let once = m.apply_killed_semigroup(1.3, &f).unwrap();
        let twice = m
            .apply_killed_semigroup(0.8, &m.apply_killed_semigroup(0.5, &f).unwrap())
            .unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn domination_of_killed_by_plain() {
        let m = two_state(vec![0.7, 0.2]);
        let f = ScalarField::from_values(m.domain(), vec![0.3, 0.8]).unwrap();
        let plain = m.apply_semigroup(1.1, &f).unwrap();
        let killed = m.apply_killed_semigroup(1.1, &f).unwrap();
        for (k, p) in killed.values().iter().zip(plain.values()) {
            assert!(0.0 <= *k && k <= p && *p <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn step_propagator_composes_to_semigroup() {
        let m = two_state(vec![0.4, 1.0]);
        let f = ScalarField::from_values(m.domain(), vec![1.0, 0.25]).unwrap();
        let p = m.step_propagator(0.01, true).unwrap();
        let mut v = f.values().to_vec();
        for _ in 0..100 {
            v = p.apply(&v);
        }
        let direct = m.apply_killed_semigroup(1.0, &f).unwrap();
        for (a, b) in v.iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn torus_heat_mode_decay() {
        let killing = ScalarField::constant(
            Domain::Torus {
                length: 1.0,
                grid: 64,
            },
            0.0,
        );
        let m = BaseModel::brownian_torus(0.05, 1.0, 64, killing).unwrap();
        let dom = m.domain();
        let two_pi = 2.0 * core::f64::consts::PI;
        let values: Vec<f64> = (0..64).map(|i| (two_pi * i as f64 / 64.0).sin()).collect();
        let f = ScalarField::from_values(dom, values).unwrap();
        let t = 0.5;
        let out = m.apply_semigroup(t, &f).unwrap();
        let decay = (-0.05 * two_pi * two_pi * t).exp();
        for (i, &v) in out.values().iter().enumerate() {
            let exact = decay * (two_pi * i as f64 / 64.0).sin();
            assert!((v - exact).abs() < 1e-3, "node {i}: {v} vs {exact}");
        }
    }

    #[test]
    fn torus_state_dependent_killing_matches_uniformization_oracle() {
        // independent route: the same grid generator D*Lap - diag(c) as a
        // dense matrix, exponentiated by uniformization
        let n = 32;
        let length = 1.0;
        let d = 0.08;
        let c: Vec<f64> = (0..n)
            .map(|i| 1.0 + (2.0 * core::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let dom = Domain::Torus { length, grid: n };
        let killing = ScalarField::from_values(dom.clone(), c.clone()).unwrap();
        let m = BaseModel::brownian_torus(d, length, n, killing).unwrap();

        let dx = length / n as f64;
        let r = d / (dx * dx);
        let mut gen = vec![0.0; n * n];
        for i in 0..n {
            gen[i * n + i] = -2.0 * r - c[i];
            gen[i * n + (i + 1) % n] = r;
            gen[i * n + (i + n - 1) % n] = r;
        }
        let f: Vec<f64> = (0..n)
            .map(|i| 0.5 + 0.5 * (2.0 * core::f64::consts::PI * i as f64 / n as f64).sin())
            .collect();
        let t = 0.4;
        let oracle = expm_action(&gen, n, t, &f).unwrap();

        // Crank-Nicolson at a small step; only time discretization differs
        let cn = CrankNicolson::new(d, length, n, 1e-4, Some(&c));
        let mut v = f.clone();
        for _ in 0..4000 {
            v = cn.apply(&v);
        }
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }

        // and the public killed application agrees with the oracle at its
        // own (coarser) substepping tolerance
        let field = ScalarField::from_values(dom, f).unwrap();
        let out = m.apply_killed_semigroup(t, &field).unwrap();
        for (a, b) in out.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn torus_killed_matches_constant_shortcut() {
        let dom = Domain::Torus {
            length: 1.0,
            grid: 16,
        };
        let m = BaseModel::brownian_torus(0.1, 1.0, 16, ScalarField::constant(dom.clone(), 2.0))
            .unwrap();
        let f = ScalarField::constant(dom, 1.0);
        let out = m.apply_killed_semigroup(0.3, &f).unwrap();
        for &v in out.values() {
            assert!((v - (-0.6f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn sample_path_reporting_grid() {
        let m = BaseModel::single_site(1.0).unwrap();
        let mut s = SeededStream::new(1);
        let path = m.sample_path(&Point::Index(0), 0.1, 25, &mut s);
        assert_eq!(path.len(), 26);
        assert!(path.iter().all(|&p| p == Point::Index(0)));

        let chain = two_state(vec![0.0, 0.0]);
        let path = chain.sample_path(&Point::Index(1), 0.5, 10, &mut s);
        assert_eq!(path.len(), 11);
        assert_eq!(path[0], Point::Index(1));
    }

    #[test]
    fn chain_path_occupation_matches_stationary_law() {
        let m = two_state(vec![0.0, 0.0]);
        let mut stream = SeededStream::new(99);
        let mut occupied = 0.0;
        let total = 40_000.0;
        let mut x = Point::Index(0);
        for _ in 0..total as usize {
            x = m.advance(&x, 0.25, 0.25, &mut stream);
            if x == Point::Index(1) {
                occupied += 1.0;
            }
        }
        let frac = occupied / total;
        // symmetric chain: stationary mass 1/2; se of a (correlated) 0/1
        // average at this sample size is well under 0.01
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn brownian_displacement_variance() {
        let dom = Domain::Torus {
            length: 100.0,
            grid: 10,
        };
        let d = 0.7;
        let m = BaseModel::brownian_torus(d, 100.0, 10, ScalarField::constant(dom, 0.0)).unwrap();
        let stream = SeededStream::new(4);
        let t = 1.0;
        let n = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..n {
            let mut s = stream.child(r);
            // torus is wide enough that paths never wrap at this horizon
            let p = m.advance(&Point::Coord(50.0), t, 0.01, &mut s);
            let dx = match p {
                Point::Coord(c) => c - 50.0,
                _ => unreachable!(),
            };
            sum += dx;
            sumsq += dx * dx;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // var of sample variance of a normal: 2 sigma^4 / n
        let se = (2.0 * (2.0 * d * t) * (2.0 * d * t) / n as f64).sqrt();
        assert!((var - 2.0 * d * t).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn path_weight_consistent_with_killed_semigroup() {
        let m = two_state(vec![1.0, 0.0]);
        let f = ScalarField::from_values(m.domain(), vec![0.25, 1.0]).unwrap();
        let c = m.killing().clone();
        let t = 1.0;
        let analytic = m.apply_killed_semigroup(t, &f).unwrap().values()[0];
        let root = SeededStream::new(2718);
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..n {
            let mut s = root.child(r);
            let (x, integral) = m.advance_with_integral(&Point::Index(0), t, t, &c, &mut s);
            let v = (-integral).exp() * f.eval(&x);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - analytic).abs() < 3.0 * se,
            "mean {mean} analytic {analytic} se {se}"
        );
    }

    #[test]
    fn rejects_bad_rate_matrices() {
        let killing = ScalarField::constant(Domain::Finite { states: 2 }, 0.0);
        assert!(
            BaseModel::finite_chain(vec![vec![-1.0, 0.5], vec![1.0, -1.0]], killing.clone())
                .is_err()
        );
        assert!(BaseModel::finite_chain(vec![vec![1.0, -1.0], vec![-1.0, 1.0]], killing).is_err());
    }
}

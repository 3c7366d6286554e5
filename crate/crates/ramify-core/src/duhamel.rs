//! Trapezoidal Duhamel convolution on a uniform mesh.
//!
//! Every solver here iterates maps of the form
//!
//! ```text
//! next[i] = base[i] + trapezoid over j<=i of  P^(i-j) g(prev[j])
//! ```
//!
//! where `P` is the one-step propagator of the linear part. The convolution
//! is evaluated by the running recurrence
//!
//! ```text
//! S_i = P (S_{i-1} + dt/2 g_{i-1}) + dt/2 g_i
//! ```
//!
//! which reproduces the trapezoid sum with the propagator powers exactly
//! (in the discretization's own arithmetic) at O(n) propagator applications
//! per sweep instead of O(n^2).

use alloc::vec;
use alloc::vec::Vec;

use crate::base_process::Propagator;

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
}

pub(crate) fn table_sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| sup_diff(x, y))
        .fold(0.0, f64::max)
}

/// `[f, P f, P^2 f, ..., P^steps f]`.
pub(crate) fn power_table(step: &Propagator, f: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(f.to_vec());
    for i in 0..steps {
        let next = step.apply(&out[i]);
        out.push(next);
    }
    out
}

/// Running trapezoid prefix `R_i = trapezoid over j<=i of P^j w`, given the
/// power table of `w`.
pub(crate) fn prefix_trapezoid(powers: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let width = powers[0].len();
    let mut out = Vec::with_capacity(powers.len());
    out.push(vec![0.0; width]);
    for i in 1..powers.len() {
        let mut r = out[i - 1].clone();
        axpy(&mut r, dt / 2.0, &powers[i - 1]);
        axpy(&mut r, dt / 2.0, &powers[i]);
        out.push(r);
    }
    out
}

/// One Picard sweep of the Volterra map.
pub(crate) fn sweep(
    step: &Propagator,
    base: &[Vec<f64>],
    dt: f64,
    prev: &[Vec<f64>],
    integrand: impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let n = base.len();
    let width = base[0].len();
    let g: Vec<Vec<f64>> = prev.iter().map(|h| integrand(h)).collect();
    let mut out = Vec::with_capacity(n);
    out.push(base[0].clone());
    let mut s = vec![0.0; width];
    for i in 1..n {
        axpy(&mut s, dt / 2.0, &g[i - 1]);
        s = step.apply(&s);
        axpy(&mut s, dt / 2.0, &g[i]);
        let mut row = base[i].clone();
        for (r, &si) in row.iter_mut().zip(s.iter()) {
            *r += si;
        }
        out.push(row);
    }
    out
}

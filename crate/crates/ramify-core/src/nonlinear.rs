//! Picard solver for the nonlinear branching evolution equation.
//!
//! The equation solved, on a uniform mesh by trapezoidal Duhamel
//! quadrature, is
//!
//! ```text
//! h_t = T_t^c(phi) + int_0^t T_{t-u}^c( c * B(h_u^) ) du
//! ```
//!
//! with `B(h^)` the offspring law acting on the multiplicative lift of
//! `h_u`. Its fixed point is the nonlinear semigroup `H_t(phi)`; the
//! cumulant is `V_t(f) = -ln H_t(exp(-f))`.
//!
//! Two Picard starts are available. The plain start `T_t^c(phi)` gives the
//! monotone increasing iterate sequence with the factorial gap bound. The
//! conserving start adds the first Duhamel correction of the constant
//! function, which keeps `H_t(1) = 1` exact (to quadrature) at *every*
//! iterate when the law is Markovian, eliminating mass drift from early
//! stopping. `solve_h` picks the conserving start for Markovian laws.

use alloc::vec::Vec;

use crate::base_process::{BaseModel, Propagator};
use crate::config_space::ScalarField;
use crate::duhamel;
use crate::error::{CoreError, Result};
use crate::mechanism::OffspringLaw;
use crate::mesh::{SemigroupTable, SolveDiagnostics, SolverMesh, TableKind};
#[allow(unused_imports)] // inherent f64 methods shadow these under cfg(test)
use crate::num::FloatExt;

/// Guard for the logarithm in the cumulant; never binds when the law is
/// Markovian (where `H_t(exp(-f)) >= exp(-sup f - t sup c)`).
const LOG_FLOOR: f64 = 1e-300;

/// Picard initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardScheme {
    /// Conserving start for Markovian laws, plain otherwise.
    Auto,
    /// Start from the killed semigroup alone; iterates increase pointwise.
    Plain,
    /// Start including the first correction of the constant function;
    /// every iterate conserves mass when the law is Markovian.
    Conserving,
}

fn resolve_scheme(scheme: PicardScheme, law: &OffspringLaw) -> PicardScheme {
    match scheme {
        PicardScheme::Auto => {
            if law.is_markovian() {
                PicardScheme::Conserving
            } else {
                PicardScheme::Plain
            }
        }
        s => s,
    }
}

fn check_inputs(model: &BaseModel, law: &OffspringLaw, phi: &ScalarField) -> Result<()> {
    model.domain().check_matches(law.domain(), "solver law")?;
    model
        .domain()
        .check_matches(phi.domain(), "solver test function")?;
    phi.check_unit_range()
}

/// The integrand `c * B(h^)`, with `h` clamped into the unit range so float
/// dust from previous sweeps cannot trip the range check.
fn branching_integrand(
    law: &OffspringLaw,
    killing: &ScalarField,
    template: &ScalarField,
    values: &[f64],
) -> Vec<f64> {
    let h = template.replace_values(values.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    let bh = law
        .apply_to_multiplicative(&h)
        .expect("clamped field is in the unit range");
    bh.values()
        .iter()
        .zip(killing.values())
        .map(|(&b, &c)| c * b)
        .collect()
}

/// Base table of the Picard map for the chosen scheme: the killed transport
/// of `phi`, plus (conserving) the first correction with the integrand
/// frozen at `phi`.
fn base_table(
    step: &Propagator,
    law: &OffspringLaw,
    killing: &ScalarField,
    phi: &ScalarField,
    mesh: &SolverMesh,
    scheme: PicardScheme,
) -> Vec<Vec<f64>> {
    let mut base = duhamel::power_table(step, phi.values(), mesh.steps());
    if scheme == PicardScheme::Conserving {
        let w = branching_integrand(law, killing, phi, phi.values());
        let w_powers = duhamel::power_table(step, &w, mesh.steps());
        let prefix = duhamel::prefix_trapezoid(&w_powers, mesh.dt);
        for (b, r) in base.iter_mut().zip(prefix.iter()) {
            duhamel::axpy(b, 1.0, r);
        }
    }
    base
}

fn to_table(phi: &ScalarField, mesh: &SolverMesh, rows: Vec<Vec<f64>>) -> SemigroupTable {
    let fields = rows.into_iter().map(|v| phi.replace_values(v)).collect();
    SemigroupTable::new(TableKind::HOfPhi, mesh.times(), fields)
}

/// The scheme's starting iterate as a table (iterate zero).
pub fn initial_table(
    model: &BaseModel,
    law: &OffspringLaw,
    phi: &ScalarField,
    mesh: &SolverMesh,
    scheme: PicardScheme,
) -> Result<SemigroupTable> {
    check_inputs(model, law, phi)?;
    mesh.validate()?;
    let scheme = resolve_scheme(scheme, law);
    let step = model.step_propagator(mesh.dt, true)?;
    let rows = base_table(&step, law, model.killing(), phi, mesh, scheme);
    Ok(to_table(phi, mesh, rows))
}

/// One Picard sweep: maps the previous iterate table to the next. The same
/// update serves both schemes; they differ only in the starting iterate.
pub fn picard_step(
    model: &BaseModel,
    law: &OffspringLaw,
    prev: &SemigroupTable,
    phi: &ScalarField,
) -> Result<SemigroupTable> {
    check_inputs(model, law, phi)?;
    if prev.kind != TableKind::HOfPhi {
        return Err(CoreError::Invalid(alloc::string::String::from(
            "picard_step expects an H-table",
        )));
    }
    if prev.len() < 2 {
        return Err(CoreError::Invalid(alloc::string::String::from(
            "picard_step needs at least two mesh points",
        )));
    }
    let dt = prev.times[1] - prev.times[0];
    let t_max = *prev.times.last().expect("nonempty");
    let mesh = SolverMesh::new(dt, t_max, 1.0, 1)?;
    let step = model.step_propagator(dt, true)?;
    let base = duhamel::power_table(&step, phi.values(), mesh.steps());
    let prev_rows: Vec<Vec<f64>> = prev.fields.iter().map(|f| f.values().to_vec()).collect();
    let killing = model.killing();
    let rows = duhamel::sweep(&step, &base, dt, &prev_rows, |h| {
        branching_integrand(law, killing, phi, h)
    });
    Ok(to_table(phi, &mesh, rows))
}

/// Solve for `t -> H_t(phi)` on the mesh with the automatic scheme choice.
pub fn solve_h(
    model: &BaseModel,
    law: &OffspringLaw,
    phi: &ScalarField,
    mesh: &SolverMesh,
) -> Result<(SemigroupTable, SolveDiagnostics)> {
    solve_h_with_scheme(model, law, phi, mesh, PicardScheme::Auto)
}

/// Solve for `t -> H_t(phi)` with an explicit Picard scheme.
pub fn solve_h_with_scheme(
    model: &BaseModel,
    law: &OffspringLaw,
    phi: &ScalarField,
    mesh: &SolverMesh,
    scheme: PicardScheme,
) -> Result<(SemigroupTable, SolveDiagnostics)> {
    check_inputs(model, law, phi)?;
    mesh.validate()?;
    let scheme = resolve_scheme(scheme, law);
    let step = model.step_propagator(mesh.dt, true)?;
    let killing = model.killing();
    // the Picard update always carries the plain inhomogeneity; the scheme
    // only selects the starting iterate
    let base = duhamel::power_table(&step, phi.values(), mesh.steps());
    let start = base_table(&step, law, killing, phi, mesh, scheme);
    let beta0 = law.constants(killing)?.beta0;
    let phi_sup = phi.sup_norm();

    let mut current = start;
    let mut diag = SolveDiagnostics::default();
    let mut bound = phi_sup; // (beta0 t)^0 / 0! * sup|phi|
    for n in 0..mesh.max_iters {
        let next = duhamel::sweep(&step, &base, mesh.dt, &current, |h| {
            branching_integrand(law, killing, phi, h)
        });
        let residual = duhamel::table_sup_diff(&next, &current);
        diag.residual_trace.push(residual);
        diag.bound_trace.push(bound);
        bound *= beta0 * mesh.t_max / (n + 1) as f64;
        current = next;
        diag.iterations = n + 1;
        diag.final_residual = residual;
        if residual < mesh.picard_tol {
            return Ok((to_table(phi, mesh, current), diag));
        }
    }
    Err(CoreError::NoConvergence {
        iterations: diag.iterations,
        residual: diag.final_residual,
    })
}

/// The cumulant `t -> V_t(f) = -ln H_t(exp(-f))` for bounded `f >= 0`.
pub fn cumulant_v(
    model: &BaseModel,
    law: &OffspringLaw,
    f: &ScalarField,
    mesh: &SolverMesh,
) -> Result<(SemigroupTable, SolveDiagnostics)> {
    if !f.is_nonnegative() {
        return Err(CoreError::Invalid(alloc::string::String::from(
            "cumulant input must be nonnegative",
        )));
    }
    let phi = f.exp_neg();
    let (h, diag) = solve_h(model, law, &phi, mesh)?;
    let fields = h
        .fields
        .into_iter()
        .map(|fld| fld.map(|v| -(v.clamp(LOG_FLOOR, 1.0)).ln()))
        .collect();
    Ok((SemigroupTable::new(TableKind::VOfF, h.times, fields), diag))
}

/// Finite-horizon drift `(H_probe(v) - v) / probe_dt`; near an invariant
/// function of the branching semigroup its sup-norm is O(probe_dt).
pub fn invariant_residual(
    model: &BaseModel,
    law: &OffspringLaw,
    v: &ScalarField,
    probe_dt: f64,
) -> Result<ScalarField> {
    if !(probe_dt > 0.0) {
        return Err(CoreError::Invalid(alloc::string::String::from(
            "probe_dt must be positive",
        )));
    }
    let mesh = SolverMesh::new(probe_dt / 8.0, probe_dt, 1e-12, 400)?;
    let (h, _) = solve_h(model, law, v, &mesh)?;
    let out = h
        .last()
        .values()
        .iter()
        .zip(v.values())
        .map(|(&hv, &vv)| (hv - vv) / probe_dt)
        .collect();
    Ok(v.replace_values(out))
}

//! The perturbed linear semigroup `Q_t` and the first-moment operator.
//!
//! With `beta1` the mean-offspring bound, `Q_t f` solves
//!
//! ```text
//! r_t = e^{-beta1 t} T_t^c(f) + int_0^t e^{-beta1 (t-u)} T_{t-u}^c( c q_o D r_u ) du
//! ```
//!
//! i.e. the branching equation linearized through the kernel
//! `f -> c/(c+beta1) * B(l_f)` under the extra constant killing `beta1`.
//! `exp(beta1 t) Q_t f` is then the expected value of `<mu_t, f>` for the
//! branching particle system started from one particle: the analytic side
//! of the first-moment identity.
//!
//! Two independent routes are provided: the Picard solve above, and, for
//! constant killing with a local law, the Feynman–Kac average
//! `exp(-(c+beta1) t) E^x[ exp(int_0^t c q_o(X_s) ds) f(X_t) ]` over sampled
//! base-process paths.

use alloc::string::String;
use alloc::vec::Vec;

use crate::base_process::BaseModel;
use crate::config_space::ScalarField;
use crate::duhamel;
use crate::engine::Estimate;
use crate::error::{CoreError, Result};
use crate::mechanism::{MechanismConstants, OffspringLaw};
use crate::mesh::{SemigroupTable, SolveDiagnostics, SolverMesh, TableKind};
#[allow(unused_imports)] // inherent f64 methods shadow these under cfg(test)
use crate::num::FloatExt;
use crate::stream::SeededStream;

/// The linearized-kernel setup: constants plus the regime flags that the
/// closed-form (Feynman–Kac) route and the stated first-moment regime need.
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub constants: MechanismConstants,
    /// Killing rate does not depend on the state.
    pub c_constant: bool,
    /// Offspring land on their parent (no displacement).
    pub local: bool,
    /// Count probabilities sum to one everywhere.
    pub markovian: bool,
}

impl PerturbationSpec {
    /// Validates that the kernel action is sub-Markovian on constants:
    /// `(c / (c + beta1)) q_o <= 1` pointwise.
    pub fn new(model: &BaseModel, law: &OffspringLaw) -> Result<Self> {
        model.domain().check_matches(law.domain(), "perturbation")?;
        let constants = law.constants(model.killing())?;
        let beta1 = constants.beta1;
        let qo = law.mean_offspring_field();
        let c = model.killing();
        let mut worst = 0.0f64;
        for (&ci, &qi) in c.values().iter().zip(qo.values()) {
            let denom = ci + beta1;
            let action = if denom > 0.0 { ci / denom * qi } else { 0.0 };
            worst = worst.max(action);
        }
        if worst > 1.0 + 1e-12 {
            return Err(CoreError::Invalid(alloc::format!(
                "kernel action on constants reaches {worst} > 1; \
                 killing is too strong for this offspring law"
            )));
        }
        let cv = c.values();
        Ok(PerturbationSpec {
            constants,
            c_constant: cv.iter().all(|&x| x == cv[0]),
            local: law.is_local(),
            markovian: law.is_markovian(),
        })
    }

    /// The Feynman–Kac route needs constant killing and a local law.
    pub fn feynman_kac_eligible(&self) -> bool {
        self.c_constant && self.local
    }

    /// Conditions of the stated first-moment regime that do not hold.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.markovian {
            w.push(String::from("offspring law is sub-Markovian"));
        }
        if !self.constants.beta1_gt_one {
            w.push(String::from("beta1 <= 1"));
        }
        if self.constants.beta1_gt_one && !self.constants.killing_below_critical {
            w.push(String::from("killing is not below beta1/(beta1-1)"));
        }
        if !self.c_constant {
            w.push(String::from("killing rate is state-dependent"));
        }
        if !self.local {
            w.push(String::from("offspring are displaced"));
        }
        w
    }
}

/// Solve for `t -> Q_t f` by Picard iteration on the mesh.
pub fn solve_q_picard(
    model: &BaseModel,
    law: &OffspringLaw,
    f: &ScalarField,
    mesh: &SolverMesh,
) -> Result<(SemigroupTable, SolveDiagnostics)> {
    let spec = PerturbationSpec::new(model, law)?;
    model.domain().check_matches(f.domain(), "Q input")?;
    mesh.validate()?;
    if !f.is_nonnegative() {
        return Err(CoreError::Invalid(String::from(
            "Q_t input must be nonnegative",
        )));
    }
    let beta1 = spec.constants.beta1;
    let step = model
        .step_propagator(mesh.dt, true)?
        .scaled((-beta1 * mesh.dt).exp());
    let base = duhamel::power_table(&step, f.values(), mesh.steps());
    let killing = model.killing().clone();
    let integrand = |r: &[f64]| -> Vec<f64> {
        let rf = f.replace_values(r.to_vec());
        let blr = law.apply_to_linear(&rf).expect("domains checked at entry");
        blr.values()
            .iter()
            .zip(killing.values())
            .map(|(&b, &c)| c * b)
            .collect()
    };

    let beta0 = spec.constants.beta0;
    let f_sup = f.sup_norm();
    let mut current = base.clone();
    let mut diag = SolveDiagnostics::default();
    let mut bound = f_sup;
    for n in 0..mesh.max_iters {
        let next = duhamel::sweep(&step, &base, mesh.dt, &current, integrand);
        let residual = duhamel::table_sup_diff(&next, &current);
        diag.residual_trace.push(residual);
        diag.bound_trace.push(bound);
        bound *= beta0 * mesh.t_max / (n + 1) as f64;
        current = next;
        diag.iterations = n + 1;
        diag.final_residual = residual;
        if residual < mesh.picard_tol {
            let fields = current.into_iter().map(|v| f.replace_values(v)).collect();
            return Ok((
                SemigroupTable::new(TableKind::QOfF, mesh.times(), fields),
                diag,
            ));
        }
    }
    Err(CoreError::NoConvergence {
        iterations: diag.iterations,
        residual: diag.final_residual,
    })
}

/// Monte Carlo evaluation of `Q_t f` per starting node by the Feynman–Kac
/// closed form (constant killing, local law).
pub fn solve_q_feynman_kac(
    model: &BaseModel,
    law: &OffspringLaw,
    f: &ScalarField,
    t: f64,
    replicas: usize,
    path_dt: f64,
    stream: &SeededStream,
) -> Result<Vec<Estimate>> {
    let spec = PerturbationSpec::new(model, law)?;
    model.domain().check_matches(f.domain(), "Q input")?;
    if !spec.c_constant {
        return Err(CoreError::FeynmanKacHypothesis(String::from(
            "killing rate must be constant",
        )));
    }
    if !spec.local {
        return Err(CoreError::FeynmanKacHypothesis(String::from(
            "offspring law must be local",
        )));
    }
    if replicas == 0 {
        return Err(CoreError::Invalid(String::from(
            "need at least one replica",
        )));
    }
    let beta1 = spec.constants.beta1;
    let c0 = model.killing().values()[0];
    let prefactor = (-(c0 + beta1) * t).exp();
    // weight along the path: c * q_o
    let weight = law.mean_offspring_field().map(|q| c0 * q);
    let domain = model.domain();
    let mut out = Vec::with_capacity(domain.node_count());
    for node in 0..domain.node_count() {
        let x0 = domain.point_at(node);
        let node_stream = stream.child(node as u64);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..replicas {
            let mut s = node_stream.child(r as u64);
            let (x, integral) = model.advance_with_integral(&x0, t, path_dt, &weight, &mut s);
            let v = prefactor * integral.exp() * f.eval(&x);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / replicas as f64;
        let var = (sumsq / replicas as f64 - mean * mean).max(0.0);
        let stderr = (var / replicas as f64).sqrt();
        out.push(Estimate {
            mean,
            stderr,
            replicas,
            capped: 0,
        });
    }
    Ok(out)
}

/// `exp(beta1 t) Q_t f`: the predicted expected value of `<mu_t, f>`
/// started from a single particle, evaluated at `t` on the mesh.
pub fn moment_operator(
    model: &BaseModel,
    law: &OffspringLaw,
    f: &ScalarField,
    t: f64,
    mesh: &SolverMesh,
) -> Result<ScalarField> {
    if t > mesh.t_max + 1e-12 {
        return Err(CoreError::Invalid(String::from(
            "moment horizon exceeds the mesh",
        )));
    }
    let steps = t / mesh.dt;
    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
        return Err(CoreError::Invalid(String::from(
            "moment horizon must sit on the mesh",
        )));
    }
    let beta1 = law.constants(model.killing())?.beta1;
    let (table, _) = solve_q_picard(model, law, f, mesh)?;
    let factor = (beta1 * t).exp();
    Ok(table.at_time(t).map(|v| factor * v))
}

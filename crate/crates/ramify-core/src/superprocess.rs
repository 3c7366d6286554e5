//! Continuous-state branching: cumulant equation, scaled particle
//! approximation, and discrete branching over measure-valued particles.
//!
//! A branching mechanism
//!
//! ```text
//! Phi(lambda) = -b lambda - a lambda^2 + sum_i n_i (1 - e^{-lambda s_i} - lambda s_i)
//! ```
//!
//! (jump measure atomized into finitely many `(size, rate)` pairs) drives
//! the cumulant equation `v_t = P_t f + int_0^t P_{t-u} Phi(v_u) du` over
//! the conservative spatial motion `P_t`. The measure-valued process itself
//! is approximated by unit-weight particles of mass `1/n_scale`:
//!
//! * binary split at rate `a * n_scale` and death at rate `a * n_scale`
//!   (the quadratic term),
//! * death at rate `b` (the linear drift),
//! * for each jump atom, a birth of `round(s_i * n_scale)` particles at
//!   rate `n_i / n_scale` per particle (per unit mass, as the mechanism
//!   prescribes), balanced by extra death at rate `sum_i n_i s_i` so the
//!   compensated jump term leaves the mean mass decaying at exactly `b`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::base_process::BaseModel;
use crate::config_space::{Point, ScalarField};
use crate::duhamel;
use crate::engine::{estimate_from_outcomes, Estimate, Functional, ReplicaOutcome};
use crate::error::{CoreError, Result};
use crate::mechanism::OffspringLaw;
use crate::mesh::{SemigroupTable, SolveDiagnostics, SolverMesh, TableKind};
#[allow(unused_imports)] // inherent f64 methods shadow these under cfg(test)
use crate::num::FloatExt;
use crate::stream::SeededStream;

/// One atom of the jump measure: mass jumps of `size` at rate `rate` per
/// unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    pub size: f64,
    pub rate: f64,
}

/// State-independent branching mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismPhi {
    pub a: f64,
    pub b: f64,
    pub jumps: Vec<JumpAtom>,
}

impl MechanismPhi {
    pub fn new(a: f64, b: f64, jumps: Vec<JumpAtom>) -> Result<Self> {
        if a < 0.0 {
            return Err(CoreError::Invalid(String::from(
                "quadratic coefficient must be nonnegative",
            )));
        }
        if b < 0.0 {
            return Err(CoreError::Invalid(String::from(
                "linear coefficient must be nonnegative (shift it if needed)",
            )));
        }
        if jumps.iter().any(|j| j.size <= 0.0 || j.rate < 0.0) {
            return Err(CoreError::Invalid(String::from(
                "jump atoms need positive sizes and nonnegative rates",
            )));
        }
        let phi = MechanismPhi { a, b, jumps };
        // spot-check concavity and sign on a lambda grid
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        for w in grid.windows(3) {
            let (l, m, r) = (phi.value(w[0]), phi.value(w[1]), phi.value(w[2]));
            if m < (l + r) / 2.0 - 1e-9 {
                return Err(CoreError::Invalid(String::from(
                    "mechanism is not concave on the test grid",
                )));
            }
        }
        if grid.iter().any(|&l| phi.value(l) > 1e-12) {
            return Err(CoreError::Invalid(String::from(
                "mechanism must be nonpositive for b >= 0",
            )));
        }
        Ok(phi)
    }

    /// `Phi(lambda)`.
    pub fn value(&self, lambda: f64) -> f64 {
        let mut v = -self.b * lambda - self.a * lambda * lambda;
        for j in &self.jumps {
            v += j.rate * (1.0 - (-lambda * j.size).exp() - lambda * j.size);
        }
        v
    }

    /// Lipschitz bound of `Phi` on `[0, m]`.
    fn lipschitz_on(&self, m: f64) -> f64 {
        let jump_slope: f64 = self.jumps.iter().map(|j| j.rate * j.size).sum();
        self.b + 2.0 * self.a * m + jump_slope
    }
}

/// A finite positive measure as a weighted atom list.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureState {
    atoms: Vec<(Point, f64)>,
}

impl MeasureState {
    pub fn new(atoms: Vec<(Point, f64)>) -> Result<Self> {
        if atoms.iter().any(|&(_, w)| !(w > 0.0) || !w.is_finite()) {
            return Err(CoreError::Invalid(String::from(
                "measure atoms need positive finite weights",
            )));
        }
        Ok(MeasureState { atoms })
    }

    pub fn atoms(&self) -> &[(Point, f64)] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|&(_, w)| w).sum()
    }

    /// `<mu, f>`.
    pub fn linear(&self, f: &ScalarField) -> f64 {
        self.atoms.iter().map(|&(ref p, w)| w * f.eval(p)).sum()
    }
}

/// Solve the cumulant equation `v_t = P_t f + int_0^t P_{t-u} Phi(v_u) du`
/// for `t -> N_t f` on the mesh. The spatial motion is the model's plain
/// (conservative) semigroup; any killing field on the model is not part of
/// the spatial motion and is ignored here.
pub fn solve_cumulant_n(
    model: &BaseModel,
    phi: &MechanismPhi,
    f: &ScalarField,
    mesh: &SolverMesh,
) -> Result<(SemigroupTable, SolveDiagnostics)> {
    model.domain().check_matches(f.domain(), "cumulant input")?;
    mesh.validate()?;
    if !f.is_nonnegative() {
        return Err(CoreError::Invalid(String::from(
            "cumulant input must be nonnegative",
        )));
    }
    let step = model.step_propagator(mesh.dt, false)?;
    let base = duhamel::power_table(&step, f.values(), mesh.steps());
    let m = f.sup_norm();
    // Phi <= 0 keeps the true solution inside [0, sup f]; clamping each
    // sweep projects onto that invariant region so the quadratic term
    // cannot throw early iterates into runaway oscillation.
    let clamp = move |v: f64| v.clamp(0.0, m);
    let integrand = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| phi.value(clamp(x))).collect() };

    let lipschitz = phi.lipschitz_on(m);
    let mut current = base.clone();
    let mut diag = SolveDiagnostics::default();
    let mut bound = m;
    for n in 0..mesh.max_iters {
        let mut next = duhamel::sweep(&step, &base, mesh.dt, &current, integrand);
        for row in &mut next {
            for x in row.iter_mut() {
                *x = clamp(*x);
            }
        }
        let residual = duhamel::table_sup_diff(&next, &current);
        diag.residual_trace.push(residual);
        diag.bound_trace.push(bound);
        bound *= lipschitz * mesh.t_max / (n + 1) as f64;
        current = next;
        diag.iterations = n + 1;
        diag.final_residual = residual;
        if residual < mesh.picard_tol {
            let fields = current.into_iter().map(|v| f.replace_values(v)).collect();
            return Ok((
                SemigroupTable::new(TableKind::NOfF, mesh.times(), fields),
                diag,
            ));
        }
    }
    Err(CoreError::NoConvergence {
        iterations: diag.iterations,
        residual: diag.final_residual,
    })
}

/// Evolve the scaled particle approximation of the measure-valued process
/// for `duration`, starting from `mu0`, and return the empirical measure
/// (all weights `1/n_scale`).
#[allow(clippy::too_many_arguments)]
pub fn approx_superprocess_path(
    model: &BaseModel,
    phi: &MechanismPhi,
    mu0: &MeasureState,
    duration: f64,
    n_scale: usize,
    cap: usize,
    path_dt: f64,
    stream: &mut SeededStream,
) -> Result<MeasureState> {
    if n_scale == 0 {
        return Err(CoreError::Invalid(String::from("n_scale must be positive")));
    }
    for (p, _) in mu0.atoms() {
        if !model.domain().contains(p) {
            return Err(CoreError::Invalid(String::from(
                "measure atom outside the model domain",
            )));
        }
    }
    let n = n_scale as f64;
    // particles: (position, last motion sync time)
    let mut particles: Vec<(Point, f64)> = Vec::new();
    for &(p, w) in mu0.atoms() {
        let k = (w * n).round() as usize;
        for _ in 0..k {
            particles.push((p, 0.0));
        }
    }
    let birth = phi.a * n;
    let compensation: f64 = phi.jumps.iter().map(|j| j.rate * j.size).sum();
    let death = phi.a * n + phi.b + compensation;
    let jump_rates: Vec<f64> = phi.jumps.iter().map(|j| j.rate / n).collect();
    let jump_litters: Vec<usize> = phi
        .jumps
        .iter()
        .map(|j| (j.size * n).round() as usize)
        .collect();
    let per_particle = birth + death + jump_rates.iter().sum::<f64>();

    let mut now = 0.0;
    loop {
        let m = particles.len();
        if m > cap {
            return Err(CoreError::CapExceeded { cap });
        }
        if m == 0 || per_particle == 0.0 {
            break;
        }
        let wait = stream.exponential(per_particle * m as f64);
        if now + wait >= duration {
            break;
        }
        now += wait;
        let idx = ((stream.uniform() * m as f64) as usize).min(m - 1);
        // catch the chosen particle's motion up to the event time
        let (pos, last) = particles[idx];
        let pos = model.advance(&pos, now - last, path_dt, stream);
        particles[idx] = (pos, now);
        let u = stream.uniform() * per_particle;
        if u < birth {
            particles.push((pos, now));
        } else if u < birth + death {
            particles.swap_remove(idx);
        } else {
            let mut acc = birth + death;
            for (i, &jr) in jump_rates.iter().enumerate() {
                acc += jr;
                if u < acc {
                    for _ in 0..jump_litters[i] {
                        particles.push((pos, now));
                    }
                    break;
                }
            }
        }
    }
    if particles.len() > cap {
        return Err(CoreError::CapExceeded { cap });
    }
    // sync every survivor's motion to the horizon
    let w = 1.0 / n;
    let atoms = particles
        .into_iter()
        .map(|(pos, last)| {
            let p = model.advance(&pos, duration - last, path_dt, stream);
            (p, w)
        })
        .collect();
    MeasureState::new(atoms)
}

/// The margin `c + q_o - c q_o` of the composition's stated hypothesis
/// (positive margin required); `None` if the law is not constant.
pub fn composition_hypothesis_margin(c: f64, law: &OffspringLaw) -> Option<f64> {
    law.constant_counts().map(|q| {
        let qo: f64 = q.iter().enumerate().map(|(k, &p)| k as f64 * p).sum();
        c + qo - c * qo
    })
}

/// One replica of the discrete-branching-over-superprocess composition:
/// measure-valued particles move as superprocess paths, die at constant
/// rate `c`, and are replaced by litters of copies drawn from the constant
/// offspring law.
#[allow(clippy::too_many_arguments)]
pub fn run_composition_replica(
    model: &BaseModel,
    phi: &MechanismPhi,
    law: &OffspringLaw,
    c: f64,
    mu0: &[MeasureState],
    t: f64,
    n_scale: usize,
    cap: usize,
    path_dt: f64,
    f: &ScalarField,
    functional: Functional,
    master_stream: &SeededStream,
    index: u64,
) -> Result<ReplicaOutcome> {
    let q = law
        .constant_counts()
        .ok_or_else(|| CoreError::Invalid(String::from("composition needs a constant law")))?
        .to_vec();
    if !law.is_markovian() {
        return Err(CoreError::SubMarkovianSampling);
    }
    if !law.is_local() {
        return Err(CoreError::Invalid(String::from(
            "composition needs a local law (litters are copies)",
        )));
    }
    if c < 0.0 {
        return Err(CoreError::Invalid(String::from(
            "killing rate must be nonnegative",
        )));
    }
    let replica = master_stream.child(index);
    let mut work: Vec<(MeasureState, f64, SeededStream)> = mu0
        .iter()
        .enumerate()
        .map(|(i, st)| (st.clone(), 0.0, replica.child(i as u64)))
        .collect();
    let mut total = 0.0;
    let mut surviving_atoms = 0usize;
    let mut discrete_spawned = work.len();
    while let Some((state, born, mut stream)) = work.pop() {
        let kill_wait = stream.exponential(c);
        let horizon = (born + kill_wait).min(t);
        let evolved = match approx_superprocess_path(
            model,
            phi,
            &state,
            horizon - born,
            n_scale,
            cap,
            path_dt,
            &mut stream,
        ) {
            Ok(m) => m,
            Err(CoreError::CapExceeded { .. }) => return Ok(ReplicaOutcome::Capped),
            Err(e) => return Err(e),
        };
        if born + kill_wait >= t {
            total += evolved.linear(f);
            surviving_atoms += evolved.atoms().len();
        } else {
            let k = stream.categorical(&q);
            discrete_spawned += k;
            if discrete_spawned > cap {
                return Ok(ReplicaOutcome::Capped);
            }
            for j in 0..k {
                work.push((evolved.clone(), horizon, stream.child(j as u64)));
            }
        }
    }
    let value = match functional {
        Functional::Exponential => (-total).exp(),
        Functional::Linear => total,
    };
    Ok(ReplicaOutcome::Value {
        value,
        // count of unit-weight atoms across surviving measures
        terminal_size: surviving_atoms,
    })
}

/// Monte Carlo estimate of a functional of the composed system at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn compose_discrete_over_measure(
    model: &BaseModel,
    phi: &MechanismPhi,
    law: &OffspringLaw,
    c: f64,
    mu0: &[MeasureState],
    t: f64,
    n_scale: usize,
    replicas: usize,
    cap: usize,
    path_dt: f64,
    f: &ScalarField,
    functional: Functional,
    master_stream: &SeededStream,
) -> Result<Estimate> {
    if replicas == 0 {
        return Err(CoreError::Invalid(String::from(
            "need at least one replica",
        )));
    }
    let outcomes = (0..replicas)
        .map(|r| {
            run_composition_replica(
                model,
                phi,
                law,
                c,
                mu0,
                t,
                n_scale,
                cap,
                path_dt,
                f,
                functional,
                master_stream,
                r as u64,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    estimate_from_outcomes(&outcomes)
}

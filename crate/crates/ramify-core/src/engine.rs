//! Branching particle simulator on the configuration space.
//!
//! Each particle follows the base motion, carries an exponential killing
//! clock realized by thinning against the killing supremum (exact for
//! bounded rates), and is replaced at death by a litter drawn from the
//! offspring law. The zero configuration is a trap.
//!
//! Randomness is lineage-addressed: a particle's stream is derived from
//! `(replica stream, root index, child indices...)`, so forests are
//! reproducible bit-for-bit no matter how the work is scheduled. Replicas
//! aggregate in index order; the sequential driver here and any parallel
//! driver over [`run_replica`] produce identical estimates.

use alloc::string::String;
use alloc::vec::Vec;

use crate::base_process::BaseModel;
use crate::config_space::{Configuration, Point, ScalarField};
use crate::error::{CoreError, Result};
use crate::mechanism::OffspringLaw;
#[allow(unused_imports)] // inherent f64 methods shadow these under cfg(test)
use crate::num::FloatExt;
use crate::stream::SeededStream;

/// A particle of the branching system.
#[derive(Debug, Clone)]
pub struct Particle {
    pub position: Point,
    /// Genealogical address: root index followed by child indices.
    pub lineage: Vec<u32>,
    pub birth_time: f64,
}

/// Monte Carlo summary of a functional of the terminal configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over valid replicas divided by sqrt(count).
    pub stderr: f64,
    /// Number of valid (uncapped) replicas.
    pub replicas: usize,
    /// Replicas discarded because the live population passed the cap.
    pub capped: usize,
}

/// Which functional of the terminal configuration to average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// `exp(-<mu_t, f>)`.
    Exponential,
    /// `<mu_t, f>`.
    Linear,
}

/// Engine knobs: the live-population cap and the Euler substep used for
/// torus motion between killing proposals.
#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub cap: usize,
    pub path_dt: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            cap: 1_000_000,
            path_dt: 1e-3,
        }
    }
}

/// Outcome of one replica.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplicaOutcome {
    Value { value: f64, terminal_size: usize },
    Capped,
}

struct Task {
    particle: Particle,
    stream: SeededStream,
}

/// Interval bookkeeping for the exact live-population sweep.
struct Census {
    births: Vec<f64>,
    deaths: Vec<f64>,
}

impl Census {
    fn new() -> Self {
        Census {
            births: Vec::new(),
            deaths: Vec::new(),
        }
    }

    /// Maximum concurrent population, with deaths resolved before births at
    /// equal times (a branch replaces the parent by its litter).
    fn max_live(&mut self) -> usize {
        self.births
            .sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        self.deaths
            .sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        let mut live: isize = 0;
        let mut max: isize = 0;
        let mut bi = 0;
        let mut di = 0;
        while bi < self.births.len() {
            if di < self.deaths.len() && self.deaths[di] <= self.births[bi] {
                live -= 1;
                di += 1;
            } else {
                live += 1;
                max = max.max(live);
                bi += 1;
            }
        }
        max as usize
    }
}

/// Simulate the branching system started from `mu0` and return the
/// configuration alive at time `t`.
pub fn simulate_forest(
    model: &BaseModel,
    law: &OffspringLaw,
    mu0: &Configuration,
    t: f64,
    cfg: &EngineConfig,
    replica_stream: &SeededStream,
) -> Result<Configuration> {
    model.domain().check_matches(law.domain(), "engine law")?;
    if !law.is_markovian() {
        return Err(CoreError::SubMarkovianSampling);
    }
    if t < 0.0 {
        return Err(CoreError::Invalid(String::from(
            "horizon must be nonnegative",
        )));
    }
    if cfg.cap < mu0.size() {
        return Err(CoreError::Invalid(String::from(
            "population cap is below the initial configuration size",
        )));
    }
    for p in mu0.points() {
        if !model.domain().contains(p) {
            return Err(CoreError::Invalid(String::from(
                "initial point outside the model domain",
            )));
        }
    }
    // the zero measure is absorbing: nothing to move, nothing to branch
    if mu0.is_zero() {
        return Ok(Configuration::zero());
    }

    let cbar = model.killing_sup();
    let killing = model.killing();
    // anti-runaway guard; the honest cap check is the census sweep below
    let spawn_guard = cfg.cap.saturating_mul(8).saturating_add(1024);

    let mut work: Vec<Task> = mu0
        .points()
        .iter()
        .enumerate()
        .map(|(i, &position)| Task {
            particle: Particle {
                position,
                lineage: alloc::vec![i as u32],
                birth_time: 0.0,
            },
            stream: replica_stream.child(i as u64),
        })
        .collect();
    let mut census = Census::new();
    for task in &work {
        census.births.push(task.particle.birth_time);
    }
    let mut spawned = work.len();
    let mut survivors: Vec<Point> = Vec::new();

    while let Some(mut task) = work.pop() {
        let mut now = task.particle.birth_time;
        let mut pos = task.particle.position;
        loop {
            let wait = task.stream.exponential(cbar);
            if now + wait >= t || wait == f64::INFINITY {
                pos = model.advance(&pos, t - now, cfg.path_dt, &mut task.stream);
                survivors.push(pos);
                break;
            }
            pos = model.advance(&pos, wait, cfg.path_dt, &mut task.stream);
            now += wait;
            // thin the proposal against the local rate
            if task.stream.uniform() * cbar < killing.eval(&pos) {
                census.deaths.push(now);
                let litter = law.sample_offspring(&pos, &mut task.stream)?;
                for (j, &child_pos) in litter.points().iter().enumerate() {
                    let mut lineage = task.particle.lineage.clone();
                    lineage.push(j as u32);
                    census.births.push(now);
                    work.push(Task {
                        particle: Particle {
                            position: child_pos,
                            lineage,
                            birth_time: now,
                        },
                        stream: task.stream.child(j as u64),
                    });
                }
                spawned += litter.size();
                if spawned > spawn_guard {
                    return Err(CoreError::CapExceeded { cap: cfg.cap });
                }
                break;
            }
        }
    }

    if census.max_live() > cfg.cap {
        return Err(CoreError::CapExceeded { cap: cfg.cap });
    }
    Ok(Configuration::from_points(survivors))
}

/// Run replica `index`: simulate one forest and evaluate the functional.
#[allow(clippy::too_many_arguments)]
pub fn run_replica(
    model: &BaseModel,
    law: &OffspringLaw,
    mu0: &Configuration,
    t: f64,
    f: &ScalarField,
    functional: Functional,
    cfg: &EngineConfig,
    master_stream: &SeededStream,
    index: u64,
) -> Result<ReplicaOutcome> {
    let replica_stream = master_stream.child(index);
    match simulate_forest(model, law, mu0, t, cfg, &replica_stream) {
        Ok(config) => {
            let value = match functional {
                Functional::Exponential => config.exponential(f),
                Functional::Linear => config.linear(f),
            };
            Ok(ReplicaOutcome::Value {
                value,
                terminal_size: config.size(),
            })
        }
        Err(CoreError::CapExceeded { .. }) => Ok(ReplicaOutcome::Capped),
        Err(e) => Err(e),
    }
}

/// Aggregate outcomes in replica order. Errors with the flawed estimate if
/// more than one percent of replicas were capped.
pub fn estimate_from_outcomes(outcomes: &[ReplicaOutcome]) -> Result<Estimate> {
    let total = outcomes.len();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut n = 0usize;
    let mut capped = 0usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for o in outcomes {
        match o {
            ReplicaOutcome::Value { value, .. } => {
                sum += value;
                sumsq += value * value;
                lo = lo.min(*value);
                hi = hi.max(*value);
                n += 1;
            }
            ReplicaOutcome::Capped => capped += 1,
        }
    }
    if n == 0 {
        return Err(CoreError::InvalidEstimate {
            mean: f64::NAN,
            stderr: f64::NAN,
            replicas: 0,
            capped,
        });
    }
    // degenerate samples (e.g. no evolution at t = 0) are exact
    let (mean, stderr) = if lo == hi {
        (lo, 0.0)
    } else {
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sumsq - sum * sum / n as f64) / (n as f64 - 1.0)).max(0.0)
        } else {
            0.0
        };
        (mean, (var / n as f64).sqrt())
    };
    if capped * 100 > total {
        return Err(CoreError::InvalidEstimate {
            mean,
            stderr,
            replicas: n,
            capped,
        });
    }
    Ok(Estimate {
        mean,
        stderr,
        replicas: n,
        capped,
    })
}

/// Monte Carlo average of the functional over independent replicas.
#[allow(clippy::too_many_arguments)]
pub fn estimate_functional(
    model: &BaseModel,
    law: &OffspringLaw,
    mu0: &Configuration,
    t: f64,
    f: &ScalarField,
    functional: Functional,
    replicas: usize,
    cfg: &EngineConfig,
    master_stream: &SeededStream,
) -> Result<Estimate> {
    if replicas == 0 {
        return Err(CoreError::Invalid(String::from(
            "need at least one replica",
        )));
    }
    if functional == Functional::Exponential && !f.is_nonnegative() {
        return Err(CoreError::Invalid(String::from(
            "exponential functional needs a nonnegative test function",
        )));
    }
    let outcomes = (0..replicas)
        .map(|r| {
            run_replica(
                model,
                law,
                mu0,
                t,
                f,
                functional,
                cfg,
                master_stream,
                r as u64,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    estimate_from_outcomes(&outcomes)
}

/// Result of the convolution cross-check: estimates from a merged initial
/// configuration versus the product of independent runs.
#[derive(Debug, Clone)]
pub struct BranchingReport {
    pub combined: Estimate,
    pub from_mu: Estimate,
    pub from_nu: Estimate,
    /// z-score of `log combined - log(mu-estimate * nu-estimate)` with the
    /// delta-method standard error.
    pub z_score: f64,
}

/// Check the branching identity: the exponential functional started from
/// `mu + nu` factorizes over independent runs from `mu` and `nu`.
#[allow(clippy::too_many_arguments)]
pub fn verify_branching_property(
    model: &BaseModel,
    law: &OffspringLaw,
    mu: &Configuration,
    nu: &Configuration,
    t: f64,
    f: &ScalarField,
    replicas: usize,
    cfg: &EngineConfig,
    stream: &SeededStream,
) -> Result<BranchingReport> {
    let merged = mu.union(nu);
    let combined = estimate_functional(
        model,
        law,
        &merged,
        t,
        f,
        Functional::Exponential,
        replicas,
        cfg,
        &stream.child(0),
    )?;
    let from_mu = estimate_functional(
        model,
        law,
        mu,
        t,
        f,
        Functional::Exponential,
        replicas,
        cfg,
        &stream.child(1),
    )?;
    let from_nu = estimate_functional(
        model,
        law,
        nu,
        t,
        f,
        Functional::Exponential,
        replicas,
        cfg,
        &stream.child(2),
    )?;
    let numer = combined.mean.ln() - from_mu.mean.ln() - from_nu.mean.ln();
    let rel = |e: &Estimate| {
        if e.mean == 0.0 {
            0.0
        } else {
            (e.stderr / e.mean) * (e.stderr / e.mean)
        }
    };
    let denom = (rel(&combined) + rel(&from_mu) + rel(&from_nu)).sqrt();
    let z_score = if denom == 0.0 {
        if numer.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        numer / denom
    };
    Ok(BranchingReport {
        combined,
        from_mu,
        from_nu,
        z_score,
    })
}

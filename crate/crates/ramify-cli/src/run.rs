//! Experiment dispatch: build core objects from the spec, run the requested
//! solver or simulation, and export a deterministic result bundle.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use ramify_core::engine::{run_replica, EngineConfig, ReplicaOutcome};
use ramify_core::linear::{solve_q_picard, PerturbationSpec};
use ramify_core::nonlinear::{cumulant_v, solve_h};
use ramify_core::superprocess::{composition_hypothesis_margin, solve_cumulant_n};
use ramify_core::{Displacement, OffspringLaw, SeededStream};

use crate::config::ExperimentSpec;
use crate::export::{canonical_json, write_file, write_table, EstimateDto};
use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    SolveH,
    SolveQ,
    Cumulant,
    Simulate,
    Compose,
}

impl CommandKind {
    fn label(&self) -> &'static str {
        match self {
            CommandKind::SolveH => "solve-h",
            CommandKind::SolveQ => "solve-q",
            CommandKind::Cumulant => "cumulant",
            CommandKind::Simulate => "simulate",
            CommandKind::Compose => "compose",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<String>,
    pub workers: usize,
}

#[derive(Debug)]
pub struct Bundle {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

impl RunOptions {
    fn effective_seed(&self, spec: &ExperimentSpec) -> u64 {
        self.seed.unwrap_or(spec.monte_carlo.master_seed)
    }

    fn effective_dir(&self, spec: &ExperimentSpec) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(&spec.outputs.directory))
    }

    fn effective_formats(&self, spec: &ExperimentSpec) -> Vec<String> {
        match &self.format {
            Some(f) => vec![f.clone()],
            None => spec.outputs.formats.clone(),
        }
    }
}

/// Run replicas sequentially or on a worker pool; outcomes always come back
/// in replica-index order, so the aggregate is worker-count independent.
pub fn collect_outcomes<F>(
    workers: usize,
    replicas: usize,
    run_one: F,
) -> Result<Vec<ReplicaOutcome>, AppError>
where
    F: Fn(u64) -> ramify_core::Result<ReplicaOutcome> + Sync,
{
    if workers <= 1 {
        (0..replicas as u64)
            .map(|r| run_one(r).map_err(AppError::from))
            .collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| AppError::Io(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            (0..replicas as u64)
                .into_par_iter()
                .map(&run_one)
                .collect::<ramify_core::Result<Vec<_>>>()
        })
        .map_err(AppError::from)
    }
}

/// Raw replica export: `replica,value,terminal_size`, valid replicas only.
pub fn replicas_csv(outcomes: &[ReplicaOutcome]) -> String {
    let mut out = String::from("replica,value,terminal_size\n");
    for (i, o) in outcomes.iter().enumerate() {
        if let ReplicaOutcome::Value {
            value,
            terminal_size,
        } = o
        {
            out.push_str(&format!("{i},{value},{terminal_size}\n"));
        }
    }
    out
}

fn diagnostics_json(diag: &ramify_core::mesh::SolveDiagnostics) -> Value {
    json!({
        "iterations": diag.iterations,
        "final_residual": diag.final_residual,
        "residual_trace": diag.residual_trace,
        "bound_trace": diag.bound_trace,
    })
}

fn mesh_json(spec: &ExperimentSpec) -> Value {
    json!({
        "dt": spec.solver.dt,
        "t_max": spec.solver.t_max,
        "picard_tol": spec.solver.picard_tol,
        "max_iters": spec.solver.max_iters,
    })
}

fn write_metadata(
    dir: &Path,
    kind: CommandKind,
    seed: u64,
    started: Instant,
    extra: Value,
) -> Result<PathBuf, AppError> {
    let meta = json!({
        "command": kind.label(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "runtime_ms": started.elapsed().as_millis() as u64,
        "detail": extra,
    });
    let p = dir.join("metadata.json");
    write_file(&p, &canonical_json(&meta)?)?;
    Ok(p)
}

pub fn run_experiment(
    spec: &ExperimentSpec,
    kind: CommandKind,
    opts: &RunOptions,
) -> Result<Bundle, AppError> {
    let started = Instant::now();
    let seed = opts.effective_seed(spec);
    let dir = opts.effective_dir(spec);
    let formats = opts.effective_formats(spec);
    let model = spec.build_model()?;
    let domain = model.domain();
    let mut files = Vec::new();

    let summary = match kind {
        CommandKind::SolveH => {
            let law = spec.build_law(&domain)?;
            let phi = spec.build_field(&spec.experiment.f, &domain, "experiment.f")?;
            let mesh = spec.build_mesh()?;
            let (table, diag) = solve_h(&model, &law, &phi, &mesh)?;
            files.extend(write_table(&dir, "h_table", &table, &formats)?);
            let extra = json!({
                "mesh": mesh_json(spec),
                "solve": diagnostics_json(&diag),
            });
            files.push(write_metadata(&dir, kind, seed, started, extra)?);
            json!({
                "kind": "h_table",
                "final_sup": table.last().sup_norm(),
                "iterations": diag.iterations,
            })
        }
        CommandKind::SolveQ => {
            let law = spec.build_law(&domain)?;
            let f = spec.build_field(&spec.experiment.f, &domain, "experiment.f")?;
            let mesh = spec.build_mesh()?;
            let pspec = PerturbationSpec::new(&model, &law)?;
            let (table, diag) = solve_q_picard(&model, &law, &f, &mesh)?;
            files.extend(write_table(&dir, "q_table", &table, &formats)?);
            let extra = json!({
                "mesh": mesh_json(spec),
                "solve": diagnostics_json(&diag),
                "beta1": pspec.constants.beta1,
                "regime_warnings": pspec.regime_warnings(),
            });
            files.push(write_metadata(&dir, kind, seed, started, extra)?);
            json!({
                "kind": "q_table",
                "final_sup": table.last().sup_norm(),
                "iterations": diag.iterations,
            })
        }
        CommandKind::Cumulant => {
            let f = spec.build_field(&spec.experiment.f, &domain, "experiment.f")?;
            let mesh = spec.build_mesh()?;
            let (table, diag) = if spec.branching.kind == "mechanism" {
                let phi = spec.build_mechanism()?;
                solve_cumulant_n(&model, &phi, &f, &mesh)?
            } else {
                let law = spec.build_law(&domain)?;
                cumulant_v(&model, &law, &f, &mesh)?
            };
            files.extend(write_table(&dir, "cumulant_table", &table, &formats)?);
            let extra = json!({
                "mesh": mesh_json(spec),
                "solve": diagnostics_json(&diag),
                "table_kind": table.kind.label(),
            });
            files.push(write_metadata(&dir, kind, seed, started, extra)?);
            json!({
                "kind": table.kind.label(),
                "final_sup": table.last().sup_norm(),
                "iterations": diag.iterations,
            })
        }
        CommandKind::Simulate => {
            let law = spec.build_law(&domain)?;
            let f = spec.build_field(&spec.experiment.f, &domain, "experiment.f")?;
            let mu0 = spec.build_initial(&domain)?;
            let functional = spec.functional_kind()?;
            let cfg = EngineConfig {
                cap: spec.monte_carlo.cap,
                path_dt: spec.monte_carlo.path_dt,
            };
            let t = spec.experiment.horizon;
            let master = SeededStream::new(seed);
            let outcomes = collect_outcomes(opts.workers, spec.monte_carlo.replicas, |r| {
                run_replica(&model, &law, &mu0, t, &f, functional, &cfg, &master, r)
            })?;
            let estimate = ramify_core::engine::estimate_from_outcomes(&outcomes)?;
            let est_path = dir.join("estimate.json");
            write_file(&est_path, &canonical_json(&EstimateDto::from(&estimate))?)?;
            files.push(est_path);
            if spec.outputs.raw_replicas {
                let p = dir.join("replicas.csv");
                write_file(&p, &replicas_csv(&outcomes))?;
                files.push(p);
            }
            let extra = json!({
                "replicas": spec.monte_carlo.replicas,
                "cap": spec.monte_carlo.cap,
                "horizon": t,
                "workers": opts.workers.max(1),
            });
            files.push(write_metadata(&dir, kind, seed, started, extra)?);
            json!({
                "kind": "estimate",
                "mean": estimate.mean,
                "stderr": estimate.stderr,
                "capped": estimate.capped,
            })
        }
        CommandKind::Compose => {
            let phi = spec.build_mechanism()?;
            let (q, c) = spec.build_composition()?;
            let law = OffspringLaw::constant(domain.clone(), q, Displacement::None)?;
            let f = spec.build_field(&spec.experiment.f, &domain, "experiment.f")?;
            let measures = spec.build_initial_measures(&domain)?;
            let functional = spec.functional_kind()?;
            let t = spec.experiment.horizon;
            let margin = composition_hypothesis_margin(c, &law);
            let master = SeededStream::new(seed);
            let n_scale = spec.monte_carlo.n_scale;
            let cap = spec.monte_carlo.cap;
            let path_dt = spec.monte_carlo.path_dt;
            let outcomes = collect_outcomes(opts.workers, spec.monte_carlo.replicas, |r| {
                ramify_core::superprocess::run_composition_replica(
                    &model, &phi, &law, c, &measures, t, n_scale, cap, path_dt, &f, functional,
                    &master, r,
                )
            })?;
            let estimate = ramify_core::engine::estimate_from_outcomes(&outcomes)?;
            let est_path = dir.join("estimate.json");
            write_file(&est_path, &canonical_json(&EstimateDto::from(&estimate))?)?;
            files.push(est_path);
            if spec.outputs.raw_replicas {
                let p = dir.join("replicas.csv");
                write_file(&p, &replicas_csv(&outcomes))?;
                files.push(p);
            }
            let extra = json!({
                "replicas": spec.monte_carlo.replicas,
                "n_scale": n_scale,
                "horizon": t,
                "hypothesis_margin": margin,
                "workers": opts.workers.max(1),
            });
            files.push(write_metadata(&dir, kind, seed, started, extra)?);
            json!({
                "kind": "composition",
                "mean": estimate.mean,
                "stderr": estimate.stderr,
                "hypothesis_margin": margin,
            })
        }
    };

    Ok(Bundle { files, summary })
}

//! Experiment configuration: one structured file (TOML, or JSON as an
//! alternative encoding of the same schema) describing the model, the
//! branching, the solver mesh, the Monte Carlo budget, and the experiment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ramify_core::superprocess::{JumpAtom, MeasureState, MechanismPhi};
use ramify_core::{
    BaseModel, Configuration, Displacement, Domain, OffspringLaw, Point, ScalarField, SolverMesh,
};

use crate::AppError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub base_process: BaseProcessSpec,
    pub killing: FieldSpec,
    pub branching: BranchingSpec,
    pub solver: SolverSpec,
    pub monte_carlo: MonteCarloSpec,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub composition: Option<CompositionSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BaseProcessSpec {
    pub kind: String,
    #[serde(default)]
    pub rate_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub diffusion: Option<f64>,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub grid: Option<usize>,
}

/// A per-state field: a constant broadcast over the domain or explicit
/// per-node values.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default)]
    pub constant: Option<f64>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BranchingSpec {
    /// "offspring" for a discrete litter law, "mechanism" for a
    /// continuous-state branching mechanism.
    pub kind: String,
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default)]
    pub per_state_q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub displacement: Option<DisplacementSpec>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    /// Jump atoms as `[size, rate]` pairs.
    #[serde(default)]
    pub jumps: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DisplacementSpec {
    pub kind: String,
    #[serde(default)]
    pub parameter: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub dt: f64,
    pub t_max: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_picard_tol() -> f64 {
    1e-9
}

fn default_max_iters() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub replicas: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Mandatory: runs never seed from the clock.
    pub master_seed: u64,
    #[serde(default = "default_path_dt")]
    pub path_dt: f64,
    #[serde(default = "default_n_scale")]
    pub n_scale: usize,
}

fn default_cap() -> usize {
    1_000_000
}

fn default_path_dt() -> f64 {
    1e-3
}

fn default_n_scale() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Initial configuration: state indices (discrete) or coordinates
    /// (torus).
    #[serde(default)]
    pub initial: Vec<f64>,
    /// Initial measure-valued configuration for the composition demo:
    /// each measure is a list of `[point, weight]` atoms.
    #[serde(default)]
    pub initial_measures: Option<Vec<Vec<[f64; 2]>>>,
    pub f: FieldSpec,
    pub horizon: f64,
    #[serde(default = "default_functional")]
    pub functional: String,
}

fn default_functional() -> String {
    "exponential".to_string()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_outdir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    #[serde(default)]
    pub raw_replicas: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: default_outdir(),
            formats: default_formats(),
            raw_replicas: false,
        }
    }
}

fn default_outdir() -> String {
    "out".to_string()
}

fn default_formats() -> Vec<String> {
    vec!["csv".to_string(), "json".to_string()]
}

/// Discrete-over-measure composition: the constant litter law and killing
/// rate of the outer discrete branching.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSpec {
    pub q: Vec<f64>,
    pub killing: f64,
}

/// Tolerances of the verification checks.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Absolute tolerance for quadrature-level checks.
    #[serde(default = "default_quadrature_tol")]
    pub quadrature_tol: f64,
    /// z-score limit for Monte Carlo checks.
    #[serde(default = "default_z_limit")]
    pub z_limit: f64,
    /// Slack added to the iterate-bound check.
    #[serde(default = "default_bound_slack")]
    pub bound_slack: f64,
    /// Relative tolerance of the composition mean-mass check.
    #[serde(default = "default_mass_rel_tol")]
    pub composition_rel_tol: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            quadrature_tol: default_quadrature_tol(),
            z_limit: default_z_limit(),
            bound_slack: default_bound_slack(),
            composition_rel_tol: default_mass_rel_tol(),
        }
    }
}

fn default_quadrature_tol() -> f64 {
    1e-5
}

fn default_z_limit() -> f64 {
    3.0
}

fn default_bound_slack() -> f64 {
    1e-6
}

fn default_mass_rel_tol() -> f64 {
    0.10
}

impl ExperimentSpec {
    /// Load from a TOML file, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = fs::read_to_string(path)
            .map_err(|e| AppError::Io(format!("cannot read {}: {e}", path.display())))?;
        let spec: ExperimentSpec = if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&text)
                .map_err(|e| AppError::Validation(format!("bad JSON config: {e}")))?
        } else {
            toml::from_str(&text)
                .map_err(|e| AppError::Validation(format!("bad TOML config: {e}")))?
        };
        Ok(spec)
    }

    pub fn build_model(&self) -> Result<BaseModel, AppError> {
        let b = &self.base_process;
        match b.kind.as_str() {
            "single_site" => {
                let killing = self.build_field(&self.killing, &Domain::Single, "killing")?;
                BaseModel::single_site(killing.values()[0]).map_err(AppError::from)
            }
            "finite_chain" => {
                let rates = b
                    .rate_matrix
                    .clone()
                    .ok_or_else(|| AppError::Validation("finite_chain needs rate_matrix".into()))?;
                let dom = Domain::Finite {
                    states: rates.len(),
                };
                let killing = self.build_field(&self.killing, &dom, "killing")?;
                BaseModel::finite_chain(rates, killing).map_err(AppError::from)
            }
            "brownian_torus" => {
                let (diffusion, length, grid) = match (b.diffusion, b.length, b.grid) {
                    (Some(d), Some(l), Some(g)) => (d, l, g),
                    _ => {
                        return Err(AppError::Validation(
                            "brownian_torus needs diffusion, length, grid".into(),
                        ))
                    }
                };
                let dom = Domain::Torus { length, grid };
                let killing = self.build_field(&self.killing, &dom, "killing")?;
                BaseModel::brownian_torus(diffusion, length, grid, killing).map_err(AppError::from)
            }
            other => Err(AppError::Validation(format!(
                "unknown base process kind '{other}'"
            ))),
        }
    }

    pub fn build_field(
        &self,
        spec: &FieldSpec,
        domain: &Domain,
        what: &str,
    ) -> Result<ScalarField, AppError> {
        match (&spec.constant, &spec.values) {
            (Some(c), None) => Ok(ScalarField::constant(domain.clone(), *c)),
            (None, Some(v)) => {
                ScalarField::from_values(domain.clone(), v.clone()).map_err(AppError::from)
            }
            _ => Err(AppError::Validation(format!(
                "{what}: give exactly one of 'constant' or 'values'"
            ))),
        }
    }

    pub fn build_law(&self, domain: &Domain) -> Result<OffspringLaw, AppError> {
        if self.branching.kind != "offspring" {
            return Err(AppError::Validation(
                "this command needs branching.kind = \"offspring\"".into(),
            ));
        }
        let displacement = match &self.branching.displacement {
            None => Displacement::None,
            Some(d) => match d.kind.as_str() {
                "none" => Displacement::None,
                "gaussian" => Displacement::Gaussian {
                    sigma: d.parameter.ok_or_else(|| {
                        AppError::Validation("gaussian displacement needs parameter".into())
                    })?,
                },
                "uniform_ball" => Displacement::UniformBall {
                    radius: d.parameter.ok_or_else(|| {
                        AppError::Validation("uniform_ball displacement needs parameter".into())
                    })?,
                },
                other => {
                    return Err(AppError::Validation(format!(
                        "unknown displacement kind '{other}'"
                    )))
                }
            },
        };
        match (&self.branching.q, &self.branching.per_state_q) {
            (Some(q), None) => OffspringLaw::constant(domain.clone(), q.clone(), displacement)
                .map_err(AppError::from),
            (None, Some(rows)) => {
                OffspringLaw::per_state(domain.clone(), rows.clone(), displacement)
                    .map_err(AppError::from)
            }
            _ => Err(AppError::Validation(
                "offspring law: give exactly one of 'q' or 'per_state_q'".into(),
            )),
        }
    }

    pub fn build_mechanism(&self) -> Result<MechanismPhi, AppError> {
        if self.branching.kind != "mechanism" {
            return Err(AppError::Validation(
                "this command needs branching.kind = \"mechanism\"".into(),
            ));
        }
        let a = self.branching.a.unwrap_or(0.0);
        let b = self.branching.b.unwrap_or(0.0);
        let jumps = self
            .branching
            .jumps
            .clone()
            .unwrap_or_default()
            .into_iter()
            .map(|[size, rate]| JumpAtom { size, rate })
            .collect();
        MechanismPhi::new(a, b, jumps).map_err(AppError::from)
    }

    pub fn build_mesh(&self) -> Result<SolverMesh, AppError> {
        SolverMesh::new(
            self.solver.dt,
            self.solver.t_max,
            self.solver.picard_tol,
            self.solver.max_iters,
        )
        .map_err(AppError::from)
    }

    pub fn parse_point(&self, raw: f64, domain: &Domain) -> Result<Point, AppError> {
        let p = match domain {
            Domain::Single | Domain::Finite { .. } => {
                if raw < 0.0 || raw.fract() != 0.0 {
                    return Err(AppError::Validation(format!(
                        "point {raw} is not a state index"
                    )));
                }
                Point::Index(raw as usize)
            }
            Domain::Torus { .. } => Point::Coord(raw),
        };
        if !domain.contains(&p) {
            return Err(AppError::Validation(format!(
                "point {raw} lies outside the state space"
            )));
        }
        Ok(p)
    }

    pub fn build_initial(&self, domain: &Domain) -> Result<Configuration, AppError> {
        let points = self
            .experiment
            .initial
            .iter()
            .map(|&raw| self.parse_point(raw, domain))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Configuration::from_points(points))
    }

    pub fn build_initial_measures(&self, domain: &Domain) -> Result<Vec<MeasureState>, AppError> {
        let specs = self.experiment.initial_measures.clone().ok_or_else(|| {
            AppError::Validation("composition needs experiment.initial_measures".into())
        })?;
        specs
            .into_iter()
            .map(|atoms| {
                let atoms = atoms
                    .into_iter()
                    .map(|[raw, w]| Ok((self.parse_point(raw, domain)?, w)))
                    .collect::<Result<Vec<_>, AppError>>()?;
                MeasureState::new(atoms).map_err(AppError::from)
            })
            .collect()
    }

    pub fn functional_kind(&self) -> Result<ramify_core::Functional, AppError> {
        match self.experiment.functional.as_str() {
            "exponential" => Ok(ramify_core::Functional::Exponential),
            "linear" => Ok(ramify_core::Functional::Linear),
            other => Err(AppError::Validation(format!(
                "unknown functional '{other}' (want exponential|linear)"
            ))),
        }
    }

    /// Composition section with validation of the hypothesis inputs.
    pub fn build_composition(&self) -> Result<(Vec<f64>, f64), AppError> {
        let comp = self
            .composition
            .clone()
            .ok_or_else(|| AppError::Validation("missing [composition] section".into()))?;
        if comp.killing < 0.0 {
            return Err(AppError::Validation(
                "composition killing must be nonnegative".into(),
            ));
        }
        Ok((comp.q, comp.killing))
    }
}

//! Time meshes and solved semigroup tables.

use alloc::string::String;
use alloc::vec::Vec;

use crate::config_space::ScalarField;
use crate::error::{CoreError, Result};
#[allow(unused_imports)] // inherent f64 methods shadow these under cfg(test)
use crate::num::FloatExt;

/// Uniform time discretization of the solve horizon plus the Picard
/// stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverMesh {
    pub dt: f64,
    pub t_max: f64,
    /// Sup-norm tolerance, over all mesh times, that ends the iteration.
    pub picard_tol: f64,
    pub max_iters: usize,
}

impl SolverMesh {
    pub fn new(dt: f64, t_max: f64, picard_tol: f64, max_iters: usize) -> Result<Self> {
        let mesh = SolverMesh {
            dt,
            t_max,
            picard_tol,
            max_iters,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_max > 0.0) {
            return Err(CoreError::Invalid(String::from(
                "mesh needs positive dt and t_max",
            )));
        }
        let steps = self.t_max / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(CoreError::Invalid(String::from(
                "t_max must be a multiple of dt",
            )));
        }
        if !(self.picard_tol > 0.0) {
            return Err(CoreError::Invalid(String::from(
                "picard_tol must be positive",
            )));
        }
        if self.max_iters == 0 {
            return Err(CoreError::Invalid(String::from(
                "max_iters must be positive",
            )));
        }
        Ok(())
    }

    /// Number of steps; the table has `steps() + 1` entries.
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|i| i as f64 * self.dt).collect()
    }
}

/// What a table's fields represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// `t -> H_t(phi)`: the nonlinear branching semigroup on a test
    /// function in the unit range.
    HOfPhi,
    /// `t -> V_t(f) = -ln H_t(exp(-f))`: the cumulant.
    VOfF,
    /// `t -> Q_t(f)`: the perturbed linear semigroup.
    QOfF,
    /// `t -> N_t(f)`: the continuous-branching cumulant.
    NOfF,
}

impl TableKind {
    pub fn label(&self) -> &'static str {
        match self {
            TableKind::HOfPhi => "H_of_phi",
            TableKind::VOfF => "V_of_f",
            TableKind::QOfF => "Q_of_f",
            TableKind::NOfF => "N_of_f",
        }
    }
}

/// A time-indexed family of fields on one mesh.
#[derive(Debug, Clone)]
pub struct SemigroupTable {
    pub kind: TableKind,
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
}

impl SemigroupTable {
    pub fn new(kind: TableKind, times: Vec<f64>, fields: Vec<ScalarField>) -> Self {
        debug_assert_eq!(times.len(), fields.len());
        SemigroupTable {
            kind,
            times,
            fields,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &ScalarField {
        self.fields.last().expect("table is never empty")
    }

    /// Field at the mesh time nearest to `t`.
    pub fn at_time(&self, t: f64) -> &ScalarField {
        let dt = if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            1.0
        };
        let i = ((t / dt).round() as usize).min(self.times.len() - 1);
        &self.fields[i]
    }

    /// Largest pointwise gap to another table on the same mesh.
    pub fn sup_distance(&self, other: &SemigroupTable) -> f64 {
        self.fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| {
                a.values()
                    .iter()
                    .zip(b.values())
                    .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// Convergence record of a Picard solve.
#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub final_residual: f64,
    /// Measured sup-norm change per iteration.
    pub residual_trace: Vec<f64>,
    /// A-priori bound `(beta0 t)^n / n! * sup|phi|` per iteration.
    pub bound_trace: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::Domain;
    use alloc::vec;

    #[test]
    fn mesh_validation() {
        assert!(SolverMesh::new(0.1, 1.0, 1e-9, 50).is_ok());
        assert!(SolverMesh::new(0.1, 1.05, 1e-9, 50).is_err());
        assert!(SolverMesh::new(0.0, 1.0, 1e-9, 50).is_err());
        assert!(SolverMesh::new(0.1, 1.0, 0.0, 50).is_err());
        let m = SolverMesh::new(0.25, 2.0, 1e-9, 50).unwrap();
        assert_eq!(m.steps(), 8);
        assert_eq!(m.times().len(), 9);
    }

    #[test]
    fn table_lookup() {
        let dom = Domain::Single;
        let mesh = SolverMesh::new(0.5, 1.0, 1e-9, 10).unwrap();
        let fields = vec![
            ScalarField::constant(dom.clone(), 0.0),
            ScalarField::constant(dom.clone(), 1.0),
            ScalarField::constant(dom, 2.0),
        ];
        let t = SemigroupTable::new(TableKind::HOfPhi, mesh.times(), fields);
        assert_eq!(t.at_time(0.49).values()[0], 1.0);
        assert_eq!(t.at_time(0.9).values()[0], 2.0);
        assert_eq!(t.last().values()[0], 2.0);
    }
}

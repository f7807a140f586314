//! Regularized output least-squares recovery of the diffusion coefficient.
//!
//! [`EllipticInverseProblem`] and [`ParabolicInverseProblem`] evaluate the
//! discrete objectives and their exact discrete-adjoint gradients with
//! respect to the nodal values of `q`. [`ncg_minimize`] minimizes either one
//! over the admissible box.

mod ncg;
mod objective;

pub use ncg::{ncg_minimize, Metric, OptimizeResult, OptimizerOptions, Termination};
pub use objective::{EllipticInverseProblem, ParabolicInverseProblem, ParabolicState};

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::fem::{FeFunction, Space};
use crate::mesh::Mesh;

/// Pointwise bounds `c0 ≤ q ≤ c1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibleBox {
    c0: f64,
    c1: f64,
}

impl AdmissibleBox {
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0 < c1 && c1.is_finite()) {
            return invalid(format!("admissible box needs 0 < c0 < c1, got [{c0}, {c1}]"));
        }
        Ok(Self { c0, c1 })
    }

    pub fn lower(&self) -> f64 {
        self.c0
    }

    pub fn upper(&self) -> f64 {
        self.c1
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.c0 + self.c1)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.c0, self.c1)
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.iter().all(|&v| v >= self.c0 && v <= self.c1)
    }
}

impl Default for AdmissibleBox {
    fn default() -> Self {
        Self { c0: 0.5, c1: 5.0 }
    }
}

/// Nodal clamp onto the box.
pub fn project_box(q: &FeFunction, bounds: &AdmissibleBox) -> FeFunction {
    let values = q.values().iter().map(|&v| bounds.clamp(v)).collect();
    FeFunction::new(q.mesh().clone(), values, Space::Full).expect("same mesh, full space")
}

/// A smooth objective over nodal coefficient vectors, as seen by the
/// optimizer. `evaluate` returns the value and whatever forward state the
/// gradient needs, so accepted line-search points are not solved twice.
pub trait Objective {
    type State;

    fn mesh(&self) -> &Arc<Mesh>;

    fn bounds(&self) -> AdmissibleBox;

    fn evaluate(&self, q: &[f64]) -> Result<(f64, Self::State)>;

    fn gradient(&self, q: &[f64], state: &Self::State) -> Result<Vec<f64>>;

    /// Gauss–Newton Hessian of `J` at `q` (data term linearized, penalty
    /// exact) applied to `v`, or `None` without such a model.
    fn gauss_newton(&self, _q: &[f64], _state: &Self::State, _v: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        Ok(self.evaluate(q)?.0)
    }

    fn value_and_gradient(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, st) = self.evaluate(q)?;
        Ok((v, self.gradient(q, &st)?))
    }
}

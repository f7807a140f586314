//! Synthetic noisy observations and the state/coefficient error metrics.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::reference::{EllipticReference, ParabolicReference};
use crate::error::{invalid, Result};
use crate::fem::{lagrange_interpolate, norm_l2, FeFunction, P1Space, ScalarField, Space, SpaceTimeField};
use crate::forward::{solve_elliptic, solve_parabolic_with, TimeGrid};
use crate::mesh::{transfer_nodal, Mesh};

/// Relative Gaussian noise `ε · sup|u| · ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub seed: u64,
    /// ChaCha stream, so that independent realizations can share a seed.
    pub stream: u64,
}

impl NoiseSpec {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return invalid(format!("noise level must be nonnegative, got {epsilon}"));
        }
        Ok(Self {
            epsilon,
            seed,
            stream: 0,
        })
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Noisy elliptic data on `coarse`: the reference solution plus
/// `ε·sup|u|·ξ` at every reference node, projected onto the coarse mesh.
pub fn synthesize_elliptic_from(
    reference: &EllipticReference,
    coarse: &Arc<Mesh>,
    noise: &NoiseSpec,
) -> Result<FeFunction> {
    let scale = noise.epsilon * reference.sup_norm();
    let mut rng = noise.rng();
    let values = reference
        .solution()
        .values()
        .iter()
        .map(|&u| {
            let xi: f64 = rng.sample(StandardNormal);
            u + scale * xi
        })
        .collect();
    let space = P1Space::new(coarse.clone());
    project_data(&space, reference.mesh(), values)
}

/// L² projection of a fine-mesh field onto the coarse zero-trace space.
fn project_data(space: &P1Space, fine: &Arc<Mesh>, values: Vec<f64>) -> Result<FeFunction> {
    check_divides(fine.cells_per_side(), space.mesh())?;
    space.project_nested(&FeFunction::new(fine.clone(), values, Space::Full)?)
}

pub fn synthesize_elliptic(
    q_dag: &ScalarField,
    source: &ScalarField,
    fine_n: usize,
    coarse: &Arc<Mesh>,
    noise: &NoiseSpec,
) -> Result<FeFunction> {
    check_divides(fine_n, coarse)?;
    let fine = fine_mesh(coarse.dim(), fine_n)?;
    let reference = EllipticReference::new(q_dag, source, fine)?;
    synthesize_elliptic_from(&reference, coarse, noise)
}

/// Noisy parabolic observations for steps `N_σ..=N` of `grid`. Every
/// reference step in `(t_{n−1}, t_n]` gets its own noise; `z_n` is their
/// mean, projected onto the coarse mesh.
pub fn synthesize_parabolic_from(
    reference: &ParabolicReference,
    coarse: &Arc<Mesh>,
    grid: &TimeGrid,
    noise: &NoiseSpec,
) -> Result<Vec<FeFunction>> {
    let k = reference.ratio(grid)?;
    let scale = noise.epsilon * reference.sup_norm();
    let mut rng = noise.rng();
    let nodes = reference.mesh().n_nodes();
    let space = P1Space::new(coarse.clone());
    let mut out = Vec::with_capacity(grid.n_observed());
    for n in grid.observed() {
        let mut acc = vec![0.0; nodes];
        for j in (n - 1) * k + 1..=n * k {
            let u = reference.state(j)?.values();
            for (a, &v) in acc.iter_mut().zip(u) {
                let xi: f64 = rng.sample(StandardNormal);
                *a += v + scale * xi;
            }
        }
        acc.iter_mut().for_each(|a| *a /= k as f64);
        out.push(project_data(&space, reference.mesh(), acc)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn synthesize_parabolic(
    q_dag: &ScalarField,
    source: &SpaceTimeField,
    initial: &ScalarField,
    fine_n: usize,
    fine_steps: usize,
    coarse: &Arc<Mesh>,
    grid: &TimeGrid,
    noise: &NoiseSpec,
) -> Result<Vec<FeFunction>> {
    check_divides(fine_n, coarse)?;
    let fine_grid = TimeGrid::new(grid.final_time(), fine_steps, grid.window())?;
    if fine_steps % grid.steps() != 0 {
        return invalid(format!(
            "coarse step count {} does not divide fine step count {fine_steps}",
            grid.steps()
        ));
    }
    let k = fine_steps / grid.steps();
    let keep_from = (grid.first_observed() - 1) * k;
    let reference = ParabolicReference::new(
        q_dag,
        source,
        initial,
        fine_mesh(coarse.dim(), fine_n)?,
        fine_grid,
        keep_from,
    )?;
    synthesize_parabolic_from(&reference, coarse, grid, noise)
}

pub(crate) fn fine_mesh(dim: usize, n: usize) -> Result<Arc<Mesh>> {
    match dim {
        1 => Mesh::interval(n),
        2 => Mesh::unit_square(n),
        d => invalid(format!("unsupported dimension {d}")),
    }
}

fn check_divides(fine_n: usize, coarse: &Mesh) -> Result<()> {
    if fine_n % coarse.cells_per_side() != 0 {
        return invalid(format!(
            "coarse cell count {} does not divide fine cell count {fine_n}",
            coarse.cells_per_side()
        ));
    }
    Ok(())
}

/// `‖q* − I_h q†‖_{L²}` on the mesh of `q_star`.
pub fn error_q(q_star: &FeFunction, q_dag: &ScalarField) -> Result<f64> {
    let exact = lagrange_interpolate(q_star.mesh(), q_dag);
    Ok(norm_l2(&q_star.sub(&exact)?))
}

/// `‖u_h(q*) − u(q†)‖_{L²}` with the reference solution sampled at the
/// coarse nodes.
pub fn error_u_elliptic(
    space: &P1Space,
    q_star: &FeFunction,
    source: &ScalarField,
    reference: &EllipticReference,
) -> Result<f64> {
    let u = solve_elliptic(space, q_star, source)?;
    let exact = transfer_nodal(reference.solution(), space.mesh())?;
    Ok(norm_l2(&u.sub(&exact)?))
}

/// `(τ Σ_{n=N_σ}^{N} ‖Uⁿ(q*) − u(t_n)‖²)^{1/2}`.
pub fn error_u_parabolic(
    space: &P1Space,
    q_star: &FeFunction,
    source: &SpaceTimeField,
    initial: &ScalarField,
    grid: &TimeGrid,
    reference: &ParabolicReference,
) -> Result<f64> {
    let k = reference.ratio(grid)?;
    let first = grid.first_observed();
    let mut sum = 0.0;
    let mut err = None;
    solve_parabolic_with(space, q_star, source, initial, grid, |n, u| {
        if n < first || err.is_some() {
            return;
        }
        let r = reference
            .state(n * k)
            .and_then(|fine| transfer_nodal(fine, space.mesh()))
            .and_then(|exact| u.sub(&exact));
        match r {
            Ok(d) => sum += norm_l2(&d).powi(2),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((grid.tau() * sum).sqrt())
}

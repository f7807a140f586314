use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::fem::{FeFunction, P1Space, ScalarField, SpaceTimeField};
use crate::forward::{Loads, Stepper, TimeGrid};
use crate::linalg::cg_solve;
use crate::mesh::Mesh;

use super::{AdmissibleBox, Objective};

/// Adds `scale · |T|/(d+1) · (∇u·∇p)|_T` to every vertex of every element.
/// `u` and `p` are interior vectors of zero-trace functions.
fn add_coefficient_sensitivity(mesh: &Mesh, u: &[f64], p: &[f64], scale: f64, g: &mut [f64]) {
    let nv = mesh.nodes_per_element();
    for e in 0..mesh.n_elements() {
        let mut gu = [0.0; 2];
        let mut gp = [0.0; 2];
        for (&i, gr) in mesh.element(e).iter().zip(mesh.gradients(e)) {
            if let Some(k) = mesh.interior_index(i) {
                gu[0] += u[k] * gr[0];
                gu[1] += u[k] * gr[1];
                gp[0] += p[k] * gr[0];
                gp[1] += p[k] * gr[1];
            }
        }
        let v = scale * mesh.measure(e) / nv as f64 * (gu[0] * gp[0] + gu[1] * gp[1]);
        for &i in mesh.element(e) {
            g[i] += v;
        }
    }
}

/// Interior vector `∫ δq ∇u·∇φ_i`, the derivative of the stiffness action
/// `K(q)u` in direction `δq`.
fn coefficient_action(mesh: &Mesh, u: &[f64], dq: &[f64]) -> Vec<f64> {
    let nv = mesh.nodes_per_element() as f64;
    let mut out = vec![0.0; u.len()];
    for e in 0..mesh.n_elements() {
        let nodes = mesh.element(e);
        let grads = mesh.gradients(e);
        let mut gu = [0.0; 2];
        let mut qm = 0.0;
        for (&i, gr) in nodes.iter().zip(grads) {
            qm += dq[i] / nv;
            if let Some(k) = mesh.interior_index(i) {
                gu[0] += u[k] * gr[0];
                gu[1] += u[k] * gr[1];
            }
        }
        let s = qm * mesh.measure(e);
        for (&i, gr) in nodes.iter().zip(grads) {
            if let Some(k) = mesh.interior_index(i) {
                out[k] += s * (gu[0] * gr[0] + gu[1] * gr[1]);
            }
        }
    }
    out
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return invalid(format!("regularization parameter must be nonnegative, got {gamma}"));
    }
    Ok(())
}

fn check_coefficient(mesh: &Mesh, q: &[f64]) -> Result<()> {
    if q.len() != mesh.n_nodes() {
        return invalid(format!(
            "coefficient has {} values for {} nodes",
            q.len(),
            mesh.n_nodes()
        ));
    }
    Ok(())
}

/// `½‖u_h(q) − z‖² + γ/2 ‖∇q‖²` with `u_h(q)` the discrete elliptic solution.
#[derive(Debug, Clone)]
pub struct EllipticInverseProblem {
    space: Arc<P1Space>,
    data: Vec<f64>,
    load: Vec<f64>,
    gamma: f64,
    bounds: AdmissibleBox,
}

impl EllipticInverseProblem {
    pub fn new(
        space: Arc<P1Space>,
        data: &FeFunction,
        source: &ScalarField,
        gamma: f64,
        bounds: AdmissibleBox,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        if data.mesh().n_nodes() != space.mesh().n_nodes() {
            return invalid("data lives on a different mesh");
        }
        let load = space.interior_load(source);
        Ok(Self {
            data: data.interior_values(),
            load,
            space,
            gamma,
            bounds,
        })
    }

    pub fn space(&self) -> &Arc<P1Space> {
        &self.space
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// State `u_h(q)` at interior nodes.
    pub fn state(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_coefficient(self.space.mesh(), q)?;
        let k = self.space.interior_stiffness(q)?;
        Ok(cg_solve(&k, &self.load, self.space.cg_options())?.x)
    }

    pub fn penalty(&self, q: &[f64]) -> f64 {
        0.5 * self.gamma * self.space.unit_stiffness().quadratic_form(q)
    }

    /// `γ K₁ q`.
    pub fn penalty_gradient(&self, q: &[f64]) -> Vec<f64> {
        penalty_gradient(&self.space, self.gamma, q)
    }
}

fn penalty_gradient(space: &P1Space, gamma: f64, q: &[f64]) -> Vec<f64> {
    let mut g = space.unit_stiffness().matvec(q).expect("nodal vector");
    g.iter_mut().for_each(|v| *v *= gamma);
    g
}

impl Objective for EllipticInverseProblem {
    type State = Vec<f64>;

    fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    fn bounds(&self) -> AdmissibleBox {
        self.bounds
    }

    fn evaluate(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = self.state(q)?;
        let r: Vec<f64> = u.iter().zip(&self.data).map(|(a, b)| a - b).collect();
        let fid = 0.5 * self.space.interior_inner(&r, &r);
        Ok((fid + self.penalty(q), u))
    }

    fn gradient(&self, q: &[f64], u: &Vec<f64>) -> Result<Vec<f64>> {
        check_coefficient(self.space.mesh(), q)?;
        let r: Vec<f64> = u.iter().zip(&self.data).map(|(a, b)| a - b).collect();
        let rhs = self.space.interior_mass().matvec(&r)?;
        let k = self.space.interior_stiffness(q)?;
        let p = cg_solve(&k, &rhs, self.space.cg_options())?.x;
        let mut g = self.penalty_gradient(q);
        add_coefficient_sensitivity(self.space.mesh(), u, &p, -1.0, &mut g);
        Ok(g)
    }

    fn gauss_newton(&self, q: &[f64], u: &Vec<f64>, v: &[f64]) -> Option<Result<Vec<f64>>> {
        // δu solves K δu = −B(δq); the two sign flips cancel in Bᵀ K⁻¹ M δu
        let apply = || -> Result<Vec<f64>> {
            let k = self.space.interior_stiffness(q)?;
            let opts = self.space.cg_options();
            let du = cg_solve(&k, &coefficient_action(self.space.mesh(), u, v), opts)?.x;
            let p = cg_solve(&k, &self.space.interior_mass().matvec(&du)?, opts)?.x;
            let mut out = penalty_gradient(&self.space, self.gamma, v);
            add_coefficient_sensitivity(self.space.mesh(), u, &p, 1.0, &mut out);
            Ok(out)
        };
        Some(apply())
    }
}

/// `τ Σ_{n=N_σ}^{N} ‖Uⁿ(q) − z_n‖² + γ/2 ‖∇q‖²` with `Uⁿ(q)` the backward
/// Euler states.
pub struct ParabolicInverseProblem {
    space: Arc<P1Space>,
    grid: TimeGrid,
    data: Vec<Vec<f64>>,
    loads: Loads,
    initial: Vec<f64>,
    gamma: f64,
    bounds: AdmissibleBox,
}

impl std::fmt::Debug for ParabolicInverseProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParabolicInverseProblem")
            .field("grid", &self.grid)
            .field("gamma", &self.gamma)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

/// Forward trajectory kept for the adjoint sweep.
pub struct ParabolicState {
    states: Vec<Vec<f64>>,
}

impl ParabolicState {
    /// Interior values of `Uⁿ`, `n = 0..=N`.
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }
}

impl ParabolicInverseProblem {
    /// `data[k]` is the observation for step `N_σ + k`.
    pub fn new(
        space: Arc<P1Space>,
        grid: TimeGrid,
        data: &[FeFunction],
        source: &SpaceTimeField,
        initial: &ScalarField,
        gamma: f64,
        bounds: AdmissibleBox,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        if data.len() != grid.n_observed() {
            return invalid(format!(
                "expected {} observations (steps {}..={}), got {}",
                grid.n_observed(),
                grid.first_observed(),
                grid.steps(),
                data.len()
            ));
        }
        if data.iter().any(|z| z.mesh().n_nodes() != space.mesh().n_nodes()) {
            return invalid("observation lives on a different mesh");
        }
        let loads = Loads::new(&space, source, &grid, true);
        let initial = space.l2_project(initial)?.interior_values();
        Ok(Self {
            data: data.iter().map(FeFunction::interior_values).collect(),
            loads,
            initial,
            space,
            grid,
            gamma,
            bounds,
        })
    }

    pub fn space(&self) -> &Arc<P1Space> {
        &self.space
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn penalty(&self, q: &[f64]) -> f64 {
        0.5 * self.gamma * self.space.unit_stiffness().quadratic_form(q)
    }

    pub fn penalty_gradient(&self, q: &[f64]) -> Vec<f64> {
        penalty_gradient(&self.space, self.gamma, q)
    }

    fn observation(&self, n: usize) -> Option<&[f64]> {
        n.checked_sub(self.grid.first_observed())
            .and_then(|k| self.data.get(k))
            .map(Vec::as_slice)
    }
}

impl Objective for ParabolicInverseProblem {
    type State = ParabolicState;

    fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    fn bounds(&self) -> AdmissibleBox {
        self.bounds
    }

    fn evaluate(&self, q: &[f64]) -> Result<(f64, ParabolicState)> {
        check_coefficient(self.space.mesh(), q)?;
        let stepper = Stepper::new(&self.space, q, self.grid.tau())?;
        let mut states = Vec::with_capacity(self.grid.steps() + 1);
        let mut fid = 0.0;
        stepper.march(self.initial.clone(), &self.grid, &self.loads, |n, u| {
            if let Some(z) = self.observation(n) {
                let r: Vec<f64> = u.iter().zip(z).map(|(a, b)| a - b).collect();
                fid += self.space.interior_inner(&r, &r);
            }
            states.push(u.to_vec());
        })?;
        let value = self.grid.tau() * fid + self.penalty(q);
        Ok((value, ParabolicState { states }))
    }

    fn gradient(&self, q: &[f64], state: &ParabolicState) -> Result<Vec<f64>> {
        check_coefficient(self.space.mesh(), q)?;
        let stepper = Stepper::new(&self.space, q, self.grid.tau())?;
        let mut g = self.penalty_gradient(q);
        self.pull_back(&stepper, &state.states, &mut g, -1.0, |n, r| {
            let z = self.observation(n)?;
            let u = &state.states[n];
            r.iter_mut().zip(u.iter().zip(z)).for_each(|(r, (a, b))| *r = a - b);
            Some(())
        })?;
        Ok(g)
    }

    fn gauss_newton(&self, q: &[f64], state: &ParabolicState, v: &[f64]) -> Option<Result<Vec<f64>>> {
        let apply = || -> Result<Vec<f64>> {
            let stepper = Stepper::new(&self.space, q, self.grid.tau())?;
            let tau = self.grid.tau();
            let mass = self.space.interior_mass();
            let n_int = self.space.n_interior();
            // linearized march with the sign of the forcing flipped:
            // (M + τK)δUⁿ = MδUⁿ⁻¹ + τB(Uⁿ)δq, δU⁰ = 0
            let mut du = vec![vec![0.0; n_int]; self.grid.steps() + 1];
            let mut rhs = vec![0.0; n_int];
            for n in 1..=self.grid.steps() {
                mass.matvec_into(&du[n - 1], &mut rhs);
                let b = coefficient_action(self.space.mesh(), &state.states[n], v);
                rhs.iter_mut().zip(&b).for_each(|(r, b)| *r += tau * b);
                du[n] = stepper.solve(&rhs, du[n - 1].clone())?;
            }
            let mut out = penalty_gradient(&self.space, self.gamma, v);
            self.pull_back(&stepper, &state.states, &mut out, 1.0, |n, r| {
                self.observation(n)?;
                r.copy_from_slice(&du[n]);
                Some(())
            })?;
            Ok(out)
        };
        Some(apply())
    }
}

impl ParabolicInverseProblem {
    /// Adds `scale · τ Σ_n B(Uⁿ)ᵀPⁿ` to `g`, where the adjoint solves
    /// `(M + τK)Pⁿ = MPⁿ⁺¹ + 2τ M rⁿ`, `Pᴺ⁺¹ = 0`, and `residual(n, r)` fills
    /// `rⁿ` at observed steps and returns `None` elsewhere.
    fn pull_back(
        &self,
        stepper: &Stepper,
        states: &[Vec<f64>],
        g: &mut [f64],
        scale: f64,
        mut residual: impl FnMut(usize, &mut [f64]) -> Option<()>,
    ) -> Result<()> {
        let tau = self.grid.tau();
        let mass = self.space.interior_mass();
        let n_int = self.space.n_interior();
        let mut p_next = vec![0.0; n_int];
        let mut rhs = vec![0.0; n_int];
        let mut r = vec![0.0; n_int];
        for n in (1..=self.grid.steps()).rev() {
            match residual(n, &mut r) {
                Some(()) => {
                    r.iter_mut().zip(&p_next).for_each(|(r, p)| *r = p + 2.0 * tau * *r);
                    mass.matvec_into(&r, &mut rhs);
                }
                None => mass.matvec_into(&p_next, &mut rhs),
            }
            if rhs.iter().all(|&v| v == 0.0) {
                p_next.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let p = stepper.solve(&rhs, p_next)?;
            add_coefficient_sensitivity(self.space.mesh(), &states[n], &p, scale * tau, g);
            p_next = p;
        }
        Ok(())
    }
}

//! Fine-grid "exact" solutions and everything computed against them.

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::fem::{
    element_gradient, lagrange_interpolate, FeFunction, P1Space, ScalarField,
    SpaceTimeField,
};
use crate::forward::{solve_elliptic, solve_parabolic_with, TimeGrid};
use crate::mesh::{dist_point_to_boundary, Mesh};

/// Minimum of an element weight field, plain and relative to `dist^β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityProfile {
    pub min_weight: f64,
    pub min_ratio: f64,
    /// Element attaining `min_weight`.
    pub argmin: usize,
    pub argmin_centroid: [f64; 2],
}

/// Whether an element of `mesh` has a vertex at a corner of the domain.
pub fn touches_corner(mesh: &Mesh, e: usize) -> bool {
    mesh.element(e).iter().any(|&i| {
        mesh.node(i)
            .iter()
            .all(|&c| c == 0.0 || c == 1.0)
    })
}

fn profile(mesh: &Mesh, weights: &[f64], beta: f64) -> PositivityProfile {
    let mut out = PositivityProfile {
        min_weight: f64::INFINITY,
        min_ratio: f64::INFINITY,
        argmin: 0,
        argmin_centroid: [0.0; 2],
    };
    for (e, &w) in weights.iter().enumerate() {
        let c = mesh.centroid(e);
        let ratio = if beta == 0.0 {
            w
        } else {
            w / dist_point_to_boundary(&c[..mesh.dim()]).powf(beta)
        };
        out.min_ratio = out.min_ratio.min(ratio);
        if w < out.min_weight {
            out.min_weight = w;
            out.argmin = e;
            out.argmin_centroid = c;
        }
    }
    out
}

/// `vᵀ M_T v` for the element-local values of `v`.
fn element_mass_form(mesh: &Mesh, e: usize, v: &[f64]) -> f64 {
    let d = mesh.dim() as f64;
    let (mut sum, mut sq) = (0.0, 0.0);
    for &i in mesh.element(e) {
        sum += v[i];
        sq += v[i] * v[i];
    }
    mesh.measure(e) / ((d + 1.0) * (d + 2.0)) * (sq + sum * sum)
}

/// `q† |∇u|² + g·u` per element, with `q†` and `g` at the centroid and `u`
/// averaged over the vertices.
fn element_weights(
    mesh: &Mesh,
    q_dag: &ScalarField,
    u: &[f64],
    g: impl Fn(usize, &[f64]) -> f64,
) -> Vec<f64> {
    let nv = mesh.nodes_per_element() as f64;
    (0..mesh.n_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            let p = &c[..mesh.dim()];
            let gu = element_gradient(mesh, e, u);
            let ubar = mesh.element(e).iter().map(|&i| u[i]).sum::<f64>() / nv;
            q_dag.eval(p) * (gu[0] * gu[0] + gu[1] * gu[1]) + g(e, p) * ubar
        })
        .collect()
}

/// Nodal values of a coarse function at the nodes of `fine`.
fn prolong(coarse: &FeFunction, fine: &Mesh) -> Vec<f64> {
    (0..fine.n_nodes()).map(|i| coarse.eval(fine.node(i))).collect()
}

/// Reference solution of the elliptic problem with the true coefficient.
#[derive(Debug)]
pub struct EllipticReference {
    space: Arc<P1Space>,
    q_dag: ScalarField,
    q_dag_h: FeFunction,
    solution: FeFunction,
    weights: Vec<f64>,
}

impl EllipticReference {
    pub fn new(q_dag: &ScalarField, source: &ScalarField, mesh: Arc<Mesh>) -> Result<Self> {
        let space = Arc::new(P1Space::new(mesh.clone()));
        let q_dag_h = lagrange_interpolate(&mesh, q_dag);
        let solution = solve_elliptic(&space, &q_dag_h, source)?;
        let weights = element_weights(&mesh, q_dag, solution.values(), |_, p| source.eval(p));
        Ok(Self {
            space,
            q_dag: q_dag.clone(),
            q_dag_h,
            solution,
            weights,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    pub fn solution(&self) -> &FeFunction {
        &self.solution
    }

    pub fn sup_norm(&self) -> f64 {
        crate::fem::norm_linf(&self.solution)
    }

    /// `q†|∇u|² + fu` per reference element.
    pub fn element_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().fold(f64::NEG_INFINITY, |m, &w| m.max(w))
    }

    fn difference(&self, q_star: &FeFunction) -> Result<Vec<f64>> {
        if q_star.mesh().dim() != self.mesh().dim() {
            return invalid("coefficient and reference have different dimensions");
        }
        let q = prolong(q_star, self.mesh());
        Ok(q.iter().zip(self.q_dag_h.values()).map(|(a, b)| a - b).collect())
    }

    /// `Σ_T w_T ‖q* − q†‖²_{L²(T)}` on the reference mesh.
    pub fn weighted_error(&self, q_star: &FeFunction) -> Result<f64> {
        let d = self.difference(q_star)?;
        let mesh = self.mesh();
        Ok((0..mesh.n_elements())
            .map(|e| self.weights[e] * element_mass_form(mesh, e, &d))
            .sum())
    }

    /// `‖q* − q†‖_{L²}` evaluated on the reference mesh.
    pub fn coefficient_error(&self, q_star: &FeFunction) -> Result<f64> {
        let d = self.difference(q_star)?;
        let mesh = self.mesh();
        Ok((0..mesh.n_elements())
            .map(|e| element_mass_form(mesh, e, &d))
            .sum::<f64>()
            .sqrt())
    }

    pub fn positivity_profile(&self, beta: f64) -> PositivityProfile {
        profile(self.mesh(), &self.weights, beta)
    }

    pub fn q_dag(&self) -> &ScalarField {
        &self.q_dag
    }
}

/// Reference trajectory of the parabolic problem. Only the steps from
/// `keep_from` on are stored; the sup norm covers all of them.
#[derive(Debug)]
pub struct ParabolicReference {
    space: Arc<P1Space>,
    grid: TimeGrid,
    q_dag: ScalarField,
    q_dag_h: FeFunction,
    source: SpaceTimeField,
    keep_from: usize,
    kept: Vec<FeFunction>,
    sup: f64,
}

impl ParabolicReference {
    pub fn new(
        q_dag: &ScalarField,
        source: &SpaceTimeField,
        initial: &ScalarField,
        mesh: Arc<Mesh>,
        grid: TimeGrid,
        keep_from: usize,
    ) -> Result<Self> {
        if keep_from > grid.steps() {
            return invalid(format!(
                "cannot keep states from step {keep_from} of {}",
                grid.steps()
            ));
        }
        let space = Arc::new(P1Space::new(mesh.clone()));
        let q_dag_h = lagrange_interpolate(&mesh, q_dag);
        let mut kept = Vec::with_capacity(grid.steps() + 1 - keep_from);
        let mut sup = 0.0f64;
        solve_parabolic_with(&space, &q_dag_h, source, initial, &grid, |n, u| {
            sup = sup.max(crate::fem::norm_linf(u));
            if n >= keep_from {
                kept.push(u.clone());
            }
        })?;
        Ok(Self {
            space,
            grid,
            q_dag: q_dag.clone(),
            q_dag_h,
            source: source.clone(),
            keep_from,
            kept,
            sup,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `sup_{x,t} |u|` over all fine nodes and steps.
    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn keep_from(&self) -> usize {
        self.keep_from
    }

    /// Fine state at step `n`, if retained.
    pub fn state(&self, n: usize) -> Result<&FeFunction> {
        n.checked_sub(self.keep_from)
            .and_then(|k| self.kept.get(k))
            .ok_or_else(|| {
                crate::Error::InvalidArgument(format!(
                    "reference step {n} not retained (kept {}..={})",
                    self.keep_from,
                    self.grid.steps()
                ))
            })
    }

    /// Fine steps per coarse step.
    pub fn ratio(&self, coarse: &TimeGrid) -> Result<usize> {
        let (nf, nc) = (self.grid.steps(), coarse.steps());
        if nf % nc != 0 || (coarse.final_time() - self.grid.final_time()).abs() > 1e-12 {
            return invalid(format!(
                "coarse time grid (N = {nc}) is not a coarsening of the reference (N = {nf})"
            ));
        }
        Ok(nf / nc)
    }

    /// `q†|∇u|² + (f − ∂_t u)u` per element at fine step `n ≥ 1`, with the
    /// backward difference for `∂_t u`.
    pub fn element_weights(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return invalid("the weight needs a previous step");
        }
        let u = self.state(n)?.values();
        let prev = self.state(n - 1)?.values();
        let mesh = self.mesh();
        let t = self.grid.time(n);
        let tau = self.grid.tau();
        let nv = mesh.nodes_per_element() as f64;
        Ok(element_weights(mesh, &self.q_dag, u, |e, p| {
            let dt = mesh
                .element(e)
                .iter()
                .map(|&i| (u[i] - prev[i]) / tau)
                .sum::<f64>()
                / nv;
            self.source.eval(p, t) - dt
        }))
    }

    pub fn positivity_profile(&self, n: usize, beta: f64) -> Result<PositivityProfile> {
        Ok(profile(self.mesh(), &self.element_weights(n)?, beta))
    }

    /// `τ Σ_{n ≥ N_σ} Σ_T w_T(t_n) ‖(q† − q*)/q†‖²_{L²(T)}` on the reference
    /// mesh, over the observed steps of `coarse`.
    pub fn weighted_error(&self, q_star: &FeFunction, coarse: &TimeGrid) -> Result<f64> {
        let k = self.ratio(coarse)?;
        let mesh = self.mesh();
        let q = prolong(q_star, mesh);
        let d: Vec<f64> = q
            .iter()
            .zip(self.q_dag_h.values())
            .map(|(a, b)| (b - a) / b)
            .collect();
        let forms: Vec<f64> = (0..mesh.n_elements())
            .map(|e| element_mass_form(mesh, e, &d))
            .collect();
        let mut total = 0.0;
        for n in coarse.observed() {
            let w = self.element_weights(n * k)?;
            total += w.iter().zip(&forms).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(coarse.tau() * total)
    }

    pub fn coefficient_error(&self, q_star: &FeFunction) -> Result<f64> {
        let mesh = self.mesh();
        let q = prolong(q_star, mesh);
        let d: Vec<f64> = q.iter().zip(self.q_dag_h.values()).map(|(a, b)| a - b).collect();
        Ok((0..mesh.n_elements())
            .map(|e| element_mass_form(mesh, e, &d))
            .sum::<f64>()
            .sqrt())
    }
}

/// `Σ_T w_T ‖q* − q†‖²_{L²(T)}` with the weight `q†|∇u(q†)|² + f u(q†)`
/// taken from a reference solve on `ref_mesh`.
pub fn weighted_error_elliptic(
    q_star: &FeFunction,
    q_dag: &ScalarField,
    source: &ScalarField,
    ref_mesh: &Arc<Mesh>,
) -> Result<f64> {
    EllipticReference::new(q_dag, source, ref_mesh.clone())?.weighted_error(q_star)
}

/// Minimum over elements of the elliptic weight, plain and divided by
/// `dist(centroid, ∂Ω)^β`.
pub fn positivity_profile(
    q_dag: &ScalarField,
    source: &ScalarField,
    ref_mesh: &Arc<Mesh>,
    beta: f64,
) -> Result<PositivityProfile> {
    Ok(EllipticReference::new(q_dag, source, ref_mesh.clone())?.positivity_profile(beta))
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn ell1d() -> (ScalarField, ScalarField) {
        (
            ScalarField::new(|p| 2.0 + (2.0 * PI * p[0]).sin()),
            ScalarField::constant(1.0),
        )
    }

    #[test]
    fn weighted_error_vanishes_at_interpolant() {
        let (q, f) = ell1d();
        let fine = Mesh::interval(400).unwrap();
        let coarse = Mesh::interval(40).unwrap();
        let r = EllipticReference::new(&q, &f, fine.clone()).unwrap();
        // the coarse interpolant differs from the fine one between nodes
        let same = lagrange_interpolate(&fine, &q);
        assert!(r.weighted_error(&same).unwrap() < 1e-25);
        assert!(r.weighted_error(&lagrange_interpolate(&coarse, &q)).unwrap() > 0.0);
    }

    #[test]
    fn constant_shift_error() {
        let (q, f) = ell1d();
        let fine = Mesh::interval(200).unwrap();
        let r = EllipticReference::new(&q, &f, fine.clone()).unwrap();
        let shifted = lagrange_interpolate(&fine, &ScalarField::new(|p| 2.3 + (2.0 * PI * p[0]).sin()));
        assert_abs_diff_eq!(r.coefficient_error(&shifted).unwrap(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn weights_nonnegative_for_ell1d() {
        let (q, f) = ell1d();
        let r = EllipticReference::new(&q, &f, Mesh::interval(800).unwrap()).unwrap();
        assert!(r.element_weights().iter().all(|&w| w >= 0.0));
        assert!(r.positivity_profile(0.0).min_weight > 0.0);
    }

    #[test]
    fn beta_zero_ratio_is_weight() {
        let (q, f) = ell1d();
        let r = EllipticReference::new(&q, &f, Mesh::interval(100).unwrap()).unwrap();
        let p = r.positivity_profile(0.0);
        assert_eq!(p.min_ratio, p.min_weight);
        assert!(r.positivity_profile(2.0).min_ratio >= p.min_weight);
    }

    #[test]
    fn unit_coefficient_weight_at_center() {
        // u = x(1−x)/2, ∇u(½) = 0, so the weight at the centre is u(½) = 1/8
        let r = EllipticReference::new(
            &ScalarField::constant(1.0),
            &ScalarField::constant(1.0),
            Mesh::interval(1000).unwrap(),
        )
        .unwrap();
        let w = r.element_weights();
        let mid = 0.5 * (w[499] + w[500]);
        assert_abs_diff_eq!(mid, 0.125, epsilon = 1e-5);
    }

    #[test]
    fn weighted_error_bounded_by_max_weight() {
        let (q, f) = ell1d();
        let r = EllipticReference::new(&q, &f, Mesh::interval(320).unwrap()).unwrap();
        let coarse = Mesh::interval(40).unwrap();
        let guess = lagrange_interpolate(&coarse, &ScalarField::new(|p| 2.0 + p[0]));
        let e = r.coefficient_error(&guess).unwrap();
        assert!(r.weighted_error(&guess).unwrap() <= r.max_weight() * e * e);
    }

    #[test]
    fn ell2d_minimum_at_corner() {
        let q = ScalarField::new(|p| 1.0 + p[1] * (1.0 - p[1]) * (PI * p[0]).sin());
        let r = EllipticReference::new(&q, &ScalarField::constant(1.0), Mesh::unit_square(40).unwrap()).unwrap();
        let p = r.positivity_profile(0.0);
        assert!(touches_corner(r.mesh(), p.argmin));
    }

    #[test]
    fn parabolic_reference_retains_window() {
        let mesh = Mesh::interval(20).unwrap();
        let grid = TimeGrid::new(0.1, 40, 0.0).unwrap();
        let r = ParabolicReference::new(
            &ScalarField::constant(1.0),
            &SpaceTimeField::constant(0.0),
            &ScalarField::new(|p| (PI * p[0]).sin()),
            mesh,
            grid,
            36,
        )
        .unwrap();
        assert!(r.state(35).is_err());
        assert!(r.state(40).is_ok());
        assert!(r.sup_norm() > 0.99);
        // heat decay: f − ∂_t u ≈ π²u > 0 away from the boundary
        let p = r.positivity_profile(40, 0.0).unwrap();
        assert!(p.min_weight > 0.0);
        let coarse = TimeGrid::new(0.1, 10, 0.0).unwrap();
        assert_eq!(r.ratio(&coarse).unwrap(), 4);
        assert!(r.ratio(&TimeGrid::new(0.1, 7, 0.0).unwrap()).is_err());
    }
}

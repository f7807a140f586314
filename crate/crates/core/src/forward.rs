//! Forward solvers: the discrete elliptic problem and the backward Euler
//! scheme for the parabolic problem, both with homogeneous Dirichlet data.

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::fem::{FeFunction, P1Space, ScalarField, SpaceTimeField};
use crate::linalg::{cg_solve, cg_solve_from, SparseMatrix};

/// Uniform partition of `[0, T]` into `N` steps, with an observation window
/// `(T − σ, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    final_time: f64,
    steps: usize,
    window: f64,
    first_observed: usize,
}

impl TimeGrid {
    /// `window` is the length σ of the observation window. `(T − σ)/τ` must be
    /// an integer. A zero window observes the last step only.
    pub fn new(final_time: f64, steps: usize, window: f64) -> Result<Self> {
        if !(final_time > 0.0) || steps == 0 {
            return invalid(format!(
                "time grid needs T > 0 and N ≥ 1, got T = {final_time}, N = {steps}"
            ));
        }
        if !(0.0..final_time).contains(&window) {
            return invalid(format!("observation window {window} must lie in [0, T)"));
        }
        let tau = final_time / steps as f64;
        let k = (final_time - window) / tau;
        if (k - k.round()).abs() > 1e-8 * k.max(1.0) {
            return invalid(format!(
                "(T − σ)/τ = {k} is not an integer for T = {final_time}, σ = {window}, N = {steps}"
            ));
        }
        let first_observed = (k.round() as usize + 1).min(steps);
        Ok(Self {
            final_time,
            steps,
            window,
            first_observed,
        })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau()
    }

    /// First observed step index `N_σ`.
    pub fn first_observed(&self) -> usize {
        self.first_observed
    }

    /// Observed step indices `N_σ..=N`.
    pub fn observed(&self) -> std::ops::RangeInclusive<usize> {
        self.first_observed..=self.steps
    }

    pub fn n_observed(&self) -> usize {
        self.steps + 1 - self.first_observed
    }
}

/// Fully discrete trajectory `U⁰, …, Uᴺ`.
#[derive(Debug, Clone)]
pub struct TimeSeriesFe {
    pub grid: TimeGrid,
    pub states: Vec<FeFunction>,
}

/// Solve `(q∇u, ∇v) = (f, v)` for all zero-trace P1 `v`.
pub fn solve_elliptic(space: &P1Space, q: &FeFunction, f: &ScalarField) -> Result<FeFunction> {
    let b = space.interior_load(f);
    let u = solve_elliptic_interior(space, q.values(), &b)?;
    space.from_interior(&u)
}

/// Interior unknowns of the elliptic problem for a given interior load.
pub fn solve_elliptic_interior(space: &P1Space, q: &[f64], load: &[f64]) -> Result<Vec<f64>> {
    let k = space.interior_stiffness(q)?;
    Ok(cg_solve(&k, load, space.cg_options())?.x)
}

/// Right-hand side source for the time stepper, either one load vector for
/// all steps or recomputed at every `t_n`.
pub(crate) enum Loads {
    Steady(Vec<f64>),
    PerStep(Vec<Vec<f64>>),
    OnTheFly(SpaceTimeField),
}

impl Loads {
    pub(crate) fn new(space: &P1Space, f: &SpaceTimeField, grid: &TimeGrid, cache: bool) -> Self {
        if f.is_steady() {
            Loads::Steady(space.interior_load(&f.at(0.0)))
        } else if cache {
            Loads::PerStep(
                (1..=grid.steps())
                    .map(|n| space.interior_load(&f.at(grid.time(n))))
                    .collect(),
            )
        } else {
            Loads::OnTheFly(f.clone())
        }
    }

    fn write(&self, space: &P1Space, n: usize, t: f64, scale: f64, out: &mut [f64]) {
        match self {
            Loads::Steady(b) => out.iter_mut().zip(b).for_each(|(o, b)| *o += scale * b),
            Loads::PerStep(bs) => out
                .iter_mut()
                .zip(&bs[n - 1])
                .for_each(|(o, b)| *o += scale * b),
            Loads::OnTheFly(f) => {
                let b = space.interior_load(&f.at(t));
                out.iter_mut().zip(&b).for_each(|(o, b)| *o += scale * b);
            }
        }
    }
}

/// Backward Euler operator `M + τK(q)` on interior nodes, assembled once per
/// coefficient and step size.
pub(crate) struct Stepper<'a> {
    space: &'a P1Space,
    pub(crate) system: SparseMatrix,
    tau: f64,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(space: &'a P1Space, q: &[f64], tau: f64) -> Result<Self> {
        let k = space.interior_stiffness(q)?;
        let system = space.interior_mass().linear_combination(1.0, &k, tau)?;
        Ok(Self { space, system, tau })
    }

    /// March `U⁰ → Uᴺ`, handing every state (interior values) to `visit`.
    pub(crate) fn march(
        &self,
        u0: Vec<f64>,
        grid: &TimeGrid,
        loads: &Loads,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let mut u = u0;
        visit(0, &u);
        let mut rhs = vec![0.0; u.len()];
        for n in 1..=grid.steps() {
            self.space.interior_mass().matvec_into(&u, &mut rhs);
            loads.write(self.space, n, grid.time(n), self.tau, &mut rhs);
            u = cg_solve_from(&self.system, &rhs, u, self.space.cg_options())?.x;
            visit(n, &u);
        }
        Ok(())
    }

    /// Solve `(M + τK) x = rhs`, warm-started from `guess`.
    pub(crate) fn solve(&self, rhs: &[f64], guess: Vec<f64>) -> Result<Vec<f64>> {
        Ok(cg_solve_from(&self.system, rhs, guess, self.space.cg_options())?.x)
    }
}

/// `U⁰ = P_h u₀`, then `(M + τK(q))Uⁿ = MUⁿ⁻¹ + τ b(f(t_n))` for `n = 1..N`.
pub fn solve_parabolic(
    space: &P1Space,
    q: &FeFunction,
    f: &SpaceTimeField,
    u0: &ScalarField,
    grid: &TimeGrid,
) -> Result<TimeSeriesFe> {
    let mut states = Vec::with_capacity(grid.steps() + 1);
    solve_parabolic_with(space, q, f, u0, grid, |_, u| {
        states.push(u.clone());
    })?;
    Ok(TimeSeriesFe {
        grid: *grid,
        states,
    })
}

/// Streaming variant of [`solve_parabolic`]: states are passed to `visit`
/// instead of being stored.
pub fn solve_parabolic_with(
    space: &P1Space,
    q: &FeFunction,
    f: &SpaceTimeField,
    u0: &ScalarField,
    grid: &TimeGrid,
    mut visit: impl FnMut(usize, &FeFunction),
) -> Result<()> {
    let stepper = Stepper::new(space, q.values(), grid.tau())?;
    let loads = Loads::new(space, f, grid, false);
    let init = space.l2_project(u0)?.interior_values();
    let mesh: Arc<_> = space.mesh().clone();
    let mut err = None;
    stepper.march(init, grid, &loads, |n, u| {
        if err.is_some() {
            return;
        }
        match FeFunction::from_interior(mesh.clone(), u) {
            Ok(state) => visit(n, &state),
            Err(e) => err = Some(e),
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{norm_l2, Space};
    use crate::mesh::Mesh;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn space_1d(n: usize) -> P1Space {
        P1Space::new(Mesh::interval(n).unwrap())
    }

    #[test]
    fn time_grid_indices() {
        let g = TimeGrid::new(0.1, 10, 0.0).unwrap();
        assert_abs_diff_eq!(g.tau(), 0.01, epsilon = 1e-16);
        assert_eq!(g.first_observed(), 10);
        assert_eq!(g.n_observed(), 1);
        let g = TimeGrid::new(1.0, 10, 0.5).unwrap();
        assert_eq!(g.first_observed(), 6);
        assert_eq!(g.observed().collect::<Vec<_>>(), vec![6, 7, 8, 9, 10]);
        assert!(TimeGrid::new(1.0, 10, 0.55).is_err());
        assert!(TimeGrid::new(1.0, 0, 0.0).is_err());
        assert!(TimeGrid::new(1.0, 4, 1.0).is_err());
    }

    #[test]
    fn elliptic_nodally_exact() {
        let s = space_1d(16);
        let u = solve_elliptic(&s, &FeFunction::constant(s.mesh().clone(), 1.0), &ScalarField::constant(1.0)).unwrap();
        assert_eq!(u.space(), Space::ZeroTrace);
        for i in 0..=16 {
            let x = i as f64 / 16.0;
            assert_abs_diff_eq!(u.values()[i], x * (1.0 - x) / 2.0, epsilon = 1e-11);
        }
        let u = solve_elliptic(&s, &FeFunction::constant(s.mesh().clone(), 2.0), &ScalarField::constant(1.0)).unwrap();
        for i in 0..=16 {
            let x = i as f64 / 16.0;
            assert_abs_diff_eq!(u.values()[i], x * (1.0 - x) / 4.0, epsilon = 1e-11);
        }
        let u = solve_elliptic(&s, &FeFunction::constant(s.mesh().clone(), 2.0), &ScalarField::constant(0.0)).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elliptic_rejects_nonpositive_coefficient() {
        let s = space_1d(4);
        let q = FeFunction::constant(s.mesh().clone(), -1.0);
        assert!(solve_elliptic(&s, &q, &ScalarField::constant(1.0)).is_err());
    }

    // (q∇u_h, ∇φ_i) − (f, φ_i) vanishes for every interior basis function.
    #[test]
    fn elliptic_galerkin_orthogonality() {
        let m = Mesh::unit_square(12).unwrap();
        let s = P1Space::new(m.clone());
        let q = crate::fem::lagrange_interpolate(&m, &ScalarField::new(|p| 1.0 + p[0] * (1.0 - p[1])));
        let f = ScalarField::new(|p| 1.0 + p[0]);
        let u = solve_elliptic(&s, &q, &f).unwrap();
        let k = s.interior_stiffness(q.values()).unwrap();
        let b = s.interior_load(&f);
        let ku = k.matvec(&u.interior_values()).unwrap();
        let bnorm = crate::linalg::norm2(&b);
        for (a, c) in ku.iter().zip(&b) {
            assert!((a - c).abs() <= 10.0 * 1e-10 * bnorm);
        }
    }

    #[test]
    fn elliptic_second_order_in_l2() {
        // q ≡ 1, f ≡ 1: u = x(1−x)/2 in 1D.
        let exact = ScalarField::new(|p| p[0] * (1.0 - p[0]) / 2.0);
        let mut errs = Vec::new();
        let hs: Vec<usize> = vec![8, 16, 32, 64, 128];
        for &n in &hs {
            let s = space_1d(n);
            let u = solve_elliptic(&s, &FeFunction::constant(s.mesh().clone(), 1.0), &ScalarField::constant(1.0)).unwrap();
            // compare against the exact solution with a fine quadrature
            errs.push(l2_error_fine(&u, &exact));
        }
        let rate = crate::experiment::fit_rate(
            &hs.iter().map(|&n| 1.0 / n as f64).zip(errs.iter().copied()).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((rate - 2.0).abs() <= 0.1, "rate {rate}");
    }

    pub(crate) fn l2_error_fine(u: &FeFunction, exact: &ScalarField) -> f64 {
        // 8-subinterval midpoint rule per element; 1D only
        let n = u.mesh().cells_per_side();
        let mut s = 0.0;
        let sub = 8;
        for i in 0..n * sub {
            let x = (i as f64 + 0.5) / (n * sub) as f64;
            let d = u.eval(&[x]) - exact.eval(&[x]);
            s += d * d / (n * sub) as f64;
        }
        s.sqrt()
    }

    #[test]
    fn zero_data_stays_zero() {
        let s = space_1d(8);
        let g = TimeGrid::new(0.1, 5, 0.0).unwrap();
        let sol = solve_parabolic(
            &s,
            &FeFunction::constant(s.mesh().clone(), 1.0),
            &SpaceTimeField::constant(0.0),
            &ScalarField::constant(0.0),
            &g,
        )
        .unwrap();
        assert_eq!(sol.states.len(), 6);
        assert!(sol.states.iter().all(|u| u.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn energy_nonincreasing_without_source() {
        let m = Mesh::unit_square(8).unwrap();
        let s = P1Space::new(m.clone());
        let q = crate::fem::lagrange_interpolate(&m, &ScalarField::new(|p| 1.0 + p[0]));
        let g = TimeGrid::new(0.2, 20, 0.0).unwrap();
        let u0 = ScalarField::new(|p| (PI * p[0]).sin() * p[1] * (1.0 - p[1]) * 4.0 + 0.3);
        let sol = solve_parabolic(&s, &q, &SpaceTimeField::constant(0.0), &u0, &g).unwrap();
        let norms: Vec<f64> = sol.states.iter().map(norm_l2).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn steady_state_limit() {
        let s = space_1d(16);
        let g = TimeGrid::new(2.0, 100, 0.0).unwrap();
        let sol = solve_parabolic(
            &s,
            &FeFunction::constant(s.mesh().clone(), 1.0),
            &SpaceTimeField::constant(1.0),
            &ScalarField::constant(0.0),
            &g,
        )
        .unwrap();
        let last = sol.states.last().unwrap();
        for i in 0..=16 {
            let x = i as f64 / 16.0;
            assert_abs_diff_eq!(last.values()[i], x * (1.0 - x) / 2.0, epsilon = 1e-6);
        }
    }

    // Separation of variables: u = e^{−π²t} sin(πx).
    #[test]
    fn heat_decay_first_order_in_time() {
        let t_final = 0.3;
        let s = space_1d(256);
        let q = FeFunction::constant(s.mesh().clone(), 1.0);
        let u0 = ScalarField::new(|p| (PI * p[0]).sin());
        let exact = crate::fem::lagrange_interpolate(
            s.mesh(),
            &ScalarField::new(move |p| (-PI * PI * t_final).exp() * (PI * p[0]).sin()),
        );
        let mut pts = Vec::new();
        for steps in [3, 6, 12, 24, 48] {
            let g = TimeGrid::new(t_final, steps, 0.0).unwrap();
            let sol = solve_parabolic(&s, &q, &SpaceTimeField::constant(0.0), &u0, &g).unwrap();
            let err = norm_l2(&sol.states.last().unwrap().sub(&exact).unwrap());
            pts.push((g.tau(), err));
        }
        let rate = crate::experiment::fit_rate(&pts).unwrap();
        assert!((rate - 1.0).abs() <= 0.1, "rate {rate}");
    }

    #[test]
    fn time_dependent_source_sampled_at_step_end() {
        // One step with f = t: (M + τK) U¹ = τ b(t₁).
        let s = space_1d(8);
        let g = TimeGrid::new(0.5, 1, 0.0).unwrap();
        let q = FeFunction::constant(s.mesh().clone(), 1.0);
        let sol = solve_parabolic(
            &s,
            &q,
            &SpaceTimeField::new(|_, t| t),
            &ScalarField::constant(0.0),
            &g,
        )
        .unwrap();
        let stepper = Stepper::new(&s, q.values(), 0.5).unwrap();
        let rhs: Vec<f64> = s.interior_load(&ScalarField::constant(0.5)).iter().map(|b| 0.5 * b).collect();
        let direct = stepper.solve(&rhs, vec![0.0; rhs.len()]).unwrap();
        for (a, b) in sol.states[1].interior_values().iter().zip(&direct) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

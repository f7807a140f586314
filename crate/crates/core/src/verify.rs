//! Self-checks of the numerical building blocks: adjoint gradients against
//! finite differences, forward convergence orders, projections and the noise
//! generator.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::experiment::{fit_rate, NoiseSpec};
use crate::fem::{lagrange_interpolate, norm_l2, FeFunction, P1Space, ScalarField, Space, SpaceTimeField};
use crate::forward::{solve_elliptic, solve_parabolic, TimeGrid};
use crate::inverse::{
    project_box, AdmissibleBox, EllipticInverseProblem, Objective, ParabolicInverseProblem,
};
use crate::linalg::dot;
use crate::mesh::Mesh;

/// Outcome of one check: the measured quantity and whether it met its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, bound: impl Into<String>, passed: bool) -> Self {
        Self {
            name,
            value,
            bound: bound.into(),
            passed,
        }
    }
}

/// Test seams for the negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Faults {
    /// Flip the sign of every adjoint gradient.
    pub negate_gradient: bool,
}

/// Wraps an objective, optionally negating its gradient.
struct Faulty<'a, P> {
    inner: &'a P,
    negate: bool,
}

impl<P: Objective> Objective for Faulty<'_, P> {
    type State = P::State;

    fn mesh(&self) -> &Arc<Mesh> {
        self.inner.mesh()
    }

    fn bounds(&self) -> AdmissibleBox {
        self.inner.bounds()
    }

    fn evaluate(&self, q: &[f64]) -> Result<(f64, P::State)> {
        self.inner.evaluate(q)
    }

    fn gradient(&self, q: &[f64], state: &P::State) -> Result<Vec<f64>> {
        let mut g = self.inner.gradient(q, state)?;
        if self.negate {
            g.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(g)
    }
}

pub const FD_TOLERANCE: f64 = 1e-5;

/// Minimum over steps `10⁻³..10⁻⁸` of the relative mismatch between `gᵀd`
/// and the central difference of `J` along `d`.
pub fn fd_mismatch<P: Objective>(p: &P, q: &[f64], d: &[f64]) -> Result<f64> {
    let (_, g) = p.value_and_gradient(q)?;
    let gd = dot(&g, d);
    let mut best = f64::INFINITY;
    for k in 3..=8 {
        let h = 10f64.powi(-k);
        let qp: Vec<f64> = q.iter().zip(d).map(|(a, b)| a + h * b).collect();
        let qm: Vec<f64> = q.iter().zip(d).map(|(a, b)| a - h * b).collect();
        let fd = (p.value(&qp)? - p.value(&qm)?) / (2.0 * h);
        best = best.min((fd - gd).abs() / gd.abs().max(1e-300));
    }
    Ok(best)
}

/// Worst FD mismatch over `directions` random points and directions.
fn worst_mismatch<P: Objective>(p: &P, faults: Faults, directions: usize, seed: u64) -> Result<f64> {
    let p = Faulty {
        inner: p,
        negate: faults.negate_gradient,
    };
    let nn = p.mesh().n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let q: Vec<f64> = (0..nn).map(|_| rng.random_range(1.0..3.0)).collect();
        let d: Vec<f64> = (0..nn).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(fd_mismatch(&p, &q, &d)?);
    }
    Ok(worst)
}

fn perturbed(z: &FeFunction) -> Result<FeFunction> {
    let mesh = z.mesh().clone();
    let vals = z
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mesh.is_boundary(i) { 0.0 } else { v * (1.0 + 0.05 * (7.0 * i as f64).sin()) })
        .collect();
    FeFunction::new(mesh, vals, Space::ZeroTrace)
}

/// Elliptic gradient on the 1D benchmark at `n = 25` with perturbed data.
pub fn elliptic_gradient_mismatch(faults: Faults, directions: usize) -> Result<f64> {
    let mesh = Mesh::interval(25)?;
    let space = Arc::new(P1Space::new(mesh.clone()));
    let f = ScalarField::constant(1.0);
    let q_dag = lagrange_interpolate(&mesh, &ScalarField::new(|p| 2.0 + (2.0 * PI * p[0]).sin()));
    let z = perturbed(&solve_elliptic(&space, &q_dag, &f)?)?;
    let p = EllipticInverseProblem::new(space, &z, &f, 1e-6, AdmissibleBox::default())?;
    worst_mismatch(&p, faults, directions, 7)
}

/// Parabolic gradient on the 1D benchmark at `n = 25`, `N = 100`.
pub fn parabolic_gradient_mismatch(faults: Faults, directions: usize) -> Result<f64> {
    let mesh = Mesh::interval(25)?;
    let space = Arc::new(P1Space::new(mesh.clone()));
    let q_dag = lagrange_interpolate(
        &mesh,
        &ScalarField::new(|p| 2.0 + (2.0 * PI * p[0]).sin() * (-2.0 * (1.0 - p[0])).exp()),
    );
    let f = SpaceTimeField::steady(ScalarField::new(|p| 4.0 * p[0] * (1.0 - p[0])));
    let u0 = ScalarField::new(|p| (PI * p[0]).sin());
    let grid = TimeGrid::new(0.1, 100, 0.0)?;
    let sol = solve_parabolic(&space, &q_dag, &f, &u0, &grid)?;
    let data = grid
        .observed()
        .map(|k| perturbed(&sol.states[k]))
        .collect::<Result<Vec<_>>>()?;
    let p = ParabolicInverseProblem::new(space, grid, &data, &f, &u0, 1e-7, AdmissibleBox::default())?;
    worst_mismatch(&p, faults, directions, 11)
}

/// Midpoint-rule L² error of a 1D function against `exact`, eight points
/// per element.
fn l2_error_1d(u: &FeFunction, exact: &ScalarField) -> f64 {
    let m = u.mesh().cells_per_side() * 8;
    let s: f64 = (0..m)
        .map(|i| {
            let x = (i as f64 + 0.5) / m as f64;
            let d = u.eval(&[x]) - exact.eval(&[x]);
            d * d
        })
        .sum();
    (s / m as f64).sqrt()
}

/// L² rate in `h` for `-u'' = 1`, `u = x(1−x)/2`, over `h = 1/8..1/128`.
pub fn elliptic_order() -> Result<f64> {
    let exact = ScalarField::new(|p| p[0] * (1.0 - p[0]) / 2.0);
    let mut pts = Vec::new();
    for n in [8, 16, 32, 64, 128] {
        let space = P1Space::new(Mesh::interval(n)?);
        let q = FeFunction::constant(space.mesh().clone(), 1.0);
        let u = solve_elliptic(&space, &q, &ScalarField::constant(1.0))?;
        pts.push((1.0 / n as f64, l2_error_1d(&u, &exact)));
    }
    fit_rate(&pts)
}

/// Rate in `τ` at `t = 0.3` for `u = e^{−π²t} sin πx` on `h = 1/256`, over
/// `τ = 1/10..1/160`.
pub fn parabolic_order() -> Result<f64> {
    let t_final = 0.3;
    let space = P1Space::new(Mesh::interval(256)?);
    let q = FeFunction::constant(space.mesh().clone(), 1.0);
    let u0 = ScalarField::new(|p| (PI * p[0]).sin());
    let exact = lagrange_interpolate(
        space.mesh(),
        &ScalarField::new(move |p| (-PI * PI * t_final).exp() * (PI * p[0]).sin()),
    );
    let mut pts = Vec::new();
    for steps in [3, 6, 12, 24, 48] {
        let grid = TimeGrid::new(t_final, steps, 0.0)?;
        let sol = solve_parabolic(&space, &q, &SpaceTimeField::constant(0.0), &u0, &grid)?;
        let last = sol.states.last().expect("at least one step");
        pts.push((grid.tau(), norm_l2(&last.sub(&exact)?)));
    }
    fit_rate(&pts)
}

/// Largest change when the L² projection and the box projection are applied
/// to their own output.
pub fn projection_defect() -> Result<f64> {
    let mut worst = 0.0f64;
    for mesh in [Mesh::interval(17)?, Mesh::unit_square(9)?] {
        let space = P1Space::new(mesh.clone());
        let f = ScalarField::new(|p| p.iter().map(|x| x * (1.0 - x)).product::<f64>() * (3.0 * p[0]).cos());
        let once = space.l2_project(&f)?;
        let twice = space.project_nested(&once)?;
        worst = worst.max(norm_l2(&twice.sub(&once)?) / norm_l2(&once));

        let bounds = AdmissibleBox::default();
        let q = lagrange_interpolate(&mesh, &ScalarField::new(|p| 6.0 * p[0] - 0.5));
        let a = project_box(&q, &bounds);
        let b = project_box(&a, &bounds);
        let box_defect = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(box_defect);
    }
    Ok(worst)
}

/// Sample mean, standard deviation and the correlation between streams 0
/// and 1 of the noise generator.
pub fn noise_statistics(samples: usize) -> (f64, f64, f64) {
    let spec = NoiseSpec { epsilon: 1.0, seed: 20240, stream: 0 };
    let mut a = spec.rng();
    let mut b = spec.with_stream(1).rng();
    let (mut s, mut ss, mut sab) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let x: f64 = a.sample(StandardNormal);
        let y: f64 = b.sample(StandardNormal);
        s += x;
        ss += x * x;
        sab += x * y;
    }
    let n = samples as f64;
    let mean = s / n;
    (mean, (ss / n - mean * mean).sqrt(), sab / n)
}

/// The full suite in a fixed order.
pub fn run_all(faults: Faults) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let bound = format!("<= {FD_TOLERANCE:e}");
    let m = elliptic_gradient_mismatch(faults, 10)?;
    out.push(Check::new("elliptic gradient vs finite differences", m, bound.clone(), m <= FD_TOLERANCE));
    let m = parabolic_gradient_mismatch(faults, 10)?;
    out.push(Check::new("parabolic gradient vs finite differences", m, bound, m <= FD_TOLERANCE));
    let r = elliptic_order()?;
    out.push(Check::new("elliptic L2 order in h", r, "2.0 +- 0.1", (r - 2.0).abs() <= 0.1));
    let r = parabolic_order()?;
    out.push(Check::new("parabolic order in tau", r, "1.0 +- 0.1", (r - 1.0).abs() <= 0.1));
    let d = projection_defect()?;
    out.push(Check::new("projection idempotence", d, "<= 1e-9", d <= 1e-9));
    let samples = 200_000;
    let tol = 5.0 / (samples as f64).sqrt();
    let (mean, sd, corr) = noise_statistics(samples);
    out.push(Check::new("noise mean", mean, format!("|.| <= {tol:.1e}"), mean.abs() <= tol));
    out.push(Check::new("noise standard deviation", sd, format!("1 +- {tol:.1e}"), (sd - 1.0).abs() <= tol));
    out.push(Check::new("noise stream correlation", corr, format!("|.| <= {tol:.1e}"), corr.abs() <= tol));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders() {
        let e = elliptic_order().unwrap();
        assert!((e - 2.0).abs() <= 0.1, "{e}");
        let p = parabolic_order().unwrap();
        assert!((p - 1.0).abs() <= 0.1, "{p}");
    }

    #[test]
    fn negated_gradient_is_caught() {
        assert!(elliptic_gradient_mismatch(Faults::default(), 3).unwrap() <= FD_TOLERANCE);
        let bad = Faults { negate_gradient: true };
        assert!(elliptic_gradient_mismatch(bad, 3).unwrap() > 1.0);
        assert!(parabolic_gradient_mismatch(bad, 2).unwrap() > 1.0);
    }

    #[test]
    fn projections_and_noise() {
        assert!(projection_defect().unwrap() <= 1e-9);
        let (m, s, c) = noise_statistics(50_000);
        assert!(m.abs() < 0.03 && (s - 1.0).abs() < 0.03 && c.abs() < 0.03);
    }
}

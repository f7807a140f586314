use crate::error::{invalid, Result};
use crate::fem::{assemble_mass, assemble_unit_stiffness, FeFunction, Space};
use crate::linalg::{cg_solve, dot, norm2, CgOptions, SparseMatrix};
use crate::mesh::Mesh;

use super::{AdmissibleBox, Objective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    /// Stop once `‖g_k‖ ≤ grad_rel_tol · ‖g_0‖` (projected gradients).
    pub grad_rel_tol: f64,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of its value.
    pub obj_rel_tol: f64,
    pub armijo_c: f64,
    /// Upper bound on the step shrink per rejected trial.
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Largest nodal change of the very first trial step.
    pub initial_step: f64,
    /// Inner product in which search directions are formed.
    pub metric: Metric,
    /// Inner CG iterations per direction under [`Metric::GaussNewton`].
    pub inner_max_iters: usize,
    pub inner_rel_tol: f64,
}

/// Map applied to the projected gradient before it enters the CG
/// recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Plain nodal gradient.
    Euclidean,
    /// `M⁻¹ g`.
    L2,
    /// `(M + K₁)⁻¹ g`.
    H1,
    /// Inexact solve with the problem's Gauss–Newton Hessian, by CG
    /// preconditioned with `H1`. Problems without such a model use `H1`.
    GaussNewton,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::L2 => "l2",
            Metric::H1 => "h1",
            Metric::GaussNewton => "gauss_newton",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "l2" => Ok(Metric::L2),
            "h1" => Ok(Metric::H1),
            "gauss_newton" => Ok(Metric::GaussNewton),
            other => Err(format!(
                "unknown metric `{other}` (expected euclidean, l2, h1 or gauss_newton)"
            )),
        }
    }
}

struct RieszMap(Option<SparseMatrix>);

impl RieszMap {
    fn new(mesh: &Mesh, metric: Metric) -> Result<Self> {
        Ok(Self(match metric {
            Metric::Euclidean => None,
            Metric::L2 => Some(assemble_mass(mesh)),
            Metric::H1 | Metric::GaussNewton => {
                Some(assemble_mass(mesh).linear_combination(1.0, &assemble_unit_stiffness(mesh), 1.0)?)
            }
        }))
    }

    fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        match &self.0 {
            None => Ok(g.to_vec()),
            Some(a) => Ok(cg_solve(a, g, &CgOptions::default())?.x),
        }
    }
}

/// Search-direction map: `sg = P⁻¹ pg`.
struct DirectionMap<'a, P: Objective> {
    problem: &'a P,
    riesz: RieszMap,
    newton: bool,
    max_iters: usize,
    rel_tol: f64,
}

impl<P: Objective> DirectionMap<'_, P> {
    fn apply(&self, q: &[f64], state: &P::State, b: &[f64]) -> Result<Vec<f64>> {
        let fallback = self.riesz.apply(b)?;
        if !self.newton || self.problem.gauss_newton(q, state, b).is_none() {
            return Ok(fallback);
        }
        // preconditioned CG from zero, so every iterate is a descent direction
        let n = b.len();
        let b0 = norm2(b);
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z = fallback;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..self.max_iters {
            let Some(ap) = self.problem.gauss_newton(q, state, &p) else {
                break;
            };
            let ap = ap?;
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let a = rz / pap;
            for i in 0..n {
                x[i] += a * p[i];
                r[i] -= a * ap[i];
            }
            if norm2(&r) <= self.rel_tol * b0 {
                break;
            }
            z = self.riesz.apply(&r)?;
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if x.iter().all(|&v| v == 0.0) {
            return self.riesz.apply(b);
        }
        Ok(x)
    }
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_rel_tol: 1e-6,
            obj_rel_tol: 1e-10,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 40,
            initial_step: 0.5,
            metric: Metric::GaussNewton,
            inner_max_iters: 50,
            inner_rel_tol: 1e-2,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.grad_rel_tol,
            self.obj_rel_tol,
            self.armijo_c,
            self.initial_step,
            self.inner_rel_tol,
        ];
        if self.max_iters == 0
            || self.max_backtracks == 0
            || self.inner_max_iters == 0
            || positive.iter().any(|v| !(*v > 0.0))
        {
            return invalid("optimizer options must all be positive");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return invalid("backtrack_factor must lie in (0, 1)");
        }
        if self.armijo_c >= 1.0 {
            return invalid("armijo_c must be below 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    MaxIterations,
    /// No trial step decreased the objective.
    Stagnation,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::GradientTolerance => "gradient_tolerance",
            Termination::ObjectiveTolerance => "objective_tolerance",
            Termination::MaxIterations => "max_iterations",
            Termination::Stagnation => "stagnation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub q_star: FeFunction,
    /// `J(q_0), J(q_1), …`, one entry per iterate.
    pub objective_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective evaluations, including rejected trials.
    pub evaluations: usize,
    /// Whether every iterate stayed inside the box.
    pub feasible: bool,
}

/// Gradient with components removed where a bound is active and the
/// gradient points out of the box.
fn projected_gradient(q: &[f64], g: &[f64], b: &AdmissibleBox) -> Vec<f64> {
    q.iter()
        .zip(g)
        .map(|(&x, &gi)| {
            if (x <= b.lower() && gi > 0.0) || (x >= b.upper() && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

struct Step<S> {
    q: Vec<f64>,
    j: f64,
    g: Vec<f64>,
    alpha: f64,
    state: S,
}

const LINE_REFINEMENTS: usize = 6;

/// Secant root of the slope between `a < b` (negative at `a`, nonnegative at
/// `b`), kept away from both ends.
fn secant_inside(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let sec = a - sa * (b - a) / (sb - sa);
    sec.clamp(a + 1e-3 * (b - a), b - 1e-3 * (b - a))
}
const CURVATURE_TOL: f64 = 1e-4;

/// Armijo search along `d` on projected trial points, refined towards a
/// stationary point of `α ↦ J(P(q + αd))`. Components with a `snap` target
/// are set to it at every trial. The first trial length comes from
/// the previous step, or from `initial_step` on the largest component.
#[allow(clippy::too_many_arguments)]
fn line_search<P: Objective>(
    problem: &P,
    opts: &OptimizerOptions,
    q: &[f64],
    j: f64,
    g: &[f64],
    d: &[f64],
    slope: f64,
    snap: &[Option<f64>],
    prev_step: Option<(f64, f64)>,
    evaluations: &mut usize,
) -> Result<Option<Step<P::State>>> {
    let bounds = problem.bounds();
    let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_alpha = (bounds.upper() - bounds.lower()) / dmax;
    let mut alpha = match prev_step {
        None => opts.initial_step / dmax,
        Some((a, s)) => a * s / slope,
    }
    .min(max_alpha);

    let mut trial = |alpha: f64| -> Result<(Vec<f64>, f64, P::State)> {
        let qt: Vec<f64> = q
            .iter()
            .zip(d)
            .zip(snap)
            .map(|((a, b), s)| s.unwrap_or_else(|| bounds.clamp(a + alpha * b)))
            .collect();
        let (jt, st) = problem.evaluate(&qt)?;
        *evaluations += 1;
        Ok((qt, jt, st))
    };
    let armijo = |qt: &[f64], jt: f64| -> bool {
        let disp: f64 = g.iter().zip(qt).zip(q).map(|((gi, a), b)| gi * (a - b)).sum();
        jt < j && jt <= j + opts.armijo_c * disp
    };
    // derivative along the projected path, clamped components excluded
    let path_slope = |qt: &[f64], gt: &[f64], alpha: f64| -> f64 {
        gt.iter()
            .zip(d)
            .zip(q.iter().zip(qt))
            .map(|((gi, di), (a, b))| {
                if (b - a - alpha * di).abs() <= 1e-14 * (1.0 + a.abs()) {
                    gi * di
                } else {
                    0.0
                }
            })
            .sum()
    };

    let mut best = None;
    for _ in 0..opts.max_backtracks {
        let (qt, jt, st) = trial(alpha)?;
        if armijo(&qt, jt) {
            let gt = problem.gradient(&qt, &st)?;
            best = Some(Step {
                q: qt,
                j: jt,
                g: gt,
                alpha,
                state: st,
            });
            break;
        }
        let curv = jt - j - slope * alpha;
        alpha = if curv > 0.0 {
            (-slope * alpha * alpha / (2.0 * curv)).clamp(0.1 * alpha, opts.backtrack_factor * alpha)
        } else {
            opts.backtrack_factor * alpha
        };
    }
    let Some(mut best) = best else {
        return Ok(None);
    };

    // Secant steps on the path derivative; bracketed once a trial with
    // positive slope or no decrease is seen.
    let (mut lo, mut s_lo) = (0.0, slope);
    let mut hi: Option<(f64, f64)> = None;
    let (mut a, mut s) = (best.alpha, path_slope(&best.q, &best.g, best.alpha));
    for _ in 0..LINE_REFINEMENTS {
        if s.abs() <= CURVATURE_TOL * slope.abs() {
            break;
        }
        let next = if s < 0.0 {
            match hi {
                Some((ah, sh)) => secant_inside(a, s, ah, sh),
                // extrapolate from the previous point with negative slope
                None => {
                    let sec = if s > s_lo {
                        lo - s_lo * (a - lo) / (s - s_lo)
                    } else {
                        f64::INFINITY
                    };
                    sec.clamp(1.5 * a, 8.0 * a).min(max_alpha)
                }
            }
        } else {
            secant_inside(lo, s_lo, a, s)
        };
        if s < 0.0 {
            (lo, s_lo) = (a, s);
        } else {
            hi = Some((a, s));
        }
        if !(next > 0.0) || next == a {
            break;
        }
        let (qt, jt, st) = trial(next)?;
        let gt = problem.gradient(&qt, &st)?;
        let mut s_next = path_slope(&qt, &gt, next);
        if jt >= best.j {
            // no decrease: past the minimizer along the path
            s_next = s_next.abs();
        } else if armijo(&qt, jt) {
            best = Step {
                q: qt,
                j: jt,
                g: gt,
                alpha: next,
                state: st,
            };
        }
        (a, s) = (next, s_next);
        if a >= max_alpha && s < 0.0 {
            break;
        }
    }
    Ok(Some(best))
}

/// Nodes closer than this fraction of the box width to a bound, with the
/// gradient pushing outward, are moved onto the bound instead of along the
/// search direction.
const ACTIVE_WIDTH: f64 = 1e-2;

/// Outward-pushed nodes within `eps` of a bound, with that bound.
fn near_active(q: &[f64], g: &[f64], b: &AdmissibleBox, eps: f64) -> Vec<Option<f64>> {
    q.iter()
        .zip(g)
        .map(|(&x, &gi)| {
            if x - b.lower() <= eps && gi > 0.0 {
                Some(b.lower())
            } else if b.upper() - x <= eps && gi < 0.0 {
                Some(b.upper())
            } else {
                None
            }
        })
        .collect()
}

fn without(v: &[f64], snap: &[Option<f64>]) -> Vec<f64> {
    v.iter()
        .zip(snap)
        .map(|(&x, s)| if s.is_some() { 0.0 } else { x })
        .collect()
}

/// Projected Polak–Ribière+ nonlinear conjugate gradients, with directions
/// formed in the metric of `opts.metric`. Nodes near a bound with an outward
/// gradient are held on it. When a direction admits no acceptable step,
/// steepest descent is tried before giving up.
pub fn ncg_minimize<P: Objective>(
    problem: &P,
    q0: &FeFunction,
    opts: &OptimizerOptions,
) -> Result<OptimizeResult> {
    opts.validate()?;
    let mesh = problem.mesh().clone();
    if q0.values().len() != mesh.n_nodes() {
        return invalid("initial guess lives on a different mesh");
    }
    let bounds = problem.bounds();
    let width = ACTIVE_WIDTH * (bounds.upper() - bounds.lower());
    let precond = DirectionMap {
        problem,
        riesz: RieszMap::new(&mesh, opts.metric)?,
        newton: opts.metric == Metric::GaussNewton,
        max_iters: opts.inner_max_iters,
        rel_tol: opts.inner_rel_tol,
    };

    let mut q: Vec<f64> = q0.values().iter().map(|&x| bounds.clamp(x)).collect();
    let (mut j, state) = problem.evaluate(&q)?;
    let mut evaluations = 1;
    let mut g = problem.gradient(&q, &state)?;
    let g0 = norm2(&projected_gradient(&q, &g, &bounds));
    let mut objective_history = vec![j];
    let mut grad_norm_history = vec![g0];
    let mut feasible = bounds.contains(&q);
    let mut termination = Termination::MaxIterations;
    if g0 == 0.0 {
        termination = Termination::GradientTolerance;
    }
    // gradient and preconditioned gradient restricted to the free nodes
    let mut snap = near_active(&q, &g, &bounds, width);
    let mut pg = without(&g, &snap);
    let mut sg = if g0 > 0.0 {
        precond.apply(&q, &state, &pg)?
    } else {
        pg.clone()
    };
    drop(state);

    let mut d: Vec<f64> = sg.iter().map(|v| -v).collect();
    let mut prev_step: Option<(f64, f64)> = None; // (alpha, slope)
    let mut iterations = 0;

    while termination == Termination::MaxIterations && iterations < opts.max_iters {
        // Candidate directions: the conjugate one, then preconditioned and
        // plain steepest descent.
        let mut fallbacks: Vec<Vec<f64>> = vec![
            pg.iter().map(|v| -v).collect(),
            sg.iter().map(|v| -v).collect(),
        ];
        let mut accepted = None;
        loop {
            d = without(&d, &snap);
            let slope = dot(&g, &d);
            if slope < 0.0 {
                accepted = line_search(problem, opts, &q, j, &g, &d, slope, &snap, prev_step, &mut evaluations)?
                    .map(|step| (step, slope));
                if accepted.is_some() {
                    break;
                }
            }
            match fallbacks.pop() {
                Some(next) => {
                    d = next;
                    prev_step = None;
                }
                None => break,
            }
        }
        let Some((step, slope)) = accepted else {
            termination = Termination::Stagnation;
            break;
        };

        // shrink the snapping band as the projected step shortens
        let reach = q
            .iter()
            .zip(&sg)
            .map(|(x, s)| (x - bounds.clamp(x - s)).abs())
            .fold(0.0f64, f64::max);
        let snap_new = near_active(&step.q, &step.g, &bounds, width.min(reach));
        let pg_new = without(&step.g, &snap_new);
        let sg_new = precond.apply(&step.q, &step.state, &pg_new)?;
        // preconditioned Polak–Ribière+
        let beta = {
            let num: f64 = sg_new
                .iter()
                .zip(pg_new.iter().zip(&pg))
                .map(|(s, (a, b))| s * (a - b))
                .sum();
            let den = dot(&sg, &pg);
            if den > 0.0 {
                (num / den).max(0.0)
            } else {
                0.0
            }
        };
        let rel_decrease = (j - step.j) / j.abs().max(f64::MIN_POSITIVE);
        prev_step = Some((step.alpha, slope));
        d = sg_new.iter().zip(&d).map(|(si, di)| -si + beta * di).collect();
        q = step.q;
        j = step.j;
        g = step.g;
        snap = snap_new;
        pg = pg_new;
        sg = sg_new;
        feasible &= bounds.contains(&q);
        iterations += 1;
        let gnorm = norm2(&projected_gradient(&q, &g, &bounds));
        objective_history.push(j);
        grad_norm_history.push(gnorm);
        if gnorm <= opts.grad_rel_tol * g0 {
            termination = Termination::GradientTolerance;
        } else if rel_decrease < opts.obj_rel_tol {
            termination = Termination::ObjectiveTolerance;
        }
    }

    Ok(OptimizeResult {
        q_star: FeFunction::new(mesh, q, Space::Full)?,
        objective_history,
        grad_norm_history,
        iterations,
        termination,
        evaluations,
        feasible,
    })
}

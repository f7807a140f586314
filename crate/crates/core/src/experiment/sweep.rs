//! Noise-level sweeps with the a priori parameter choice `γ ∼ ε²`,
//! `h ∼ √ε`, `τ ∼ ε`.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::data::{
    error_q, error_u_elliptic, error_u_parabolic, fine_mesh, synthesize_elliptic_from,
    synthesize_parabolic_from, NoiseSpec,
};
use super::reference::{EllipticReference, ParabolicReference};
use crate::error::{invalid, Error, Result};
use crate::fem::{FeFunction, P1Space, ScalarField, SpaceTimeField};
use crate::forward::TimeGrid;
use crate::inverse::{
    ncg_minimize, AdmissibleBox, EllipticInverseProblem, OptimizeResult, OptimizerOptions,
    ParabolicInverseProblem, Termination,
};
use crate::mesh::Mesh;

#[derive(Debug, Clone)]
pub enum ProblemKind {
    Elliptic,
    Parabolic {
        final_time: f64,
        window: f64,
        initial: ScalarField,
    },
}

/// True coefficient and data of a recovery problem on `(0,1)^dim`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub dim: usize,
    pub q_dag: ScalarField,
    /// Time-independent for elliptic problems.
    pub source: SpaceTimeField,
    pub kind: ProblemKind,
}

impl Problem {
    pub fn is_parabolic(&self) -> bool {
        matches!(self.kind, ProblemKind::Parabolic { .. })
    }
}

/// Parameter values at the first noise level; later levels are scaled from
/// these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchors {
    pub epsilon0: f64,
    pub gamma0: f64,
    pub h0: f64,
    /// Parabolic problems only.
    pub tau0: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub name: String,
    pub problem: Problem,
    pub epsilons: Vec<f64>,
    pub anchors: Anchors,
    /// Cells per side of the data mesh.
    pub fine_n: usize,
    /// Steps of the data time grid (parabolic only).
    pub fine_steps: Option<usize>,
    pub seed: u64,
    /// Constant initial guess.
    pub q0: f64,
    pub bounds: AdmissibleBox,
    pub optimizer: OptimizerOptions,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return invalid("epsilons: at least one noise level is required");
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return invalid("epsilons: noise levels must be positive");
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("epsilons: noise levels must be strictly decreasing");
        }
        let a = &self.anchors;
        if [a.epsilon0, a.gamma0, a.h0].iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return invalid("anchors: epsilon0, gamma0 and h0 must be positive");
        }
        if !(1..=2).contains(&self.problem.dim) {
            return invalid(format!("problem.dim: must be 1 or 2, got {}", self.problem.dim));
        }
        if self.fine_n < 2 {
            return invalid("fine.n: need at least 2 cells");
        }
        if !(self.q0 >= self.bounds.lower() && self.q0 <= self.bounds.upper()) {
            return invalid(format!(
                "q0: initial guess {} outside [{}, {}]",
                self.q0,
                self.bounds.lower(),
                self.bounds.upper()
            ));
        }
        self.optimizer.validate()?;
        match &self.problem.kind {
            ProblemKind::Elliptic => {
                if !self.problem.source.is_steady() {
                    return invalid("problem.f: elliptic source must not depend on t");
                }
            }
            ProblemKind::Parabolic {
                final_time, window, ..
            } => {
                if !(*final_time > 0.0) || !(0.0..*final_time).contains(window) {
                    return invalid("problem: need T > 0 and 0 ≤ sigma < T");
                }
                match (a.tau0, self.fine_steps) {
                    (Some(t), Some(n)) if t > 0.0 && n > 0 => {}
                    _ => return invalid("parabolic problems need anchors.tau0 > 0 and fine.steps > 0"),
                }
            }
        }
        Ok(())
    }
}

/// Discretization chosen for one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub gamma: f64,
    pub n_space: usize,
    /// Coarse time steps (parabolic only).
    pub n_time: Option<usize>,
}

/// Divisor of `total` closest to `target`; ties go to the smaller one.
fn nearest_divisor(total: usize, target: f64, admissible: impl Fn(usize) -> bool) -> Option<usize> {
    (1..=total)
        .filter(|d| total % d == 0 && admissible(*d))
        .min_by(|a, b| {
            let da = (*a as f64 - target).abs();
            let db = (*b as f64 - target).abs();
            da.partial_cmp(&db).expect("finite").then(a.cmp(b))
        })
}

/// `γ = γ₀(ε/ε₀)²`, `n` the divisor of the fine cell count nearest to
/// `n₀√(ε₀/ε)` with `n₀ = round(1/h₀)`, and the coarse step a multiple of
/// the fine one nearest to `τ₀ε/ε₀` that keeps `(T − σ)/τ` integral.
pub fn resolve_point(config: &SweepConfig, epsilon: f64) -> Result<SweepPoint> {
    let a = &config.anchors;
    let ratio = epsilon / a.epsilon0;
    let gamma = a.gamma0 * ratio * ratio;
    let n0 = (1.0 / a.h0).round();
    let n_space = nearest_divisor(config.fine_n, n0 / ratio.sqrt(), |d| d >= 2)
        .ok_or_else(|| Error::InvalidArgument("fine.n has no admissible divisor".into()))?;
    let n_time = match &config.problem.kind {
        ProblemKind::Elliptic => None,
        ProblemKind::Parabolic {
            final_time, window, ..
        } => {
            let fine_steps = config.fine_steps.expect("validated");
            let tau0 = a.tau0.expect("validated");
            let tau_f = final_time / fine_steps as f64;
            let obs = (final_time - window) / tau_f;
            if (obs - obs.round()).abs() > 1e-8 * obs.max(1.0) {
                return invalid("sigma: (T − sigma) is not a multiple of the fine time step");
            }
            let obs = obs.round() as usize;
            let k = nearest_divisor(fine_steps, tau0 * ratio / tau_f, |k| obs % k == 0)
                .expect("k = 1 is always admissible");
            Some(fine_steps / k)
        }
    };
    Ok(SweepPoint {
        epsilon,
        gamma,
        n_space,
        n_time,
    })
}

/// One line of a sweep table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub e_q: f64,
    pub e_u: f64,
    pub weighted_error: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Option<Termination>,
    /// Objective history strictly decreasing.
    pub monotone: bool,
    /// All iterates inside the box.
    pub feasible: bool,
    pub wall_seconds: f64,
    pub failure: Option<String>,
    pub q_star: Option<FeFunction>,
}

impl SweepRow {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    fn failed(point: SweepPoint, err: Error, wall_seconds: f64) -> Self {
        Self {
            point,
            e_q: f64::NAN,
            e_u: f64::NAN,
            weighted_error: f64::NAN,
            iterations: 0,
            evaluations: 0,
            termination: None,
            monotone: false,
            feasible: false,
            wall_seconds,
            failure: Some(err.to_string()),
            q_star: None,
        }
    }
}

/// Reference solution shared by every point of a sweep.
#[derive(Debug)]
pub enum Reference {
    Elliptic(EllipticReference),
    Parabolic(ParabolicReference),
}

impl Reference {
    pub fn mesh(&self) -> &Arc<Mesh> {
        match self {
            Reference::Elliptic(r) => r.mesh(),
            Reference::Parabolic(r) => r.mesh(),
        }
    }
}

/// Reference solve on the data grid, keeping only what the points need.
pub fn build_reference(config: &SweepConfig, points: &[SweepPoint]) -> Result<Reference> {
    let p = &config.problem;
    let mesh = fine_mesh(p.dim, config.fine_n)?;
    match &p.kind {
        ProblemKind::Elliptic => Ok(Reference::Elliptic(EllipticReference::new(
            &p.q_dag,
            &p.source.at(0.0),
            mesh,
        )?)),
        ProblemKind::Parabolic {
            final_time,
            window,
            initial,
        } => {
            let fine_steps = config.fine_steps.expect("validated");
            let grid = TimeGrid::new(*final_time, fine_steps, *window)?;
            let mut keep_from = fine_steps;
            for pt in points {
                let nc = pt.n_time.expect("parabolic point");
                let coarse = TimeGrid::new(*final_time, nc, *window)?;
                let k = fine_steps / nc;
                keep_from = keep_from.min((coarse.first_observed() - 1) * k);
            }
            Ok(Reference::Parabolic(ParabolicReference::new(
                &p.q_dag, &p.source, initial, mesh, grid, keep_from,
            )?))
        }
    }
}

fn optimize_record(r: &OptimizeResult) -> (bool, bool) {
    let monotone = r.objective_history.windows(2).all(|w| w[1] < w[0]);
    (monotone, r.feasible)
}

/// Solve one sweep point against a prebuilt reference.
pub fn run_point(config: &SweepConfig, reference: &Reference, point: SweepPoint, stream: u64) -> SweepRow {
    let start = Instant::now();
    match solve_point(config, reference, point, stream) {
        Ok(mut row) => {
            row.wall_seconds = start.elapsed().as_secs_f64();
            row
        }
        Err(e) => SweepRow::failed(point, e, start.elapsed().as_secs_f64()),
    }
}

fn solve_point(config: &SweepConfig, reference: &Reference, point: SweepPoint, stream: u64) -> Result<SweepRow> {
    let p = &config.problem;
    let mesh = fine_mesh(p.dim, point.n_space)?;
    let space = Arc::new(P1Space::new(mesh.clone()));
    let noise = NoiseSpec::new(point.epsilon, config.seed)?.with_stream(stream);
    let q0 = FeFunction::constant(mesh.clone(), config.q0);

    let (result, e_u, weighted_error) = match (&p.kind, reference) {
        (ProblemKind::Elliptic, Reference::Elliptic(r)) => {
            let f = p.source.at(0.0);
            let z = synthesize_elliptic_from(r, &mesh, &noise)?;
            let problem = EllipticInverseProblem::new(space.clone(), &z, &f, point.gamma, config.bounds)?;
            let result = ncg_minimize(&problem, &q0, &config.optimizer)?;
            let e_u = error_u_elliptic(&space, &result.q_star, &f, r)?;
            let w = r.weighted_error(&result.q_star)?;
            (result, e_u, w)
        }
        (
            ProblemKind::Parabolic {
                final_time,
                window,
                initial,
            },
            Reference::Parabolic(r),
        ) => {
            let grid = TimeGrid::new(*final_time, point.n_time.expect("parabolic point"), *window)?;
            let z = synthesize_parabolic_from(r, &mesh, &grid, &noise)?;
            let problem = ParabolicInverseProblem::new(
                space.clone(),
                grid,
                &z,
                &p.source,
                initial,
                point.gamma,
                config.bounds,
            )?;
            let result = ncg_minimize(&problem, &q0, &config.optimizer)?;
            let e_u = error_u_parabolic(&space, &result.q_star, &p.source, initial, &grid, r)?;
            let w = r.weighted_error(&result.q_star, &grid)?;
            (result, e_u, w)
        }
        _ => return invalid("reference does not match the problem kind"),
    };
    let e_q = error_q(&result.q_star, &p.q_dag)?;
    let (monotone, feasible) = optimize_record(&result);
    Ok(SweepRow {
        point,
        e_q,
        e_u,
        weighted_error,
        iterations: result.iterations,
        evaluations: result.evaluations,
        termination: Some(result.termination),
        monotone,
        feasible,
        wall_seconds: 0.0,
        failure: None,
        q_star: Some(result.q_star),
    })
}

/// Run every noise level of `config` on a pool of `jobs` workers. Point `i`
/// draws its noise from stream `i` of the configured seed, so the rows do not
/// depend on `jobs`.
pub fn run_sweep(config: &SweepConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let points = config
        .epsilons
        .iter()
        .map(|&e| resolve_point(config, e))
        .collect::<Result<Vec<_>>>()?;
    let reference = build_reference(config, &points)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, &pt)| run_point(config, &reference, pt, i as u64))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::examples::builtin;

    #[test]
    fn ell1d_resolution_matches_anchors() {
        let c = builtin("ell1d").unwrap();
        let ns: Vec<usize> = c
            .epsilons
            .iter()
            .map(|&e| resolve_point(&c, e).unwrap().n_space)
            .collect();
        assert_eq!(ns, vec![40, 50, 80, 128, 160, 320, 400]);
        let last = resolve_point(&c, 5e-4).unwrap();
        assert!((last.gamma - 5e-12).abs() < 1e-24);
        assert_eq!(last.n_space, 400); // h = 2.5e-3
    }

    #[test]
    fn par2d_resolution() {
        let c = builtin("par2d").unwrap();
        let p = resolve_point(&c, 1e-2).unwrap();
        assert_eq!(p.n_space, 25);
        assert!((p.gamma - 4e-8).abs() < 1e-20);
        // τ₀ε/ε₀ = 1/8000 → 1.6 fine steps of 1/12800 → 2
        assert_eq!(p.n_time, Some(640));
    }

    #[test]
    fn par1d_time_resolution() {
        let c = builtin("par1d").unwrap();
        // τ = 1/400 and the fine step 1/8000 at T = 0.1
        let p = resolve_point(&c, 5e-2).unwrap();
        assert_eq!(p.n_time, Some(40));
        let p = resolve_point(&c, 5e-4).unwrap();
        assert_eq!(p.n_time, Some(800));
    }

    #[test]
    fn window_must_align() {
        let mut c = builtin("par1d").unwrap();
        if let ProblemKind::Parabolic { window, .. } = &mut c.problem.kind {
            *window = 0.05;
        }
        // (T − σ)/τ must be an integer for each coarse grid
        for &e in &c.epsilons {
            let p = resolve_point(&c, e).unwrap();
            let n = p.n_time.unwrap();
            TimeGrid::new(0.1, n, 0.05).unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let mut c = builtin("ell1d").unwrap();
        c.epsilons.clear();
        assert!(c.validate().is_err());
        let mut c = builtin("ell1d").unwrap();
        c.epsilons = vec![1e-2, 5e-2];
        assert!(c.validate().is_err());
        let mut c = builtin("par1d").unwrap();
        c.anchors.tau0 = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_point_sweep_and_determinism() {
        let mut c = builtin("ell1d").unwrap();
        c.fine_n = 400;
        c.epsilons = vec![1e-2];
        let a = run_sweep(&c, 1).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a[0].succeeded(), "{:?}", a[0].failure);
        let b = run_sweep(&c, 2).unwrap();
        assert_eq!(a[0].e_q.to_bits(), b[0].e_q.to_bits());
        assert_eq!(a[0].iterations, b[0].iterations);
    }

    #[test]
    fn noise_free_start_at_truth_is_exact() {
        let mut c = builtin("ell1d").unwrap();
        c.fine_n = 40;
        c.epsilons = vec![5e-2];
        let points = vec![resolve_point(&c, 5e-2).unwrap()];
        let reference = build_reference(&c, &points).unwrap();
        let Reference::Elliptic(r) = &reference else { unreachable!() };
        let space = Arc::new(P1Space::new(r.mesh().clone()));
        let problem = EllipticInverseProblem::new(space.clone(), r.solution(), &ScalarField::constant(1.0), 0.0, c.bounds).unwrap();
        let q0 = crate::fem::lagrange_interpolate(r.mesh(), &c.problem.q_dag);
        let res = ncg_minimize(&problem, &q0, &c.optimizer).unwrap();
        assert!(res.iterations <= 1);
        assert!(error_q(&res.q_star, &c.problem.q_dag).unwrap() < 1e-8);
        assert!(error_u_elliptic(&space, &res.q_star, &ScalarField::constant(1.0), r).unwrap() < 1e-12);
    }
}

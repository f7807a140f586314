//! Synthetic data, error metrics, weighted-error diagnostics and noise-level
//! sweeps.

mod data;
pub mod examples;
mod reference;
mod sweep;

pub use data::{
    error_q, error_u_elliptic, error_u_parabolic, synthesize_elliptic, synthesize_elliptic_from,
    synthesize_parabolic, synthesize_parabolic_from, NoiseSpec,
};
pub use reference::{
    positivity_profile, touches_corner, weighted_error_elliptic, EllipticReference,
    ParabolicReference, PositivityProfile,
};
pub use sweep::{
    build_reference, resolve_point, run_point, run_sweep, Anchors, Problem, ProblemKind,
    Reference, SweepConfig, SweepPoint, SweepRow,
};

use crate::error::{invalid, Result};

/// Least-squares slope of `log e` against `log ε`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return invalid("rate fit needs at least two points");
    }
    if points
        .iter()
        .any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return invalid("rate fit needs positive finite values");
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxy += dx * (y.ln() - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return invalid("rate fit needs at least two distinct noise levels");
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<_> = [1e-1, 5e-2, 1e-2, 5e-3, 1e-3]
            .iter()
            .map(|&e: &f64| (e, e.powf(0.76)))
            .collect();
        assert!((fit_rate(&pts).unwrap() - 0.76).abs() < 1e-12);
    }

    #[test]
    fn constant_error_has_zero_rate() {
        let pts = [(1e-1, 3.0), (1e-2, 3.0), (1e-3, 3.0)];
        assert!(fit_rate(&pts).unwrap().abs() < 1e-15);
    }

    #[test]
    fn published_ell1d_column() {
        let eps = examples::TABLE_EPSILONS;
        let eq = [2.52e-1, 2.56e-1, 8.08e-2, 4.84e-2, 4.06e-2, 1.63e-2, 8.43e-3];
        let pts: Vec<_> = eps.iter().copied().zip(eq).collect();
        assert!((fit_rate(&pts).unwrap() - 0.76).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[(1e-2, 1.0)]).is_err());
        assert!(fit_rate(&[(1e-2, 1.0), (1e-3, 0.0)]).is_err());
        assert!(fit_rate(&[(1e-2, 1.0), (1e-2, 2.0)]).is_err());
    }

    proptest! {
        #[test]
        fn scale_invariant(c in 1e-3f64..1e3, e in proptest::collection::vec(1e-6f64..1.0, 3..8)) {
            let pts: Vec<_> = e.iter().enumerate().map(|(i, &v)| (10f64.powi(-(i as i32) - 1), v)).collect();
            let scaled: Vec<_> = pts.iter().map(|&(x, y)| (x, c * y)).collect();
            let a = fit_rate(&pts).unwrap();
            let b = fit_rate(&scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
